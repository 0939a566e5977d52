from datetime import datetime, timezone

import pytest

T0 = datetime(2019, 6, 3, 0, 0, tzinfo=timezone.utc)


@pytest.fixture
def write_csv(tmp_path):
    def _write(name, header, rows):
        path = tmp_path / name
        lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
        path.write_text("\n".join(lines) + "\n")
        return path

    return _write
