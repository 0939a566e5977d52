"""Run configuration read from a TOML file.

Every default is the full-scale setting except the forest and
cross-validation repeat counts, which default to desk scale.

Example::

    [input]
    visits = "visits.csv"
    ads = "ads.csv"

    [output]
    dir = "out"

    [smoother]
    repeats = 50
    h_max = 30
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from adlift.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


@dataclass
class StageToggles:
    smooth: bool = True
    decompose: bool = True
    forest: bool = True
    reports: bool = True


@dataclass
class SmootherSection:
    kernels: list = field(default_factory=lambda: ["triangular", "epanechnikov", "quartic", "triweight", "tricube"])
    h_min: int = 1
    h_max: int = 60
    repeats: int = 1000
    exclusion_window: float = 30.0
    seed: int = 0
    # used when the smooth stage is off
    kernel: str = "triangular"
    h: int = 8


@dataclass
class DecomposeSection:
    families: list = field(default_factory=lambda: ["exponential", "weibull", "gamma", "gengamma"])
    cutoff: int = 30
    max_outer: int = 50
    rel_tol: float = 1e-8
    # family whose lifts feed the forest; "auto" picks the lowest AIC
    forest_family: str = "auto"


@dataclass
class ForestSection:
    mtry: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    min_node: list = field(default_factory=lambda: [5, 10, 15, 20, 25, 30])
    sample_frac: list = field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    n_trees: int = 500
    tuning_repeats: int = 25
    final_repeats: int = 20
    include_zero: bool = True
    pdp_points: int = 25
    seed: int = 0


@dataclass
class ReportSection:
    before: int = 15
    after: int = 45
    quantiles: list = field(default_factory=lambda: [5, 25, 50, 75, 95])
    density_bandwidth: float = 20.0
    bin_width: float = 10.0


@dataclass
class RunConfig:
    visits: Path
    ads: Path
    output_dir: Path
    utc_offset: str = "+00:00"
    stages: StageToggles = field(default_factory=StageToggles)
    smoother: SmootherSection = field(default_factory=SmootherSection)
    decompose: DecomposeSection = field(default_factory=DecomposeSection)
    forest: ForestSection = field(default_factory=ForestSection)
    reports: ReportSection = field(default_factory=ReportSection)


def _section(cls, raw: dict, name: str):
    raw = raw.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    obj = cls()
    for key, value in raw.items():
        default = getattr(obj, key)
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"[{name}] {key} must be true or false")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"[{name}] {key} must be a number")
        if isinstance(default, list) and not isinstance(value, list):
            raise ConfigError(f"[{name}] {key} must be a list")
        setattr(obj, key, value)
    return obj


def load_config(path) -> RunConfig:
    path = Path(path)
    raw = load_toml(path)
    base = path.parent
    unknown = set(raw) - {"input", "output", "stages", "smoother", "decompose", "forest", "reports"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    inp = raw.get("input", {})
    try:
        visits = base / inp["visits"]
        ads = base / inp["ads"]
    except KeyError as exc:
        raise ConfigError(f"[input] is missing {exc.args[0]}") from None
    out = base / raw.get("output", {}).get("dir", "out")
    cfg = RunConfig(
        visits=visits,
        ads=ads,
        output_dir=out,
        utc_offset=str(inp.get("utc_offset", "+00:00")),
        stages=_section(StageToggles, raw, "stages"),
        smoother=_section(SmootherSection, raw, "smoother"),
        decompose=_section(DecomposeSection, raw, "decompose"),
        forest=_section(ForestSection, raw, "forest"),
        reports=_section(ReportSection, raw, "reports"),
    )
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    for p in (cfg.visits, cfg.ads):
        if not Path(p).is_file():
            raise ConfigError(f"input file not found: {p}")
    s = cfg.smoother
    if not 1 <= s.h_min <= s.h_max:
        raise ConfigError("[smoother] needs 1 <= h_min <= h_max")
    if s.repeats < 1:
        raise ConfigError("[smoother] repeats must be >= 1")
    if s.exclusion_window < 0:
        raise ConfigError("[smoother] exclusion_window must be >= 0")
    d = cfg.decompose
    if not d.families:
        raise ConfigError("[decompose] families must not be empty")
    if d.cutoff < 1:
        raise ConfigError("[decompose] cutoff must be >= 1")
    if d.forest_family != "auto" and d.forest_family not in d.families:
        raise ConfigError("[decompose] forest_family must be 'auto' or one of the fitted families")
    f = cfg.forest
    if f.tuning_repeats < 1 or f.final_repeats < 1 or f.n_trees < 1:
        raise ConfigError("[forest] repeats and n_trees must be >= 1")
