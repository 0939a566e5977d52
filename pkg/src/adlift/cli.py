"""Command line entry point: ``adlift run|simulate|quantiles|version``."""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from adlift import __version__
from adlift.config import RunConfig, load_config
from adlift.data import exclusion_mask, load_ads, load_visits, parse_offset, write_ads, write_visits
from adlift.decompose import FitOptions, compare_models, fit_families
from adlift.errors import ConfigError, DataError, DomainError, NumericalError
from adlift.forest import (
    ForestSetting,
    build_features,
    encode,
    fit_final,
    tune,
    write_importance,
    write_pdp,
    write_tuning_report,
)
from adlift.reports import (
    ad_window_quantiles,
    write_json,
    write_model_comparison,
    write_quantiles,
    write_rates,
    write_theta_density,
    write_thetas,
)
from adlift.simulate import SimScenario, simulate
from adlift.smoothing import SmootherConfig, default_grid, select_bandwidth

log = logging.getLogger("adlift")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

ARTIFACT_PATTERNS = ("cv_report.csv", "diagnostics_*.json", "model_comparison.csv", "thetas.csv", "rates.csv",
                     "importance.csv", "pdp.csv", "tuning_report.csv", "quantiles.csv", "theta_density.csv",
                     "run_report.json", "MANIFEST.json")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, stages: dict, status: str, error: str | None = None) -> None:
    artifacts = [
        {"path": p.name, "sha256": _sha256(p)}
        for p in sorted(out.iterdir())
        if p.is_file() and p.name != "MANIFEST.json"
    ]
    manifest = {"status": status, "stages": stages, "artifacts": artifacts}
    if error:
        manifest["error"] = error
    write_json(manifest, out / "MANIFEST.json")


def run_pipeline(cfg: RunConfig) -> int:
    """Run the enabled stages and write artifacts to ``cfg.output_dir``.

    Returns the process exit code.  On failure the artifacts written so far
    are kept and the manifest records which stage failed.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for pattern in ARTIFACT_PATTERNS:
        for stale in out.glob(pattern):
            stale.unlink()
    toggles = cfg.stages
    stages = {name: ("pending" if getattr(toggles, name) else "skipped")
              for name in ("smooth", "decompose", "forest", "reports")}
    current = "load"
    try:
        tz = parse_offset(cfg.utc_offset)
        series = load_visits(cfg.visits, tz)
        ads = load_ads(cfg.ads, series, tz)
        notes = []
        if ads.tied_end_times():
            notes.append(f"{ads.tied_end_times()} ad(s) share an end time with another ad; their lifts add")

        sm = cfg.smoother
        smoother = SmootherConfig(sm.kernel, sm.h)
        if toggles.smooth:
            current = "smooth"
            mask = exclusion_mask(series, ads, sm.exclusion_window)
            grid = default_grid(sm.kernels, range(sm.h_min, sm.h_max + 1))
            report = select_bandwidth(series.counts, mask, grid, sm.repeats, sm.seed)
            report.to_csv(out / "cv_report.csv")
            smoother = report.best
            notes.extend(report.notes)
            stages["smooth"] = "complete"

        fits = {}
        chosen = None
        if toggles.decompose:
            current = "decompose"
            dc = cfg.decompose
            options = FitOptions(cutoff=dc.cutoff, max_outer=dc.max_outer, rel_tol=dc.rel_tol)
            fits = fit_families(series, ads, smoother, dc.families, options)
            comparison = compare_models(fits)
            write_model_comparison(comparison, out / "model_comparison.csv")
            table = [dict(zip(r.COLUMNS, (r.family.value, r.alpha, r.phi, r.psi, r.mean, r.mode,
                                           r.avg_loglik, r.aic, r.wilks_p))) for r in comparison]
            for fam, f in fits.items():
                diag = f.summary()
                diag["wilks_table"] = table
                write_json(diag, out / f"diagnostics_{fam.value}.json")
            if dc.forest_family == "auto":
                chosen = min(fits.values(), key=lambda f: f.aic)
            else:
                chosen = next(f for fam, f in fits.items() if fam.value == dc.forest_family)
            write_thetas(chosen, ads, series, out / "thetas.csv")
            write_rates(chosen, series, out / "rates.csv")
            notes.append(f"lifts reported for the {chosen.spec.family.value} spread")
            stages["decompose"] = "complete"

        if toggles.forest:
            current = "forest"
            if chosen is None:
                raise ConfigError("the forest stage needs the decompose stage")
            fc = cfg.forest
            rows = build_features(chosen.thetas, ads, series.start_epoch, fc.include_zero)
            if not rows:
                raise DataError("no ads available for the forest stage")
            grid = [ForestSetting(m, k, float(f), fc.n_trees)
                    for m in fc.mtry for k in fc.min_node for f in fc.sample_frac]
            data = encode(rows)
            best, tuning = tune(data, grid, fc.tuning_repeats, fc.seed)
            final = fit_final(data, best, fc.final_repeats, fc.seed + 1, fc.pdp_points)
            write_tuning_report(tuning.rows() + final.metric_rows(), out / "tuning_report.csv")
            write_importance(final.importance, out / "importance.csv")
            write_pdp(final.pdp, out / "pdp.csv")
            notes.append(f"forest setting selected: {best.label}")
            notes.append("time_of_day is treated as a plain number; midnight wrap-around is approximated by splits")
            if best.sample_frac >= 1.0:
                notes.append("sample_frac = 1: out-of-bag metrics unavailable, permutation importance is in-sample")
            stages["forest"] = "complete"

        if toggles.reports:
            current = "reports"
            rc = cfg.reports
            rel, q = ad_window_quantiles(series, ads, rc.before, rc.after, rc.quantiles)
            write_quantiles(rel, q, rc.quantiles, out / "quantiles.csv")
            if chosen is not None:
                if not write_theta_density(chosen.thetas, out / "theta_density.csv",
                                           rc.density_bandwidth, rc.bin_width):
                    notes.append("no non-zero lifts: theta density report is empty")
            stages["reports"] = "complete"

        write_json({"notes": notes, "smoother": {"kernel": smoother.kernel.value, "h": smoother.h},
                    "n_minutes": series.n, "n_ads": ads.m}, out / "run_report.json")
    except ConfigError as exc:
        return _fail(out, stages, current, exc, EXIT_CONFIG)
    except (DataError, ValueError) as exc:
        code = EXIT_NUMERIC if isinstance(exc, DomainError) else EXIT_DATA
        return _fail(out, stages, current, exc, code)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(out, stages, current, exc, EXIT_NUMERIC)
    _write_manifest(out, stages, "complete")
    return EXIT_OK


def _fail(out: Path, stages: dict, current: str, exc: Exception, code: int) -> int:
    if current in stages:
        stages[current] = "failed"
    log.error("%s stage failed: %s", current, exc)
    _write_manifest(out, stages, "failed", f"{current}: {exc}")
    return code


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return run_pipeline(cfg)


def cmd_simulate(args) -> int:
    try:
        scenario = SimScenario.from_file(args.scenario)
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        log.error("bad scenario: %s", exc)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series, ads, truth = simulate(scenario)
    write_visits(series, out / "visits.csv")
    write_ads(ads, series, out / "ads.csv")
    truth.write(out / "truth.json")
    return EXIT_OK


def cmd_quantiles(args) -> int:
    try:
        tz = parse_offset(args.utc_offset)
        series = load_visits(args.visits, tz)
        ads = load_ads(args.ads, series, tz)
    except (DataError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    qs = [float(q) for q in args.quantiles.split(",")]
    rel, q = ad_window_quantiles(series, ads, args.before, args.after, qs)
    write_quantiles(rel, q, qs, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adlift", description="Immediate website-visit lift of TV ads.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the pipeline from a TOML config")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("simulate", help="write a synthetic visits/ads pair with its truth")
    s.add_argument("--scenario", required=True, help="scenario file (.toml or .json)")
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_simulate)

    q = sub.add_parser("quantiles", help="visit quantiles around ad end times")
    q.add_argument("--visits", required=True)
    q.add_argument("--ads", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--before", type=int, default=15)
    q.add_argument("--after", type=int, default=45)
    q.add_argument("--quantiles", default="5,25,50,75,95")
    q.add_argument("--utc-offset", default="+00:00")
    q.set_defaults(func=cmd_quantiles)

    v = sub.add_parser("version", help="print the version")
    v.set_defaults(func=lambda a: print(__version__) or EXIT_OK)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
