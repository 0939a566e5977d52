"""Synthetic visit series with known lifts, used to check the estimators."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from adlift.data import CHANNELS, MOTIVES, POSITIONS, AdRecord, AdSchedule, VisitSeries, parse_timestamp
from adlift.decompose import compute_mu
from adlift.spread import SpreadSpec, spread_mean

BASELINES = ("flat", "sinusoid", "weekly")


@dataclass(frozen=True)
class SimScenario:
    """Ground truth for one synthetic series.

    Lifts are 0 with probability ``p0`` and otherwise Gamma distributed with
    the given shape and mean.  ``ad_times``/``thetas`` override the random
    schedule and lifts when given.
    """

    n: int = 14_400
    baseline: str = "sinusoid"
    baseline_mean: float = 30.0
    daily_amplitude: float = 10.0
    weekly_amplitude: float = 3.0
    period: float = 1440.0
    n_ads: int = 40
    p0: float = 0.3
    theta_shape: float = 2.0
    theta_mean: float = 150.0
    spread: SpreadSpec = field(default_factory=lambda: SpreadSpec("weibull", 0.32, 1.28, 1.0, 30))
    seed: int = 0
    start_epoch: datetime = datetime(2019, 6, 3, tzinfo=timezone.utc)
    ad_times: tuple[float, ...] | None = None
    thetas: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}")
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError("p0 must lie in [0, 1]")
        if self.n < 1:
            raise ValueError("n must be positive")
        amp = abs(self.daily_amplitude) + (abs(self.weekly_amplitude) if self.baseline == "weekly" else 0.0)
        if self.baseline != "flat" and self.baseline_mean - amp <= 0:
            raise ValueError("baseline rate must stay positive")
        if self.baseline_mean <= 0:
            raise ValueError("baseline rate must be positive")

    def baseline_rate(self) -> np.ndarray:
        t = np.arange(1, self.n + 1, dtype=float)
        if self.baseline == "flat":
            return np.full(self.n, float(self.baseline_mean))
        daily = self.daily_amplitude * np.sin(2 * np.pi * t / self.period)
        if self.baseline == "sinusoid":
            return self.baseline_mean + daily
        weekly = self.weekly_amplitude * np.sin(2 * np.pi * t / (7 * 1440.0))
        return self.baseline_mean + daily + weekly

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        d = dict(d)
        if "spread" in d and isinstance(d["spread"], dict):
            d["spread"] = SpreadSpec.from_dict(d["spread"])
        if "start_epoch" in d and isinstance(d["start_epoch"], str):
            d["start_epoch"] = parse_timestamp(d["start_epoch"])
        for key in ("ad_times", "thetas"):
            if d.get(key) is not None:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "SimScenario":
        text = Path(path).read_text()
        if str(path).endswith(".json"):
            return cls.from_dict(json.loads(text))
        from adlift.config import load_toml

        return cls.from_dict(load_toml(path))


@dataclass
class Truth:
    thetas: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    spread: SpreadSpec

    def to_dict(self) -> dict:
        return {
            "thetas": self.thetas.tolist(),
            "spread": self.spread.to_dict(),
            "spread_mean": spread_mean(self.spread),
            "lambda": self.lam.tolist(),
            "mu": self.mu.tolist(),
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")


def simulate(scenario: SimScenario) -> tuple[VisitSeries, AdSchedule, Truth]:
    rng = np.random.default_rng(scenario.seed)
    n, d = scenario.n, scenario.spread.cutoff or 30
    if scenario.ad_times is not None:
        times = np.sort(np.asarray(scenario.ad_times, dtype=float))
    else:
        # whole seconds, away from the series ends
        lo, hi = 60 * 60, max(60 * (n - d - 60), 60 * 60 + 1)
        times = np.sort(rng.integers(lo, hi, size=scenario.n_ads)) / 60.0
    m = times.size
    if scenario.thetas is not None:
        thetas = np.asarray(scenario.thetas, dtype=float)
        if thetas.size != m:
            raise ValueError("thetas and ad_times differ in length")
    else:
        zero = rng.random(m) < scenario.p0
        scale = scenario.theta_mean / scenario.theta_shape
        thetas = np.where(zero, 0.0, rng.gamma(scenario.theta_shape, scale, size=m))
    ads = tuple(
        AdRecord(float(s), MOTIVES[rng.integers(len(MOTIVES))], POSITIONS[rng.integers(len(POSITIONS))],
                 CHANNELS[rng.integers(len(CHANNELS))])
        for s in times
    )
    lam = scenario.baseline_rate()
    mu = compute_mu(thetas, times, scenario.spread, (1, n))
    z = rng.poisson(mu + lam)
    return VisitSeries(scenario.start_epoch, z), AdSchedule(ads), Truth(thetas, mu, lam, scenario.spread)


def truth_error(fit, truth: Truth) -> dict:
    """Error metrics of a fit against the simulation truth."""
    err = np.asarray(fit.thetas, dtype=float) - truth.thetas
    lam_err = np.asarray(fit.lam, dtype=float) - truth.lam
    return {
        "theta_mae": float(np.mean(np.abs(err))) if err.size else 0.0,
        "theta_rmse": float(np.sqrt(np.mean(err**2))) if err.size else 0.0,
        "spread_mean_error": spread_mean(fit.spec) - spread_mean(truth.spread),
        "lambda_rmse": float(np.sqrt(np.mean(lam_err**2))),
    }
