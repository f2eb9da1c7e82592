"""Threshold selection against a target average run length.

Pre-change streams are simulated, the maximum statistic per stream is
recorded, and the threshold is the empirical quantile whose level comes from
treating the stopping time as approximately exponential, with horizons and
targets expressed in expected-event units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .simulate import ChangeScenario, derive_seeds, simulate


class InfeasibleTargetError(ValueError):
    """The target run length cannot be expressed as a usable quantile level."""


@dataclass(frozen=True)
class CalibrationConfig:
    n_trials: int = 200
    horizon: float = 2.0
    target_arl: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trials < 20:
            raise ValueError("calibration needs at least 20 trials")
        if not self.target_arl > 0:
            raise ValueError("target_arl must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


@dataclass
class CalibrationReport:
    gamma: float
    level: float
    mean_events: float
    w_max: np.ndarray
    config: CalibrationConfig

    def to_dict(self) -> dict:
        hist, edges = np.histogram(self.w_max, bins=20)
        return {
            "gamma": self.gamma,
            "quantile_level": self.level,
            "mean_events": self.mean_events,
            "n_trials": self.config.n_trials,
            "horizon": self.config.horizon,
            "target_arl": self.config.target_arl,
            "seed": self.config.seed,
            "w_max_histogram": {"counts": hist.tolist(), "edges": edges.tolist()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _pre_change_scenario(scenario: ChangeScenario, horizon: float) -> ChangeScenario:
    from .events import Domain
    from .regions import RegionUnion

    domain = Domain(t_end=horizon, s_bounds=scenario.domain.s_bounds)
    return ChangeScenario(pre=scenario.pre, post=scenario.pre, tau=horizon,
                          omega=RegionUnion.empty(), domain=domain)


def calibrate_threshold(detector_factory: Callable, scenario: ChangeScenario,
                        cfg: CalibrationConfig) -> CalibrationReport:
    """Pick the threshold whose exceedance level matches the target run
    length in expected-event units.

    ``detector_factory(stream, gamma)`` must run the detector and return a
    result with the full statistic trajectory; calibration runs it with an
    infinite threshold so no trial stops early.
    """
    pre = _pre_change_scenario(scenario, cfg.horizon)
    seeds = derive_seeds(cfg.seed, cfg.n_trials)
    w_max = np.empty(cfg.n_trials)
    n_events = np.empty(cfg.n_trials)
    for i, seed in enumerate(seeds):
        stream = simulate(pre, seed)
        result = detector_factory(stream, math.inf)
        w_max[i] = float(np.max(result.trajectory_w)) if len(result.trajectory_w) else 0.0
        n_events[i] = len(stream)
    mean_events = float(np.mean(n_events))
    if mean_events <= 0:
        raise InfeasibleTargetError("pre-change streams produced no events")
    rate = mean_events / cfg.horizon
    target_events = cfg.target_arl * rate
    level = math.exp(-mean_events / target_events)
    if not 0.0 < level < 1.0:
        raise InfeasibleTargetError(
            f"quantile level {level} outside (0, 1); adjust target or trials")
    gamma = float(np.quantile(w_max, level))  # linear interpolation
    return CalibrationReport(gamma=gamma, level=level, mean_events=mean_events,
                             w_max=w_max, config=cfg)


def empirical_arl(detector_factory: Callable, scenario: ChangeScenario,
                  gamma: float, n_trials: int, horizon: float,
                  seed: int = 0) -> dict:
    """Mean stopping time over fresh pre-change streams, censored at the
    horizon; censored trials contribute the horizon and are flagged."""
    pre = _pre_change_scenario(scenario, horizon)
    seeds = derive_seeds(seed, n_trials)
    stops = np.empty(n_trials)
    censored = 0
    for i, s in enumerate(seeds):
        stream = simulate(pre, s)
        result = detector_factory(stream, gamma)
        if result.stopped:
            stops[i] = result.nu
        else:
            stops[i] = horizon
            censored += 1
    return {"arl": float(np.mean(stops)), "censored": censored,
            "n_trials": n_trials, "horizon": horizon, "gamma": gamma}
