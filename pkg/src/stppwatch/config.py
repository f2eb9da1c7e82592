"""Run configuration: JSON schema with strict key checking.

A config file describes the scenario, the detector and its hyperparameters,
calibration settings, and evaluation grids.  Unknown keys are rejected so
that experiment records stay machine-diffable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .events import Domain
from .regions import RegionUnion
from .simulate import ChangeScenario, HawkesParams

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


_SCENARIO_KEYS = {"t_end", "s_bounds", "pre", "post", "tau", "omega"}
_PARAM_KEYS = {"mu", "alpha", "beta", "spatial_sigma", "kernel_kind"}
_DETECTOR_KEYS = {"kind", "delta", "epochs", "weight_mode", "weight_cap",
                  "gamma", "warm_start", "grid", "dt_bin", "aggregation",
                  "score", "online"}
_SCORE_KEYS = {"kind", "sigma", "epochs", "batch_size", "learning_rate", "seed",
               "hidden", "ff", "checkpoint0", "checkpoint1"}
_ONLINE_KEYS = {"eta", "steps_per_event", "sigma"}
_CALIBRATION_KEYS = {"n_trials", "horizon", "target_arl", "seed"}
_EVALUATION_KEYS = {"n_trials", "gamma_grid", "snapshot_times", "arl_horizon", "seeds"}
_TOP_KEYS = {"version", "seed", "scenario", "detector", "calibration",
             "evaluation", "output_dir", "jobs"}


@dataclass
class DetectorConfig:
    kind: str = "stcusum"
    delta: float = 0.1
    epochs: int = 5
    weight_mode: str = "coordinate"
    weight_cap: Optional[float] = None
    gamma: Optional[float] = None
    warm_start: bool = False
    grid: int = 5
    dt_bin: float = 0.01
    aggregation: str = "sum"
    score: dict = field(default_factory=lambda: {"kind": "analytic"})
    online: Optional[dict] = None


@dataclass
class RunConfig:
    seed: int
    scenario: ChangeScenario
    detector: DetectorConfig
    calibration: dict
    evaluation: dict
    output_dir: str
    jobs: int = 0  # 0 = use available parallelism

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(d, _TOP_KEYS, "config")
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION}")
        if "scenario" not in d:
            raise ConfigError("config requires a scenario")
        sc = d["scenario"]
        _check_keys(sc, _SCENARIO_KEYS, "scenario")
        _check_keys(sc.get("pre", {}), _PARAM_KEYS, "scenario.pre")
        _check_keys(sc.get("post", {}), _PARAM_KEYS, "scenario.post")
        try:
            scenario = ChangeScenario.from_dict(sc)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad scenario: {exc}") from exc
        det_d = dict(d.get("detector", {}))
        _check_keys(det_d, _DETECTOR_KEYS, "detector")
        _check_keys(det_d.get("score", {}), _SCORE_KEYS, "detector.score")
        if det_d.get("online") is not None:
            _check_keys(det_d["online"], _ONLINE_KEYS, "detector.online")
        detector = DetectorConfig(**det_d)
        if detector.kind not in ("stcusum", "cusum", "scusum", "pp_cusum", "min_cusum"):
            raise ConfigError(f"unknown detector kind {detector.kind!r}")
        if detector.weight_mode not in ("coordinate", "temporal", "scalar"):
            raise ConfigError(f"unknown weight mode {detector.weight_mode!r}")
        cal = dict(d.get("calibration", {}))
        _check_keys(cal, _CALIBRATION_KEYS, "calibration")
        ev = dict(d.get("evaluation", {}))
        _check_keys(ev, _EVALUATION_KEYS, "evaluation")
        return cls(seed=int(d.get("seed", 0)), scenario=scenario,
                   detector=detector, calibration=cal, evaluation=ev,
                   output_dir=str(d.get("output_dir", "out")),
                   jobs=int(d.get("jobs", 0)))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        det = {k: getattr(self.detector, k) for k in
               ("kind", "delta", "epochs", "weight_mode", "weight_cap", "gamma",
                "warm_start", "grid", "dt_bin", "aggregation", "score", "online")}
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "scenario": self.scenario.to_dict(),
            "detector": det,
            "calibration": self.calibration,
            "evaluation": self.evaluation,
            "output_dir": self.output_dir,
            "jobs": self.jobs,
        }
