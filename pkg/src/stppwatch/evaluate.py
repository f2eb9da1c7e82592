"""Trial orchestration and reported metrics: run length, detection delay,
region accuracy at stopping, the morphological accuracy floor, and the
threshold-tradeoff and region-evolution protocols.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import bin_events, cusum_binned, fit_gaussian_bin_model, min_cusum, pp_cusum, scusum_binned
from .calibrate import empirical_arl
from .detect import DetectionResult, run_detector
from .events import Domain, EventStream
from .regions import RegionUnion, dilate, erode, jaccard, region_area
from .score import WeightConfig
from .simulate import ChangeScenario, derive_seeds, simulate


@dataclass
class TrialBatch:
    """One detector configuration run across seeded trials of one scenario."""

    scenario: ChangeScenario
    detector: str
    results: list
    seeds: list
    runtimes: list = field(default_factory=list)

    def detected(self) -> list:
        tau = self.scenario.tau
        return [r for r in self.results if r.stopped and r.nu > tau]

    def false_alarms(self) -> int:
        tau = self.scenario.tau
        return sum(1 for r in self.results if r.stopped and r.nu <= tau)

    def exhausted(self) -> int:
        return sum(1 for r in self.results if not r.stopped)


def run_trial_batch(scenario: ChangeScenario, runner: Callable, gamma: float,
                    n_trials: int, seed: int, detector: str = "stcusum") -> TrialBatch:
    """Simulate ``n_trials`` streams and run the detector on each."""
    seeds = derive_seeds(seed, n_trials)
    results, runtimes = [], []
    for s in seeds:
        stream = simulate(scenario, s)
        t0 = time.perf_counter()
        results.append(runner(stream, gamma))
        runtimes.append(time.perf_counter() - t0)
    return TrialBatch(scenario=scenario, detector=detector, results=results,
                      seeds=seeds, runtimes=runtimes)


def edd(batch: TrialBatch, censored: str = "exclude") -> Optional[float]:
    """Mean detection delay over trials that stopped after the change.

    False alarms are always excluded; horizon-exhausted trials are excluded
    by default or contribute the full remaining horizon with
    ``censored="cap"``.  Returns None when no trial qualifies.
    """
    tau = batch.scenario.tau
    t_end = batch.scenario.domain.t_end
    delays = [min(r.nu - tau, t_end - tau) for r in batch.detected()]
    if censored == "cap":
        delays.extend([t_end - tau] * batch.exhausted())
    elif censored != "exclude":
        raise ValueError("censored must be 'exclude' or 'cap'")
    if not delays:
        return None
    return float(np.mean(delays))


def edd_report(batch: TrialBatch) -> dict:
    val = edd(batch)
    return {
        "edd": val,
        "edd_censored": edd(batch, censored="cap"),
        "n_detected": len(batch.detected()),
        "n_false_alarm": batch.false_alarms(),
        "n_exhausted": batch.exhausted(),
        "mean_runtime_s": float(np.mean(batch.runtimes)) if batch.runtimes else None,
    }


def jaccard_at_stop(batch: TrialBatch, true_omega: RegionUnion) -> Optional[float]:
    """Mean region overlap at stopping over post-change detections."""
    vals = [jaccard(r.omega_hat, true_omega) for r in batch.detected()]
    if not vals:
        return None
    return float(np.mean(vals))


def jaccard_lower_bound(omega: RegionUnion, delta: float, domain: Domain) -> float:
    """Morphological floor min(|O| / |O + B|, |O - B| / |O|)."""
    if delta == 0.0:
        return 1.0
    a = region_area(omega)
    if a <= 0.0:
        return 0.0
    grown = region_area(dilate(omega, delta, domain.s_bounds))
    shrunk = region_area(erode(omega, delta, domain.s_bounds))
    return min(a / grown if grown > 0 else 1.0, shrunk / a)


def tradeoff_curve(scenario: ChangeScenario, runner: Callable,
                   gamma_grid: Sequence[float], n_trials: int, seed: int,
                   detector: str = "stcusum", arl_horizon: Optional[float] = None,
                   true_omega: Optional[RegionUnion] = None) -> list[dict]:
    """Empirical (ARL, EDD, Jaccard) rows along a threshold grid.

    Pre-change run lengths and change-trial metrics share common random
    numbers across thresholds.
    """
    horizon = arl_horizon if arl_horizon is not None else 2.0 * scenario.domain.t_end
    omega = true_omega if true_omega is not None else scenario.omega
    rows = []
    for gamma in gamma_grid:
        arl = empirical_arl(runner, scenario, gamma, n_trials, horizon, seed=seed)
        batch = run_trial_batch(scenario, runner, gamma, n_trials, seed + 1,
                                detector=detector)
        rows.append({
            "detector": detector,
            "gamma": gamma,
            "arl": arl["arl"],
            "arl_censored": arl["censored"],
            "edd": edd(batch),
            "edd_censored": edd(batch, censored="cap"),
            "jaccard": jaccard_at_stop(batch, omega),
            "n_detected": len(batch.detected()),
            "n_false_alarm": batch.false_alarms(),
            "n_exhausted": batch.exhausted(),
        })
    return rows


def write_tradeoff_csv(rows: list[dict], path) -> None:
    cols = ["detector", "gamma", "arl", "arl_censored", "edd", "edd_censored",
            "jaccard", "n_detected", "n_false_alarm", "n_exhausted"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join("" if row[c] is None else repr(row[c])
                              if isinstance(row[c], float) else str(row[c])
                              for c in cols) + "\n")


def region_evolution(stream: EventStream, runner: Callable,
                     snapshot_times: Sequence[float]) -> list[tuple[float, RegionUnion]]:
    """Run the detector on stream prefixes with an unreachable threshold and
    record the estimated region at each snapshot time."""
    out = []
    for t_snap in snapshot_times:
        n = int(np.searchsorted(stream.t, t_snap, side="right"))
        result = runner(stream.prefix(n), math.inf)
        out.append((float(t_snap), result.omega_hat))
    return out


# ---------------------------------------------------------------------------
# detector runner factories (uniform (stream, gamma) -> DetectionResult)


def stcusum_runner(model0, model1, k_epochs: int, delta: float,
                   wcfg: WeightConfig, domain: Domain,
                   warm_start: bool = False) -> Callable:
    def run(stream: EventStream, gamma: float) -> DetectionResult:
        return run_detector(stream, model0, model1, gamma, k_epochs, delta,
                            wcfg, domain, warm_start=warm_start)
    return run


def cusum_runner(mu0: float, mu1: float, n: int, dt_bin: float,
                 domain: Domain) -> Callable:
    def run(stream: EventStream, gamma: float) -> DetectionResult:
        series = bin_events(stream, n, dt_bin, domain)
        return cusum_binned(series, mu0, mu1, gamma)
    return run


def min_cusum_runner(mu0: float, mu1: float, n: int, dt_bin: float,
                     domain: Domain, aggregation: str = "sum") -> Callable:
    def run(stream: EventStream, gamma: float) -> DetectionResult:
        series = bin_events(stream, n, dt_bin, domain)
        return min_cusum(series, mu0, mu1, gamma, aggregation=aggregation)
    return run


def scusum_runner(model0, model1, n: int, dt_bin: float, domain: Domain) -> Callable:
    def run(stream: EventStream, gamma: float) -> DetectionResult:
        series = bin_events(stream, n, dt_bin, domain)
        return scusum_binned(series, model0, model1, gamma)
    return run


def pp_cusum_runner(pre, post, domain: Domain) -> Callable:
    def run(stream: EventStream, gamma: float) -> DetectionResult:
        return pp_cusum(stream, pre, post, gamma, domain)
    return run
