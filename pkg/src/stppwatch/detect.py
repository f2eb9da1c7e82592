"""Sequential detector: windowed anomaly-mass statistic with alternating
region and change-time updates, plus the online variant that adapts the
post-change score model by gradient steps on arriving events.

Region update (I-step): clipped l-inf balls around the window's
positive-score locations, with the window's negative-score locations carried
as measure-zero exclusions; this realizes an exact argmax of the windowed
statistic over unrestricted regions.

Change-time update (O-step): exact argmax over suffix windows anchored at
event times (plus the empty-window sentinel), ties broken toward the latest
time.  The statistic is evaluated right-continuously: the event at the
current time belongs to its own window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .events import Domain, EventStream, local_history_indices, transform_event
from .nets import (NeuralScoreModel, TrainingSet, TrainingDivergedError,
                   _backward_batch, _forward_batch, build_training_set)
from .regions import RegionUnion
from .score import WeightConfig, anomaly, anomaly_stream, hyvarinen

DISTANCE_MATRIX_CAP = 6000


@dataclass(frozen=True)
class ScoredEvent:
    t: float
    s1: float
    s2: float
    delta_value: float


@dataclass
class DetectionResult:
    """Stopping time, estimates, and the statistic trajectory."""

    stopped: bool
    nu: Optional[float]
    tau_hat: float
    omega_hat: RegionUnion
    trajectory_t: np.ndarray
    trajectory_w: np.ndarray
    detector: str = "stcusum"

    def to_dict(self) -> dict:
        return {
            "detector": self.detector,
            "stopped": self.stopped,
            "nu": self.nu,
            "tau_hat": self.tau_hat,
            "omega_hat": self.omega_hat.to_dict(),
            "trajectory": {"t": self.trajectory_t.tolist(),
                           "w": self.trajectory_w.tolist()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionResult":
        return cls(
            stopped=d["stopped"], nu=d["nu"], tau_hat=d["tau_hat"],
            omega_hat=RegionUnion.from_dict(d["omega_hat"]),
            trajectory_t=np.asarray(d["trajectory"]["t"], dtype=float),
            trajectory_w=np.asarray(d["trajectory"]["w"], dtype=float),
            detector=d.get("detector", "stcusum"),
        )

    def write_trajectory_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,w\n")
            for t, w in zip(self.trajectory_t, self.trajectory_w):
                fh.write(f"{t!r},{w!r}\n")


def _scored_arrays(scored: Sequence[ScoredEvent]):
    t = np.asarray([e.t for e in scored], dtype=float)
    s = np.asarray([[e.s1, e.s2] for e in scored], dtype=float).reshape(-1, 2)
    d = np.asarray([e.delta_value for e in scored], dtype=float)
    return t, s, d


def istep(scored: Sequence[ScoredEvent], tau_hat: float, delta: float,
          domain: Domain, exclude: bool = True) -> RegionUnion:
    """Region update: balls around positive window locations, minus the
    window's negative locations as excluded points."""
    t, s, d = _scored_arrays(scored)
    window = t >= tau_hat
    pos = window & (d > 0.0)
    if not pos.any():
        return RegionUnion.empty()
    neg = window & (d < 0.0)
    excluded = s[neg] if exclude else np.empty((0, 2))
    return RegionUnion.from_balls(s[pos], delta, domain.s_bounds, excluded=excluded)


def ostep(scored: Sequence[ScoredEvent], omega_hat: RegionUnion, t_now: float) -> float:
    """Change-time update: argmax over suffix windows, latest tie wins.

    Returns t_now itself to encode the empty window (value zero)."""
    if len(scored) == 0:
        return t_now
    t, s, d = _scored_arrays(scored)
    qual = omega_hat.contains_points(s)
    vals = np.concatenate([np.cumsum((qual * d)[::-1])[::-1], [0.0]])
    i_star = int(np.max(np.nonzero(vals == vals.max())[0]))
    return float(t[i_star]) if i_star < len(t) else t_now


def statistic(scored: Sequence[ScoredEvent], tau_hat: float,
              omega_hat: RegionUnion) -> float:
    """Sum of anomaly scores over window events inside the region."""
    if len(scored) == 0:
        return 0.0
    t, s, d = _scored_arrays(scored)
    window = t >= tau_hat
    qual = omega_hat.contains_points(s)
    return float(np.sum(d[window & qual]))


class _StreamAlternator:
    """Vectorized I-step/O-step alternation over a growing event prefix.

    Windows are tracked by start index; index n (one past the current event)
    is the empty-window sentinel.
    """

    def __init__(self, t: np.ndarray, s: np.ndarray, delta: float):
        self.t = t
        self.s = s
        self.delta = delta
        n = len(t)
        self.unique_locations = (len(np.unique(s, axis=0)) == n) if n else True
        if 0 < n <= DISTANCE_MATRIX_CAP:
            self.dist = np.maximum(
                np.abs(s[:, 0][:, None] - s[:, 0][None, :]),
                np.abs(s[:, 1][:, None] - s[:, 1][None, :]),
            )
        else:
            self.dist = None

    def _contained(self, j: int, pos_idx: np.ndarray) -> np.ndarray:
        """Mask over events 0..j lying in some ball around pos_idx."""
        if len(pos_idx) == 0:
            return np.zeros(j + 1, dtype=bool)
        if self.dist is not None:
            return (self.dist[: j + 1][:, pos_idx] <= self.delta).any(axis=1)
        s = self.s
        out = np.zeros(j + 1, dtype=bool)
        for p in pos_idx:
            d = np.maximum(np.abs(s[: j + 1, 0] - s[p, 0]),
                           np.abs(s[: j + 1, 1] - s[p, 1]))
            out |= d <= self.delta
        return out

    def _excluded_mask(self, j: int, neg_idx: np.ndarray) -> np.ndarray:
        out = np.zeros(j + 1, dtype=bool)
        out[neg_idx] = True
        if not self.unique_locations and len(neg_idx):
            # exclusions act on locations, so coincident points drop too
            eq = (self.s[: j + 1, None, :] == self.s[None, neg_idx, :]).all(axis=2)
            out |= eq.any(axis=1)
        return out

    def alternate(self, j: int, dvals: np.ndarray, k_epochs: int,
                  start: int = 0) -> tuple[float, int, int]:
        """Run k alternations over events 0..j; returns (W, tau_idx, region_window_start)."""
        w_start = start
        region_start = w_start
        best_val = 0.0
        i_star = j + 1
        for _ in range(k_epochs):
            region_start = w_start
            idx = np.arange(w_start, j + 1)
            pos_idx = idx[dvals[w_start: j + 1] > 0.0]
            if len(pos_idx) == 0:
                qual = np.zeros(j + 1, dtype=bool)
            else:
                qual = self._contained(j, pos_idx)
                neg_idx = idx[dvals[w_start: j + 1] < 0.0]
                qual &= ~self._excluded_mask(j, neg_idx)
            contrib = np.where(qual, dvals[: j + 1], 0.0)
            vals = np.concatenate([np.cumsum(contrib[::-1])[::-1], [0.0]])
            i_star = int(np.max(np.nonzero(vals == vals.max())[0]))
            best_val = float(vals[i_star])
            w_start = i_star
        return best_val, i_star, region_start

    def region(self, j: int, dvals: np.ndarray, window_start: int) -> RegionUnion:
        idx = np.arange(window_start, j + 1)
        pos_idx = idx[dvals[window_start: j + 1] > 0.0]
        if len(pos_idx) == 0:
            return RegionUnion.empty()
        neg_idx = idx[dvals[window_start: j + 1] < 0.0]
        excluded = self.s[neg_idx]
        return RegionUnion.from_balls(self.s[pos_idx], self.delta,
                                      self.domain_bounds, excluded=excluded)

    domain_bounds = (0.0, 0.0, 1.0, 1.0)  # set by run_detector


def run_detector(stream: EventStream, model0, model1, gamma: float,
                 k_epochs: int, delta: float, wcfg: WeightConfig,
                 domain: Domain, warm_start: bool = False,
                 delta_values: Optional[np.ndarray] = None) -> DetectionResult:
    """Process events in order, alternate K times per event from a fresh
    window (or the previous one with ``warm_start``), and stop when the
    statistic reaches gamma.

    ``delta_values`` overrides the per-event anomaly scores (used by tests
    and by callers that precompute them); otherwise they come from the two
    score models.
    """
    if not k_epochs >= 1:
        raise ValueError("k_epochs must be at least 1")
    n = len(stream)
    if delta_values is None:
        dvals = anomaly_stream(model0, model1, stream, delta, wcfg, domain)
    else:
        dvals = np.asarray(delta_values, dtype=float)
        if len(dvals) != n:
            raise ValueError("delta_values length mismatch")
    alt = _StreamAlternator(stream.t, stream.s, delta)
    alt.domain_bounds = domain.s_bounds

    if n == 0:
        return DetectionResult(stopped=False, nu=None, tau_hat=0.0,
                               omega_hat=RegionUnion.empty(),
                               trajectory_t=np.empty(0), trajectory_w=np.empty(0))
    traj_t = np.empty(n)
    traj_w = np.empty(n)
    start = 0
    i_star = region_start = 0
    for j in range(n):
        if not warm_start:
            start = 0
        w_val, i_star, region_start = alt.alternate(j, dvals, k_epochs, start=start)
        start = min(i_star, j + 1)
        traj_t[j] = stream.t[j]
        traj_w[j] = w_val
        if w_val >= gamma:
            tau_hat = float(stream.t[i_star]) if i_star <= j else float(stream.t[j])
            return DetectionResult(
                stopped=True, nu=float(stream.t[j]), tau_hat=tau_hat,
                omega_hat=alt.region(j, dvals, region_start),
                trajectory_t=traj_t[: j + 1], trajectory_w=traj_w[: j + 1])
    j = n - 1
    tau_hat = float(stream.t[i_star]) if i_star <= j else float(stream.t[j])
    return DetectionResult(stopped=False, nu=None, tau_hat=tau_hat,
                           omega_hat=alt.region(j, dvals, region_start),
                           trajectory_t=traj_t, trajectory_w=traj_w)


def run_online_detector(stream: EventStream, model0: NeuralScoreModel,
                        gamma: float, k_epochs: int, delta: float,
                        wcfg: WeightConfig, domain: Domain, eta: float,
                        steps_per_event: int = 1, sigma: float = 0.02,
                        seed: int = 0, max_history: int = 32) -> DetectionResult:
    """Online variant: the post-change model starts as a copy of the
    pre-change model and is refreshed after each event by plain gradient
    steps on the denoising loss over the current estimated window/region.
    """
    if getattr(model0, "kind", "") != "neural":
        raise ValueError("online detection requires a neural pre-change model")
    model1 = model0.copy()
    n = len(stream)
    tset = build_training_set(stream, delta) if n else None
    alt = _StreamAlternator(stream.t, stream.s, delta)
    alt.domain_bounds = domain.s_bounds
    rng = np.random.default_rng(seed)

    dvals = np.zeros(n)
    traj_t = np.empty(n)
    traj_w = np.empty(n)
    for j in range(n):
        xt = transform_event(stream, j, delta)
        idx = local_history_indices(stream, j, delta, max_events=max_history)
        ht, hs = stream.t[idx], stream.s[idx]
        psi0 = hyvarinen(model0, wcfg, xt, ht, hs, domain)
        psi1 = hyvarinen(model1, wcfg, xt, ht, hs, domain)
        dvals[j] = anomaly(psi0, psi1)
        w_val, i_star, region_start = alt.alternate(j, dvals, k_epochs)
        traj_t[j] = stream.t[j]
        traj_w[j] = w_val
        if w_val >= gamma:
            tau_hat = float(stream.t[i_star]) if i_star <= j else float(stream.t[j])
            return DetectionResult(
                stopped=True, nu=float(stream.t[j]), tau_hat=tau_hat,
                omega_hat=alt.region(j, dvals, region_start),
                trajectory_t=traj_t[: j + 1], trajectory_w=traj_w[: j + 1],
                detector="stcusum-online")
        if eta > 0.0:
            _online_update(model1, alt, tset, j, dvals, region_start,
                           eta, steps_per_event, sigma, rng)
    if n == 0:
        return DetectionResult(stopped=False, nu=None, tau_hat=0.0,
                               omega_hat=RegionUnion.empty(),
                               trajectory_t=np.empty(0), trajectory_w=np.empty(0),
                               detector="stcusum-online")
    j = n - 1
    w_val, i_star, region_start = alt.alternate(j, dvals, k_epochs)
    tau_hat = float(stream.t[i_star]) if i_star <= j else float(stream.t[j])
    return DetectionResult(stopped=False, nu=None, tau_hat=tau_hat,
                           omega_hat=alt.region(j, dvals, region_start),
                           trajectory_t=traj_t, trajectory_w=traj_w,
                           detector="stcusum-online")


def _online_update(model1: NeuralScoreModel, alt: _StreamAlternator,
                   tset: TrainingSet, j: int, dvals: np.ndarray,
                   window_start: int, eta: float, steps: int,
                   sigma: float, rng: np.random.Generator) -> None:
    """Gradient steps restricted to events in the estimated window/region.

    When that set is empty (in particular at initialization, where the two
    models coincide and every anomaly score is exactly zero), the update
    falls back to the arriving event alone; augmenting an empty estimate
    with a zero-score point stays inside the optimal region family and
    breaks the copy-initialization symmetry so adaptation can start.
    """
    idx = np.arange(window_start, j + 1)
    pos_idx = idx[dvals[window_start: j + 1] > 0.0]
    if len(pos_idx) == 0:
        batch = np.array([j])
    else:
        qual = alt._contained(j, pos_idx)
        neg_idx = idx[dvals[window_start: j + 1] < 0.0]
        qual &= ~alt._excluded_mask(j, neg_idx)
        batch = np.nonzero(qual[window_start: j + 1])[0] + window_start
        if len(batch) == 0:
            batch = np.array([j])
    w = model1.weights
    for _ in range(steps):
        xb = tset.x[batch]
        eps = rng.normal(0.0, sigma, size=xb.shape)
        xp = xb + eps
        xp[:, 0] = np.maximum(xp[:, 0], 0.0)
        target = -eps / sigma ** 2
        f, cache = _forward_batch(w, tset.seq[batch], tset.mask[batch], xp,
                                  want_cache=True)
        resid = f - target
        loss = float(np.mean(np.sum(resid * resid, axis=1)))
        if not np.isfinite(loss):
            raise TrainingDivergedError("online loss diverged; reduce eta")
        df = 2.0 * resid / len(batch)
        grads = _backward_batch(w, df, cache)
        for name in grads:
            getattr(w, name)[...] -= eta * grads[name]
