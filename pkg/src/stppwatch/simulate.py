"""Event-stream generators: homogeneous Poisson and self-exciting Hawkes
processes on a planar domain, with an optional base-rate change injected at
time tau inside a spatial region.

The triggering kernel is separable and translation invariant: an exponential
decay in time multiplied by a spatial density (Gaussian or uniform on an
l-inf ball) that integrates to one over the plane.  Spatial kernel mass
falling outside the domain is not renormalized.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .events import Domain, Event, EventStream
from .regions import RegionUnion

EVENT_CAP_DEFAULT = 1_000_000

_SQRT2 = math.sqrt(2.0)


class SimulationBudgetError(RuntimeError):
    """Raised when a simulated stream exceeds the event cap."""


@dataclass(frozen=True)
class HawkesParams:
    """Base rate, branching ratio, temporal decay, and spatial kernel."""

    mu: float
    alpha: float = 0.0
    beta: float = 1.0
    spatial_sigma: float = 0.02
    kernel_kind: str = "gaussian"  # or "uniform"

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.spatial_sigma > 0:
            raise ValueError("spatial_sigma must be positive")
        if self.kernel_kind not in ("gaussian", "uniform"):
            raise ValueError("kernel_kind must be 'gaussian' or 'uniform'")

    @property
    def spatial_peak(self) -> float:
        if self.kernel_kind == "gaussian":
            return 1.0 / (2.0 * math.pi * self.spatial_sigma ** 2)
        return 1.0 / (4.0 * self.spatial_sigma ** 2)

    def spatial_density(self, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
        if self.kernel_kind == "gaussian":
            s2 = self.spatial_sigma ** 2
            return np.exp(-(dx * dx + dy * dy) / (2.0 * s2)) / (2.0 * math.pi * s2)
        inside = (np.abs(dx) <= self.spatial_sigma) & (np.abs(dy) <= self.spatial_sigma)
        return inside / (4.0 * self.spatial_sigma ** 2)

    def spatial_box_mass(self, cx, cy, box) -> np.ndarray:
        """Kernel mass centered at (cx, cy) integrated over an axis box."""
        x0, y0, x1, y1 = box
        cx = np.asarray(cx, dtype=float)
        cy = np.asarray(cy, dtype=float)
        if self.kernel_kind == "gaussian":
            s = self.spatial_sigma
            mx = 0.5 * (_erf((x1 - cx) / (s * _SQRT2)) - _erf((x0 - cx) / (s * _SQRT2)))
            my = 0.5 * (_erf((y1 - cy) / (s * _SQRT2)) - _erf((y0 - cy) / (s * _SQRT2)))
            return mx * my
        s = self.spatial_sigma
        wx = np.clip(np.minimum(x1, cx + s) - np.maximum(x0, cx - s), 0.0, None)
        wy = np.clip(np.minimum(y1, cy + s) - np.maximum(y0, cy - s), 0.0, None)
        return wx * wy / (4.0 * s * s)


def _erf(x):
    return np.vectorize(math.erf)(x) if np.ndim(x) else math.erf(x)


@dataclass(frozen=True)
class ChangeScenario:
    """Pre/post dynamics, change time tau, and change region omega.

    The regimes share alpha, beta, and the kernel unless
    ``allow_param_change`` is set; only the base rate changes inside
    [tau, T) x omega.
    """

    pre: HawkesParams
    post: HawkesParams
    tau: float
    omega: RegionUnion
    domain: Domain
    allow_param_change: bool = False

    def __post_init__(self):
        if not 0.0 <= self.tau <= self.domain.t_end:
            raise ValueError("tau must lie in [0, t_end]")
        if not self.allow_param_change:
            same = (
                self.pre.alpha == self.post.alpha
                and self.pre.beta == self.post.beta
                and self.pre.spatial_sigma == self.post.spatial_sigma
                and self.pre.kernel_kind == self.post.kernel_kind
            )
            if not same:
                raise ValueError("pre/post may differ only in mu unless allow_param_change is set")

    @classmethod
    def no_change(cls, params: HawkesParams, domain: Domain) -> "ChangeScenario":
        return cls(pre=params, post=params, tau=domain.t_end,
                   omega=RegionUnion.empty(), domain=domain)

    def base_rate(self, t, s1, s2) -> np.ndarray:
        """Piecewise-constant background rate at space-time points."""
        t = np.asarray(t, dtype=float)
        post_mask = (t >= self.tau) & self.omega.contains_points(
            np.column_stack([np.broadcast_to(s1, t.shape).ravel(),
                             np.broadcast_to(s2, t.shape).ravel()])
        ).reshape(t.shape)
        return np.where(post_mask, self.post.mu, self.pre.mu)

    def to_dict(self) -> dict:
        d = {
            "t_end": self.domain.t_end,
            "s_bounds": list(self.domain.s_bounds),
            "pre": {"mu": self.pre.mu, "alpha": self.pre.alpha, "beta": self.pre.beta,
                    "spatial_sigma": self.pre.spatial_sigma, "kernel_kind": self.pre.kernel_kind},
            "post": {"mu": self.post.mu, "alpha": self.post.alpha, "beta": self.post.beta,
                     "spatial_sigma": self.post.spatial_sigma, "kernel_kind": self.post.kernel_kind},
            "tau": self.tau,
            "omega": self.omega.to_dict(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChangeScenario":
        domain = Domain(t_end=d["t_end"], s_bounds=tuple(d["s_bounds"]))
        pre = HawkesParams(**d["pre"])
        post_d = dict(d["pre"])
        post_d.update(d["post"])
        post = HawkesParams(**post_d)
        return cls(pre=pre, post=post, tau=d["tau"],
                   omega=RegionUnion.from_dict(d["omega"]), domain=domain)


def intensity_at(scenario: ChangeScenario, x: Event, history: EventStream) -> float:
    """Conditional intensity at x given a strictly earlier history."""
    if len(history) and not np.all(history.t < x.t):
        raise ValueError("history must precede the evaluation point in time")
    params = scenario.pre  # alpha/beta/kernel shared across regimes
    mu = float(scenario.base_rate(np.array([x.t]), x.s1, x.s2)[0])
    if len(history) == 0 or params.alpha == 0.0:
        return mu
    dt = x.t - history.t
    g = params.spatial_density(x.s1 - history.s[:, 0], x.s2 - history.s[:, 1])
    return mu + params.alpha * float(np.sum(params.beta * np.exp(-params.beta * dt) * g))


def stationary_intensity(p: HawkesParams) -> float:
    """Long-run event rate per unit area, mu / (1 - alpha)."""
    if p.alpha >= 1.0:
        raise ValueError("stationary intensity requires alpha < 1")
    return p.mu / (1.0 - p.alpha)


def simulate(scenario: ChangeScenario, seed: int,
             event_cap: int = EVENT_CAP_DEFAULT) -> EventStream:
    """Exact sampling by thinning a dominating process.

    The dominating intensity is frozen after every candidate: the maximal
    base rate plus each past event's decayed triggering kernel (valid
    because the excitation only decays between events, and the base-rate
    bound switches at tau, a clock breakpoint).  Candidate locations are
    drawn from the dominating mixture itself, background uniform on the
    domain or a triggering-kernel offset from the sampled parent, so the
    acceptance ratio stays near one even for sharply peaked kernels.
    Offspring proposals falling outside the domain are rejected, matching
    the non-renormalized boundary-leakage convention.
    """
    rng = np.random.default_rng(seed)
    params = scenario.pre
    domain = scenario.domain
    x0, y0, x1, y1 = domain.s_bounds
    area = domain.area
    alpha, beta = params.alpha, params.beta
    mu_pre = scenario.pre.mu
    mu_post_max = max(scenario.pre.mu, scenario.post.mu)

    cap = 256
    times = np.empty(cap)
    locs = np.empty((cap, 2))
    w = np.empty(cap)  # per-parent alpha*beta*exp(-beta (t - t_j)), kept current
    n = 0
    t = 0.0
    while True:
        mu_bound = mu_pre if t < scenario.tau else mu_post_max
        rate = mu_bound * area + float(w[:n].sum())
        if rate <= 0.0:
            if t < scenario.tau:
                t = scenario.tau
                continue
            break
        wait = rng.exponential(1.0 / rate)
        if t < scenario.tau and t + wait > scenario.tau:
            # bound switches at tau; memorylessness lets the clock restart
            w[:n] *= math.exp(-beta * (scenario.tau - t))
            t = scenario.tau
            continue
        t = t + wait
        if t >= domain.t_end:
            break
        # candidate location from the frozen dominating mixture
        pick = rng.uniform() * rate
        if pick < mu_bound * area:
            cs1 = rng.uniform(x0, x1)
            cs2 = rng.uniform(y0, y1)
        else:
            j = int(np.searchsorted(np.cumsum(w[:n]), pick - mu_bound * area))
            j = min(j, n - 1)
            if params.kernel_kind == "gaussian":
                off = rng.normal(0.0, params.spatial_sigma, size=2)
            else:
                off = rng.uniform(-params.spatial_sigma, params.spatial_sigma, size=2)
            cs1, cs2 = locs[j, 0] + off[0], locs[j, 1] + off[1]
        decay = math.exp(-beta * wait)
        w[:n] *= decay
        if not (x0 <= cs1 <= x1 and y0 <= cs2 <= y1):
            continue  # offspring mass outside the domain is discarded
        mu_here = scenario.post.mu if (
            t >= scenario.tau
            and scenario.omega.contains_points([[cs1, cs2]])[0]
        ) else scenario.pre.mu
        if n:
            g = params.spatial_density(cs1 - locs[:n, 0], cs2 - locs[:n, 1])
            local_now = float(np.sum(w[:n] * g))
        else:
            local_now = 0.0
        # the proposal intensity at this point was frozen before the decay
        bound_here = mu_bound + (local_now / decay if decay > 0.0 else 0.0)
        lam = mu_here + local_now
        if bound_here > 0.0 and rng.uniform() * bound_here <= lam:
            if n and t <= times[n - 1]:
                t = math.nextafter(times[n - 1], math.inf)  # jitter exact ties
            if n == cap:
                cap *= 2
                times = np.resize(times, cap)
                locs = np.resize(locs, (cap, 2))
                w = np.resize(w, cap)
            times[n] = t
            locs[n] = (cs1, cs2)
            w[n] = alpha * beta
            n += 1
            if n > event_cap:
                raise SimulationBudgetError(
                    f"simulation exceeded event cap of {event_cap}")
    if n == 0:
        return EventStream.empty()
    return EventStream(t=times[:n].copy(), s=locs[:n].copy())


def simulate_ball_process(mu_rate: float, alpha: float, beta: float,
                          n_events: int, seed: int,
                          kernel_mass: float = 1.0) -> np.ndarray:
    """Event times of a self-exciting process with total ground rate
    ``mu_rate`` plus exponential excitation, sampled by thinning.

    Used to realize the localized in-ball flow exactly when all events share
    one location; ``kernel_mass`` is the spatial kernel mass retained by the
    ball.  Returns the first ``n_events`` arrival times.
    """
    rng = np.random.default_rng(seed)
    times = np.empty(n_events)
    ex = 0.0  # sum of alpha*beta*exp(-beta gap) * kernel_mass
    t = 0.0
    k = 0
    while k < n_events:
        c = mu_rate + ex
        wait = rng.exponential(1.0 / c)
        ex *= math.exp(-beta * wait)
        t += wait
        lam = mu_rate + ex
        if rng.uniform() * c <= lam:
            times[k] = t
            ex += alpha * beta * kernel_mass
            k += 1
    return times


def excitation_profile(times: np.ndarray, beta: float,
                       weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Decayed sums E_k = sum_{j<k} w_j * beta * exp(-beta (t_k - t_j))."""
    n = len(times)
    out = np.zeros(n)
    if weights is None:
        weights = np.ones(n)
    acc = 0.0
    for k in range(1, n):
        gap = times[k] - times[k - 1]
        acc = (acc + beta * weights[k - 1]) * math.exp(-beta * gap)
        out[k] = acc
    return out


def compensator_increments(stream: EventStream, scenario: ChangeScenario) -> np.ndarray:
    """Integrated total intensity between consecutive events.

    For a correctly simulated stream these increments are standard
    exponential (time-rescaling).  Only supported for no-change scenarios or
    pre-change segments; the base-rate term is exact for the piecewise
    constant background, the excitation term uses exact kernel box masses.
    """
    params = scenario.pre
    domain = scenario.domain
    n = len(stream)
    if n == 0:
        return np.empty(0)
    box = domain.s_bounds
    # piecewise-constant background integrated over S
    def bg_rate(t):
        if t < scenario.tau:
            return scenario.pre.mu * domain.area
        om = scenario.omega.area()
        return scenario.pre.mu * (domain.area - om) + scenario.post.mu * om

    masses = params.spatial_box_mass(stream.s[:, 0], stream.s[:, 1], box)
    out = np.empty(n)
    prev_t = 0.0
    decayed = 0.0  # sum over history of alpha * mass_j * exp(-beta (prev_t - t_j))
    for k in range(n):
        t_k = float(stream.t[k])
        seg = 0.0
        a, b = prev_t, t_k
        if a < scenario.tau <= b:
            seg += bg_rate(a) * (scenario.tau - a) + bg_rate(scenario.tau) * (b - scenario.tau)
        else:
            seg += bg_rate(a) * (b - a)
        if params.alpha > 0.0:
            decay = math.exp(-params.beta * (b - a))
            seg += decayed * (1.0 - decay)
            decayed *= decay
        out[k] = seg
        if params.alpha > 0.0:
            decayed += params.alpha * float(masses[k])
        prev_t = t_k
    return out


def derive_seeds(seed: int, n: int) -> list[int]:
    """Deterministic per-trial seeds derived from a master seed."""
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]
