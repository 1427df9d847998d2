"""Trajectory-level verification: ensemble simulation, autocorrelation
fits, CLT normality testing and invariance-principle proxy diagnostics.

Replicas draw from independent streams of a counter-based generator
(Philox, keyed by the run seed and the replica index), so every replica
is independently reproducible and the whole ensemble replays bitwise from
the seed.  Aggregations run in fixed replica order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .lattice import Coupling, NodeMap, Potential

__all__ = [
    "EnsembleConfig",
    "simulate_ensemble",
    "AutocorrelationFit",
    "autocorrelation_fit",
    "CltResult",
    "clt_test",
    "AsipDiagnostics",
    "asip_diagnostic",
    "ks_distance_to_normal",
]

_ONE_MINUS = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class EnsembleConfig:
    """A reproducible ensemble run of the coupled dynamics.

    ``k_sim`` is the trajectory window half-width (may be much wider than
    any operator grid).  ``method`` is 'forward' for ordinary iteration or
    'pullback' for backward branch sampling; forward simulation of maps
    whose orbits collapse in floating point is refused.
    """

    node_map: NodeMap
    coupling: Coupling
    observable: Potential
    k_sim: int = 1
    n_steps: int = 1000
    n_replicas: int = 1
    burn_in: int = 100
    seed: int = 42
    method: str = "forward"

    def __post_init__(self) -> None:
        if self.burn_in >= self.n_steps:
            raise ValueError("burn_in must be smaller than n_steps")
        if self.n_replicas < 1:
            raise ValueError("need at least one replica")
        if self.method not in ("forward", "pullback"):
            raise ValueError(f"unknown simulation method {self.method!r}")
        if self.method == "forward" and not self.node_map.trajectory_safe:
            raise ValueError(
                f"{self.node_map.name} collapses under forward floating-point "
                "iteration; opt into method='pullback' instead"
            )


def _replica_rng(seed: int, replica: int) -> np.random.Generator:
    # one Philox stream per replica: the replica index is the second key word
    return np.random.Generator(np.random.Philox(key=[seed, replica]))


def simulate_ensemble(cfg: EnsembleConfig) -> np.ndarray:
    """Observable time series per replica, shape (n_replicas, n_steps - burn_in).

    Initial states are uniform on the window.  Forward steps clamp stray
    values at the interval edge and abort if clamping exceeds 0.01% of all
    node updates.
    """
    d = 2 * cfg.k_sim + 1
    states = np.empty((cfg.n_replicas, d))
    for r in range(cfg.n_replicas):
        states[r] = _replica_rng(cfg.seed, r).uniform(0.0, _ONE_MINUS, d)
    n_keep = cfg.n_steps - cfg.burn_in
    out = np.empty((cfg.n_replicas, n_keep))
    clamped = 0
    if cfg.method == "pullback":
        return _simulate_pullback(cfg)
    for step in range(cfg.n_steps):
        states = cfg.node_map.forward(states)
        states = cfg.coupling.apply_to_array(states, cfg.k_sim, cfg.node_map.p_tau)
        bad = (states < 0.0) | (states >= 1.0)
        if np.any(bad):
            clamped += int(bad.sum())
            np.clip(states, 0.0, _ONE_MINUS, out=states)
        if step >= cfg.burn_in:
            out[:, step - cfg.burn_in] = cfg.observable.on_array(states.T, cfg.k_sim)
    if clamped > 1e-4 * cfg.n_steps * cfg.n_replicas * d:
        raise RuntimeError(
            f"trajectories left [0,1) at {clamped} node updates; "
            "the configuration is not numerically trajectory-safe"
        )
    return out


def _simulate_pullback(cfg: EnsembleConfig) -> np.ndarray:
    """Backward branch sampling: iterate uniformly chosen inverse branches
    and reverse the orbit.  Samples the equal-branch-weight invariant
    measure of the nodewise map, so it is exact for the flat potential
    (Lebesgue for the doubling map) and immune to orbit collapse."""
    if cfg.coupling.kind == "diffusive" and cfg.coupling.epsilon != 0.0:
        raise ValueError("pullback sampling supports the uncoupled system only")
    d = 2 * cfg.k_sim + 1
    n_keep = cfg.n_steps - cfg.burn_in
    out = np.empty((cfg.n_replicas, n_keep))
    branches = np.array(
        [cfg.node_map.inverse_branches[j] for j in range(cfg.node_map.b)], dtype=object
    )
    for r in range(cfg.n_replicas):
        rng = _replica_rng(cfg.seed, r)
        x = rng.uniform(0.0, _ONE_MINUS, d)
        path = np.empty((cfg.n_steps, d))
        for step in range(cfg.n_steps):
            choice = rng.integers(0, cfg.node_map.b, d)
            x = np.array([branches[c](v) for c, v in zip(choice, x)])
            path[step] = x
        forward_orbit = path[::-1][cfg.burn_in:]
        out[r] = cfg.observable.on_array(forward_orbit.T, cfg.k_sim)
    return out


@dataclass(frozen=True)
class AutocorrelationFit:
    rate: float | None
    r_squared: float | None
    n_lags_used: int
    autocovariance: np.ndarray = field(repr=False)

    @property
    def fitted(self) -> bool:
        return self.rate is not None


def autocorrelation_fit(series: np.ndarray, n_max: int) -> AutocorrelationFit:
    """Fit a geometric decay rate to the empirical autocovariances.

    Accepts a single series or a replica stack (replicas averaged).  The
    fit is weighted log-linear over the lags where |C_n| exceeds three
    times its standard error; a series with no such lags yields an
    explicit no-fit result rather than an exception.
    """
    series = np.atleast_2d(np.asarray(series, dtype=float))
    n = series.shape[1]
    if n < 10 * n_max:
        raise ValueError(f"series length {n} is below 10 * n_max = {10 * n_max}")
    centered = series - series.mean(axis=1, keepdims=True)
    cov = np.zeros(n_max + 1)
    for lag in range(n_max + 1):
        prods = centered[:, : n - lag] * centered[:, lag:]
        cov[lag] = float(prods.mean())
    rho = cov / cov[0] if cov[0] > 0 else cov
    # Bartlett-style standard error for the autocovariance estimates
    n_eff = series.size
    se = cov[0] * math.sqrt((1.0 + 2.0 * float(np.sum(rho[1:] ** 2))) / n_eff)
    lags = np.arange(1, n_max + 1)
    keep = np.abs(cov[1:]) > 3.0 * se
    # fit over the initial contiguous run of significant lags
    run_end = 0
    for flag in keep:
        if not flag:
            break
        run_end += 1
    if run_end < 2:
        return AutocorrelationFit(
            rate=None, r_squared=None, n_lags_used=0, autocovariance=cov
        )
    x = lags[:run_end].astype(float)
    y = np.log(np.abs(cov[1 : run_end + 1]))
    w = (np.abs(cov[1 : run_end + 1]) / se) ** 2
    coeffs = np.polyfit(x, y, 1, w=np.sqrt(w))
    fit = np.polyval(coeffs, x)
    ss_res = float(np.sum(w * (y - fit) ** 2))
    ss_tot = float(np.sum(w * (y - np.average(y, weights=w)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return AutocorrelationFit(
        rate=float(np.exp(coeffs[0])),
        r_squared=r2,
        n_lags_used=run_end,
        autocovariance=cov,
    )


def ks_distance_to_normal(sample: np.ndarray) -> float:
    """Exact sup-distance between the empirical CDF of the sample and the
    standard normal CDF (erf-based evaluation)."""
    z = np.sort(np.asarray(sample, dtype=float))
    n = z.size
    cdf = ndtr(z)
    upper = np.max(np.arange(1, n + 1) / n - cdf)
    lower = np.max(cdf - np.arange(0, n) / n)
    return float(max(upper, lower))


@dataclass(frozen=True)
class CltResult:
    ks_distance: float
    critical_value: float
    passed: bool


def clt_test(sums: np.ndarray, n: int, sigma2: float) -> CltResult:
    """Standardize per-replica sums by sqrt(n sigma^2) and compare with the
    standard normal at the 1% level (critical value 1.63/sqrt(replicas))."""
    if sigma2 <= 0.0:
        raise ValueError("sigma^2 must be positive; the observable is degenerate")
    sums = np.asarray(sums, dtype=float)
    if sums.size < 500:
        raise ValueError("CLT test needs at least 500 replicas")
    z = sums / math.sqrt(n * sigma2)
    ks = ks_distance_to_normal(z)
    crit = 1.63 / math.sqrt(sums.size)
    return CltResult(ks_distance=ks, critical_value=crit, passed=ks < crit)


@dataclass(frozen=True)
class AsipDiagnostics:
    """Proxy diagnostics for the almost-sure invariance principle.

    These do not construct the Brownian coupling; they check its testable
    footprints: linear variance growth of partial sums, a bounded
    law-of-iterated-logarithm statistic on a long path, and normality at
    dyadic scales.  Pass envelopes come from an iid calibration run, not
    from theory.
    """

    variance_slope: float
    variance_r_squared: float
    lil_statistic: float
    ks_by_scale: tuple[tuple[int, float], ...]


def asip_diagnostic(
    long_series: np.ndarray,
    ensemble: np.ndarray,
    sigma2: float,
    lil_min_n: int = 1000,
) -> AsipDiagnostics:
    """Compute the three proxy diagnostics from a long single path and a
    replica ensemble of the same centered observable."""
    if sigma2 <= 0.0:
        raise ValueError("sigma^2 must be positive; the observable is degenerate")
    ensemble = np.atleast_2d(np.asarray(ensemble, dtype=float))
    long_series = np.asarray(long_series, dtype=float)

    centered = ensemble - ensemble.mean()
    cums = np.cumsum(centered, axis=1)
    n_steps = ensemble.shape[1]
    dyadic = [2 ** j for j in range(3, int(math.log2(n_steps)) + 1)]
    var_n = np.array([float(np.var(cums[:, n - 1])) for n in dyadic])
    coeffs = np.polyfit(np.array(dyadic, dtype=float), var_n, 1)
    fit = np.polyval(coeffs, np.array(dyadic, dtype=float))
    ss_res = float(np.sum((var_n - fit) ** 2))
    ss_tot = float(np.sum((var_n - var_n.mean()) ** 2))
    slope = float(coeffs[0] / sigma2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    s = np.cumsum(long_series - long_series.mean())
    ns = np.arange(1, s.size + 1)
    window = ns >= lil_min_n
    lil = float(
        np.max(
            np.abs(s[window])
            / np.sqrt(2.0 * sigma2 * ns[window] * np.log(np.log(ns[window])))
        )
    )

    ks_scales = []
    for n in dyadic:
        z = cums[:, n - 1] / math.sqrt(n * sigma2)
        ks_scales.append((n, ks_distance_to_normal(z)))
    return AsipDiagnostics(
        variance_slope=slope,
        variance_r_squared=r2,
        lil_statistic=lil,
        ks_by_scale=tuple(ks_scales),
    )
