"""Named potentials and observables on lattice windows.

Evaluators operate on arrays of window values with rows ordered from node
-k to node k.  Declared seminorm bounds are computed for a given metric
(theta, beta) and are upper bounds; the sampling estimators in
:mod:`cml_lab.transfer` produce lower bounds, so declared >= measured is
the consistency check.
"""

from __future__ import annotations

import math

import numpy as np

from .lattice import MetricParams, NodeMap, Potential

__all__ = [
    "zero_potential",
    "constant_potential",
    "node_sine_potential",
    "decaying_sine_potential",
    "srb_potential",
    "node_coordinate",
    "random_trig_observable",
]

_TWO_PI = 2.0 * math.pi


def zero_potential() -> Potential:
    return constant_potential(0.0, name="zero")


def constant_potential(c: float, name: str | None = None) -> Potential:
    return Potential(
        name=name or f"const({c})",
        evaluator=lambda vals, k: np.full(np.asarray(vals).shape[1], float(c)),
        declared_sup_norm=abs(c),
        declared_beta_norm=0.0,
        declared_Valpha=0.0,
    )


def node_sine_potential(
    amplitude: float, node: int = 0, metric: MetricParams | None = None
) -> Potential:
    """f(x) = amplitude * sin(2 pi x_node); zero when the node is outside
    the window (consistent with a p_tau = 0 tail)."""
    m = metric or MetricParams()

    def evaluate(vals: np.ndarray, k: int) -> np.ndarray:
        vals = np.asarray(vals, dtype=float)
        if abs(node) > k:
            return np.zeros(vals.shape[1])
        return amplitude * np.sin(_TWO_PI * vals[node + k])

    return Potential(
        name=f"sine(node={node}, c={amplitude})",
        evaluator=evaluate,
        declared_sup_norm=abs(amplitude),
        declared_beta_norm=_TWO_PI * abs(amplitude) * m.theta ** (-m.beta * abs(node)),
        declared_Valpha=0.0 if node == 0 else 2.0 * abs(amplitude) / m.alpha ** (abs(node) - 1),
    )


def decaying_sine_potential(
    amplitude: float = 0.1,
    base: float = 4.0,
    metric: MetricParams | None = None,
) -> Potential:
    """f(x) = amplitude * sum_j base^-|j| sin(2 pi x_j) over the window.

    Assumes p_tau = 0 so that tail nodes contribute nothing and the value
    is consistent across window widths.  The node weight decays at rate
    1/base, so the k-th variation decays like base^-k.
    """
    m = metric or MetricParams()
    tail = 2.0 * amplitude * base ** -1 / (1.0 - 1.0 / base)  # sum over |j| > 0 bound
    sup = abs(amplitude) * (base + 1.0) / (base - 1.0)
    lip = _TWO_PI * abs(amplitude) * sum(
        base ** -abs(j) * m.theta ** (-m.beta * abs(j)) for j in range(-60, 61)
    )
    valpha = max(
        2.0 * abs(amplitude) * (2.0 * base ** -(k + 1) / (1.0 - 1.0 / base)) / m.alpha ** k
        for k in range(0, 200)
    )

    def evaluate(vals: np.ndarray, k: int) -> np.ndarray:
        vals = np.asarray(vals, dtype=float)
        weights = abs(amplitude) * base ** -np.abs(np.arange(-k, k + 1, dtype=float))
        return np.sign(amplitude) * weights @ np.sin(_TWO_PI * vals)

    del tail
    return Potential(
        name=f"decaying_sine(c={amplitude}, base={base})",
        evaluator=evaluate,
        declared_sup_norm=sup,
        declared_beta_norm=lip if not math.isinf(lip) else float("inf"),
        declared_Valpha=valpha,
    )


def srb_potential(
    node_map: NodeMap, max_k: int = 3, metric: MetricParams | None = None
) -> Potential:
    """The physical-measure potential sum_j (log b - log tau'(x_j)) over
    the window, making the branch weights proportional to 1/|tau'|.

    Each node contributes equally, so the Hoelder bound grows with the
    window; the declared bound is valid for windows up to half-width
    ``max_k`` only.  Trajectory statistics of uniformly-initialized orbits
    equilibrate to the eigen-measure of the operator built from this
    potential.
    """
    if node_map.forward_deriv is None:
        raise ValueError(f"{node_map.name} does not expose a derivative")
    m = metric or MetricParams()
    grid = np.linspace(0.0, 1.0, 4097)
    deriv = node_map.forward_deriv(grid)
    per_node_sup = float(np.max(np.abs(np.log(node_map.b) - np.log(deriv))))
    # Lipschitz constant of log tau' from a fine finite-difference scan.
    log_d = np.log(deriv)
    per_node_lip = float(np.max(np.abs(np.diff(log_d)) / np.diff(grid)))
    width_weight = sum(m.theta ** (-m.beta * abs(j)) for j in range(-max_k, max_k + 1))
    sup = per_node_sup * (2 * max_k + 1)

    def evaluate(vals: np.ndarray, k: int) -> np.ndarray:
        vals = np.asarray(vals, dtype=float)
        return np.sum(
            np.log(node_map.b) - np.log(node_map.forward_deriv(vals)), axis=0
        )

    return Potential(
        name=f"srb({node_map.name})",
        evaluator=evaluate,
        declared_sup_norm=sup,
        declared_beta_norm=per_node_lip * width_weight,
        declared_Valpha=per_node_sup * max(
            (2.0 * (j + 1)) / m.alpha ** j for j in range(0, 50)
        ),
    )


def node_coordinate(
    node: int = 0, offset: float = 0.0, metric: MetricParams | None = None
) -> Potential:
    """phi(x) = x_node - offset (p_tau - offset when outside the window)."""
    m = metric or MetricParams()

    def evaluate(vals: np.ndarray, k: int) -> np.ndarray:
        vals = np.asarray(vals, dtype=float)
        if abs(node) > k:
            raise ValueError(f"node {node} outside window of half-width {k}")
        return vals[node + k] - offset

    return Potential(
        name=f"coord(node={node}, offset={offset})",
        evaluator=evaluate,
        declared_sup_norm=max(abs(offset), abs(1.0 - offset)),
        declared_beta_norm=m.theta ** (-m.beta * abs(node)),
        declared_Valpha=0.0 if node == 0 else 1.0 / m.alpha ** (abs(node) - 1),
    )


def random_trig_observable(
    rng: np.random.Generator,
    max_node: int = 1,
    max_freq: int = 2,
    n_terms: int = 3,
    metric: MetricParams | None = None,
) -> Potential:
    """A random low-order trigonometric observable: a few terms of
    amp * cos(2 pi freq x_node + phase) on nodes inside the window."""
    m = metric or MetricParams()
    terms = []
    for _ in range(n_terms):
        terms.append(
            (
                float(rng.uniform(-1.0, 1.0)),
                int(rng.integers(-max_node, max_node + 1)),
                int(rng.integers(1, max_freq + 1)),
                float(rng.uniform(0.0, _TWO_PI)),
            )
        )

    def evaluate(vals: np.ndarray, k: int) -> np.ndarray:
        vals = np.asarray(vals, dtype=float)
        out = np.zeros(vals.shape[1])
        for amp, node, freq, phase in terms:
            if abs(node) <= k:
                out += amp * np.cos(_TWO_PI * freq * vals[node + k] + phase)
        return out

    sup = sum(abs(amp) for amp, *_ in terms)
    beta_norm = sum(
        abs(amp) * _TWO_PI * freq * m.theta ** (-m.beta * abs(node))
        for amp, node, freq, _ in terms
    )
    valpha = sum(
        0.0 if node == 0 else 2.0 * abs(amp) / m.alpha ** (abs(node) - 1)
        for amp, node, freq, _ in terms
    )
    return Potential(
        name="random_trig",
        evaluator=evaluate,
        declared_sup_norm=sup,
        declared_beta_norm=beta_norm,
        declared_Valpha=valpha,
    )
