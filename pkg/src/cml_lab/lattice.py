"""States, metrics, node maps and couplings on finite lattice truncations.

A lattice state lives on the symmetric window of node indices -k..k; all
nodes outside the window are implicitly equal to the map's fixed point
``p_tau``.  Boundary conditions everywhere in this package are the
fill-with-fixed-point convention (never periodic), so the finite-window
operators agree with their infinite-lattice counterparts restricted to
the window.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "MetricParams",
    "NodeMap",
    "FiniteState",
    "Coupling",
    "Potential",
    "CouplingConstantEstimate",
    "doubling_map",
    "perturbed_doubling_map",
    "state",
    "metric_d",
    "embed",
    "project",
    "apply_bar_tau",
    "apply_coupling",
    "invert_coupling",
    "apply_T",
    "enumerate_inverse_branches",
    "estimate_coupling_constant",
]


@dataclass(frozen=True)
class MetricParams:
    """Parameters of the weighted sup-metric d(x,y) = sup_i theta^|i| d_I(x_i,y_i).

    ``alpha`` is the base of the variation seminorm and must satisfy
    alpha >= theta**beta so that the variation seminorm is dominated by
    the Hoelder seminorm.  ``circle`` switches d_I from |x-y| to the
    wrap-around distance on the circle (off by default).
    """

    theta: float = 0.5
    beta: float = 1.0
    alpha: float | None = None
    circle: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0,1), got {self.theta}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0,1], got {self.beta}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.theta ** self.beta)
        if not self.theta ** self.beta <= self.alpha < 1.0:
            raise ValueError(
                f"alpha must lie in [theta**beta, 1) = [{self.theta ** self.beta}, 1), "
                f"got {self.alpha}"
            )

    def node_distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        diff = np.abs(np.asarray(a) - np.asarray(b))
        if self.circle:
            diff = np.minimum(diff, 1.0 - diff)
        return diff


@dataclass(frozen=True)
class NodeMap:
    """A full-branch expanding map of [0,1) together with its inverse branches.

    ``forward`` and every inverse branch are vectorized over numpy arrays.
    ``eta`` is the uniform contraction factor of the inverse branches and
    ``p_tau`` a fixed point of the forward map.  ``trajectory_safe`` marks
    maps whose forward orbits survive binary floating point (the pure
    doubling map does not: it collapses to 0 in ~53 iterations).
    """

    name: str
    b: int
    forward: Callable[[np.ndarray], np.ndarray]
    inverse_branches: tuple[Callable[[np.ndarray], np.ndarray], ...]
    eta: float
    p_tau: float = 0.0
    trajectory_safe: bool = True
    forward_deriv: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.b < 1:
            raise ValueError("branch count must be positive")
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0,1), got {self.eta}")
        if abs(float(self.forward(np.array(self.p_tau))) - self.p_tau) > 1e-12:
            raise ValueError("p_tau is not fixed by the forward map")

    def branch_domains(self) -> np.ndarray:
        """Left endpoints of the monotone branch domains, plus the right end 1."""
        lefts = [float(br(np.array(0.0))) for br in self.inverse_branches]
        return np.array(sorted(lefts) + [1.0])

    def verify(self, samples: int = 200, rng: np.random.Generator | None = None) -> None:
        """Spot-check full-branch and contraction properties on random points."""
        rng = np.random.default_rng(0) if rng is None else rng
        x = rng.uniform(0.0, 1.0, samples)
        y = rng.uniform(0.0, 1.0, samples)
        for br in self.inverse_branches:
            zx, zy = br(x), br(y)
            if np.max(np.abs(self.forward(zx) - x)) > 1e-10:
                raise ValueError(f"{self.name}: inverse branch is not a right inverse")
            if np.max(np.abs(zx - zy) - self.eta * np.abs(x - y)) > 1e-12:
                raise ValueError(f"{self.name}: branch contraction factor exceeds eta")


def doubling_map() -> NodeMap:
    """The doubling map 2x mod 1: analytically transparent, but its forward
    floating-point orbits collapse, so it is barred from forward simulation."""
    return NodeMap(
        name="doubling",
        b=2,
        forward=lambda x: np.mod(2.0 * np.asarray(x, dtype=float), 1.0),
        inverse_branches=(
            lambda y: 0.5 * np.asarray(y, dtype=float),
            lambda y: 0.5 * np.asarray(y, dtype=float) + 0.5,
        ),
        eta=0.5,
        p_tau=0.0,
        trajectory_safe=False,
        forward_deriv=lambda x: np.full_like(np.asarray(x, dtype=float), 2.0),
    )


def perturbed_doubling_map(a: float = 0.05) -> NodeMap:
    """tau(x) = 2x + a sin(2 pi x) mod 1, expanding for a < 1/(2 pi).

    The two inverse branches are computed by a Newton iteration (the branch
    functions are smooth, strictly monotone with derivative >= 2 - 2 pi a).
    """
    if not 0.0 <= a < 1.0 / (2.0 * math.pi):
        raise ValueError(f"perturbation a must lie in [0, 1/(2 pi)), got {a}")
    two_pi = 2.0 * math.pi

    def forward(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.mod(2.0 * x + a * np.sin(two_pi * x), 1.0)

    def inverse(y: np.ndarray, branch: int) -> np.ndarray:
        # Solve 2x + a sin(2 pi x) = y + branch on the branch domain.
        target = np.asarray(y, dtype=float) + branch
        x = target / 2.0
        for _ in range(60):
            fx = 2.0 * x + a * np.sin(two_pi * x) - target
            dfx = 2.0 + two_pi * a * np.cos(two_pi * x)
            step = fx / dfx
            x = x - step
            if np.max(np.abs(step)) < 1e-15:
                break
        return np.clip(x, 0.0, np.nextafter(1.0, 0.0))

    return NodeMap(
        name=f"perturbed_doubling(a={a})",
        b=2,
        forward=forward,
        inverse_branches=(
            lambda y: inverse(y, 0),
            lambda y: inverse(y, 1),
        ),
        eta=1.0 / (2.0 - two_pi * a),
        p_tau=0.0,
        trajectory_safe=True,
        forward_deriv=lambda x: 2.0 + two_pi * a * np.cos(two_pi * np.asarray(x, dtype=float)),
    )


@dataclass(frozen=True)
class FiniteState:
    """A point of the width-(2k+1) lattice window; tail nodes sit at p_tau."""

    k: int
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if vals.shape != (2 * self.k + 1,):
            raise ValueError(
                f"values must have length 2k+1 = {2 * self.k + 1}, got shape {vals.shape}"
            )
        if np.any(vals < 0.0) or np.any(vals >= 1.0):
            raise ValueError("state values must lie in [0, 1)")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def width(self) -> int:
        return 2 * self.k + 1

    def node(self, index: int) -> float:
        """Value at lattice node ``index`` (0 is the center)."""
        if abs(index) > self.k:
            raise IndexError(f"node {index} outside window of half-width {self.k}")
        return float(self.values[index + self.k])


def state(values: Sequence[float]) -> FiniteState:
    """Build a FiniteState from an odd-length sequence of node values."""
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 1 or vals.size % 2 == 0:
        raise ValueError("state needs an odd-length 1-d sequence of node values")
    return FiniteState(k=(vals.size - 1) // 2, values=vals)


def _node_indices(k: int) -> np.ndarray:
    return np.arange(-k, k + 1)


def metric_d(
    x: FiniteState,
    y: FiniteState,
    m: MetricParams,
    node_map: NodeMap | None = None,
) -> float:
    """Weighted sup-metric; states of unequal width are compared after
    embedding the narrower one (tails agree at p_tau and contribute 0)."""
    if x.k != y.k:
        if node_map is None:
            raise ValueError("states of unequal width need a node_map for embedding")
        big = max(x.k, y.k)
        x = embed(x, big, node_map)
        y = embed(y, big, node_map)
    weights = m.theta ** np.abs(_node_indices(x.k))
    return float(np.max(weights * m.node_distance(x.values, y.values)))


def embed(x: FiniteState, k2: int, node_map: NodeMap) -> FiniteState:
    """Widen the window to half-width k2, filling new nodes with p_tau."""
    if k2 < x.k:
        raise ValueError(f"cannot embed into smaller window: k2={k2} < k={x.k}")
    if k2 == x.k:
        return x
    pad = k2 - x.k
    vals = np.full(2 * k2 + 1, node_map.p_tau)
    vals[pad : pad + x.width] = x.values
    return FiniteState(k=k2, values=vals)


def project(x: FiniteState, k1: int, node_map: NodeMap | None = None) -> FiniteState:
    """Keep the central 2*k1+1 nodes; the discarded tail reverts to p_tau."""
    if not 0 <= k1 <= x.k:
        raise ValueError(f"projection width must satisfy 0 <= k1 <= {x.k}, got {k1}")
    if k1 == x.k:
        return x
    drop = x.k - k1
    return FiniteState(k=k1, values=x.values[drop : drop + 2 * k1 + 1])


def apply_bar_tau(x: FiniteState, node_map: NodeMap) -> FiniteState:
    """Apply the node map at every lattice site."""
    return FiniteState(k=x.k, values=node_map.forward(x.values))


@dataclass(frozen=True)
class Coupling:
    """An invertible linear interaction between lattice nodes.

    The diffusive kind averages each node with its nearest neighbors with
    weight epsilon; nodes beyond the window contribute as p_tau.  A custom
    kind supplies an explicit banded row matrix which must be strictly
    diagonally dominant (which certifies invertibility).
    """

    kind: str = "diffusive"
    epsilon: float = 0.0
    matrix: np.ndarray | None = None
    measured_CE: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "diffusive":
            if not 0.0 <= self.epsilon < 0.5:
                raise ValueError(
                    f"diffusive strength must lie in [0, 1/2), got {self.epsilon}"
                )
        elif self.kind == "matrix":
            if self.matrix is None:
                raise ValueError("matrix kind needs an explicit matrix")
            a = np.asarray(self.matrix, dtype=float)
            if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] % 2 == 0:
                raise ValueError("coupling matrix must be square with odd dimension")
            diag = np.abs(np.diag(a))
            off = np.sum(np.abs(a), axis=1) - diag
            if np.any(diag <= off):
                raise ValueError("coupling matrix must be strictly diagonally dominant")
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, "matrix", a)
        else:
            raise ValueError(f"unknown coupling kind {self.kind!r}")

    def dense_matrix(self, k: int) -> np.ndarray:
        """The linear part acting on the 2k+1 window values."""
        d = 2 * k + 1
        if self.kind == "matrix":
            if self.matrix.shape[0] != d:
                raise ValueError(
                    f"coupling matrix is {self.matrix.shape[0]}-dimensional, window is {d}"
                )
            return np.asarray(self.matrix)
        a = np.eye(d) * (1.0 - self.epsilon)
        idx = np.arange(d - 1)
        a[idx, idx + 1] = self.epsilon / 2.0
        a[idx + 1, idx] = self.epsilon / 2.0
        return a

    def boundary_offset(self, k: int, p_tau: float) -> np.ndarray:
        """Constant contribution of the p_tau tail to the edge nodes."""
        d = 2 * k + 1
        c = np.zeros(d)
        if self.kind == "diffusive":
            c[0] += self.epsilon / 2.0 * p_tau
            c[-1] += self.epsilon / 2.0 * p_tau
        return c

    def apply_to_array(self, vals: np.ndarray, k: int, p_tau: float) -> np.ndarray:
        """Apply the coupling to values of shape (..., 2k+1)."""
        vals = np.asarray(vals, dtype=float)
        if self.kind == "diffusive":
            if self.epsilon == 0.0:
                return vals
            left = np.concatenate(
                [np.full(vals.shape[:-1] + (1,), p_tau), vals[..., :-1]], axis=-1
            )
            right = np.concatenate(
                [vals[..., 1:], np.full(vals.shape[:-1] + (1,), p_tau)], axis=-1
            )
            return (1.0 - self.epsilon) * vals + 0.5 * self.epsilon * (left + right)
        return vals @ self.dense_matrix(k).T + self.boundary_offset(k, p_tau)

    def invert_on_array(self, vals: np.ndarray, k: int, p_tau: float) -> np.ndarray:
        """Solve E(x) = vals for values of shape (..., 2k+1); boundary terms
        from the p_tau tail move to the right-hand side."""
        a = self.dense_matrix(k)
        c = self.boundary_offset(k, p_tau)
        rhs = np.asarray(vals, dtype=float) - c
        return np.linalg.solve(a, rhs[..., None])[..., 0]


def apply_coupling(x: FiniteState, coupling: Coupling, node_map: NodeMap) -> FiniteState:
    out = coupling.apply_to_array(x.values, x.k, node_map.p_tau)
    if np.any(out < 0.0) or np.any(out >= 1.0):
        raise ValueError(
            "coupling output escapes [0,1); the supplied matrix is not a lattice coupling"
        )
    return FiniteState(k=x.k, values=out)


def invert_coupling(y: FiniteState, coupling: Coupling, node_map: NodeMap) -> FiniteState:
    """Invert the coupling by a direct linear solve; rejects inputs outside
    the range of E (solution leaves [0,1))."""
    sol = coupling.invert_on_array(y.values, y.k, node_map.p_tau)
    if np.any(sol < 0.0) or np.any(sol >= 1.0):
        raise ValueError("input is not in the range of the coupling on this window")
    residual = coupling.apply_to_array(sol, y.k, node_map.p_tau) - y.values
    if np.max(np.abs(residual)) > 1e-12:
        raise ValueError("coupling solve did not converge to tolerance 1e-12")
    return FiniteState(k=y.k, values=sol)


def apply_T(x: FiniteState, node_map: NodeMap, coupling: Coupling) -> FiniteState:
    """One step of the coupled dynamics: interaction after the nodewise map."""
    return apply_coupling(apply_bar_tau(x, node_map), coupling, node_map)


def enumerate_inverse_branches(
    x: FiniteState, node_map: NodeMap
) -> Iterator[FiniteState]:
    """Lazily yield the b**(2k+1) preimages of x under the nodewise map.

    Order is lexicographic in (node index from -k to k, branch index); the
    leftmost node's branch index varies slowest.  Required for reproducible
    truncated sums.
    """
    per_node = [
        np.array([float(br(np.array(v))) for br in node_map.inverse_branches])
        for v in x.values
    ]
    for choice in itertools.product(range(node_map.b), repeat=x.width):
        vals = np.array([per_node[i][j] for i, j in enumerate(choice)])
        yield FiniteState(k=x.k, values=vals)


def branch_preimage_table(values: np.ndarray, node_map: NodeMap) -> np.ndarray:
    """All nodewise branch preimages of point arrays.

    ``values`` has shape (d, n); the result has shape (b**d, d, n), rows
    ordered like :func:`enumerate_inverse_branches`.
    """
    values = np.asarray(values, dtype=float)
    d, _ = values.shape
    per_branch = np.stack(
        [br(values) for br in node_map.inverse_branches]
    )  # (b, d, n)
    choices = np.array(list(itertools.product(range(node_map.b), repeat=d)))
    return per_branch[choices, np.arange(d)[None, :], :]


@dataclass(frozen=True)
class CouplingConstantEstimate:
    """Sampled lower bound on the interaction constant C_E.

    ``value`` maximizes the ratio of shifted metrics of inverted pairs over
    sampled pairs, hence never exceeds the true constant.  ``contracts``
    records whether value * eta < 1, the regime the theory requires.
    """

    value: float
    eta: float
    contracts: bool


def _shifted_metric(a: np.ndarray, b: np.ndarray, m: MetricParams, shift: int) -> float:
    k = (a.size - 1) // 2
    weights = m.theta ** np.abs(_node_indices(k) - shift)
    return float(np.max(weights * m.node_distance(a, b)))


def estimate_coupling_constant(
    coupling: Coupling,
    node_map: NodeMap,
    m: MetricParams,
    samples: int = 10_000,
    k: int = 3,
    rng: np.random.Generator | None = None,
) -> CouplingConstantEstimate:
    """Estimate C_E by maximizing the shifted-metric ratio over random pairs.

    The shift re-centers the metric weight at each node offset realizable
    inside the window (|shift| <= k).  The result is a sampled lower bound
    on the true constant.
    """
    if samples <= 0:
        raise ValueError("need at least one sample pair")
    rng = np.random.default_rng(0) if rng is None else rng
    d = 2 * k + 1
    best = 0.0
    xs = rng.uniform(0.0, 1.0, (samples, d))
    ys = rng.uniform(0.0, 1.0, (samples, d))
    ix = coupling.invert_on_array(xs, k, node_map.p_tau)
    iy = coupling.invert_on_array(ys, k, node_map.p_tau)
    for i in range(samples):
        for shift in range(-k, k + 1):
            denom = _shifted_metric(xs[i], ys[i], m, shift)
            if denom == 0.0:
                continue
            num = _shifted_metric(ix[i], iy[i], m, shift)
            best = max(best, num / denom)
    return CouplingConstantEstimate(
        value=best, eta=node_map.eta, contracts=best * node_map.eta < 1.0
    )


@dataclass(frozen=True)
class Potential:
    """An observable/potential on lattice states with declared norm bounds.

    ``evaluator`` maps node-value arrays of shape (d, n) (rows ordered from
    node -k to node k) to length-n arrays; it must be consistent across
    window widths under the p_tau tail convention.  The declared seminorms
    are a priori upper bounds; sampling estimators must stay below them.
    """

    name: str
    evaluator: Callable[[np.ndarray, int], np.ndarray]
    declared_sup_norm: float
    declared_beta_norm: float
    declared_Valpha: float

    def __call__(self, x: FiniteState) -> float:
        return float(self.evaluator(x.values[:, None], x.k)[0])

    def on_array(self, values: np.ndarray, k: int) -> np.ndarray:
        """Evaluate on (d, n) arrays of window values, d = 2k+1."""
        return np.asarray(self.evaluator(values, k), dtype=float)
