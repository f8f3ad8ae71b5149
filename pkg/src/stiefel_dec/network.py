"""Graph topologies, Metropolis mixing matrices, and consensus-rate constants.

The mixing matrix W is symmetric doubly stochastic; its second-largest
singular value sigma2 governs gossip speed. Running t communication rounds
per optimization step corresponds to mixing with W^t.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError, StepsizeError, TopologyError
from .manifold import ConsensusRegionParams, SwarmState

_SYM_TOL = 1e-12
_ROWSUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected connected graph on nodes 0..n-1 without self-loops."""

    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"need n >= 1, got {self.n}")
        edges = frozenset(self.edges)
        for e in edges:
            i, j = e
            if not (0 <= i < j < self.n):
                raise ParameterError(f"bad edge {e}: need 0 <= i < j < n")
        object.__setattr__(self, "edges", edges)
        if not self._connected():
            raise TopologyError("graph is not connected")

    @classmethod
    def from_edges(cls, n: int, pairs) -> "Graph":
        """Build from any iterable of (i, j) pairs; orientation and duplicates are normalized."""
        edges = set()
        for i, j in pairs:
            if i == j:
                raise ParameterError(f"self-loop at node {i}")
            edges.add((min(i, j), max(i, j)))
        return cls(n=n, edges=frozenset(edges))

    def _connected(self) -> bool:
        if self.n == 1:
            return True
        adj = self.neighbors()
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n

    def neighbors(self) -> list:
        adj = [[] for _ in range(self.n)]
        for i, j in sorted(self.edges):
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


def ring_graph(n: int) -> Graph:
    """Cycle 0-1-...-(n-1)-0."""
    if n < 2:
        raise ParameterError(f"ring needs n >= 2, got {n}")
    return Graph.from_edges(n, ((i, (i + 1) % n) for i in range(n)))


def complete_graph(n: int) -> Graph:
    """All pairs connected; its Metropolis matrix is the equal-weight (1/n) matrix."""
    if n < 2:
        raise ParameterError(f"complete graph needs n >= 2, got {n}")
    return Graph.from_edges(n, ((i, j) for i in range(n) for j in range(i + 1, n)))


def erdos_renyi(n: int, p: float, rng: np.random.Generator, max_tries: int = 1000) -> Graph:
    """ER(n, p): each pair kept independently with probability p, resampled until connected."""
    if n < 2:
        raise ParameterError(f"ER graph needs n >= 2, got {n}")
    if not (0.0 < p <= 1.0):
        raise ParameterError(f"need p in (0, 1], got {p}")
    for _ in range(max_tries):
        edges = [
            (i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p
        ]
        try:
            return Graph.from_edges(n, edges)
        except TopologyError:
            continue
    raise TopologyError(f"no connected ER({n}, {p}) sample in {max_tries} tries")


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Symmetric doubly stochastic matrix with cached spectral quantities.

    sigma2 is the second-largest singular value (largest non-unit absolute
    eigenvalue); lambda_min and lambda2 are the smallest and second-largest
    eigenvalues. All are computed once by a dense symmetric eigendecomposition.
    """

    w: np.ndarray
    sigma2: float = field(init=False)
    lambda_min: float = field(init=False)
    lambda2: float = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).copy()
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError(f"mixing matrix must be square, got {w.shape}")
        n = w.shape[0]
        if np.abs(w - w.T).max() > _SYM_TOL:
            raise ParameterError("mixing matrix is not symmetric")
        if np.abs(w.sum(axis=1) - 1.0).max() > _ROWSUM_TOL:
            raise ParameterError("mixing matrix rows do not sum to 1")
        if w.min() < -1e-12:
            raise ParameterError("mixing matrix has negative entries")
        diag = np.diag(w)
        # n = 1 forces w = [[1]]; the open upper bound on the diagonal only
        # makes sense with at least two nodes.
        if n > 1 and not ((diag > 0.0).all() and (diag < 1.0).all()):
            raise ParameterError("need 0 < W_ii < 1 on the diagonal")
        evals = np.linalg.eigvalsh(w)
        if evals[0] <= -1.0 + 1e-12:
            raise ParameterError(f"smallest eigenvalue {evals[0]:.6g} not in (-1, 1]")
        if evals[-1] > 1.0 + 1e-12:
            raise ParameterError(f"largest eigenvalue {evals[-1]:.6g} exceeds 1")
        sigma2 = float(max(abs(evals[0]), abs(evals[-2]))) if n > 1 else 0.0
        if n > 1 and sigma2 >= 1.0:
            raise ParameterError("sigma2 must be < 1 (is the graph connected?)")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "sigma2", max(sigma2, 0.0))
        object.__setattr__(self, "lambda_min", float(evals[0]))
        object.__setattr__(self, "lambda2", float(evals[-2]) if n > 1 else 1.0)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def __repr__(self):
        return f"MixingMatrix(n={self.n}, sigma2={self.sigma2:.6g})"


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis rule: W_ij = 1/(1 + max(deg_i, deg_j)) on edges, diagonal fills the row."""
    deg = g.degrees()
    w = np.zeros((g.n, g.n))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return MixingMatrix(w)


def min_communication_rounds(w: MixingMatrix, n: int | None = None) -> int:
    """Smallest t with sigma2^t <= 1/(2 sqrt(n)), the per-step rounds the theory asks for."""
    n = w.n if n is None else n
    if n < 1:
        raise ParameterError(f"need n >= 1, got {n}")
    sigma2 = w.sigma2
    if sigma2 >= 1.0:
        raise ParameterError(f"sigma2 = {sigma2} must be < 1")
    if sigma2 <= 0.0:
        return 1
    target = 1.0 / (2.0 * math.sqrt(n))
    if sigma2 <= target:
        return 1
    t = max(1, math.ceil(math.log(target) / math.log(sigma2)))
    # Guard the ceiling against floating-point edge cases.
    while sigma2**t > target:
        t += 1
    while t > 1 and sigma2 ** (t - 1) <= target:
        t -= 1
    return t


def matrix_power(w: MixingMatrix, t: int) -> MixingMatrix:
    """W^t; stays symmetric doubly stochastic, with sigma2(W^t) = sigma2(W)^t."""
    if t < 1:
        raise ParameterError(f"need t >= 1, got {t}")
    wt = np.linalg.matrix_power(w.w, t)
    return MixingMatrix(0.5 * (wt + wt.T))


def mix(s, wt: MixingMatrix, rounds: int = 1) -> list:
    """Weighted neighborhood averages: output i is sum_j W_ij x_j.

    Accepts a SwarmState or a sequence of equally shaped ambient matrices.
    With rounds > 1 the matrix is applied that many times in sequence
    (sequential gossip); the result equals mixing once with W^rounds.
    Outputs are convex combinations and generally leave the manifold.
    """
    if rounds < 1:
        raise ParameterError(f"need rounds >= 1, got {rounds}")
    if isinstance(s, SwarmState):
        mats = [p.data for p in s.points]
    else:
        mats = [np.asarray(m, dtype=float) for m in s]
    n = len(mats)
    if wt.n != n:
        raise DimensionError(f"mixing matrix is {wt.n}x{wt.n}, swarm has {n} agents")
    shape = mats[0].shape
    stacked = np.stack([m.reshape(-1) for m in mats])
    for _ in range(rounds):
        stacked = wt.w @ stacked
    return [row.reshape(shape) for row in stacked]


@dataclass(frozen=True)
class ConsensusRateReport:
    """Constants of the per-step consensus contraction for W^t.

    l_t = 1 - lambda_min(W^t) is the gradient Lipschitz constant of the
    disagreement function; mu_t = 1 - lambda2(W^t); phi = 2 - delta2^2;
    alpha_bar caps the consensus stepsize; rho_t = sqrt(1 - gamma_t * alpha)
    is the contraction factor at the evaluated alpha.
    """

    t: int
    l_t: float
    mu_t: float
    phi: float
    alpha_bar: float
    alpha: float
    gamma_t: float
    rho_t: float


def consensus_rate_params(
    w: MixingMatrix,
    t: int,
    p: ConsensusRegionParams,
    alpha: float | None = None,
    retraction_bound: float = 1.0,
) -> ConsensusRateReport:
    """Evaluate the consensus contraction constants for t rounds of W.

    alpha defaults to the cap alpha_bar = min(phi / (2 l_t), 1, 1/M) where M
    is the second-order retraction bound (1 for the polar retraction).
    Raises StepsizeError when alpha exceeds alpha_bar.
    """
    if w.n < 2:
        raise ParameterError("consensus rate needs at least two agents")
    wt = matrix_power(w, t)
    l_t = 1.0 - wt.lambda_min
    mu_t = 1.0 - wt.lambda2
    phi = 2.0 - p.delta2**2
    alpha_bar = min(phi / (2.0 * l_t), 1.0, 1.0 / retraction_bound)
    if alpha is None:
        alpha = alpha_bar
    if alpha > alpha_bar * (1.0 + 1e-12):
        raise StepsizeError(f"alpha = {alpha} exceeds alpha_bar = {alpha_bar:.6g}")
    if alpha <= 0.0:
        raise StepsizeError(f"alpha must be positive, got {alpha}")
    gamma_t = float((1.0 - 4.0 * p.r * p.delta1**2) * (1.0 - p.delta2**2 / 2.0) * mu_t)
    rho_sq = 1.0 - gamma_t * alpha
    if not (0.0 < rho_sq < 1.0):
        raise ParameterError(f"contraction factor out of range: rho^2 = {rho_sq:.6g}")
    return ConsensusRateReport(
        t=t,
        l_t=l_t,
        mu_t=mu_t,
        phi=phi,
        alpha_bar=alpha_bar,
        alpha=float(alpha),
        gamma_t=gamma_t,
        rho_t=float(np.sqrt(rho_sq)),
    )


def spectral_dump(
    g: Graph, w: MixingMatrix, p: ConsensusRegionParams, t: int | None = None
) -> str:
    """Diagnostic text dump: n, edge list, sigma2, lambda_min, t_min, rho_t at alpha_bar."""
    t_min = min_communication_rounds(w)
    report = consensus_rate_params(w, t_min if t is None else t, p)
    edge_text = " ".join(f"{i}-{j}" for i, j in sorted(g.edges))
    lines = [
        f"n {g.n}",
        f"edges {edge_text}",
        f"sigma2 {w.sigma2:.12g}",
        f"lambda_min {w.lambda_min:.12g}",
        f"t_min {t_min}",
        f"rho_t {report.rho_t:.12g}",
    ]
    return "\n".join(lines)
