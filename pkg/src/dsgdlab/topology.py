"""Gossip topologies and their mixing matrices.

Constructors build symmetric doubly stochastic weight matrices for ring,
2-d torus, complete, and Metropolis-Hastings weighted graphs.  The spectral
gap ``rho`` is one minus the largest eigenvalue modulus on the subspace
orthogonal to the consensus direction; it controls how fast repeated
averaging contracts disagreement between agents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DisconnectedGraph,
    InvalidTopology,
    InvalidWeight,
    NoMixing,
    NotDoublyStochastic,
)

#: Residual tolerance for symmetry, nonnegativity and row/column sums.
STOCHASTICITY_TOL = 1e-10

#: Spectral gaps at or below this value are treated as "does not mix".
NO_MIXING_TOL = 1e-12


@dataclass(frozen=True)
class Graph:
    """Undirected graph on nodes ``1..n`` with a deduplicated edge set.

    Edges are stored as ``(i, j)`` tuples with ``i < j`` (1-based).
    """

    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 1:
            raise InvalidTopology(f"need at least one node, got n={self.n}")
        for (i, j) in self.edges:
            if not (1 <= i < j <= self.n):
                raise InvalidTopology(f"edge ({i}, {j}) out of range for n={self.n}")

    @classmethod
    def from_edges(cls, n: int, pairs) -> "Graph":
        """Build a graph from possibly unordered, possibly repeated pairs."""
        edges = set()
        for (i, j) in pairs:
            if i == j:
                raise InvalidTopology(f"self loop ({i}, {j}) not allowed")
            a, b = (i, j) if i < j else (j, i)
            edges.add((a, b))
        return cls(n=n, edges=frozenset(edges))

    def degrees(self) -> np.ndarray:
        """Neighbor counts, self loops excluded (1-based nodes, 0-based array)."""
        deg = np.zeros(self.n, dtype=int)
        for (i, j) in self.edges:
            deg[i - 1] += 1
            deg[j - 1] += 1
        return deg

    def neighbors(self, i: int) -> list:
        return sorted(
            {j for (a, j) in self.edges if a == i} | {a for (a, j) in self.edges if j == i}
        )

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        adj = {i: [] for i in range(1, self.n + 1)}
        for (i, j) in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {1}
        stack = [1]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n


def read_edge_list(path) -> Graph:
    """Read a graph from a text file: first line ``n``, then ``i j`` lines (1-based)."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = [ln.strip() for ln in fh]
    lines = [ln for ln in raw if ln and not ln.startswith("#")]
    if not lines:
        raise InvalidTopology(f"{path}: empty edge-list file")
    try:
        n = int(lines[0])
    except ValueError as exc:
        raise InvalidTopology(f"{path}: first line must be the node count") from exc
    pairs = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise InvalidTopology(f"{path}: bad edge line {ln!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise InvalidTopology(f"{path}: bad edge line {ln!r}") from exc
    return Graph.from_edges(n, pairs)


@dataclass(frozen=True)
class SpectralReport:
    """Validation residuals and (when computed) spectral quantities of W.

    ``rho``/``second_modulus`` are ``None`` when only validation residuals
    were requested.  Invariant when present: ``rho == 1 - second_modulus``.
    """

    rho: float | None
    second_modulus: float | None
    row_sum_residual: float
    col_sum_residual: float
    asymmetry: float
    negativity: float

    @property
    def passed(self) -> bool:
        return (
            self.row_sum_residual <= STOCHASTICITY_TOL
            and self.col_sum_residual <= STOCHASTICITY_TOL
            and self.asymmetry <= STOCHASTICITY_TOL
            and self.negativity <= STOCHASTICITY_TOL
        )


@dataclass
class MixingMatrix:
    """Symmetric doubly stochastic weight matrix over ``n`` agents."""

    n: int
    weights: np.ndarray
    _spectral: SpectralReport | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.n, self.n):
            raise InvalidTopology(
                f"weight matrix shape {self.weights.shape} does not match n={self.n}"
            )


def _residuals(W: np.ndarray) -> tuple[float, float, float, float]:
    row = float(np.max(np.abs(W.sum(axis=1) - 1.0)))
    col = float(np.max(np.abs(W.sum(axis=0) - 1.0)))
    asym = float(np.max(np.abs(W - W.T)))
    neg = float(max(0.0, -np.min(W)))
    return row, col, asym, neg


def validate_mixing(mixing: MixingMatrix) -> SpectralReport:
    """Check symmetry, nonnegativity and row/column sums of W.

    Returns the residual report; raises :class:`NotDoublyStochastic` if any
    residual exceeds ``STOCHASTICITY_TOL``.  Spectral fields are left unset.
    """
    row, col, asym, neg = _residuals(mixing.weights)
    report = SpectralReport(
        rho=None,
        second_modulus=None,
        row_sum_residual=row,
        col_sum_residual=col,
        asymmetry=asym,
        negativity=neg,
    )
    if not report.passed:
        raise NotDoublyStochastic(
            "matrix is not symmetric doubly stochastic "
            f"(row={row:.3g}, col={col:.3g}, asym={asym:.3g}, neg={neg:.3g})",
            report=report,
        )
    return report


def spectral_gap(mixing: MixingMatrix) -> SpectralReport:
    """Validate W and compute its spectral gap.

    The consensus eigenpair (eigenvalue 1, uniform eigenvector) is deflated by
    subtracting the rank-one averaging matrix; the second modulus is the
    largest remaining eigenvalue magnitude.  Raises :class:`NoMixing` when the
    gap is at or below ``NO_MIXING_TOL``.
    """
    if mixing._spectral is not None:
        return mixing._spectral
    base = validate_mixing(mixing)
    W = mixing.weights
    n = mixing.n
    deflated = W - np.full((n, n), 1.0 / n)
    eigvals = np.linalg.eigvalsh(deflated)
    second = float(np.max(np.abs(eigvals)))
    rho = 1.0 - second
    if rho <= NO_MIXING_TOL:
        raise NoMixing(f"spectral gap {rho:.3g} is numerically zero")
    report = SpectralReport(
        rho=rho,
        second_modulus=second,
        row_sum_residual=base.row_sum_residual,
        col_sum_residual=base.col_sum_residual,
        asymmetry=base.asymmetry,
        negativity=base.negativity,
    )
    mixing._spectral = report
    return report


def build_ring(n: int, self_weight: float) -> MixingMatrix:
    """Ring of ``n`` agents: self weight ``s``, ``(1-s)/2`` to each neighbor."""
    if n < 3:
        raise InvalidTopology(f"ring needs n >= 3, got {n}")
    if not (0.0 < self_weight < 1.0):
        raise InvalidWeight(f"self weight must lie in (0, 1), got {self_weight}")
    W = np.zeros((n, n))
    side = (1.0 - self_weight) / 2.0
    for i in range(n):
        W[i, i] = self_weight
        W[i, (i + 1) % n] += side
        W[i, (i - 1) % n] += side
    return MixingMatrix(n=n, weights=W)


def build_torus_2d(rows: int, cols: int, self_weight: float) -> MixingMatrix:
    """2-d torus grid: self weight ``s``, ``(1-s)/4`` to each of four neighbors."""
    if rows < 3 or cols < 3:
        raise InvalidTopology(f"torus needs rows, cols >= 3, got ({rows}, {cols})")
    if not (0.0 < self_weight < 1.0):
        raise InvalidWeight(f"self weight must lie in (0, 1), got {self_weight}")
    n = rows * cols
    W = np.zeros((n, n))
    side = (1.0 - self_weight) / 4.0
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            W[i, i] = self_weight
            for (dr, dc) in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                j = ((r + dr) % rows) * cols + (c + dc) % cols
                W[i, j] += side
    return MixingMatrix(n=n, weights=W)


def build_complete(n: int) -> MixingMatrix:
    """Uniform averaging over a complete graph: every weight ``1/n``."""
    if n < 2:
        raise InvalidTopology(f"complete graph needs n >= 2, got {n}")
    return MixingMatrix(n=n, weights=np.full((n, n), 1.0 / n))


def build_metropolis_hastings(graph: Graph) -> MixingMatrix:
    """Metropolis-Hastings weights on an arbitrary connected graph.

    ``W[i, j] = 1 / (1 + max(deg_i, deg_j))`` on edges; the self weight
    absorbs the remainder so every row sums to one.
    """
    if not graph.is_connected():
        raise DisconnectedGraph(f"graph on {graph.n} nodes is not connected")
    deg = graph.degrees()
    W = np.zeros((graph.n, graph.n))
    for (i, j) in graph.edges:
        w = 1.0 / (1.0 + max(deg[i - 1], deg[j - 1]))
        W[i - 1, j - 1] = w
        W[j - 1, i - 1] = w
    for i in range(graph.n):
        W[i, i] = 1.0 - (W[i].sum() - W[i, i])
    return MixingMatrix(n=graph.n, weights=W)


def write_matrix_csv(path, mixing: MixingMatrix) -> None:
    """Write W as CSV, one row per line, 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in mixing.weights:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
