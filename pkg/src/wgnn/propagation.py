"""Wasserstein message passing over node-factor distributions."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateColumnError, DimensionError, InputError
from .linalg import SpectralFactors, gram_schmidt_ortho
from .ot import SUPPORT_FLOOR, GroundMetric, IBPConfig, ground_metric, ibp_barycenters


class SparseGraph:
    """Undirected simple graph stored as sorted neighbor arrays.

    Self-loops are dropped and duplicate edges merged at construction.
    """

    def __init__(self, n, adjacency):
        self.n = int(n)
        self.adjacency = [np.asarray(a, dtype=np.int64) for a in adjacency]
        if len(self.adjacency) != self.n:
            raise DimensionError(f"{len(self.adjacency)} neighbor lists for {self.n} nodes")
        self._closed = None

    @classmethod
    def from_edges(cls, n, edges):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise InputError(f"edge endpoint outside [0, {n})")
        edges = edges[edges[:, 0] != edges[:, 1]]
        both = np.concatenate([edges, edges[:, ::-1]])
        both = np.unique(both, axis=0)
        split = np.searchsorted(both[:, 0], np.arange(n + 1))
        adjacency = [both[split[i]:split[i + 1], 1] for i in range(n)]
        return cls(n, adjacency)

    def neighborhood_with_self(self, i):
        return np.union1d(self.adjacency[i], [i])

    @property
    def num_edges(self):
        return int(sum(len(a) for a in self.adjacency)) // 2

    def edges(self):
        """Each undirected edge once, as ``(i, j)`` with ``i < j``."""
        out = [(i, int(j)) for i in range(self.n) for j in self.adjacency[i] if i < j]
        return np.array(out, dtype=np.int64).reshape(-1, 2)

    def degrees(self):
        return np.array([len(a) for a in self.adjacency])

    def is_symmetric(self):
        pairs = {(i, int(j)) for i in range(self.n) for j in self.adjacency[i]}
        return all((j, i) in pairs for (i, j) in pairs)

    def permute(self, perm):
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        e = self.edges()
        return SparseGraph.from_edges(self.n, perm[e] if e.size else e)

    def closed_neighborhoods(self):
        """Flattened ``(groups, members)`` arrays over all ``N(i)`` including ``i``."""
        if self._closed is None:
            members = [self.neighborhood_with_self(i) for i in range(self.n)]
            groups = np.repeat(np.arange(self.n), [len(m) for m in members])
            flat = np.concatenate(members) if members else np.zeros(0, dtype=np.int64)
            self._closed = (groups, flat.astype(np.int64))
        return self._closed

    def __repr__(self):
        return f"SparseGraph(n={self.n}, edges={self.num_edges})"


@dataclass
class DistributionSet:
    rows: np.ndarray
    metric: GroundMetric
    support_id: str = "columns of V_k"

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != self.metric.k:
            raise DimensionError(f"rows {rows.shape} do not match metric of size {self.metric.k}")
        if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-9):
            raise InputError("distribution rows must be nonnegative and sum to 1")
        self.rows = rows

    @property
    def n(self):
        return self.rows.shape[0]


@dataclass
class LayerTrace:
    per_layer_U: list
    factors: SpectralFactors
    initial_U: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.initial_U is None:
            self.initial_U = self.factors.U

    @property
    def L(self):
        return len(self.per_layer_U)


def to_distribution(U, metric, support_id="columns of V_k"):
    """Row-wise softmax of a weight matrix, computed with log-sum-exp."""
    U = np.asarray(U, dtype=float)
    if not np.all(np.isfinite(U)):
        raise InputError("weight matrix contains non-finite entries")
    rows = np.exp(U - logsumexp(U, axis=1, keepdims=True))
    rows /= rows.sum(axis=1, keepdims=True)
    return DistributionSet(rows, metric, support_id)


def from_distribution(S, factors=None, floor=SUPPORT_FLOOR):
    """Map distributions back to an orthonormal weight matrix (log, then Gram-Schmidt)."""
    if factors is not None and factors.k != S.rows.shape[1]:
        raise DimensionError(f"distributions have {S.rows.shape[1]} atoms, factors have k={factors.k}")
    return gram_schmidt_ortho(np.log(np.maximum(S.rows, floor)))


def barycenter_update(S, G, cfg=IBPConfig()):
    """Replace every row by the barycenter of its closed neighborhood.

    Weights are uniform over ``N(i)``. A node without neighbors keeps its
    distribution as is; all other nodes are solved in one batched IBP run.
    """
    if S.n != G.n:
        raise DimensionError(f"{S.n} distributions for a graph with {G.n} nodes")
    groups, members = G.closed_neighborhoods()
    sizes = np.bincount(groups, minlength=G.n)
    out = S.rows.copy()
    busy = sizes > 1
    if busy.any():
        keep = busy[groups]
        remap = np.cumsum(busy) - 1
        g = remap[groups[keep]]
        w = 1.0 / sizes[groups[keep]]
        out[busy] = ibp_barycenters(
            S.rows[members[keep]], g, w, S.metric, cfg, n_groups=int(busy.sum())
        )
    return DistributionSet(out, S.metric, S.support_id)


def mean_update(U, G):
    """Arithmetic mean of the weight rows over each closed neighborhood."""
    groups, members = G.closed_neighborhoods()
    sums = np.zeros_like(U)
    np.add.at(sums, groups, U[members])
    return sums / np.bincount(groups, minlength=G.n)[:, None]


def wgnn_propagate(factors, G, L, h, cfg=IBPConfig(), metric=None, U0=None, support_id="columns of V_k"):
    """Run ``L`` layers of ``h`` Wasserstein aggregations each.

    ``U0`` overrides the starting weight matrix (defaults to ``factors.U``);
    ``metric`` defaults to the normalized singular-value metric of
    ``factors``. A degenerate orthogonalization is re-raised with the
    1-based layer index attached.
    """
    if L < 1 or h < 1:
        raise InputError(f"L and h must be >= 1, got L={L}, h={h}")
    if metric is None:
        metric = ground_metric(factors.lam, normalize=True)
    U = factors.U if U0 is None else U0
    layers = []
    for layer in range(1, L + 1):
        S = to_distribution(U, metric, support_id)
        for _ in range(h):
            S = barycenter_update(S, G, cfg)
        try:
            U = from_distribution(S)
        except DegenerateColumnError as err:
            raise err.with_layer(layer) from None
        layers.append(U)
    return LayerTrace(layers, factors, initial_U=factors.U if U0 is None else U0)


def mean_propagate(factors, G, L, h=1):
    """Euclidean counterpart of :func:`wgnn_propagate`: neighborhood means + Gram-Schmidt."""
    if L < 1 or h < 1:
        raise InputError(f"L and h must be >= 1, got L={L}, h={h}")
    U = factors.U
    layers = []
    for layer in range(1, L + 1):
        for _ in range(h):
            U = mean_update(U, G)
        try:
            U = gram_schmidt_ortho(U)
        except DegenerateColumnError as err:
            raise err.with_layer(layer) from None
        layers.append(U)
    return LayerTrace(layers, factors)


def layer_average(trace):
    return sum(trace.per_layer_U) / trace.L


def euclidean_embedding(trace, mode="average"):
    """Node features from a propagation trace.

    ``average``: mean of layers 1..L, multiplied back by ``diag(lambda) V^T``.
    ``concat``: layers 0..L side by side (no back-projection).
    """
    if trace.L == 0:
        raise InputError("empty layer trace")
    if mode == "average":
        f = trace.factors
        return (layer_average(trace) * f.lam) @ f.V.T
    if mode == "concat":
        return np.hstack([trace.initial_U] + list(trace.per_layer_U))
    raise InputError(f"unknown embedding mode {mode!r}")
