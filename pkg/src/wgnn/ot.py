"""Entropic optimal transport on a fixed, finite support.

Everything here works with distributions stored as rows of a 2-d array.
The batched barycenter solver :func:`ibp_barycenters` is what the message
passing layer uses; :func:`ibp_barycenter` is its single-problem face.
The exact solvers at the bottom (:func:`exact_w2_lp`,
:func:`exact_fixed_support_barycenter`, :func:`grid_search_barycenter`) are
small-scale reference oracles for testing.
"""

import itertools
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import (
    ConditioningWarning,
    ConvergenceError,
    DimensionError,
    EmptyInputError,
    InputError,
    ScaleError,
    WeightError,
    ZeroMetricError,
)

SUPPORT_FLOOR = 1e-30
# per-iteration shrink factor of the regularization when annealing
ANNEAL_DECAY = 0.9
# plain scaling iterations are used only while every kernel entry stays above
# this; scalings then remain far inside the float64 range
LOG_DOMAIN_THRESHOLD = 1e-100
# below this the shifted-matmul log-sum-exp loses the guaranteed positive floor
KERNEL_UNDERFLOW = 1e-200


@dataclass(frozen=True)
class GroundMetric:
    """Cost matrix plus the divisor applied to it.

    ``points`` is set when ``D[i, j] = |points[i] - points[j]|``; solvers
    then use an O(k) kernel application instead of a dense one.
    """

    D: np.ndarray
    scale: float = 1.0
    points: np.ndarray = None

    @property
    def k(self):
        return self.D.shape[0]


@dataclass(frozen=True)
class IBPConfig:
    epsilon: float = 1e-2
    iterations: int = 100
    support_floor: float = SUPPORT_FLOOR
    tol: float = 1e-9
    # > 1 starts at eps_scaling * epsilon and shrinks geometrically to epsilon
    eps_scaling: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InputError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.iterations) < 1:
            raise InputError(f"iterations must be >= 1, got {self.iterations}")
        if not self.support_floor > 0:
            raise InputError("support_floor must be positive")
        if not self.eps_scaling >= 1:
            raise InputError("eps_scaling must be >= 1")


def ground_metric(lam, normalize=True):
    """Cost matrix ``|lam_i^2 - lam_j^2|`` between latent factors.

    With ``normalize`` the matrix is divided by its largest entry and the
    divisor is kept in ``scale``.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise DimensionError("lambda must be a non-empty vector")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise InputError("singular values must be finite and nonnegative")
    sq = lam**2
    D = np.abs(sq[:, None] - sq[None, :])
    if not normalize:
        return GroundMetric(D, 1.0, sq)
    top = float(D.max())
    if top == 0.0:
        raise ZeroMetricError("all singular values are equal; metric is identically zero")
    return GroundMetric(D / top, top, sq / top)


def _as_cost(D):
    if isinstance(D, GroundMetric):
        D = D.D
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise DimensionError(f"cost matrix must be square, got {D.shape}")
    return D


def _line_points(D):
    if isinstance(D, GroundMetric) and D.points is not None:
        return np.asarray(D.points, dtype=float)
    return None


def gibbs_kernel(D, epsilon):
    """``exp(-D / epsilon)``; warns when entries fall below ``1e-200``."""
    if not epsilon > 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    K = np.exp(-_as_cost(D) / epsilon)
    if np.any(K < KERNEL_UNDERFLOW):
        warnings.warn(
            f"Gibbs kernel underflows (min entry {K.min():.3e}) at epsilon={epsilon}; "
            "barycenters degenerate towards the input with the largest weight. "
            "Normalize the metric or increase epsilon.",
            ConditioningWarning,
            stacklevel=2,
        )
    return K


def check_distribution(p, atol=1e-9, name="distribution"):
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise InputError(f"{name} has non-finite entries")
    if np.any(p < 0):
        raise InputError(f"{name} has negative entries")
    total = p.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > atol):
        raise InputError(f"{name} does not sum to 1 (sum={total})")
    return p


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


class _LogKernel:
    """Log-sum-exp against a fixed kernel, picking the cheapest stable route."""

    def __init__(self, D, epsilon):
        self.logK = -D / epsilon
        self.K = np.exp(self.logK)
        self.dense = bool(self.K.min() >= KERNEL_UNDERFLOW)

    def apply(self, F, transpose=False):
        """Row-wise ``log sum_j K[i, j] exp(F[c, j])`` (``K^T`` if transpose)."""
        if self.dense:
            K = self.K if transpose else self.K.T
            shift = F.max(axis=1, keepdims=True)
            with np.errstate(divide="ignore"):
                return np.log(np.exp(F - shift) @ K) + shift
        logK = self.logK.T if transpose else self.logK
        out = np.empty_like(F)
        step = max(1, 2**22 // (logK.size + 1))
        for lo in range(0, F.shape[0], step):
            blk = F[lo:lo + step]
            out[lo:lo + step] = logsumexp(logK[None, :, :] + blk[:, None, :], axis=2)
        return out


class _LineKernel:
    """``K = exp(-|a_i - a_j| / eps)`` for sorted points ``a``, applied in O(k).

    A forward and a backward recursion over the points give ``K @ x``
    exactly. Arrays are laid out atoms-first, ``(k, C)``.
    """

    def __init__(self, sorted_points, epsilon):
        self.decay = np.diff(sorted_points) / epsilon
        with np.errstate(under="ignore"):
            self.r = np.exp(-self.decay)

    def mul(self, E):
        k = E.shape[0]
        out = np.empty_like(E)
        out[0] = E[0]
        for t in range(1, k):
            np.multiply(out[t - 1], self.r[t - 1], out=out[t])
            out[t] += E[t]
        back = np.zeros_like(E[0])
        for t in range(k - 2, -1, -1):
            back += E[t + 1]
            back *= self.r[t]
            out[t] += back
        return out

    def log_apply(self, X):
        """``log(K @ exp(X))`` column-wise."""
        shift = X.max(axis=0)
        with np.errstate(under="ignore"):
            out = self.mul(np.exp(X - shift))
        # every column of exp(X - shift) holds a 1, so the sums lie in [1, k];
        # only terms far below the column max can be lost
        if out.min() > 0.0:
            return np.log(out) + shift
        return self._log_recursion(X)

    def _log_recursion(self, X):
        k = X.shape[0]
        fwd = np.empty_like(X)
        fwd[0] = X[0]
        for t in range(1, k):
            np.logaddexp(X[t], fwd[t - 1] - self.decay[t - 1], out=fwd[t])
        out = np.empty_like(X)
        out[k - 1] = fwd[k - 1]
        back = X[k - 1].copy()
        for t in range(k - 2, -1, -1):
            back -= self.decay[t]
            np.logaddexp(fwd[t], back, out=out[t])
            np.logaddexp(X[t], back, out=back)
        return out


def ibp_barycenters(P, groups, weights, D, cfg=IBPConfig(), n_groups=None):
    """Solve many fixed-support entropic barycenter problems at once.

    Parameters
    ----------
    P : (C, k) array
        Input distributions, one per row.
    groups : (C,) int array
        Problem index of every row; problems are numbered ``0..G-1``.
    weights : (C,) array
        Barycentric weight of each row within its problem (summing to 1 per
        problem).
    D : GroundMetric or (k, k) array
    cfg : IBPConfig

    Returns
    -------
    (G, k) array of barycenters, each row normalized to sum 1.

    All problems share one Gibbs kernel and are iterated together. The
    early exit (``cfg.tol``; 0 disables it) fires once every transport plan
    reproduces its input distribution to within ``tol`` in L1. With
    ``cfg.eps_scaling > 1`` the regularization is annealed (see
    :func:`eps_schedule`), which reaches small-``epsilon`` solutions in far
    fewer iterations; the early exit then waits until the target is reached.
    """
    metric, D = D, _as_cost(D)
    P = np.asarray(P, dtype=float)
    groups = np.asarray(groups, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    if P.ndim != 2 or P.shape[1] != D.shape[0]:
        raise DimensionError(f"distributions of shape {P.shape} do not match metric {D.shape}")
    C, k = P.shape
    if C == 0:
        raise EmptyInputError("no input distributions")
    G = int(groups.max()) + 1 if n_groups is None else int(n_groups)
    A = sp.csr_matrix((weights, (groups, np.arange(C))), shape=(G, C))

    Pc = np.maximum(P, cfg.support_floor)
    kern = _LogKernel(D, cfg.epsilon)
    points = _line_points(metric)
    logb = None
    if cfg.eps_scaling > 1:
        pass
    elif kern.K.min() >= LOG_DOMAIN_THRESHOLD:
        logb = _ibp_scaling(Pc, groups, A, kern.K, cfg)
    elif points is not None:
        logb = _ibp_line(Pc, groups, A, points, cfg)
    if logb is None:
        logb = _ibp_log(Pc, groups, A, lambda e: _LogKernel(D, e), cfg)
    bary = np.exp(logb - logsumexp(logb, axis=1, keepdims=True))
    return bary


def eps_schedule(epsilon, iterations, scaling=1.0):
    """Regularization used at each iteration: geometric decay to ``epsilon``."""
    e = epsilon * scaling
    out = []
    for _ in range(int(iterations)):
        out.append(max(epsilon, e))
        e *= ANNEAL_DECAY
    return out


# Each sweep fits the input marginals exactly, then the barycenter marginals;
# convergence is read off the input-marginal residual left over by the
# previous barycenter projection.

def _ibp_scaling(Pc, groups, A, K, cfg):
    v = np.ones_like(Pc)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for it in range(int(cfg.iterations)):
            kv = v @ K.T
            if it and cfg.tol and np.abs(u * kv - Pc).sum(axis=1).max() < cfg.tol:
                break
            u = Pc / kv
            ktu = u @ K
            logb = A @ np.log(ktu)
            v = np.exp(logb)[groups] / ktu
            if not np.all(np.isfinite(v)) or not np.all(v > 0):
                return None
    return logb


# scalings are trusted only inside this range; outside it the log-domain
# iteration takes over
_SAFE = (1e-280, 1e280)


def _ibp_line(Pc, groups, A, points, cfg):
    order = np.argsort(points, kind="stable")
    kern = _LineKernel(points[order], cfg.epsilon)
    PT = np.ascontiguousarray(Pc[:, order].T)
    logbT = _ibp_line_scaling(PT, groups, A, kern, cfg)
    if logbT is None:
        logbT = _ibp_line_log(PT, groups, A, kern, cfg)
    logb = np.empty((logbT.shape[1], logbT.shape[0]))
    logb[:, order] = logbT.T
    return logb


def _ibp_line_scaling(PT, groups, A, kern, cfg):
    v = np.ones_like(PT)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore", under="ignore"):
        for it in range(int(cfg.iterations)):
            kv = kern.mul(v)
            if it and cfg.tol and np.abs(u * kv - PT).sum(axis=0).max() < cfg.tol:
                break
            u = PT / kv
            ktu = kern.mul(u)
            logb = (A @ np.log(ktu).T).T
            v = np.exp(logb)[:, groups] / ktu
            if not (np.all(v > _SAFE[0]) and np.all(v < _SAFE[1]) and np.all(u < _SAFE[1])):
                return None
    return logb


def _ibp_line_log(PT, groups, A, kern, cfg):
    logP = np.log(PT)
    g = np.zeros_like(PT)
    for it in range(int(cfg.iterations)):
        lkv = kern.log_apply(g)
        if it and cfg.tol and np.abs(np.exp(f + lkv) - PT).sum(axis=0).max() < cfg.tol:
            break
        f = logP - lkv
        lktu = kern.log_apply(f)
        logb = (A @ lktu.T).T
        g = logb[:, groups] - lktu
    return logb


def _ibp_log(Pc, groups, A, make_kernel, cfg):
    logP = np.log(Pc)
    g = np.zeros_like(Pc)
    prev = None
    for it, e in enumerate(eps_schedule(cfg.epsilon, cfg.iterations, cfg.eps_scaling)):
        if e != prev:
            kern = make_kernel(e)
            if prev is not None:
                # the dual potential eps * g carries over between regularizations
                g *= prev / e
        lkv = kern.apply(g)
        if it and e == prev and cfg.tol and np.abs(np.exp(f + lkv) - Pc).sum(axis=1).max() < cfg.tol:
            break
        prev = e
        f = logP - lkv
        lktu = kern.apply(f, transpose=True)
        logb = A @ lktu
        g = logb[groups] - lktu
    return logb


def ibp_barycenter(P, w, D, cfg=IBPConfig()):
    """Entropic barycenter of the rows of ``P`` with weights ``w``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[0] == 0 or P.size == 0:
        raise EmptyInputError("barycenter of zero distributions")
    check_distribution(P, name="input distribution")
    w = np.asarray(w, dtype=float)
    if w.shape != (P.shape[0],):
        raise DimensionError(f"weights shape {w.shape} does not match {P.shape[0]} inputs")
    if np.any(w < 0) or w.sum() <= 0:
        raise WeightError("weights must be nonnegative with positive total")
    w = w / w.sum()
    return ibp_barycenters(P, np.zeros(P.shape[0], dtype=np.int64), w, D, cfg, n_groups=1)[0]


def entropic_w2(p, q, D, epsilon, iterations=100_000, tol=1e-12, eps_scaling=100.0):
    """Sinkhorn transport cost ``sum(D * T)`` and plan ``T`` between ``p`` and ``q``.

    Runs in the log domain with epsilon scaling: the regularization starts
    at ``eps_scaling * epsilon`` and is halved stage by stage (each stage
    run to a marginal error of 1e-6) down to ``epsilon``, where iteration
    continues until the row marginal error (L1) is below ``tol``. The fixed
    point is the one of plain Sinkhorn at ``epsilon``; the stages only cut
    the iteration count. Raises :class:`ConvergenceError` if the error is
    still above ``1e-4`` after ``iterations`` sweeps in total.
    """
    D = _as_cost(D)
    p = check_distribution(p, name="p")
    q = check_distribution(q, name="q")
    if p.shape != (D.shape[0],) or q.shape != (D.shape[1],):
        raise DimensionError("distributions do not match the metric")
    if not epsilon > 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    if eps_scaling < 1:
        raise InputError("eps_scaling must be >= 1")
    stages = []
    e = epsilon * eps_scaling
    while e > epsilon:
        stages.append(e)
        e /= 2
    stages.append(epsilon)

    logp = np.log(np.maximum(p, SUPPORT_FLOOR))
    logq = np.log(np.maximum(q, SUPPORT_FLOOR))
    # potentials in cost units, so they carry over between stages
    f = np.zeros_like(p)
    g = np.zeros_like(q)
    err = np.inf
    used = 0
    for e in stages:
        target = tol if e == epsilon else 1e-6
        logK = -D / e
        while used < iterations:
            used += 1
            f = e * (logp - logsumexp(logK + g[None, :] / e, axis=1))
            g = e * (logq - logsumexp(logK + f[:, None] / e, axis=0))
            T = np.exp((f[:, None] + g[None, :] - D) / e)
            err = float(np.abs(T.sum(axis=1) - p).sum())
            if err < target:
                break
    if err > 1e-4:
        raise ConvergenceError(
            f"Sinkhorn marginal error {err:.3e} after {iterations} iterations (epsilon={epsilon})"
        )
    return float((D * T).sum()), T


# ---------------------------------------------------------------------------
# exact oracles

MAX_LP_SUPPORT = 8
MAX_BARY_SUPPORT = 4
MAX_BARY_INPUTS = 3


def _basis_path(basis, k, src_col, dst_row):
    """Cells on the tree path from column ``src_col`` to row ``dst_row``."""
    adj = {}
    for (i, j) in basis:
        adj.setdefault(("r", i), []).append((("c", j), (i, j)))
        adj.setdefault(("c", j), []).append((("r", i), (i, j)))
    start, goal = ("c", src_col), ("r", dst_row)
    parent = {start: None}
    todo = deque([start])
    while todo:
        node = todo.popleft()
        if node == goal:
            break
        for nxt, cell in adj.get(node, ()):
            if nxt not in parent:
                parent[nxt] = (node, cell)
                todo.append(nxt)
    path = []
    node = goal
    while parent[node] is not None:
        node, cell = parent[node]
        path.append(cell)
    return path[::-1]


def exact_w2_lp(p, q, D, max_pivots=10_000):
    """Exact transport cost by the transportation simplex.

    North-west corner start, MODI duals, Bland's rule for pivoting. Meant as
    a test oracle for supports of at most 8 points.
    """
    D = _as_cost(D)
    k = D.shape[0]
    if k > MAX_LP_SUPPORT:
        raise ScaleError(f"support size {k} above oracle limit {MAX_LP_SUPPORT}")
    p = check_distribution(p, name="p").copy()
    q = check_distribution(q, name="q").copy()
    q *= p.sum() / q.sum()

    x = np.zeros((k, k))
    basis = []
    a, b = p.copy(), q.copy()
    i = j = 0
    while i < k and j < k:
        t = min(a[i], b[j])
        x[i, j] = t
        basis.append((i, j))
        a[i] -= t
        b[j] -= t
        if i == k - 1 and j == k - 1:
            break
        if (a[i] <= b[j] and i < k - 1) or j == k - 1:
            i += 1
        else:
            j += 1

    for _ in range(max_pivots):
        u = np.full(k, np.nan)
        v = np.full(k, np.nan)
        u[0] = 0.0
        while np.isnan(u).any() or np.isnan(v).any():
            progressed = False
            for (r, c) in basis:
                if not np.isnan(u[r]) and np.isnan(v[c]):
                    v[c] = D[r, c] - u[r]
                    progressed = True
                elif np.isnan(u[r]) and not np.isnan(v[c]):
                    u[r] = D[r, c] - v[c]
                    progressed = True
            if not progressed:
                raise RuntimeError("transportation basis is not a spanning tree")
        reduced = D - u[:, None] - v[None, :]
        inbasis = set(basis)
        entering = None
        for r, c in itertools.product(range(k), range(k)):
            if (r, c) not in inbasis and reduced[r, c] < -1e-12:
                entering = (r, c)
                break
        if entering is None:
            return float((D * x).sum()), x
        r, c = entering
        path = _basis_path(basis, k, c, r)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(x[cell] for cell in minus)
        leaving = min(cell for cell in minus if x[cell] <= theta)
        for cell in minus:
            x[cell] -= theta
        for cell in plus:
            x[cell] += theta
        x[entering] += theta
        x[leaving] = 0.0
        basis.remove(leaving)
        basis.append(entering)
    raise ConvergenceError("transportation simplex did not terminate")


@dataclass
class BarycenterSolution:
    p: np.ndarray
    objective: float
    unique: bool


def _bary_lp(P, w, D):
    N, k = P.shape
    nv = k + N * k * k
    c = np.zeros(nv)
    rows, rhs = [], []
    for i in range(N):
        off = k + i * k * k
        c[off:off + k * k] = w[i] * D.ravel()
        for a in range(k):
            row = np.zeros(nv)
            row[off + a * k: off + (a + 1) * k] = 1.0
            row[a] = -1.0
            rows.append(row)
            rhs.append(0.0)
        for b in range(k):
            row = np.zeros(nv)
            row[off + b: off + k * k: k] = 1.0
            rows.append(row)
            rhs.append(P[i, b])
    return c, np.array(rows), np.array(rhs)


def exact_fixed_support_barycenter(P, w, D, seed=0):
    """Exact fixed-support barycenter ``argmin_p sum_i w_i W(p, P_i)``.

    Solves the joint linear program over ``p`` and one transport plan per
    input. ``unique`` is False when the optimal face contains more than one
    barycenter; this is detected by optimizing two random linear functionals
    of ``p`` over the optimal face.
    """
    D = _as_cost(D)
    P = np.atleast_2d(check_distribution(P, name="input distribution"))
    w = np.asarray(w, dtype=float)
    N, k = P.shape
    if k > MAX_BARY_SUPPORT or N > MAX_BARY_INPUTS:
        raise ScaleError(
            f"oracle handles k <= {MAX_BARY_SUPPORT}, N <= {MAX_BARY_INPUTS}; got k={k}, N={N}"
        )
    if w.shape != (N,) or np.any(w < 0) or w.sum() <= 0:
        raise WeightError("weights must be nonnegative with positive total")
    w = w / w.sum()
    c, A_eq, b_eq = _bary_lp(P, w, D)
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise ConvergenceError(f"barycenter LP failed: {res.message}")
    opt = float(res.fun)
    p = np.maximum(res.x[:k], 0.0)
    p /= p.sum()

    rng = np.random.default_rng(seed)
    A_ub = c[None, :]
    b_ub = [opt + 1e-9 * max(1.0, abs(opt))]
    spread = 0.0
    for _ in range(2):
        r = np.zeros_like(c)
        r[:k] = rng.standard_normal(k)
        lo = linprog(r, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        hi = linprog(-r, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        spread = max(spread, float(-hi.fun - lo.fun))
    return BarycenterSolution(p, opt, unique=spread < 1e-6)


def _simplex_grid(k, steps):
    for combo in itertools.combinations(range(steps + k - 1), k - 1):
        parts = np.diff((-1,) + combo + (steps + k - 1,)) - 1
        yield parts / steps


def grid_search_barycenter(P, w, D, resolution=0.01, refine_rounds=6):
    """Brute-force barycenter: simplex grid search, then local pattern search.

    Every candidate is scored with :func:`exact_w2_lp`. Only practical for
    ``k <= 3`` at the default resolution.
    """
    D = _as_cost(D)
    P = np.atleast_2d(check_distribution(P, name="input distribution"))
    w = np.asarray(w, dtype=float) / np.sum(w)
    N, k = P.shape
    if k > MAX_BARY_SUPPORT or N > MAX_BARY_INPUTS:
        raise ScaleError("grid search oracle only handles k <= 4, N <= 3")

    def objective(x):
        return sum(wi * exact_w2_lp(x, Pi, D)[0] for wi, Pi in zip(w, P))

    steps = int(round(1.0 / resolution))
    best, best_val = None, np.inf
    for x in _simplex_grid(k, steps):
        val = objective(x)
        if val < best_val - 1e-15:
            best, best_val = x, val
    step = resolution
    for _ in range(refine_rounds):
        step /= 2
        improved = True
        while improved:
            improved = False
            for a, b in itertools.permutations(range(k), 2):
                cand = best.copy()
                moved = min(step, cand[a])
                if moved <= 0:
                    continue
                cand[a] -= moved
                cand[b] += moved
                val = objective(cand)
                if val < best_val - 1e-15:
                    best, best_val, improved = cand, val, True
    return BarycenterSolution(best, float(best_val), unique=None)
