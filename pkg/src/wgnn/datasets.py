"""Dataset generation, masking and tab-separated file formats.

File formats (all 0-indexed, tab separated, one record per line):

* edges      ``<src>\\t<dst>``, undirected
* features   header ``n m nnz``, then ``<row>\\t<col>\\t<value>``
* labels     ``<node>\\t<label>``
* ratings    ``<user>\\t<item>\\t<rating>``
* splits     one node index per line

Parsers reject extra fields and report 1-based line numbers.

RNG stream order of :func:`gen_synthetic` (one ``numpy.random.Generator``
seeded with ``cfg.seed``): edge draws, label shuffles, per-node location,
per-node scale, attribute samples, train/val/test permutation.
"""

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError
from .linalg import MaskedMatrix
from .propagation import SparseGraph

FAMILIES = ("gumbel", "logistic", "laplace")


@dataclass
class NodeClassificationDataset:
    graph: SparseGraph
    features: MaskedMatrix
    labels: np.ndarray
    splits: dict
    name: str = "dataset"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.n != self.graph.n or self.labels.shape != (self.graph.n,):
            raise InputError("graph, features and labels disagree on the node count")
        seen = set()
        for key in ("train", "val", "test"):
            idx = np.asarray(self.splits[key], dtype=np.int64)
            self.splits[key] = idx
            if seen & set(idx.tolist()):
                raise InputError(f"split {key!r} overlaps an earlier split")
            seen |= set(idx.tolist())

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(self.graph.edges().tobytes())
        h.update(np.ascontiguousarray(self.features.values).tobytes())
        h.update(self.labels.tobytes())
        for key in ("train", "val", "test"):
            h.update(self.splits[key].tobytes())
        return h.hexdigest()[:16]


@dataclass
class RatingsDataset:
    rating_matrix: MaskedMatrix
    user_graph: SparseGraph
    item_graph: SparseGraph
    train: np.ndarray
    test: np.ndarray
    rating_levels: list
    name: str = "ratings"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64).reshape(-1, 2)
        self.test = np.asarray(self.test, dtype=np.int64).reshape(-1, 2)
        n, m = self.rating_matrix.values.shape
        if self.user_graph.n != n or self.item_graph.n != m:
            raise InputError("graph sizes do not match the rating matrix")
        for name, idx in (("train", self.train), ("test", self.test)):
            if idx.size and not self.rating_matrix.mask[idx[:, 0], idx[:, 1]].all():
                raise InputError(f"{name} entries must be observed")
        if set(map(tuple, self.train.tolist())) & set(map(tuple, self.test.tolist())):
            raise InputError("train and test entries overlap")
        self.rating_levels = sorted(float(r) for r in self.rating_levels)

    def train_matrix(self, entries=None):
        """Zero-filled matrix holding only the given (default: training) ratings."""
        idx = self.train if entries is None else entries
        out = np.zeros_like(self.rating_matrix.values)
        out[idx[:, 0], idx[:, 1]] = self.rating_matrix.values[idx[:, 0], idx[:, 1]]
        return out

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.rating_matrix.values).tobytes())
        h.update(self.train.tobytes())
        h.update(self.test.tobytes())
        h.update(self.user_graph.edges().tobytes())
        h.update(self.item_graph.edges().tobytes())
        return h.hexdigest()[:16]


@dataclass
class SyntheticConfig:
    community_sizes: tuple = (262, 207, 319)
    p_in: float = 0.035
    p_out: float = 0.005
    num_attributes: int = 100
    label_purity: float = 0.85
    families: tuple = FAMILIES
    loc_range: tuple = (0.0, 10.0)
    scale_range: tuple = (0.5, 2.0)
    train_frac: float = 0.1
    val_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.p_in <= 1 and 0 <= self.p_out <= 1):
            raise InputError("edge probabilities must lie in [0, 1]")
        if not 0 < self.label_purity <= 1:
            raise InputError("label purity must lie in (0, 1]")
        if any(int(s) <= 0 for s in self.community_sizes):
            raise InputError("community sizes must be positive")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise InputError(f"unknown attribute families {sorted(unknown)}")


@dataclass
class MaskSpec:
    mode: str = "partial"
    rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("partial", "entire"):
            raise InputError(f"mask mode must be 'partial' or 'entire', got {self.mode!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise InputError(f"mask rate must lie in [0, 1], got {self.rate}")


def _sample_family(rng, family, loc, scale, size):
    if family == "gumbel":
        return rng.gumbel(loc, scale, size)
    if family == "logistic":
        return rng.logistic(loc, scale, size)
    return rng.laplace(loc, scale, size)


def gen_synthetic(cfg=SyntheticConfig()):
    """Random partition graph with label-dependent attribute distributions."""
    rng = np.random.default_rng(cfg.seed)
    sizes = [int(s) for s in cfg.community_sizes]
    n = sum(sizes)
    community = np.repeat(np.arange(len(sizes)), sizes)

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(community[iu] == community[ju], cfg.p_in, cfg.p_out)
    hit = rng.random(iu.size) < prob
    graph = SparseGraph.from_edges(n, np.stack([iu[hit], ju[hit]], axis=1))

    num_labels = len(cfg.families)
    labels = np.empty(n, dtype=np.int64)
    start = 0
    for c, size in enumerate(sizes):
        major = c % num_labels
        n_major = int(round(cfg.label_purity * size))
        others = [y for y in range(num_labels) if y != major]
        block = np.full(size, major)
        if n_major < size:
            block[n_major:] = rng.choice(others, size=size - n_major) if others else major
        labels[start:start + size] = rng.permutation(block)
        start += size

    loc = rng.uniform(*cfg.loc_range, size=n)
    scale = rng.uniform(*cfg.scale_range, size=n)
    X = np.empty((n, cfg.num_attributes))
    for i in range(n):
        X[i] = _sample_family(rng, cfg.families[labels[i]], loc[i], scale[i], cfg.num_attributes)

    order = rng.permutation(n)
    n_train = int(round(cfg.train_frac * n))
    n_val = int(round(cfg.val_frac * n))
    splits = {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train:n_train + n_val]),
        "test": np.sort(order[n_train + n_val:]),
    }
    meta = {"communities": community.tolist(), "generator": "partition", "seed": cfg.seed}
    return NodeClassificationDataset(graph, MaskedMatrix.full(X), labels, splits, "synthetic", meta)


def apply_mask(X, spec):
    """Drop entries (``partial``) or whole rows (``entire``) with probability ``spec.rate``.

    ``X`` may be a plain array or a :class:`MaskedMatrix`; existing missing
    entries stay missing. Dropped entries are zero-filled.
    """
    if isinstance(X, MaskedMatrix):
        values, mask = X.values, X.mask
    else:
        values = np.asarray(X, dtype=float)
        mask = np.ones(values.shape, dtype=bool)
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "partial":
        keep = rng.random(values.shape) >= spec.rate
    else:
        keep = np.repeat((rng.random(values.shape[0]) >= spec.rate)[:, None], values.shape[1], axis=1)
    mask = mask & keep
    return MaskedMatrix(np.where(mask, values, 0.0), mask)


def planetoid_split(labels, per_class=20, n_val=500, n_test=1000, seed=0):
    """``per_class`` training nodes per label, then validation and test nodes."""
    labels = np.asarray(labels)
    order = np.random.default_rng(seed).permutation(labels.size)
    train = []
    for c in range(int(labels.max()) + 1):
        train.extend(order[labels[order] == c][:per_class].tolist())
    chosen = set(train)
    rest = [i for i in order.tolist() if i not in chosen]
    if len(rest) < n_val + n_test:
        raise InputError("not enough nodes for the requested validation and test sizes")
    return {
        "train": np.sort(np.array(train, dtype=np.int64)),
        "val": np.sort(np.array(rest[:n_val], dtype=np.int64)),
        "test": np.sort(np.array(rest[n_val:n_val + n_test], dtype=np.int64)),
    }


def knn_graph(features, k=10):
    """Symmetrized ``k``-nearest-neighbor graph under Euclidean distance.

    Ties are broken by node index so the result is deterministic.
    """
    F = np.asarray(features, dtype=float)
    sq = (F**2).sum(axis=1)
    dist = sq[:, None] + sq[None, :] - 2 * F @ F.T
    np.fill_diagonal(dist, np.inf)
    nbrs = np.argsort(dist, axis=1, kind="stable")[:, :k]
    src = np.repeat(np.arange(F.shape[0]), nbrs.shape[1])
    return SparseGraph.from_edges(F.shape[0], np.stack([src, nbrs.ravel()], axis=1))


# ---------------------------------------------------------------------------
# parsing


def _records(path, nfields, skip_header=False):
    """Yield ``(lineno, fields)``; blank lines are skipped."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if skip_header and lineno == 1:
                continue
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != nfields:
                raise ParseError(path, lineno, f"expected {nfields} tab-separated fields, got {len(parts)}")
            yield lineno, parts


def _int(path, lineno, text):
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, lineno, f"not an integer: {text!r}") from None


def _float(path, lineno, text):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"not a number: {text!r}") from None
    if not np.isfinite(value):
        raise ParseError(path, lineno, f"non-finite value {text!r}")
    return value


def read_edges(path, n=None):
    edges = []
    for lineno, (a, b) in _records(path, 2):
        i, j = _int(path, lineno, a), _int(path, lineno, b)
        if i < 0 or j < 0 or (n is not None and (i >= n or j >= n)):
            raise ParseError(path, lineno, f"node index out of range in edge ({i}, {j})")
        edges.append((i, j))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def read_features(path):
    with open(path) as fh:
        header = fh.readline().split()
    if len(header) != 3:
        raise ParseError(path, 1, "header must be 'n m nnz'")
    n, m, nnz = (_int(path, 1, h) for h in header)
    values = np.zeros((n, m))
    mask = np.zeros((n, m), dtype=bool)
    count = 0
    for lineno, (r, c, v) in _records(path, 3, skip_header=True):
        i, j = _int(path, lineno, r), _int(path, lineno, c)
        if not (0 <= i < n and 0 <= j < m):
            raise ParseError(path, lineno, f"entry ({i}, {j}) outside a {n}x{m} matrix")
        if mask[i, j]:
            raise ParseError(path, lineno, f"duplicate entry ({i}, {j})")
        values[i, j] = _float(path, lineno, v)
        mask[i, j] = True
        count += 1
    if count != nnz:
        raise ParseError(path, 1, f"header declares {nnz} entries, file has {count}")
    return MaskedMatrix(values, mask)


def read_labels(path, n):
    labels = np.full(n, -1, dtype=np.int64)
    for lineno, (a, b) in _records(path, 2):
        i, y = _int(path, lineno, a), _int(path, lineno, b)
        if not 0 <= i < n:
            raise ParseError(path, lineno, f"node {i} outside [0, {n})")
        if y < 0:
            raise ParseError(path, lineno, f"negative label {y}")
        if labels[i] >= 0:
            raise ParseError(path, lineno, f"duplicate label for node {i}")
        labels[i] = y
    missing = np.flatnonzero(labels < 0)
    if missing.size:
        raise ParseError(path, 0, f"{missing.size} nodes have no label (first: {missing[0]})")
    return labels


def read_index(path, n=None):
    out = []
    for lineno, (a,) in _records(path, 1):
        i = _int(path, lineno, a)
        if i < 0 or (n is not None and i >= n):
            raise ParseError(path, lineno, f"index {i} out of range")
        out.append(i)
    return np.array(out, dtype=np.int64)


def read_ratings(path, levels=None):
    rows = []
    allowed = None if levels is None else {float(x) for x in levels}
    for lineno, (a, b, r) in _records(path, 3):
        u, i, v = _int(path, lineno, a), _int(path, lineno, b), _float(path, lineno, r)
        if u < 0 or i < 0:
            raise ParseError(path, lineno, "negative user or item index")
        if allowed is not None and v not in allowed:
            raise ParseError(path, lineno, f"rating {v} is not one of the levels {sorted(allowed)}")
        rows.append((u, i, v))
    return rows


def load_citation(edge_file, feature_file, label_file, split_files=None, split_seed=0, name=None):
    """Load a node classification dataset from the tab-separated formats.

    ``split_files`` is a ``(train, val, test)`` triple of index files; when
    omitted the split is drawn with :func:`planetoid_split`.
    """
    features = read_features(feature_file)
    n = features.n
    graph = SparseGraph.from_edges(n, read_edges(edge_file, n))
    labels = read_labels(label_file, n)
    if split_files is None:
        splits = planetoid_split(labels, seed=split_seed)
        source = f"generated(seed={split_seed})"
    else:
        splits = {k: read_index(p, n) for k, p in zip(("train", "val", "test"), split_files)}
        source = "files"
    name = name or Path(feature_file).parent.name or "citation"
    return NodeClassificationDataset(graph, features, labels, splits, name, {"split": source})


def load_ratings(train_file, test_file, user_graph_file, item_graph_file, rating_levels=None,
                 n_users=None, n_items=None, name=None):
    """Load a ratings dataset (train/test rating files plus user and item graphs)."""
    train = read_ratings(train_file, rating_levels)
    test = read_ratings(test_file, rating_levels)
    ue = read_edges(user_graph_file)
    ie = read_edges(item_graph_file)
    all_r = train + test
    nu = n_users or max([u for u, _, _ in all_r] + ue.ravel().tolist()) + 1
    ni = n_items or max([i for _, i, _ in all_r] + ie.ravel().tolist()) + 1
    values = np.zeros((nu, ni))
    mask = np.zeros((nu, ni), dtype=bool)
    for path, rows in ((train_file, train), (test_file, test)):
        for u, i, v in rows:
            if u >= nu or i >= ni:
                raise ParseError(path, 0, f"rating ({u}, {i}) outside {nu}x{ni}")
            if mask[u, i]:
                raise ParseError(path, 0, f"duplicate rating for ({u}, {i})")
            values[u, i] = v
            mask[u, i] = True
    levels = rating_levels if rating_levels is not None else sorted({v for _, _, v in all_r})
    return RatingsDataset(
        MaskedMatrix(values, mask),
        SparseGraph.from_edges(nu, ue),
        SparseGraph.from_edges(ni, ie),
        np.array([(u, i) for u, i, _ in train], dtype=np.int64),
        np.array([(u, i) for u, i, _ in test], dtype=np.int64),
        levels,
        name or Path(train_file).parent.name or "ratings",
    )


# ---------------------------------------------------------------------------
# writing


def _fmt(x):
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


def write_edges(path, graph):
    with open(path, "w") as fh:
        for i, j in graph.edges():
            fh.write(f"{i}\t{j}\n")


def write_features(path, M):
    rows, cols = np.nonzero(M.mask)
    with open(path, "w") as fh:
        fh.write(f"{M.n} {M.m} {rows.size}\n")
        for i, j in zip(rows.tolist(), cols.tolist()):
            fh.write(f"{i}\t{j}\t{_fmt(M.values[i, j])}\n")


def write_labels(path, labels):
    with open(path, "w") as fh:
        for i, y in enumerate(labels):
            fh.write(f"{i}\t{int(y)}\n")


def write_index(path, idx):
    with open(path, "w") as fh:
        for i in idx:
            fh.write(f"{int(i)}\n")


def write_ratings(path, entries, values):
    with open(path, "w") as fh:
        for (u, i) in entries:
            fh.write(f"{int(u)}\t{int(i)}\t{_fmt(values[u, i])}\n")


CITATION_FILES = ("edges.tsv", "features.tsv", "labels.tsv", "train.idx", "val.idx", "test.idx")
RATINGS_FILES = ("train.tsv", "test.tsv", "user_graph.tsv", "item_graph.tsv")


def write_citation(ds, outdir):
    """Write all files of a node classification dataset; returns a content hash."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_edges(out / "edges.tsv", ds.graph)
    write_features(out / "features.tsv", ds.features)
    write_labels(out / "labels.tsv", ds.labels)
    for key in ("train", "val", "test"):
        write_index(out / f"{key}.idx", ds.splits[key])
    return directory_fingerprint(out, CITATION_FILES)


def load_citation_dir(path, **kwargs):
    p = Path(path)
    splits = None
    if all((p / f"{k}.idx").exists() for k in ("train", "val", "test")):
        splits = tuple(p / f"{k}.idx" for k in ("train", "val", "test"))
    return load_citation(p / "edges.tsv", p / "features.tsv", p / "labels.tsv", splits, **kwargs)


def write_ratings_dir(ds, outdir):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_ratings(out / "train.tsv", ds.train, ds.rating_matrix.values)
    write_ratings(out / "test.tsv", ds.test, ds.rating_matrix.values)
    write_edges(out / "user_graph.tsv", ds.user_graph)
    write_edges(out / "item_graph.tsv", ds.item_graph)
    return directory_fingerprint(out, RATINGS_FILES)


def load_ratings_dir(path, rating_levels=None):
    p = Path(path)
    ds = load_ratings(p / "train.tsv", p / "test.tsv", p / "user_graph.tsv", p / "item_graph.tsv",
                      rating_levels=rating_levels, name=p.name)
    meta = p / "GRAPHS"
    if meta.exists():
        ds.metadata["graphs"] = meta.read_text().strip()
    return ds


def directory_fingerprint(path, names):
    h = hashlib.sha256()
    for name in names:
        f = Path(path) / name
        if f.exists():
            h.update(name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()[:16]


def rank_one_ratings(n_users=60, n_items=50, observed=0.5, test_frac=0.2, seed=0, graph_k=5):
    """Ratings that are an exact outer product, with kNN graphs from the true factors."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(1.0, 2.0, n_users)
    b = rng.uniform(1.0, 2.5, n_items)
    full = np.outer(a, b)
    mask = rng.random(full.shape) < observed
    entries = np.argwhere(mask)
    order = rng.permutation(len(entries))
    n_test = int(round(test_frac * len(entries)))
    test, train = entries[order[:n_test]], entries[order[n_test:]]
    levels = [float(full.min()), float(full.max())]
    return RatingsDataset(
        MaskedMatrix(np.where(mask, full, 0.0), mask),
        knn_graph(a[:, None], graph_k),
        knn_graph(b[:, None], graph_k),
        train,
        test,
        levels,
        "rank1",
        {"graphs": f"knn{graph_k}-true-factors", "continuous_levels": True},
    )


def default_data_dir():
    return Path(os.environ.get("WGNN_DATA", Path(__file__).resolve().parents[2] / "data"))
