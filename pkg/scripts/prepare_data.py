"""Convert locally available copies of Cora and MovieLens-100K into the package formats.

Raw files are taken from two PyPI wheels that bundle them:

* ``pgl`` ships ``pgl/data/cora/cora.{content,cites}`` (LINQS format)
* ``recbole`` ships ``recbole/dataset_example/ml-100k/ml-100k.{inter,user,item}``

Usage::

    pip download --no-deps pgl recbole -d /tmp/wheels
    python scripts/prepare_data.py --wheels /tmp/wheels --out data

Outputs ``data/cora/`` and ``data/ml100k/``. The ML-100K user and item graphs
are 10-nearest-neighbor graphs over the side features (see ``GRAPHS``), and
the train/test split is a seeded 80/20 split of all ratings.
"""

import argparse
import glob
import zipfile
from pathlib import Path

import numpy as np

from wgnn.datasets import (
    NodeClassificationDataset,
    RatingsDataset,
    knn_graph,
    planetoid_split,
    write_citation,
    write_ratings_dir,
)
from wgnn.linalg import MaskedMatrix
from wgnn.propagation import SparseGraph


def _wheel(wheels, name):
    hits = sorted(glob.glob(str(Path(wheels) / f"{name}-*.whl")))
    if not hits:
        raise SystemExit(f"no {name} wheel in {wheels}")
    return zipfile.ZipFile(hits[-1])


def convert_cora(zf, out):
    content = zf.read("pgl/data/cora/cora.content").decode().splitlines()
    cites = zf.read("pgl/data/cora/cora.cites").decode().splitlines()
    ids, feats, names = [], [], []
    for line in content:
        parts = line.split("\t")
        ids.append(parts[0])
        feats.append([float(x) for x in parts[1:-1]])
        names.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names])
    edges = []
    for line in cites:
        a, b = line.split("\t")
        edges.append((index[a], index[b]))
    X = np.array(feats)
    graph = SparseGraph.from_edges(len(ids), edges)
    splits = planetoid_split(labels, seed=0)
    ds = NodeClassificationDataset(graph, MaskedMatrix(X, X != 0), labels, splits, "cora")
    fp = write_citation(ds, out)
    (Path(out) / "CLASSES").write_text("\n".join(classes) + "\n")
    print(f"cora: n={graph.n} edges={graph.num_edges} features={X.shape[1]} "
          f"classes={len(classes)} fingerprint={fp}")


def _table(zf, name):
    text = zf.read(f"recbole/dataset_example/ml-100k/ml-100k.{name}").decode()
    lines = text.splitlines()
    return [line.split("\t") for line in lines[1:] if line.strip()]


def convert_ml100k(zf, out, seed=0, k=10, test_frac=0.2):
    inter = _table(zf, "inter")
    users = _table(zf, "user")
    items = _table(zf, "item")
    n_users, n_items = len(users), len(items)
    values = np.zeros((n_users, n_items))
    mask = np.zeros_like(values, dtype=bool)
    for u, i, r, _ in inter:
        values[int(u) - 1, int(i) - 1] = float(r)
        mask[int(u) - 1, int(i) - 1] = True

    occupations = sorted({row[3] for row in users})
    uf = np.zeros((n_users, 2 + len(occupations)))
    ages = np.array([float(row[1]) for row in users])
    for row in users:
        u = int(row[0]) - 1
        uf[u, 0] = (float(row[1]) - ages.min()) / (ages.max() - ages.min())
        uf[u, 1] = 1.0 if row[2] == "M" else 0.0
        uf[u, 2 + occupations.index(row[3])] = 1.0

    genres = sorted({g for row in items for g in row[3].split()})
    itf = np.zeros((n_items, 1 + len(genres)))
    years = np.array([float(row[2]) if row[2].strip().isdigit() else np.nan for row in items])
    years = np.where(np.isnan(years), np.nanmedian(years), years)
    for row, year in zip(items, years):
        i = int(row[0]) - 1
        itf[i, 0] = (year - years.min()) / (years.max() - years.min())
        for g in row[3].split():
            itf[i, 1 + genres.index(g)] = 1.0

    entries = np.argwhere(mask)
    order = np.random.default_rng(seed).permutation(len(entries))
    n_test = int(round(test_frac * len(entries)))
    test = entries[np.sort(order[:n_test])]
    train = entries[np.sort(order[n_test:])]
    ds = RatingsDataset(
        MaskedMatrix(values, mask), knn_graph(uf, k), knn_graph(itf, k), train, test,
        [1, 2, 3, 4, 5], "ml100k",
    )
    fp = write_ratings_dir(ds, out)
    (Path(out) / "GRAPHS").write_text(
        f"knn{k}-side-features (users: age, gender, occupation; items: release year, genres); "
        f"split: random {1 - test_frac:.0%}/{test_frac:.0%} seed={seed}\n"
    )
    print(f"ml100k: users={n_users} items={n_items} ratings={int(mask.sum())} "
          f"density={mask.mean():.4f} fingerprint={fp}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--wheels", required=True, help="directory holding the pgl and recbole wheels")
    ap.add_argument("--out", default="data")
    args = ap.parse_args()
    out = Path(args.out)
    convert_cora(_wheel(args.wheels, "pgl"), out / "cora")
    convert_ml100k(_wheel(args.wheels, "recbole"), out / "ml100k")


if __name__ == "__main__":
    main()
