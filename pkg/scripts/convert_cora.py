"""Convert the LINQS Cora release (cora.content, cora.cites) into a bundle.

    python3 scripts/convert_cora.py path/to/cora data/cora

Nodes are numbered in cora.content order. Features are the raw binary
bag-of-words vectors. The split takes, per class in node order, the first
20 nodes for training; of the remaining nodes the first 500 form the
validation set and the next 1000 the test set.
"""

import argparse
from pathlib import Path

import numpy as np

from graphleak.graph import DatasetBundle, Graph, NodeSubset, save_bundle


def read_cora(root: Path) -> DatasetBundle:
    ids, feats, names = [], [], []
    for line in (root / "cora.content").read_text().splitlines():
        parts = line.split()
        if parts:
            ids.append(parts[0])
            feats.append([float(x) for x in parts[1:-1]])
            names.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names], dtype=np.int64)

    edges = []
    for line in (root / "cora.cites").read_text().splitlines():
        parts = line.split()
        if len(parts) == 2 and parts[0] in index and parts[1] in index:
            u, v = index[parts[0]], index[parts[1]]
            if u != v:
                edges.append((u, v))
    g = Graph.from_edges(len(ids), edges)

    train = np.concatenate([np.flatnonzero(labels == c)[:20] for c in range(len(classes))])
    rest = np.setdiff1d(np.arange(len(ids)), train)
    masks = {
        "train": NodeSubset.of(train),
        "val": NodeSubset.of(rest[:500]),
        "test": NodeSubset.of(rest[500:1500]),
    }
    return DatasetBundle(g, np.asarray(feats), labels, masks, num_classes=len(classes))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", type=Path, help="directory holding cora.content and cora.cites")
    ap.add_argument("out", type=Path, help="bundle directory to write")
    a = ap.parse_args()
    bundle = read_cora(a.source)
    save_bundle(bundle, a.out)
    print(f"nodes={bundle.n} edges={bundle.graph.num_edges} features={bundle.d} classes={bundle.num_classes}")


if __name__ == "__main__":
    main()
