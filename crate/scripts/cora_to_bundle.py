#!/usr/bin/env python3
"""Convert the raw LINQS Cora release (cora.content, cora.cites) into a bundle.

    python scripts/cora_to_bundle.py RAW_DIR OUT_DIR [--seed 0]

Nodes keep the order of cora.content, class ids follow sorted class names,
citations become undirected edges (duplicates and self-citations dropped).
The split is Planetoid-shaped: 20 training nodes per class, 500 validation
and 1000 test nodes, drawn with the given seed.
"""

import argparse
import pathlib
import sys

import numpy as np


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("raw", type=pathlib.Path)
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument("--val", type=int, default=500)
    ap.add_argument("--test", type=int, default=1000)
    args = ap.parse_args()

    ids, rows, names = [], [], []
    with open(args.raw / "cora.content") as f:
        for line in f:
            parts = line.split()
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:-1]])
            names.append(parts[-1])
    index = {paper: i for i, paper in enumerate(ids)}
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names])
    features = np.asarray(rows, dtype="<f4")
    n, d = features.shape

    edges = set()
    skipped = 0
    with open(args.raw / "cora.cites") as f:
        for line in f:
            a, b = line.split()
            if a not in index or b not in index:
                skipped += 1
                continue
            u, v = index[a], index[b]
            if u != v:
                edges.add((min(u, v), max(u, v)))

    rng = np.random.default_rng(args.seed)
    train = []
    for c in range(len(classes)):
        members = np.flatnonzero(labels == c)
        train.extend(rng.choice(members, size=args.per_class, replace=False).tolist())
    rest = rng.permutation(np.setdiff1d(np.arange(n), train))
    val = rest[: args.val]
    test = rest[args.val : args.val + args.test]

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.txt").write_text(f"n={n}\nd={d}\nclasses={len(classes)}\n")
    (out / "edges.tsv").write_text("".join(f"{u}\t{v}\n" for u, v in sorted(edges)))
    features.tofile(out / "features.bin")
    (out / "labels.tsv").write_text("".join(f"{y}\n" for y in labels))
    for name, mask in (("train", train), ("val", val), ("test", test)):
        (out / f"mask_{name}.tsv").write_text("".join(f"{i}\n" for i in sorted(mask)))
    (out / "classes.txt").write_text("".join(f"{c}\n" for c in classes))

    print(f"n={n} d={d} classes={len(classes)} edges={len(edges)} "
          f"train={len(train)} val={len(val)} test={len(test)} skipped_cites={skipped}",
          file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
