"""Regenerate the bundled count-faithful split manifests.

The real benchmark metadata cannot be fetched here, so each manifest keeps the
published vocabulary sizes and per-split pair/sample counts but uses
placeholder tokens and randomly drawn pairs. Output is deterministic.

    python3 tools/make_manifests.py [output_root]
"""
import gzip
import sys
from pathlib import Path

import numpy as np

# name: (n_states, n_objects, train (Y_s, X), val (Y_s, Y_u, X), test (Y_s, Y_u, X))
COUNTS = {
    "mit-states": (115, 245, (1262, 30338), (300, 300, 10420), (400, 400, 12995)),
    "ut-zappos": (16, 12, (83, 22998), (15, 15, 3214), (18, 18, 2914)),
    "cgqa": (453, 870, (5592, 26920), (1252, 1040, 7280), (888, 923, 5098)),
}


def spread(rng, n_items, n_bins):
    """Split n_items over n_bins with every bin non-empty."""
    cuts = np.sort(rng.choice(np.arange(1, n_items), n_bins - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [n_items]]))


def draw_train(rng, n_states, n_objects, n_pairs):
    # one pair per state and per object first so every primitive is seen
    pairs = set()
    objs = rng.permutation(n_objects)
    for s in range(n_states):
        pairs.add((s, int(objs[s % n_objects])))
    sts = rng.permutation(n_states)
    for o in range(n_objects):
        pairs.add((int(sts[o % n_states]), o))
    every = [(s, o) for s in range(n_states) for o in range(n_objects) if (s, o) not in pairs]
    extra = rng.choice(len(every), n_pairs - len(pairs), replace=False)
    pairs.update(every[i] for i in extra)
    return sorted(pairs)


def build(name, root):
    n_s, n_o, (tr_p, tr_x), (va_s, va_u, va_x), (te_s, te_u, te_x) = COUNTS[name]
    rng = np.random.default_rng(sum(map(ord, name)))
    states = [f"st{i:03d}" for i in range(n_s)]
    objects = [f"ob{i:03d}" for i in range(n_o)]
    train = draw_train(rng, n_s, n_o, tr_p)
    rest = sorted(set((s, o) for s in range(n_s) for o in range(n_o)) - set(train))
    pick = rng.permutation(len(rest))
    # val and test unseen sets are disjoint when the vocabulary allows it
    val_u = sorted(rest[i] for i in pick[:va_u])
    test_u = sorted(rest[i] for i in pick[va_u:va_u + te_u])
    val_s = sorted(train[i] for i in rng.choice(len(train), va_s, replace=False))
    test_s = sorted(train[i] for i in rng.choice(len(train), te_s, replace=False))

    out = Path(root) / name
    out.mkdir(parents=True, exist_ok=True)
    (out / "states.txt").write_text("".join(w + "\n" for w in states))
    (out / "objects.txt").write_text("".join(w + "\n" for w in objects))
    lists = {"train_pairs": train, "val_seen_pairs": val_s, "val_unseen_pairs": val_u,
             "test_seen_pairs": test_s, "test_unseen_pairs": test_u}
    for stem, ps in lists.items():
        (out / f"{stem}.txt").write_text("".join(f"{states[s]} {objects[o]}\n" for s, o in ps))
    rows = []
    for split, ps, n_x in (("train", train, tr_x), ("val", val_s + val_u, va_x),
                           ("test", test_s + test_u, te_x)):
        for (s, o), k in zip(ps, spread(rng, n_x, len(ps))):
            rows += [(states[s], objects[o], split)] * int(k)
    with gzip.GzipFile(out / "samples.txt.gz", "wb", mtime=0) as fh:
        fh.write("".join(f"{name}-{i:06d} {s} {o} {t}\n"
                         for i, (s, o, t) in enumerate(rows)).encode())


if __name__ == "__main__":
    root = sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/czsl_stagewise/splits"
    for name in COUNTS:
        build(name, root)
        print("wrote", Path(root) / name)
