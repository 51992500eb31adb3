"""Split manifests: pair lists plus a sample index, and their per-split counts.

Directory layout (all plain text, one record per line, ``#`` starts a comment)::

    states.txt            one state token per line (optional)
    objects.txt           one object token per line (optional)
    train_pairs.txt       "state object"
    val_seen_pairs.txt    "state object"   (must also be training pairs)
    val_unseen_pairs.txt  "state object"   (must not be training pairs)
    test_seen_pairs.txt
    test_unseen_pairs.txt
    samples.txt[.gz]      "sample_id state object split"   split in {train, val, test}

Without ``states.txt``/``objects.txt`` the vocabulary is the sorted union of
tokens in the pair files.
"""
from __future__ import annotations

import gzip
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..errors import IntegrityError, VocabularyError
from ..evaluation import CompositionSpace

PAIR_FILES = ("train_pairs", "val_seen_pairs", "val_unseen_pairs", "test_seen_pairs",
              "test_unseen_pairs")
BUNDLED = ("mit-states", "ut-zappos", "cgqa")


@dataclass
class SplitManifest:
    name: str
    states: list[str]
    objects: list[str]
    pairs: dict[str, list[tuple[int, int]]]
    samples: dict[str, int]

    def counts(self) -> dict[str, tuple[int, ...]]:
        """Per split: train (|Y_s|, |X|); val and test (|Y_s|, |Y_u|, |X|)."""
        p = self.pairs
        return {
            "train": (len(p["train_pairs"]), self.samples["train"]),
            "val": (len(p["val_seen_pairs"]), len(p["val_unseen_pairs"]), self.samples["val"]),
            "test": (len(p["test_seen_pairs"]), len(p["test_unseen_pairs"]), self.samples["test"]),
        }

    def space(self, split: str = "test", world: str = "closed") -> CompositionSpace:
        unseen = [] if split == "train" else self.pairs[f"{split}_unseen_pairs"]
        return CompositionSpace(self.states, self.objects, self.pairs["train_pairs"], unseen, world)


def _lines(path: Path) -> list[list[str]]:
    opener = gzip.open if path.suffix == ".gz" else open
    out = []
    with opener(path, "rt", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if line:
                out.append(line.split())
    return out


def _read_pairs(path: Path) -> list[tuple[str, str]]:
    pairs = []
    for n, fields in enumerate(_lines(path), 1):
        if len(fields) != 2:
            raise IntegrityError(f"{path.name}:{n}: expected 'state object', got {fields}")
        pairs.append((fields[0], fields[1]))
    if len(set(pairs)) != len(pairs):
        raise IntegrityError(f"{path.name}: duplicate pairs")
    return pairs


def _vocab(directory: Path, stem: str, fallback: set[str]) -> list[str]:
    path = directory / f"{stem}.txt"
    if not path.exists():
        return sorted(fallback)
    words = [f[0] for f in _lines(path)]
    if len(set(words)) != len(words):
        raise IntegrityError(f"{path.name}: duplicate tokens")
    return words


def load_splits(directory: str | Path) -> tuple[SplitManifest, CompositionSpace]:
    """Read and validate a manifest directory; returns the manifest and its test space."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no split directory at {directory}")
    raw = {stem: _read_pairs(directory / f"{stem}.txt") for stem in PAIR_FILES}
    states = _vocab(directory, "states", {s for ps in raw.values() for s, _ in ps})
    objects = _vocab(directory, "objects", {o for ps in raw.values() for _, o in ps})
    s_id = {w: i for i, w in enumerate(states)}
    o_id = {w: i for i, w in enumerate(objects)}

    def ids(state: str, obj: str, where: str) -> tuple[int, int]:
        if state not in s_id:
            raise VocabularyError(f"{where}: unknown state token {state!r}")
        if obj not in o_id:
            raise VocabularyError(f"{where}: unknown object token {obj!r}")
        return s_id[state], o_id[obj]

    pairs = {stem: sorted(ids(s, o, f"{stem}.txt") for s, o in ps) for stem, ps in raw.items()}
    train = set(pairs["train_pairs"])
    for split in ("val", "test"):
        unseen = set(pairs[f"{split}_unseen_pairs"])
        if unseen & train:
            raise IntegrityError(f"{split}: {len(unseen & train)} unseen pairs are also training pairs")
        if not set(pairs[f"{split}_seen_pairs"]) <= train:
            raise IntegrityError(f"{split}: seen pairs missing from the training pairs")

    allowed = {"train": train,
               "val": set(pairs["val_seen_pairs"]) | set(pairs["val_unseen_pairs"]),
               "test": set(pairs["test_seen_pairs"]) | set(pairs["test_unseen_pairs"])}
    index = directory / "samples.txt.gz"
    if not index.exists():
        index = directory / "samples.txt"
    counts = {"train": 0, "val": 0, "test": 0}
    seen_ids: set[str] = set()
    for n, fields in enumerate(_lines(index), 1):
        if len(fields) != 4:
            raise IntegrityError(f"{index.name}:{n}: expected 'id state object split'")
        sid, state, obj, split = fields
        if split not in counts:
            raise IntegrityError(f"{index.name}:{n}: unknown split tag {split!r}")
        if sid in seen_ids:
            raise IntegrityError(f"{index.name}:{n}: duplicate sample id {sid!r}")
        seen_ids.add(sid)
        if ids(state, obj, f"{index.name}:{n}") not in allowed[split]:
            raise IntegrityError(f"{index.name}:{n}: pair ({state}, {obj}) not listed for {split}")
        counts[split] += 1

    manifest = SplitManifest(directory.name, states, objects, pairs, counts)
    return manifest, manifest.space("test")


def bundled_path(name: str) -> Path:
    """Location of a manifest shipped with the package."""
    if name not in BUNDLED:
        raise KeyError(f"no bundled manifest {name!r}; available: {BUNDLED}")
    return Path(str(resources.files("czsl_stagewise") / "splits" / name))


def write_manifest(directory: str | Path, data) -> Path:
    """Write a ``CompositionData`` as a manifest directory readable by ``load_splits``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "states.txt").write_text("".join(w + "\n" for w in data.state_names))
    (directory / "objects.txt").write_text("".join(w + "\n" for w in data.object_names))
    for stem in PAIR_FILES:
        pairs = getattr(data, stem)
        (directory / f"{stem}.txt").write_text(
            "".join(f"{data.state_names[s]} {data.object_names[o]}\n" for s, o in pairs))
    with open(directory / "samples.txt", "w") as fh:
        for i, (s, o, t) in enumerate(zip(data.states, data.objects, data.split)):
            fh.write(f"{data.name}-{i:06d} {data.state_names[s]} {data.object_names[o]} {t}\n")
    return directory
