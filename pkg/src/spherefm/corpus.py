"""Labeled mesh corpora and their on-disk directory format.

A corpus directory holds one OBJ per sample plus ``labels.csv`` with the
header ``filename,identity``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, load_obj, save_obj

LABELS_FILE = "labels.csv"


@dataclass(frozen=True, eq=False)
class LabeledCorpus:
    """Meshes sharing one topology, each tagged with a dense identity label."""

    meshes: tuple
    labels: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        meshes = tuple(self.meshes)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "meshes", meshes)
        if len(meshes) != labels.size:
            raise ValueError(f"{len(meshes)} meshes but {labels.size} labels")
        problems = validate_corpus(meshes, labels)
        if problems:
            raise ValueError("invalid corpus: " + "; ".join(problems))
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        names = tuple(self.names) or tuple(f"sample_{i:04d}.obj" for i in range(len(meshes)))
        if len(names) != len(meshes):
            raise ValueError("names and meshes differ in length")
        object.__setattr__(self, "names", names)

    def __len__(self):
        return len(self.meshes)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def vertex_count(self) -> int:
        return self.meshes[0].vertex_count

    @property
    def faces(self):
        return self.meshes[0].faces

    def matrix(self) -> np.ndarray:
        """Stack vertex vectors into an ``(N, 3n)`` array."""
        return np.stack([m.vertices for m in self.meshes])

    def subset(self, index) -> "LabeledCorpus":
        """Select samples and re-densify their labels (order-preserving)."""
        index = np.asarray(index, dtype=np.int64)
        raw = self.labels[index]
        return LabeledCorpus(
            [self.meshes[i] for i in index],
            densify_labels(raw),
            [self.names[i] for i in index],
        )

    @classmethod
    def from_raw_labels(cls, meshes, raw_labels, names=()) -> "LabeledCorpus":
        return cls(meshes, densify_labels(raw_labels), names)


def densify_labels(raw) -> np.ndarray:
    """Map arbitrary integer labels onto ``0..k-1`` by sorted order."""
    raw = np.asarray(raw)
    _, dense = np.unique(raw, return_inverse=True)
    return dense.reshape(-1).astype(np.int64)


def validate_corpus(meshes, labels) -> list:
    """Return every problem found, so callers can report them all at once."""
    problems = []
    if len(meshes) == 0:
        problems.append("corpus is empty")
        return problems
    n = meshes[0].vertex_count
    for i, m in enumerate(meshes):
        if m.vertex_count != n:
            problems.append(f"sample {i} has {m.vertex_count} vertices, expected {n}")
    labels = np.asarray(labels)
    if labels.size:
        if labels.min() < 0:
            problems.append("negative label")
        else:
            k = int(labels.max()) + 1
            missing = sorted(set(range(k)) - set(labels.tolist()))
            if missing:
                problems.append(f"labels not dense, classes without samples: {missing[:10]}")
    return problems


def read_labels_csv(path) -> list:
    """Parse ``filename,identity`` rows; returns ``[(filename, int), ...]``."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["filename", "identity"]:
            raise ValueError(f"{path}:1: expected header 'filename,identity'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                ident = int(row[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: identity {row[1]!r} is not an integer") from None
            rows.append((row[0].strip(), ident))
    return rows


def corpus_rows(directory) -> list:
    """``(filename, raw identity)`` rows of a corpus directory.

    Without ``labels.csv`` every ``*.obj`` is listed in sorted order with
    identity 0 (useful for fitting unlabeled meshes).
    """
    lpath = os.path.join(directory, LABELS_FILE)
    if os.path.exists(lpath):
        rows = read_labels_csv(lpath)
    else:
        rows = [(f, 0) for f in sorted(os.listdir(directory)) if f.lower().endswith(".obj")]
    if not rows:
        raise ValueError(f"{directory}: no samples found")
    return rows


def load_corpus(directory) -> LabeledCorpus:
    """Load a corpus directory; raw identities are densified by sorted order."""
    rows = corpus_rows(directory)
    meshes = [load_obj(os.path.join(directory, name)) for name, _ in rows]
    return LabeledCorpus.from_raw_labels(meshes, [r[1] for r in rows], [r[0] for r in rows])


def save_corpus(corpus: LabeledCorpus, directory, raw_labels=None) -> None:
    os.makedirs(directory, exist_ok=True)
    labels = corpus.labels if raw_labels is None else raw_labels
    for name, mesh in zip(corpus.names, corpus.meshes):
        save_obj(mesh, os.path.join(directory, name))
    with open(os.path.join(directory, LABELS_FILE), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("filename,identity\n")
        for name, lab in zip(corpus.names, np.asarray(labels).tolist()):
            fh.write(f"{name},{lab}\n")
