"""Gallery enrollment and exhaustive cosine-similarity search.

Similarities are computed row-wise with the same elementwise-product-and-sum
routine for one pair and for a whole gallery, so a pairwise recomputation
reproduces search scores bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidStateError

NORM_TOL = 1e-5


@dataclass
class FeatureVector:
    values: np.ndarray
    category_label: int
    sample_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()


class Candidate(NamedTuple):
    sample_id: str
    category_label: int
    similarity: float


@dataclass
class CandidateList:
    entries: list[Candidate]
    probe_id: str = ""

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    @property
    def similarities(self) -> np.ndarray:
        return np.array([c.similarity for c in self.entries])


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64).ravel()


def _row_norms(M: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(M * M, axis=1))


def _cosine_rows(M: np.ndarray, M_norms: np.ndarray, p: np.ndarray) -> np.ndarray:
    p_norm = np.sqrt(np.sum(p * p))
    if p_norm == 0.0:
        raise ValueError("zero-norm probe vector")
    return np.clip(np.sum(M * p[None, :], axis=1) / (M_norms * p_norm), -1.0, 1.0)


def similarity(a, b) -> float:
    """Cosine similarity. For two unit-norm halves this is the mean of the
    per-half cosines."""
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape:
        raise ValueError(f"length mismatch: {va.size} vs {vb.size}")
    M = va[None, :]
    n = _row_norms(M)
    if n[0] == 0.0:
        raise ValueError("zero-norm feature vector")
    return float(_cosine_rows(M, n, vb)[0])


def half_norms(values: np.ndarray, halves: int = 2) -> np.ndarray:
    return np.linalg.norm(np.asarray(values).reshape(halves, -1), axis=1)


@dataclass
class Gallery:
    features: list[FeatureVector]
    K: int
    halves: int = 2
    id_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id_index:
            self.id_index = {f.sample_id: i for i, f in enumerate(self.features)}
        if self.features:
            self._matrix = np.stack([f.values for f in self.features])
        else:
            self._matrix = np.zeros((0, self.K * self.halves))
        self._norms = _row_norms(self._matrix)
        self._labels = np.array([f.category_label for f in self.features], dtype=np.int64)
        ids = [f.sample_id for f in self.features]
        # rank of each id in ascending order, used as the tie-break key
        self._id_rank = np.empty(len(ids), dtype=np.int64)
        self._id_rank[np.argsort(np.array(ids, dtype=object), kind="stable")] = np.arange(len(ids))

    def __len__(self):
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.K * self.halves

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def categories(self) -> set[int]:
        return set(self._labels.tolist())

    def scores(self, probe) -> np.ndarray:
        """Cosine similarity of ``probe`` against every enrolled feature, in gallery order."""
        p = _values(probe)
        if p.size != self.dim:
            raise ValueError(f"probe has length {p.size}, gallery expects {self.dim}")
        return _cosine_rows(self._matrix, self._norms, p)

    def ranking(self, scores: np.ndarray) -> np.ndarray:
        """Gallery positions by descending score, ties by ascending sample_id."""
        return np.lexsort((self._id_rank, -scores))


def enroll(features: Sequence[FeatureVector], halves: int = 2) -> Gallery:
    """Build a gallery. Features are split into ``halves`` equal parts, each of
    which must be unit-norm (the raw-only ablation feature uses ``halves=1``)."""
    features = list(features)
    if not features:
        raise ValueError("cannot enroll an empty feature list")
    dim = features[0].values.size
    if dim % halves:
        raise ValueError(f"feature length {dim} is not divisible into {halves} halves")
    seen = set()
    for f in features:
        if f.values.size != dim:
            raise ValueError(f"inconsistent feature lengths: {f.values.size} vs {dim}")
        if f.sample_id in seen:
            raise ValueError(f"duplicate sample_id {f.sample_id!r}")
        seen.add(f.sample_id)
        if np.any(np.abs(half_norms(f.values, halves) - 1.0) > NORM_TOL):
            raise ValueError(f"feature {f.sample_id!r} halves are not unit-norm")
    return Gallery(features=features, K=dim // halves, halves=halves)


def search(probe, gallery: Gallery, top_k: int = 10, probe_id: str | None = None) -> CandidateList:
    """Exact top-k by cosine similarity; ties broken by sample_id ascending."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if len(gallery) == 0:
        raise InvalidStateError("gallery is empty")
    scores = gallery.scores(probe)
    order = gallery.ranking(scores)[:top_k]
    entries = [Candidate(gallery.features[i].sample_id, int(gallery.labels[i]), float(scores[i]))
               for i in order]
    if probe_id is None:
        probe_id = probe.sample_id if isinstance(probe, FeatureVector) else ""
    return CandidateList(entries=entries, probe_id=probe_id)


def decide(candidates: CandidateList, tau: float = 0.5) -> CandidateList:
    """Accepted prefix of a candidate list: entries with similarity >= tau."""
    if not -1.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [-1, 1]")
    kept = []
    for c in candidates:
        if c.similarity < tau:
            break
        kept.append(c)
    return CandidateList(entries=kept, probe_id=candidates.probe_id)


# ---------------------------------------------------------------------------
# feature store


def save_features(path: str | Path, features: Sequence[FeatureVector], halves: int = 2) -> Path:
    """Write features as ``.npz`` (binary) or ``.csv``; both record K and count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.stack([f.values for f in features]) if features else np.zeros((0, 0))
    K = values.shape[1] // halves if len(features) else 0
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            fh.write(f"# K={K} count={len(features)} halves={halves}\n")
            w = csv.writer(fh)
            w.writerow(["sample_id", "label"] + [f"f{i}" for i in range(values.shape[1])])
            for f in features:
                w.writerow([f.sample_id, f.category_label] + [repr(float(v)) for v in f.values])
    else:
        if path.suffix != ".npz":
            path = path.with_suffix(".npz")
        np.savez(path, values=values, labels=np.array([f.category_label for f in features]),
                 ids=np.array([f.sample_id for f in features], dtype=str), K=K,
                 count=len(features), halves=halves)
    return path


def load_features(path: str | Path) -> tuple[list[FeatureVector], int, int]:
    """Returns (features, K, halves)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".csv":
        with open(path, newline="") as fh:
            header = dict(kv.split("=") for kv in fh.readline().lstrip("# ").split())
            rows = list(csv.reader(fh))[1:]
        feats = [FeatureVector(np.array([float(v) for v in r[2:]]), int(r[1]), r[0]) for r in rows]
        K, count, halves = int(header["K"]), int(header["count"]), int(header.get("halves", 2))
    else:
        with np.load(path) as z:
            feats = [FeatureVector(v, int(y), str(i)) for v, y, i in zip(z["values"], z["labels"], z["ids"])]
            K, count, halves = int(z["K"]), int(z["count"]), int(z["halves"])
    if count != len(feats):
        raise ValueError(f"{path}: header count {count} != {len(feats)} rows")
    return feats, K, halves


def save_gallery(path: str | Path, gallery: Gallery) -> Path:
    return save_features(path, gallery.features, gallery.halves)


def load_gallery(path: str | Path) -> Gallery:
    feats, _, halves = load_features(path)
    return enroll(feats, halves=halves)
