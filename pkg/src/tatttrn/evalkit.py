"""Closed-set (CMC) and open-set (FNIR/FPIR, EER) identification evaluation
over repeated random enrolment/probe splits, following ISO/IEC 19795-1
terminology.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidStateError
from .retrieval import FeatureVector, Gallery, enroll


@dataclass
class SplitSpec:
    split_id: int
    enrol_ids: list[str]
    probe_ids: list[str]
    seed: int
    mode: str = "closed"
    withheld_categories: list[int] = field(default_factory=list)


@dataclass
class CMCCurve:
    ranks: np.ndarray
    mean_ir: np.ndarray
    std_ir: np.ndarray
    per_split: np.ndarray | None = None


@dataclass
class DETCurve:
    """Step curve over thresholds in descending order (index 0 is +inf).

    ``mated_hit``/``mated_scores`` and ``nonmated_scores`` are kept so the curve
    can be re-evaluated on any threshold grid.
    """

    thresholds: np.ndarray
    fpir: np.ndarray
    fnir: np.ndarray
    eer: float
    fpir_std: np.ndarray | None = None
    fnir_std: np.ndarray | None = None
    eer_std: float | None = None
    mated_scores: np.ndarray | None = None
    mated_hit: np.ndarray | None = None
    nonmated_scores: np.ndarray | None = None

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpir.tolist(), self.fnir.tolist()))

    def rates_at(self, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.mated_scores is None:
            raise InvalidStateError("curve carries no raw scores")
        return _rates(self.mated_scores, self.mated_hit, self.nonmated_scores, thresholds)


# ---------------------------------------------------------------------------
# splits


def _items(source) -> list[tuple[str, int]]:
    """(sample_id, label) pairs from a manifest, FeatureVectors or tuples."""
    entries = getattr(source, "entries", source)
    out = []
    for e in entries:
        if isinstance(e, FeatureVector):
            out.append((e.sample_id, e.category_label))
        elif isinstance(e, tuple):
            out.append((str(e[0]), int(e[1])))
        else:
            out.append((e.sample_id, e.label))
    return out


def make_splits(source, n_splits: int = 5, mode: str = "closed", seed: int = 0,
                open_fraction: float = 0.3) -> list[SplitSpec]:
    """Random enrolment/probe partitions: one enrolled sample per enrolled
    category, every other sample a probe. Open mode withholds
    ``round(open_fraction * C)`` categories (at least one) from enrolment."""
    if mode not in ("closed", "open"):
        raise ValueError(f"mode must be 'closed' or 'open', got {mode!r}")
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    by_cat: dict[int, list[str]] = {}
    for sid, label in _items(source):
        by_cat.setdefault(label, []).append(sid)
    cats = sorted(by_cat)
    for c in cats:
        by_cat[c].sort()
    if mode == "closed" and any(len(v) < 2 for v in by_cat.values()):
        raise ValueError("closed-set splits need >= 2 samples per category")
    n_withheld = 0
    if mode == "open":
        if len(cats) < 2:
            raise ValueError("open-set splits need >= 2 categories")
        n_withheld = min(len(cats) - 1, max(1, int(round(open_fraction * len(cats)))))

    splits = []
    for i in range(n_splits):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        withheld = sorted(int(c) for c in rng.choice(cats, size=n_withheld, replace=False)) if n_withheld else []
        enrol, probes = [], []
        for c in cats:
            ids = by_cat[c]
            if c in withheld:
                probes.extend(ids)
                continue
            j = int(rng.integers(0, len(ids)))
            enrol.append(ids[j])
            probes.extend(ids[:j] + ids[j + 1:])
        splits.append(SplitSpec(split_id=i, enrol_ids=sorted(enrol), probe_ids=sorted(probes),
                                seed=seed, mode=mode, withheld_categories=withheld))
    return splits


# ---------------------------------------------------------------------------
# closed set


def identification_ranks(gallery: Gallery, probes: Sequence[FeatureVector]) -> np.ndarray:
    """Category-level rank (1-based) of each probe's true category in its candidate
    list; 0 when the category is not enrolled."""
    out = np.zeros(len(probes), dtype=np.int64)
    for k, p in enumerate(probes):
        ordered = gallery.labels[gallery.ranking(gallery.scores(p))]
        _, first = np.unique(ordered, return_index=True)
        cat_order = ordered[np.sort(first)]
        hit = np.flatnonzero(cat_order == p.category_label)
        out[k] = hit[0] + 1 if hit.size else 0
    return out


def cmc(gallery: Gallery, probes: Sequence[FeatureVector], R_max: int | None = None) -> np.ndarray:
    """IR[r-1] = fraction of probes whose category is found at rank <= r."""
    if not probes:
        raise ValueError("no probes")
    ranks = identification_ranks(gallery, probes)
    if np.any(ranks == 0):
        raise InvalidStateError("closed-set violation: a probe category is not enrolled")
    R_max = R_max or len(gallery.categories)
    return np.array([(ranks <= r).mean() for r in range(1, R_max + 1)])


# ---------------------------------------------------------------------------
# open set


def open_set_scores(gallery: Gallery, probes: Sequence[FeatureVector], rank: int = 1):
    """Per-probe scores for the open-set sweep.

    Mated probes: ``hit`` is True when the true category appears within the
    first ``rank`` categories of the candidate list, ``score`` is that
    candidate's similarity. Non-mated probes: rank-1 similarity.
    """
    enrolled = gallery.categories
    mated_s, mated_hit, non_s = [], [], []
    for p in probes:
        scores = gallery.scores(p)
        order = gallery.ranking(scores)
        if p.category_label in enrolled:
            ordered = gallery.labels[order]
            _, first = np.unique(ordered, return_index=True)
            first = np.sort(first)[:rank]
            pos = [i for i in first if ordered[i] == p.category_label]
            mated_hit.append(bool(pos))
            mated_s.append(float(scores[order[pos[0]]]) if pos else -np.inf)
        else:
            non_s.append(float(scores[order[0]]))
    return np.array(mated_s), np.array(mated_hit, dtype=bool), np.array(non_s)


def _rates(mated_scores, mated_hit, nonmated_scores, thresholds):
    t = np.asarray(thresholds, dtype=np.float64)[:, None]
    fnir = (~mated_hit[None, :] | (mated_scores[None, :] < t)).mean(axis=1)
    fpir = (nonmated_scores[None, :] >= t).mean(axis=1)
    return fpir, fnir


def default_thresholds(*score_sets: np.ndarray) -> np.ndarray:
    finite = np.concatenate([s[np.isfinite(s)] for s in score_sets])
    return np.concatenate([[np.inf], np.unique(finite)[::-1], [-np.inf]])


def equal_error_rate(fpir: np.ndarray, fnir: np.ndarray) -> float:
    """Crossing of FNIR and FPIR along a curve ordered by descending threshold,
    linearly interpolated between the bracketing points."""
    d = fnir - fpir
    below = np.flatnonzero(d <= 0)
    if below.size == 0:
        return float(fnir[-1])
    i = below[0]
    if d[i] == 0 or i == 0:
        return float(fnir[i])
    w = d[i - 1] / (d[i - 1] - d[i])
    return float(fnir[i - 1] + w * (fnir[i] - fnir[i - 1]))


def det_open_set(gallery: Gallery, probes: Sequence[FeatureVector],
                 thresholds: Iterable[float] | None = None, rank: int = 1) -> DETCurve:
    mated_s, mated_hit, non_s = open_set_scores(gallery, probes, rank)
    if non_s.size == 0:
        raise ValueError("open-set evaluation needs non-mated probes")
    if mated_s.size == 0:
        raise ValueError("open-set evaluation needs mated probes")
    if thresholds is None:
        t = default_thresholds(mated_s, non_s)
    else:
        t = np.sort(np.asarray(list(thresholds), dtype=np.float64))[::-1]
    fpir, fnir = _rates(mated_s, mated_hit, non_s, t)
    return DETCurve(thresholds=t, fpir=fpir, fnir=fnir, eer=equal_error_rate(fpir, fnir),
                    mated_scores=mated_s, mated_hit=mated_hit, nonmated_scores=non_s)


# ---------------------------------------------------------------------------
# aggregation


def aggregate(per_split):
    """Pointwise mean and population std across splits (CMC vectors or DET curves)."""
    per_split = list(per_split)
    if len(per_split) < 2:
        raise ValueError("aggregation needs >= 2 splits")
    if all(isinstance(r, DETCurve) for r in per_split):
        return _aggregate_det(per_split)
    lengths = {len(r) for r in per_split}
    if len(lengths) != 1:
        raise ValueError(f"inconsistent rank axes: {sorted(lengths)}")
    M = np.vstack([np.asarray(r, dtype=np.float64) for r in per_split])
    return CMCCurve(ranks=np.arange(1, M.shape[1] + 1), mean_ir=M.mean(axis=0),
                    std_ir=M.std(axis=0), per_split=M)


def _aggregate_det(curves: list[DETCurve]) -> DETCurve:
    t = default_thresholds(*[np.concatenate([c.mated_scores, c.nonmated_scores]) for c in curves])
    rates = [c.rates_at(t) for c in curves]
    fpir = np.vstack([r[0] for r in rates])
    fnir = np.vstack([r[1] for r in rates])
    eers = np.array([c.eer for c in curves])
    mean_fpir, mean_fnir = fpir.mean(axis=0), fnir.mean(axis=0)
    return DETCurve(thresholds=t, fpir=mean_fpir, fnir=mean_fnir, eer=float(eers.mean()),
                    fpir_std=fpir.std(axis=0), fnir_std=fnir.std(axis=0), eer_std=float(eers.std()))


# ---------------------------------------------------------------------------
# protocol driver and CSV output


def split_features(features: Sequence[FeatureVector], split: SplitSpec):
    by_id = {f.sample_id: f for f in features}
    return [by_id[i] for i in split.enrol_ids], [by_id[i] for i in split.probe_ids]


def evaluate_splits(features: Sequence[FeatureVector], splits: Sequence[SplitSpec],
                    halves: int = 2, R_max: int | None = None, rank: int = 1):
    """Per-split CMC vectors (closed) or DET curves (open) and their aggregate."""
    results = []
    for sp in splits:
        enrolled, probes = split_features(features, sp)
        gallery = enroll(enrolled, halves=halves)
        if sp.mode == "closed":
            results.append(cmc(gallery, probes, R_max))
        else:
            results.append(det_open_set(gallery, probes, rank=rank))
    return results, (aggregate(results) if len(results) > 1 else None)


def write_cmc_csv(curve: CMCCurve, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rank", "mean_ir", "std_ir"])
        for r, m, s in zip(curve.ranks, curve.mean_ir, curve.std_ir):
            w.writerow([int(r), f"{m:.6f}", f"{s:.6f}"])
    return path


def read_cmc_csv(path: str | Path) -> CMCCurve:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return CMCCurve(ranks=np.array([int(r["rank"]) for r in rows]),
                    mean_ir=np.array([float(r["mean_ir"]) for r in rows]),
                    std_ir=np.array([float(r["std_ir"]) for r in rows]))


def write_det_csv(curve: DETCurve, path: str | Path) -> Path:
    path = Path(path)
    zeros = np.zeros_like(curve.fpir)
    fpir_std = curve.fpir_std if curve.fpir_std is not None else zeros
    fnir_std = curve.fnir_std if curve.fnir_std is not None else zeros
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "fpir_mean", "fpir_std", "fnir_mean", "fnir_std"])
        for row in zip(curve.thresholds, curve.fpir, fpir_std, curve.fnir, fnir_std):
            w.writerow([repr(float(row[0]))] + [f"{v:.6f}" for v in row[1:]])
    return path


def read_det_csv(path: str | Path) -> DETCurve:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
    fpir, fnir = col("fpir_mean"), col("fnir_mean")
    return DETCurve(thresholds=col("threshold"), fpir=fpir, fnir=fnir,
                    eer=equal_error_rate(fpir, fnir), fpir_std=col("fpir_std"), fnir_std=col("fnir_std"))
