import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_cmc, brute_det
from tatttrn.errors import InvalidStateError
from tatttrn.evalkit import (
    CMCCurve,
    aggregate,
    cmc,
    det_open_set,
    equal_error_rate,
    evaluate_splits,
    make_splits,
    read_cmc_csv,
    read_det_csv,
    write_cmc_csv,
    write_det_csv,
)
from tatttrn.retrieval import FeatureVector, enroll


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def at_angle(deg, label, sid):
    r = math.radians(deg)
    return FeatureVector([math.cos(r), math.sin(r)], label, sid)


def random_instance(seed, open_set=False, per_cat_enrol=1):
    """Clustered random features: <= 10 categories, <= 30 probes."""
    r = np.random.default_rng(seed)
    C = int(r.integers(2, 11))
    centers = [unit(r.normal(size=4)) for _ in range(C + 3)]
    noise = r.uniform(0.2, 1.5)

    def feat(c, sid):
        return FeatureVector(np.concatenate([unit(centers[c][:2] + noise * r.normal(size=2)),
                                             unit(centers[c][2:] + noise * r.normal(size=2))]), c, sid)

    gallery = [feat(c, f"g{c:02d}_{k}") for c in range(C) for k in range(per_cat_enrol)]
    n_probes = int(r.integers(1, 31))
    n_cats = C + 3 if open_set else C
    probes = [feat(int(r.integers(0, n_cats)), f"p{i:02d}") for i in range(n_probes)]
    if open_set:
        probes[0] = feat(C, "p00")        # at least one non-mated probe
        probes[-1] = feat(0, f"p{n_probes - 1:02d}") if n_probes > 1 else probes[-1]
    return gallery, probes


class TestSplits:
    def test_closed_every_probe_enrolled(self):
        items = [(f"s{c}_{k}", c) for c in range(6) for k in range(4)]
        for sp in make_splits(items, 5, "closed", seed=3):
            enrolled = {int(i[1]) for i in sp.enrol_ids}
            assert len(sp.enrol_ids) == 6
            assert {int(i[1]) for i in sp.probe_ids} <= enrolled
            assert not set(sp.enrol_ids) & set(sp.probe_ids)
            assert len(sp.enrol_ids) + len(sp.probe_ids) == 24

    def test_deterministic(self):
        items = [(f"s{c}_{k}", c) for c in range(6) for k in range(4)]
        assert make_splits(items, 5, "open", 11) == make_splits(items, 5, "open", 11)
        assert make_splits(items, 5, "closed", 11) != make_splits(items, 5, "closed", 12)

    def test_open_withholds_fraction(self):
        items = [(f"s{c:02d}_{k}", c) for c in range(10) for k in range(3)]
        for sp in make_splits(items, 5, "open", seed=0, open_fraction=0.3):
            assert len(sp.withheld_categories) == 3
            enrolled_labels = {int(i[1:3]) for i in sp.enrol_ids}
            assert enrolled_labels.isdisjoint(sp.withheld_categories)
            assert len(enrolled_labels) == 7

    def test_insufficient_samples(self):
        with pytest.raises(ValueError):
            make_splits([("a", 0), ("b", 0), ("c", 1)], 5, "closed")

    def test_splits_differ(self):
        items = [(f"s{c}_{k}", c) for c in range(6) for k in range(5)]
        splits = make_splits(items, 5, "closed", 0)
        assert len({tuple(s.enrol_ids) for s in splits}) > 1


class TestCMC:
    def test_perfect_matcher(self):
        gallery = [at_angle(0, 0, "g0"), at_angle(90, 1, "g1"), at_angle(180, 2, "g2")]
        probes = [at_angle(5, 0, "p0"), at_angle(88, 1, "p1"), at_angle(181, 2, "p2")]
        ir = cmc(enroll(gallery, halves=1), probes)
        assert ir[0] == 1.0

    def test_four_category_toy(self):
        # gallery at 0, 90, 180, 270 degrees; probe angles chosen by hand:
        # p0 (cat0 @ 30)  -> ranks cat0, cat1        -> rank 1
        # p1 (cat1 @ 10)  -> cat0, cat1              -> rank 2
        # p2 (cat2 @ 100) -> cat1, cat2              -> rank 2
        # p3 (cat3 @ 40)  -> cat0, cat1, then 3 @ cos(130) > 2 @ cos(140) -> rank 3
        gallery = [at_angle(90 * c, c, f"g{c}") for c in range(4)]
        probes = [at_angle(30, 0, "p0"), at_angle(10, 1, "p1"), at_angle(100, 2, "p2"), at_angle(40, 3, "p3")]
        ir = cmc(enroll(gallery, halves=1), probes)
        np.testing.assert_array_equal(ir, [0.25, 0.75, 1.0, 1.0])
        np.testing.assert_array_equal(ir, brute_cmc(gallery, probes, 4))

    def test_exhaustion(self):
        gallery, probes = random_instance(5)
        ir = cmc(enroll(gallery), probes)
        assert ir[-1] == 1.0 and len(ir) == len({g.category_label for g in gallery})

    def test_absent_category(self):
        gallery = [at_angle(0, 0, "g0")]
        with pytest.raises(InvalidStateError):
            cmc(enroll(gallery, halves=1), [at_angle(3, 1, "p")])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 100_000), st.integers(1, 3))
    def test_matches_brute_force(self, seed, per_cat):
        gallery, probes = random_instance(seed, per_cat_enrol=per_cat)
        C = len({g.category_label for g in gallery})
        ir = cmc(enroll(gallery), probes, C)
        np.testing.assert_array_equal(ir, brute_cmc(gallery, probes, C))
        assert np.all(np.diff(ir) >= 0) and ir[-1] == 1.0


def six_probe_instance():
    gallery = [at_angle(0, 0, "g0"), at_angle(90, 1, "g1")]
    probes = [
        at_angle(10, 0, "p1"),    # hit, cos 10
        at_angle(50, 0, "p2"),    # rank-1 is cat 1: miss
        at_angle(75, 1, "p3"),    # hit, cos 15
        at_angle(60, 1, "p4"),    # hit, cos 30
        at_angle(45, 7, "p5"),    # non-mated, top cos 45
        at_angle(200, 8, "p6"),   # non-mated, top cos 110
    ]
    return gallery, probes


class TestDET:
    def test_hand_instance(self):
        gallery, probes = six_probe_instance()
        d = det_open_set(enroll(gallery, halves=1), probes)
        c = lambda deg: math.cos(math.radians(deg))  # noqa: E731
        np.testing.assert_allclose(d.thresholds[1:-1], [c(10), c(15), c(30), c(45), c(110)], atol=1e-12)
        np.testing.assert_array_equal(d.fnir, [1, 0.75, 0.5, 0.25, 0.25, 0.25, 0.25])
        np.testing.assert_array_equal(d.fpir, [0, 0, 0, 0, 0.5, 1, 1])
        assert d.eer == pytest.approx(0.25)
        fp, fn = brute_det(gallery, probes, d.thresholds)
        np.testing.assert_array_equal(fp, d.fpir)
        np.testing.assert_array_equal(fn, d.fnir)

    def test_extremes(self):
        gallery, probes = six_probe_instance()
        d = det_open_set(enroll(gallery, halves=1), probes, thresholds=[-2.0, 2.0])
        assert d.fpir.tolist() == [0.0, 1.0]   # descending thresholds: 2.0 first
        assert d.fnir[0] == 1.0

    def test_needs_non_mated(self):
        gallery, probes = six_probe_instance()
        with pytest.raises(ValueError):
            det_open_set(enroll(gallery, halves=1), probes[:4])

    def test_rank_two_is_looser(self):
        gallery, probes = six_probe_instance()
        g = enroll(gallery, halves=1)
        assert np.all(det_open_set(g, probes, rank=2).fnir[-1] <= det_open_set(g, probes, rank=1).fnir[-1])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 100_000))
    def test_matches_brute_force(self, seed):
        gallery, probes = random_instance(seed, open_set=True)
        if all(p.category_label in {g.category_label for g in gallery} for p in probes) or \
                not any(p.category_label in {g.category_label for g in gallery} for p in probes):
            return
        d = det_open_set(enroll(gallery), probes)
        fp, fn = brute_det(gallery, probes, d.thresholds)
        np.testing.assert_array_equal(fp, d.fpir)
        np.testing.assert_array_equal(fn, d.fnir)
        assert np.all(np.diff(d.fpir) >= 0) and np.all(np.diff(d.fnir) <= 0)
        assert d.fpir[0] == 0.0 and d.fpir[-1] == 1.0 and d.fnir[0] == 1.0
        assert 0.0 <= d.eer <= 1.0


class TestEER:
    def test_interpolated(self):
        # crossing between (fnir .4, fpir .2) and (fnir .2, fpir .6): d = .2 -> -.4, w = 1/3
        assert equal_error_rate(np.array([0, 0.2, 0.6]), np.array([1.0, 0.4, 0.2])) == pytest.approx(0.4 - 0.2 / 3)

    def test_exact_crossing(self):
        assert equal_error_rate(np.array([0, 0.3, 1]), np.array([1, 0.3, 0])) == pytest.approx(0.3)


class TestAggregate:
    def test_identical(self):
        agg = aggregate([np.array([0.5, 0.9, 1.0])] * 3)
        np.testing.assert_array_equal(agg.std_ir, 0)
        np.testing.assert_array_equal(agg.mean_ir, [0.5, 0.9, 1.0])

    def test_two_splits(self):
        agg = aggregate([np.array([0.8, 1.0]), np.array([1.0, 1.0])])
        assert agg.mean_ir[0] == pytest.approx(0.9) and agg.std_ir[0] == pytest.approx(0.1)

    def test_recompute(self, rng):
        runs = [np.sort(rng.uniform(size=6)) for _ in range(5)]
        agg = aggregate(runs)
        for r in range(6):
            col = [float(x[r]) for x in runs]
            assert agg.mean_ir[r] == pytest.approx(statistics.fmean(col), abs=1e-12)
            assert agg.std_ir[r] == pytest.approx(statistics.pstdev(col), abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            aggregate([np.array([1.0])])
        with pytest.raises(ValueError):
            aggregate([np.array([1.0]), np.array([1.0, 1.0])])

    def test_det_aggregate_monotone(self):
        curves = []
        for seed in range(40):
            gallery, probes = random_instance(seed, open_set=True)
            enrolled = {g.category_label for g in gallery}
            if any(p.category_label in enrolled for p in probes) and any(p.category_label not in enrolled for p in probes):
                curves.append(det_open_set(enroll(gallery), probes))
            if len(curves) == 5:
                break
        agg = aggregate(curves)
        assert np.all(np.diff(agg.fpir) >= -1e-12) and np.all(np.diff(agg.fnir) <= 1e-12)
        assert agg.eer == pytest.approx(np.mean([c.eer for c in curves]))
        assert agg.eer_std == pytest.approx(np.std([c.eer for c in curves]))


def test_evaluate_splits_and_csv(tmp_path, rng):
    feats = []
    centers = [unit(rng.normal(size=4)) for _ in range(5)]
    for c in range(5):
        for k in range(4):
            v = centers[c] + 0.3 * rng.normal(size=4)
            feats.append(FeatureVector(np.concatenate([unit(v[:2]), unit(v[2:])]), c, f"s{c}_{k}"))
    per, agg = evaluate_splits(feats, make_splits(feats, 5, "closed", 0))
    assert len(per) == 5 and isinstance(agg, CMCCurve)
    back = read_cmc_csv(write_cmc_csv(agg, tmp_path / "cmc.csv"))
    np.testing.assert_allclose(back.mean_ir, agg.mean_ir, atol=1e-6)
    per, agg = evaluate_splits(feats, make_splits(feats, 5, "open", 0, open_fraction=0.4))
    back = read_det_csv(write_det_csv(agg, tmp_path / "det.csv"))
    np.testing.assert_allclose(back.fnir, agg.fnir, atol=1e-6)
    assert np.isinf(back.thresholds[0]) and np.isinf(back.thresholds[-1])
