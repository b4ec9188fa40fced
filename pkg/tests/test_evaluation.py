import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vesselwrap.evaluation import (
    ConfusionCell,
    ConfusionCounts,
    BucketRow,
    build_metrics_report,
    critical_vessel_eval,
    dice,
    dpcg_bucket_table,
    evaluate_scan,
    involvement_confusion,
    r_squared,
    scan_confusion,
    sensitivity_specificity,
)
from vesselwrap.phantom import PhantomSpec, gen_confusion_suite, gen_wrap_scene
from vesselwrap.volume import ChannelId, MaskVolume, Spacing, STANDARD_CHANNELS


class TestDice:
    def test_identical(self, rng):
        m = rng.integers(0, 2, size=(3, 4, 4))
        m[0, 0, 0] = 1
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((2, 2, 2))
        b = np.zeros((2, 2, 2))
        a[0, 0, 0] = 1
        b[1, 1, 1] = 1
        assert dice(a, b) == 0.0

    def test_half_overlap(self):
        # |P| = |G| = 4 with |P & G| = 2 -> 2*2 / 8
        p = np.zeros(8)
        g = np.zeros(8)
        p[:4] = 1
        g[2:6] = 1
        assert dice(p.reshape(2, 2, 2), g.reshape(2, 2, 2)) == pytest.approx(0.5)

    def test_both_empty_is_one(self):
        z = np.zeros((1, 2, 2))
        assert dice(z, z) == 1.0

    def test_geometry_mismatch(self):
        with pytest.raises(ValueError):
            dice(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_symmetric_and_one_iff_equal(self, seed):
        gen = np.random.default_rng(seed)
        a = gen.integers(0, 2, size=(2, 4, 4))
        b = gen.integers(0, 2, size=(2, 4, 4))
        assert dice(a, b) == dice(b, a)
        assert (dice(a, b) == 1.0) == bool((a == b).all())

    def test_monotone_under_shrinking_symmetric_difference(self, rng):
        a = rng.integers(0, 2, size=(1, 5, 5))
        b = rng.integers(0, 2, size=(1, 5, 5))
        mismatch = np.argwhere(a != b)
        if len(mismatch):
            closer = b.copy()
            z, y, x = mismatch[0]
            closer[z, y, x] = a[z, y, x]
            assert dice(a, closer) >= dice(a, b)


class TestConfusion:
    def test_cells(self):
        assert involvement_confusion(True, True) is ConfusionCell.TP
        assert involvement_confusion(True, False) is ConfusionCell.FP
        assert involvement_confusion(False, False) is ConfusionCell.TN
        assert involvement_confusion(False, True) is ConfusionCell.FN

    def test_scan_level_or(self):
        # artery TP, vein TN -> scan TP
        assert scan_confusion(True, False, True, False) is ConfusionCell.TP
        # both TN -> TN
        assert scan_confusion(False, False, False, False) is ConfusionCell.TN
        # pred vein only, GT artery only -> still TP under OR semantics
        assert scan_confusion(False, True, True, False) is ConfusionCell.TP

    def test_counts_partition(self):
        counts = ConfusionCounts()
        cells = [ConfusionCell.TP, ConfusionCell.FP, ConfusionCell.TN, ConfusionCell.FN,
                 ConfusionCell.TP]
        for c in cells:
            counts.add(c)
        assert counts.total == len(cells)
        assert counts.tp == 2


class TestSensitivitySpecificity:
    def test_headline_sensitivity(self):
        sens, _ = sensitivity_specificity(ConfusionCounts(tp=15, fn=2))
        assert sens == pytest.approx(15 / 17)
        assert round(sens, 3) == 0.882

    def test_headline_specificity(self):
        _, spec = sensitivity_specificity(ConfusionCounts(tn=12, fp=2))
        assert spec == pytest.approx(12 / 14)
        assert round(spec, 3) == 0.857

    def test_undefined_marked_none(self):
        sens, spec = sensitivity_specificity(ConfusionCounts(tp=0, fn=0, tn=0, fp=0))
        assert sens is None and spec is None


class TestRSquared:
    def test_perfect(self):
        assert r_squared([0, 90, 180], [0, 90, 180]) == 1.0

    def test_mean_prediction_zero(self):
        y = [0.0, 90.0, 180.0]
        assert r_squared(y, [90.0, 90.0, 90.0]) == pytest.approx(0.0)

    def test_reversed_is_minus_three(self):
        # oracle: ss_res = 180^2 + 0 + 180^2 = 64800, ss_tot = 2 * 90^2 = 16200
        assert 64800 / 16200 == 4.0
        assert r_squared([0.0, 90.0, 180.0], [180.0, 90.0, 0.0]) == pytest.approx(-3.0)

    def test_degenerate_gt(self):
        with pytest.raises(ValueError, match="constant"):
            r_squared([90.0, 90.0], [0.0, 10.0])
        with pytest.raises(ValueError):
            r_squared([90.0], [0.0])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), shift=st.floats(-500, 500, allow_nan=False))
    def test_shift_invariance(self, seed, shift):
        gen = np.random.default_rng(seed)
        y = gen.uniform(0, 360, size=6)
        yh = gen.uniform(0, 360, size=6)
        base = r_squared(y, yh)
        shifted = r_squared(y + shift, yh + shift)
        assert shifted == pytest.approx(base, rel=1e-9, abs=1e-9)


class TestBucketTable:
    def test_all_matched(self):
        pairs = [(0.0, 0.0), (45.0, 30.0), (120.0, 200.0), (300.0, 355.0)]
        rows = dpcg_bucket_table(pairs)
        assert all(r.matched == r.total == 1 for r in rows)

    def test_mismatch_counted_in_gt_bucket(self):
        rows = dpcg_bucket_table([(120.0, 60.0)])
        by = {r.bucket: r for r in rows}
        assert by["90 < deg <= 270"] == BucketRow("90 < deg <= 270", 0, 1)
        assert by["0 < deg <= 90"].total == 0

    def test_reporting_table_fixture(self):
        # constructed list reproducing the (19/19), (5/5), (0/7), (1/1) column
        pairs = (
            [(0.0, 0.0)] * 19
            + [(45.0, 60.0)] * 5
            + [(120.0, 80.0)] * 4 + [(200.0, 290.0)] * 3
            + [(300.0, 320.0)]
        )
        rows = dpcg_bucket_table(pairs)
        assert [(r.matched, r.total) for r in rows] == [(19, 19), (5, 5), (0, 7), (1, 1)]

    def test_row_totals_count_gt_bucket_members(self, rng):
        pairs = [(float(g), float(p)) for g, p in rng.uniform(0, 360, size=(50, 2))]
        rows = dpcg_bucket_table(pairs)
        assert sum(r.total for r in rows) == 50


def _scene(span, vessel=ChannelId.VEIN, angle=90.0, seed=0):
    spec = PhantomSpec(
        dims=(4, 64, 64), vessel_center=(32.0, 32.0), slice_range=(1, 3),
        wrap_span_deg=span, wrap_center_deg=angle, vessel_channel=vessel, jitter_seed=seed,
    )
    return gen_wrap_scene(spec)[0]


class TestEvaluateScan:
    def test_self_evaluation_perfect(self):
        scene = _scene(120.0)
        ev = evaluate_scan(scene, scene, scan_id="self")
        assert all(v == 1.0 for v in ev.dice_by_channel.values())
        for vessel in (ChannelId.ARTERY, ChannelId.VEIN):
            assert ev.presence_pred[vessel] == ev.presence_gt[vessel]
            assert ev.max_deg_pred[vessel] == ev.max_deg_gt[vessel]

    def test_wrong_location_still_tp(self):
        pred = _scene(90.0, angle=45.0)
        gt = _scene(90.0, angle=270.0)
        ev = evaluate_scan(pred, gt, scan_id="wrongloc")
        cell = involvement_confusion(
            ev.presence_pred[ChannelId.VEIN], ev.presence_gt[ChannelId.VEIN]
        )
        assert cell is ConfusionCell.TP


def _tube_volume(artery_cols, pancreas_cols, tumor_cols, dims=(3, 8, 8)):
    data = np.zeros((len(STANDARD_CHANNELS),) + dims, dtype=np.uint8)
    for c in artery_cols:
        data[STANDARD_CHANNELS.index(ChannelId.ARTERY), :, :, c] = 1
    for c in pancreas_cols:
        data[STANDARD_CHANNELS.index(ChannelId.PANCREAS), :, :, c] = 1
    for c in tumor_cols:
        data[STANDARD_CHANNELS.index(ChannelId.TUMOR), :, :, c] = 1
    return MaskVolume(data, STANDARD_CHANNELS, Spacing(1.0, 1.0, 1.0))


class TestCriticalVesselEval:
    def test_contact_via_embedded_vessel_filtered_to_tn(self):
        # artery column 2 inside pancreas columns 1..3; tumor column 3 touches it
        pred = _tube_volume(artery_cols=[2], pancreas_cols=[1, 2, 3], tumor_cols=[3])
        gt_critical = _tube_volume(artery_cols=[], pancreas_cols=[], tumor_cols=[])
        cells = critical_vessel_eval(pred, pred, gt_critical)
        assert cells[ChannelId.ARTERY] is ConfusionCell.TN

    def test_free_vessel_unaffected_by_filter(self):
        pred = _tube_volume(artery_cols=[2], pancreas_cols=[6], tumor_cols=[3])
        gt_critical = _tube_volume(artery_cols=[2], pancreas_cols=[], tumor_cols=[3])
        cells = critical_vessel_eval(pred, pred, gt_critical)
        assert cells[ChannelId.ARTERY] is ConfusionCell.TP

    def test_two_tubes_only_free_counted(self):
        # embedded tube at col 2 (in pancreas), free tube at col 6; tumor touches both
        pred = _tube_volume(artery_cols=[2, 6], pancreas_cols=[1, 2, 3], tumor_cols=[3, 5])
        gt_free_only = _tube_volume(artery_cols=[6], pancreas_cols=[], tumor_cols=[5])
        cells = critical_vessel_eval(pred, pred, gt_free_only)
        assert cells[ChannelId.ARTERY] is ConfusionCell.TP
        # drop the free tube contact from GT: prediction still counts the free tube
        gt_none = _tube_volume(artery_cols=[], pancreas_cols=[], tumor_cols=[])
        cells = critical_vessel_eval(pred, pred, gt_none)
        assert cells[ChannelId.ARTERY] is ConfusionCell.FP


class TestMetricsReport:
    def test_confusion_suite_counts(self):
        cases = gen_confusion_suite(seed=11)
        evals = [
            evaluate_scan(case.pred, case.gt, scan_id=case.name) for case in cases
        ]
        report = build_metrics_report(evals)
        # every scene pair contributes the constructed scan-level cell
        scan = report.confusion["scan"]
        assert (scan.tp, scan.fp, scan.tn, scan.fn) == (5, 5, 5, 5)
        assert scan.total == len(cases)
        for case, ev in zip(cases, evals):
            cell = involvement_confusion(
                ev.presence_pred[case.vessel], ev.presence_gt[case.vessel]
            )
            assert cell.value == case.expected

    def test_self_manifest_dice_and_confusion(self):
        scenes = [_scene(120.0, seed=s) for s in range(4)]
        evals = [evaluate_scan(s, s, scan_id=str(i)) for i, s in enumerate(scenes)]
        report = build_metrics_report(evals)
        for stats in report.dice.values():
            assert stats.mean == 1.0
            assert stats.std_per_case == 0.0
        for key in ("artery", "vein", "scan"):
            counts = report.confusion[key]
            assert counts.fp == 0 and counts.fn == 0
            assert counts.tp + counts.tn == len(scenes)
        # jittered seeds give distinct GT degrees, so self-eval R^2 is exact
        assert report.r2["vein"] == pytest.approx(1.0)

    def test_degenerate_r2_marked(self):
        scene = _scene(120.0, seed=1)
        evals = [evaluate_scan(scene, scene, scan_id=str(i)) for i in range(3)]
        report = build_metrics_report(evals)
        assert report.r2["vein"] is None
        assert "constant" in report.r2_reason["vein"]

    def test_per_fold_std_labeled(self):
        scenes = [_scene(120.0, seed=s) for s in range(4)]
        folds = ["a", "a", "b", "b"]
        evals = [
            evaluate_scan(s, s, scan_id=str(i), fold=f)
            for i, (s, f) in enumerate(zip(scenes, folds))
        ]
        report = build_metrics_report(evals)
        stats = report.dice["tumor"]
        assert stats.std_per_fold == 0.0  # all dice 1.0 in both folds
        evals_nofold = [evaluate_scan(s, s, scan_id=str(i)) for i, s in enumerate(scenes)]
        assert build_metrics_report(evals_nofold).dice["tumor"].std_per_fold is None
