import csv
import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import helpers
import oracles
from broncho import synth
from broncho.errors import EmptyMaskError, ShapeMismatchError
from broncho.metrics import (
    CSV_COLUMNS,
    CcfConfig,
    ConfusionCounts,
    branch_detection,
    ccf_score,
    confusion,
    continuity_index,
    csv_text,
    evaluate,
    overlap_metrics,
    size_class_detection,
)
from broncho.skeleton import analyze
from broncho.volcore import BinaryMask, largest_component

mask = helpers.mask
pair = hnp.arrays(bool, (4, 4, 4))


# ------------------------------------------------------------------ confusion and overlap


@given(pair, pair)
def test_confusion_matches_triple_loop(p, g):
    c = confusion(mask(p), mask(g))
    assert (c.tp, c.fp, c.fn, c.tn) == oracles.confusion(p, g)
    assert c.tp + c.fn == c.v_y and c.total == p.size


def test_confusion_examples(rng):
    g = rng.random((4, 4, 4)) < 0.5
    c = confusion(mask(g), mask(g))
    assert c.fp == c.fn == 0
    c = confusion(mask(~g), mask(g))
    assert c.tp == 0 and c.fp == int((~g).sum())
    with pytest.raises(ShapeMismatchError):
        confusion(mask(g), mask(g[:3]))


def test_overlap_plug_in():
    m = overlap_metrics(ConfusionCounts(tp=9, fp=1, fn=1, tn=0))
    assert m["jaccard"] == pytest.approx(9 / 11)
    assert m["dice"] == pytest.approx(0.9) and m["precision"] == pytest.approx(0.9)
    assert m["alr"] == pytest.approx(0.1) and m["amr"] == pytest.approx(0.1)


def test_overlap_edge_cases():
    assert overlap_metrics(ConfusionCounts(0, 0, 5, 3))["precision"] == 1.0
    with pytest.raises(EmptyMaskError):
        overlap_metrics(ConfusionCounts(0, 2, 0, 3))


@given(pair, pair.filter(lambda a: a.any()))
def test_overlap_identities(p, g):
    c = confusion(mask(p), mask(g))
    m = overlap_metrics(c)
    J = m["jaccard"]
    assert m["dice"] == pytest.approx(2 * J / (1 + J), abs=1e-12)
    assert m["amr"] == pytest.approx(1 - c.tp / c.v_y, abs=1e-15)
    if c.tp + c.fp:
        r = c.tp / c.v_y
        if r + m["alr"] > 0:
            assert m["precision"] == pytest.approx(r / (r + m["alr"]), abs=1e-12)
    if c.tp + c.fp + c.fn:
        assert J <= m["dice"]
    tp, fp, fn, _ = oracles.confusion(p, g)
    assert J == pytest.approx(tp / (tp + fp + fn), abs=1e-12)


# ------------------------------------------------------------------ continuity and CCF


def test_continuity_examples():
    c = np.zeros((10, 1, 1), bool)
    c[:, 0, 0] = True
    assert continuity_index(mask(c), mask(c)) == 1.0
    p = c.copy()
    p[7:] = False
    assert continuity_index(mask(p), mask(c)) == pytest.approx(0.7)
    with pytest.raises(EmptyMaskError):
        continuity_index(mask(p), mask(np.zeros_like(c)))


@given(pair, pair.filter(lambda a: a.any()))
def test_continuity_matches_triple_loop(p, c):
    assert continuity_index(mask(p), mask(c)) == pytest.approx(oracles.continuity(p, c), abs=1e-12)


@pytest.mark.parametrize("omega", [0, 0.5, 0.9, 1])
def test_ccf_identities(omega):
    for v in np.arange(1, 11) / 10:
        assert ccf_score(v, v, omega) == pytest.approx(v, abs=1e-12)
    for J, C in [(0.3, 0.9), (0.87, 0.61)]:
        if omega == 1:
            assert ccf_score(J, C, 1) == pytest.approx(2 * J * C / (J + C), abs=1e-12)


def test_ccf_edges():
    assert ccf_score(0, 0) == 0.0
    for bad in [(-0.1, 0.5, 0.9), (0.5, 1.1, 0.9), (0.5, 0.5, 2)]:
        with pytest.raises(ValueError):
            ccf_score(*bad)


@given(st.floats(0.01, 0.98), st.floats(0.01, 0.98), st.floats(0.01, 1), st.floats(1e-3, 0.02))
def test_ccf_strictly_increasing(J, C, omega, d):
    base = ccf_score(J, C, omega)
    assert ccf_score(J + d, C, omega) > base
    assert ccf_score(J, C + d, omega) > base


def test_ccf_cross_check_on_synthetic_case(tree0):
    pred = synth.erode(tree0, 1)
    r = evaluate(pred, tree0.mask)
    tp, fp, fn, _ = oracles.confusion(pred.data, tree0.mask.data)
    J = tp / (tp + fp + fn)
    C = oracles.continuity(pred.data, analyze(tree0.mask)[0].data)
    w2 = 0.81
    assert r.ccf == pytest.approx((1 + w2) * J * C / (w2 * J + C), abs=1e-12)


def test_ccf_config_validation():
    with pytest.raises(ValueError):
        CcfConfig(omega=1.5)
    with pytest.raises(ValueError):
        CcfConfig(threshold=0)


# ------------------------------------------------------------------ branch detection


def _gt(tree):
    return analyze(tree.mask)


def test_perfect_prediction(tree0):
    r = evaluate(tree0.mask, tree0.mask)
    assert (r.jaccard, r.dice, r.precision, r.continuity, r.ccf) == (1, 1, 1, 1, 1)
    assert (r.dbr, r.dlr, r.alr, r.amr) == (1, 1, 0, 0)
    present = {b.size_class for b in r.branches.branches}
    assert all(r.size_rates[c] == 1 for c in present)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_deleting_branches(tree0, k):
    _, g, a = _gt(tree0)
    match = helpers.match_segments(tree0, g)
    leaves = tree0.leaves()[:k]
    pred = synth.delete_branch(tree0, leaves)
    rep = branch_detection(pred, g, a)
    assert rep.dbr == (7 - k) / 7
    lost = sum(b.length_mm for b in g.branches if match[b.id] in leaves)
    assert rep.dlr == pytest.approx(1 - lost / rep.total_length, abs=1e-12)
    assert {b.id for b in rep.branches if not b.detected} == {b for b, s in match.items() if s in leaves}


def test_detection_threshold_is_strict():
    d = np.zeros((12, 5, 5), bool)
    d[1:11, 1:4, 1:4] = True       # 90 voxels, one branch
    gt = mask(d)
    _, g, a = analyze(gt)
    assert len(g.branches) == 1
    region = np.argwhere(a.labels == 1)
    pred = np.zeros_like(d)
    keep = region[: int(0.8 * len(region))]
    pred[tuple(keep.T)] = True
    rep = branch_detection(mask(pred), g, a, 0.8)
    assert rep.branches[0].coverage == 0.8 and not rep.branches[0].detected
    pred[tuple(region[int(0.8 * len(region))])] = True
    assert branch_detection(mask(pred), g, a, 0.8).branches[0].detected


@given(st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_dbr_dlr_antitone(extra, seed):
    t = helpers.tree(0)
    _, g, a = _gt(t)
    rng = np.random.default_rng(seed)
    first = [int(rng.integers(1, 8))]
    second = first + [int(rng.integers(1, 8)) for _ in range(extra % 3)]
    r1 = branch_detection(synth.delete_branch(t, first), g, a)
    r2 = branch_detection(synth.delete_branch(t, second), g, a)
    assert r2.dbr <= r1.dbr and r2.dlr <= r1.dlr


def test_size_classes_and_na():
    t = helpers.tree(0)
    _, g, a = _gt(t)
    rep = branch_detection(t.mask, g, a)
    rates = size_class_detection(rep)
    assert rates["LB"] == "n/a" and rates["MB"] == "n/a"
    tb = [b.id for b in g.branches if b.size_class == "TB"]
    assert tb
    pred = t.mask.data.copy()
    pred[np.isin(a.labels, tb)] = False
    rates2 = size_class_detection(branch_detection(mask(pred), g, a))
    assert rates2["TB"] == 0.0
    assert all(rates2[c] == rates[c] for c in ("SB", "MB", "LB"))


def test_branch_detection_validation(tree0):
    _, g, a = _gt(tree0)
    with pytest.raises(ValueError):
        branch_detection(tree0.mask, g, a, 0.0)


# ------------------------------------------------------------------ evaluate


def test_perturbation_directions(tree0):
    gt = tree0.mask
    base = evaluate(gt, gt)
    er = evaluate(synth.erode(tree0, 1), gt)
    assert er.amr > 0 and er.alr == 0 and er.jaccard < 1 and er.precision == 1
    dl = evaluate(synth.dilate(tree0, 1), gt)
    assert dl.alr > 0 and dl.amr == 0 and dl.precision < 1 and dl.continuity == 1
    blob = evaluate(synth.add_blob(tree0, (8, 8, 50), 3.0), gt)
    assert blob.alr > 0 and blob.precision < 1 and blob.dbr == 1
    gap = evaluate(synth.break_gap(tree0, 1, 3.0), gt)
    assert gap.continuity < base.continuity and gap.amr > 0
    dele = evaluate(synth.delete_branch(tree0, tree0.leaves()[:2]), gt)
    assert dele.dbr < 1 and dele.dlr < 1 and dele.ccf < 1


def test_evaluate_is_deterministic(tree0):
    pred = largest_component(synth.erode(tree0, 1))
    a = evaluate(pred, tree0.mask).to_dict()
    b = evaluate(largest_component(pred), tree0.mask).to_dict()
    assert a == b


def test_report_serialization(tree0):
    r = evaluate(synth.erode(tree0, 1), tree0.mask)
    d = r.to_dict()
    assert d["dbr"] == pytest.approx(100 * r.dbr) and d["amr"] == pytest.approx(100 * r.amr)
    assert d["jaccard"] == r.jaccard
    raw = r.to_dict(percent=False)
    assert raw["dbr"] == r.dbr
    row = r.csv_row("case7")
    text = csv_text([row])
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[1][0] == "case7" and float(rows[1][1]) == r.jaccard
    assert rows[1][CSV_COLUMNS.index("lb_rate")] == "n/a"


def test_evaluate_errors(tree0):
    with pytest.raises(ShapeMismatchError):
        evaluate(tree0.mask, BinaryMask(np.ones((2, 2, 2), bool)))
    with pytest.raises(EmptyMaskError):
        evaluate(tree0.mask, tree0.mask.with_data(np.zeros(tree0.dims, bool)))
