import numpy as np
import pytest

from coleaf.errors import AlignmentError, ConfigError, DimensionError
from coleaf.metrics import (
    BinaryParse,
    EventProposal,
    MetricConfig,
    derive_exclusive,
    event_fscore,
    extract_event_proposals,
    full_report,
    match_events,
    segment_counts,
    segment_fscore,
    threshold_parse,
)

from oracles import (
    oracle_full_report,
    oracle_greedy_match,
    oracle_optimal_match,
    oracle_runs,
)


def test_threshold_parse_scalar():
    parse = threshold_parse(np.array([[0.6, 0.4]]), np.array([[0.4, 0.6]]), 0.5)
    assert parse.audio.tolist() == [[1, 0]]
    assert parse.visual.tolist() == [[0, 1]]


def test_threshold_parse_per_class():
    parse = threshold_parse(np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]), [0.3, 0.7])
    assert parse.audio.tolist() == [[1, 0]]


def test_threshold_parse_matches_elementwise():
    rng = np.random.default_rng(0)
    pa, pv = rng.uniform(0, 1, (4, 3)), rng.uniform(0, 1, (4, 3))
    thr = rng.uniform(0.2, 0.8)
    parse = threshold_parse(pa, pv, thr)
    assert np.array_equal(parse.audio, (pa > thr).astype(int))
    assert np.array_equal(parse.visual, (pv > thr).astype(int))


def test_threshold_parse_rejects_bad_threshold():
    probs = np.full((2, 2), 0.5)
    for thr in (0.0, 1.0, [0.5, 1.5], [0.2, 0.4, 0.6]):
        with pytest.raises(ConfigError):
            threshold_parse(probs, probs, thr)


def test_derive_exclusive_cases():
    parse = BinaryParse(np.array([[1]]), np.array([[1]]))
    ex = derive_exclusive(parse)
    assert (ex.audio_only[0, 0], ex.visual_only[0, 0], ex.audible_visible[0, 0]) == (0, 0, 1)
    parse = BinaryParse(np.array([[0]]), np.array([[0]]))
    ex = derive_exclusive(parse)
    assert ex.audio_only[0, 0] == ex.visual_only[0, 0] == ex.audible_visible[0, 0] == 0


def test_derive_exclusive_truth_table_and_partition():
    cases = [(0, 0), (0, 1), (1, 0), (1, 1)]
    a = np.array([[x for x, _ in cases]])
    v = np.array([[y for _, y in cases]])
    ex = derive_exclusive(BinaryParse(a, v))
    assert ex.audio_only.tolist() == [[0, 0, 1, 0]]
    assert ex.visual_only.tolist() == [[0, 1, 0, 0]]
    assert ex.audible_visible.tolist() == [[0, 0, 0, 1]]
    # partition: ao + vo + 2*av == a + v, streams pairwise disjoint
    assert np.array_equal(ex.audio_only + ex.visual_only + 2 * ex.audible_visible, a + v)
    assert np.all(ex.audio_only * ex.audible_visible == 0)
    assert np.all(ex.visual_only * ex.audible_visible == 0)
    assert np.all(ex.audio_only * ex.visual_only == 0)


def test_segment_fscore_perfect_and_all_wrong():
    gt = np.array([[1, 0], [0, 1]])
    assert segment_fscore(gt, gt) == 100.0
    assert segment_fscore(np.ones_like(gt), np.zeros_like(gt)) == 0.0


def test_segment_fscore_empty_confusion_is_100():
    z = np.zeros((3, 2), dtype=int)
    assert segment_fscore(z, z) == 100.0


def test_segment_fscore_matches_cell_count_oracle():
    rng = np.random.default_rng(1)
    preds = [rng.integers(0, 2, (5, 3)) for _ in range(3)]
    gts = [rng.integers(0, 2, (5, 3)) for _ in range(3)]
    got = segment_fscore(np.concatenate(preds), np.concatenate(gts))
    tp = fp = fn = 0
    for p, g in zip(preds, gts):
        for i in range(5):
            for j in range(3):
                tp += int(p[i, j] and g[i, j])
                fp += int(p[i, j] and not g[i, j])
                fn += int(not p[i, j] and g[i, j])
    want = 100.0 * 2 * tp / (2 * tp + fp + fn)
    assert got == want


def test_segment_fscore_shape_mismatch():
    with pytest.raises(DimensionError):
        segment_fscore(np.zeros((2, 2)), np.zeros((3, 2)))


def test_extract_event_proposals():
    col = np.array([[1], [1], [0], [1]])
    events = extract_event_proposals(col, "A")
    assert events == [EventProposal(0, 0, 1, "A"), EventProposal(0, 3, 3, "A")]
    assert extract_event_proposals(np.zeros((4, 2), dtype=int), "A") == []


def test_extract_event_proposals_matches_run_length_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        mat = rng.integers(0, 2, (10, 3))
        got = [(e.class_index, e.start, e.end) for e in extract_event_proposals(mat, "V")]
        want = sorted(oracle_runs(mat), key=lambda r: (r[0], r[1]))
        assert sorted(got) == want


def test_event_fscore_identical_sets():
    events = [EventProposal(0, 1, 3, "A"), EventProposal(2, 0, 0, "A")]
    assert event_fscore(events, list(events)) == 100.0


def test_event_fscore_low_iou_is_no_match():
    pred = [EventProposal(0, 0, 4, "A")]
    gt = [EventProposal(0, 0, 1, "A")]
    # IoU = 2/5 < 0.5
    assert event_fscore(pred, gt) == 0.0
    assert match_events(pred, gt) == (0, 1, 1)


def test_event_matching_equals_optimal_on_small_sets():
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(500):
        if checked >= 25:
            break
        pred_mat = rng.integers(0, 2, (8, 2))
        gt_mat = rng.integers(0, 2, (8, 2))
        pred_runs = oracle_runs(pred_mat)
        gt_runs = oracle_runs(gt_mat)
        if len(pred_runs) > 4 or len(gt_runs) > 4:
            continue
        greedy = oracle_greedy_match(pred_runs, gt_runs)
        optimal = oracle_optimal_match(pred_runs, gt_runs)
        if greedy != optimal:
            continue  # keep instances where greedy is optimal by construction
        pred_events = extract_event_proposals(pred_mat, "A")
        gt_events = extract_event_proposals(gt_mat, "A")
        assert match_events(pred_events, gt_events) == optimal
        checked += 1


def _random_corpus(rng, n_videos=3, t=5, c=3):
    preds, gts = {}, {}
    for i in range(n_videos):
        vid = f"v{i}"
        preds[vid] = BinaryParse(rng.integers(0, 2, (t, c)), rng.integers(0, 2, (t, c)))
        gts[vid] = BinaryParse(rng.integers(0, 2, (t, c)), rng.integers(0, 2, (t, c)))
    return preds, gts


def test_full_report_perfect_prediction_is_all_100():
    rng = np.random.default_rng(4)
    _, gts = _random_corpus(rng)
    report = full_report(dict(gts), gts)
    for value in {**report.segment.as_dict(), **report.event.as_dict()}.values():
        assert value == 100.0


def test_full_report_reproduces_metric_divergence():
    # one audible-only cell predicted as audible-visible: the raw audio
    # metric rewards it while the exclusive metrics record the mistake
    preds = {"v": BinaryParse(np.array([[1]]), np.array([[1]]))}
    gts = {"v": BinaryParse(np.array([[1]]), np.array([[0]]))}
    report = full_report(preds, gts)
    assert report.segment.a == 100.0  # TP on the raw audio stream
    assert report.segment.ao == 0.0  # FN on audible-only
    assert report.segment.av == 0.0  # FP on audible-visible
    pred_parse = derive_exclusive(preds["v"])
    gt_parse = derive_exclusive(gts["v"])
    assert segment_counts(pred_parse.audio_only, gt_parse.audio_only) == (0, 0, 1)
    assert segment_counts(pred_parse.audible_visible, gt_parse.audible_visible) == (0, 1, 0)


def test_full_report_matches_brute_force():
    rng = np.random.default_rng(5)
    for agg in ("micro", "per-video-mean"):
        preds, gts = _random_corpus(rng, n_videos=4, t=6, c=3)
        report = full_report(preds, gts, config=MetricConfig(aggregation=agg))
        oracle = oracle_full_report(
            {k: (v.audio, v.visual) for k, v in preds.items()},
            {k: (v.audio, v.visual) for k, v in gts.items()},
            aggregation=agg,
        )
        assert report.segment.as_dict() == oracle["segment"]
        assert report.event.as_dict() == oracle["event"]


def test_full_report_order_independent():
    rng = np.random.default_rng(6)
    preds, gts = _random_corpus(rng)
    forward = full_report(preds, gts)
    reversed_preds = dict(reversed(list(preds.items())))
    reversed_gts = dict(reversed(list(gts.items())))
    backward = full_report(reversed_preds, reversed_gts)
    assert forward.as_dict() == backward.as_dict()


def test_full_report_alignment_error_lists_ids():
    preds = {"a": BinaryParse(np.zeros((2, 2)), np.zeros((2, 2)))}
    gts = {
        "a": BinaryParse(np.zeros((2, 2)), np.zeros((2, 2))),
        "b": BinaryParse(np.zeros((2, 2)), np.zeros((2, 2))),
    }
    with pytest.raises(AlignmentError) as err:
        full_report(preds, gts)
    assert "b" in str(err.value)


def test_full_report_accepts_probability_pairs():
    rng = np.random.default_rng(7)
    gt = BinaryParse(rng.integers(0, 2, (4, 2)), rng.integers(0, 2, (4, 2)))
    probs = (rng.uniform(0, 1, (4, 2)), rng.uniform(0, 1, (4, 2)))
    report = full_report({"v": probs}, {"v": gt}, thresholds=0.5)
    direct = full_report({"v": threshold_parse(*probs, 0.5)}, {"v": gt})
    assert report.as_dict() == direct.as_dict()


def test_segment_equals_event_for_unit_runs():
    # every positive is isolated, so each run has length 1 and IoU matching
    # reduces to exact cell matching
    rng = np.random.default_rng(8)
    t, c = 9, 3
    base = np.zeros((t, c), dtype=int)
    base[::2] = rng.integers(0, 2, ((t + 1) // 2, c))
    pred = np.zeros_like(base)
    pred[::2] = rng.integers(0, 2, ((t + 1) // 2, c))
    seg = segment_fscore(pred, base)
    ev = event_fscore(
        extract_event_proposals(pred, "A"), extract_event_proposals(base, "A")
    )
    assert seg == ev


def test_type_scores_are_means():
    rng = np.random.default_rng(9)
    preds, gts = _random_corpus(rng)
    report = full_report(preds, gts)
    seg = report.segment
    assert seg.type_at_av == pytest.approx((seg.a + seg.v + seg.av) / 3)
    assert seg.type_at_avo == pytest.approx((seg.ao + seg.vo + seg.av) / 3)


def test_report_text_is_stable():
    rng = np.random.default_rng(10)
    preds, gts = _random_corpus(rng)
    first = full_report(preds, gts).to_text()
    second = full_report(preds, gts).to_text()
    assert first == second
    assert first.splitlines()[0].startswith("segment.A = ")
    assert len(first.splitlines()) == 18
