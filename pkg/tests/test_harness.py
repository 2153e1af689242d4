import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from facerx.data import AugmentParams, Dataset, HerbDictionary, gen_synthetic, default_signal_spec
from facerx.harness import training
from facerx.harness.crossval import (
    CrossValResult,
    FoldPlanError,
    FoldResult,
    make_fold_plan,
)
from facerx.harness.evaluation import (
    EvalReport,
    decode_indices,
    decode_prescription,
    evaluate,
    predict_probabilities,
    threshold_sweep,
)
from facerx.harness.metrics import (
    EmptyPrescriptionError,
    average_f1_from_bits,
    metrics_from_bits,
    sample_metrics,
)
from facerx.harness.training import TrainConfig, TrainingError, fit, split_train_val, train
from facerx.models import build_model
from facerx.tensor import make_rng


def _brute_metrics(pred, real):
    """Count set memberships one herb at a time."""
    hits = 0
    for h in pred:
        for r in real:
            if h == r:
                hits += 1
    p = hits / len(pred) if len(pred) else 0.0
    r = hits / len(real)
    f = 0.0 if hits == 0 else 2 * p * r / (p + r)
    return p, r, f


# -- metrics ---------------------------------------------------------------

def test_worked_example():
    p, r, f = sample_metrics({1, 2, 3}, {2, 3, 4})
    assert (p, r) == (2 / 3, 2 / 3)
    assert f == pytest.approx(2 / 3)


def test_perfect_and_empty_predictions():
    assert sample_metrics({5, 7}, {5, 7}) == (1.0, 1.0, 1.0)
    assert sample_metrics(set(), {1}) == (0.0, 0.0, 0.0)


def test_empty_real_set_is_error():
    with pytest.raises(EmptyPrescriptionError):
        sample_metrics({1}, set())
    with pytest.raises(EmptyPrescriptionError):
        metrics_from_bits(np.ones((2, 3)), np.array([[1, 0, 0], [0, 0, 0]]))


def test_average_of_two_samples():
    pred = np.array([[1, 1, 0], [0, 0, 1]])
    real = np.array([[1, 1, 0], [1, 0, 0]])
    assert average_f1_from_bits(pred, real) == 0.5


def test_vectorized_metrics_match_brute_force():
    rng = np.random.default_rng(0)
    pred = rng.random((1000, 12)) < rng.random((1000, 1))
    real = rng.random((1000, 12)) < 0.3
    real[~real.any(axis=1), 0] = True
    p, r, f = metrics_from_bits(pred, real)
    for i in range(1000):
        bp, br, bf = _brute_metrics(np.flatnonzero(pred[i]).tolist(),
                                    np.flatnonzero(real[i]).tolist())
        assert (p[i], r[i]) == (bp, br)
        assert f[i] == pytest.approx(bf, rel=1e-15, abs=0)


@given(st.sets(st.integers(0, 15)), st.sets(st.integers(0, 15), min_size=1))
def test_f1_bounded_by_harmonic_limits(pred, real):
    p, r, f = sample_metrics(pred, real)
    for v in (p, r, f):
        assert 0.0 <= v <= 1.0
    assert f <= 2 * min(p, r) + 1e-12
    assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12


# -- decoding --------------------------------------------------------------

def test_decode_examples():
    np.testing.assert_array_equal(decode_indices([0.3, 0.2, 0.26], 0.25), [0, 2])
    np.testing.assert_array_equal(decode_indices([0.01, 0.5, 1e-9], 0.0), [0, 1, 2])
    np.testing.assert_array_equal(decode_indices([0.25, 0.2500001], 0.25), [1])


def test_decode_names():
    d = HerbDictionary(["a", "b", "c"])
    assert decode_prescription([0.9, 0.1, 0.4], 0.25, d) == ["a", "c"]


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 1), st.floats(0, 1))
def test_decoding_is_nested(p, t1, t2):
    lo, hi = sorted((t1, t2))
    assert set(decode_indices(p, hi)) <= set(decode_indices(p, lo))


# -- evaluation ------------------------------------------------------------

@pytest.fixture(scope="module")
def small_model_and_data():
    spec = default_signal_spec(5, seed=0, amplitude=0.45)
    data = gen_synthetic(40, 5, 16, spec, make_rng(0))
    model = build_model("three-grained", 5, 16, make_rng(1))
    cfg = TrainConfig(batch_size=8, max_epochs=3, seed=2)
    model, _ = train(model, data.subset(range(30)), cfg, AugmentParams.identity())
    return model, data.subset(range(30, 40))


def test_evaluate_is_mean_of_per_sample_values(small_model_and_data):
    model, test = small_model_and_data
    rep = evaluate(model, test, 0.25, fold_id=3)
    probs = predict_probabilities(model, test)
    vals = [_brute_metrics(np.flatnonzero(pr > 0.25).tolist(), np.flatnonzero(y).tolist())
            for pr, y in zip(probs, test.labels)]
    assert rep.precision == pytest.approx(np.mean([v[0] for v in vals]), abs=1e-12)
    assert rep.recall == pytest.approx(np.mean([v[1] for v in vals]), abs=1e-12)
    assert rep.f1 == pytest.approx(np.mean([v[2] for v in vals]), abs=1e-12)
    assert rep.summary()["fold"] == 3


def test_evaluate_is_read_only(small_model_and_data):
    model, test = small_model_and_data
    before = model.state_dict()
    evaluate(model, test)
    threshold_sweep(model, test, [0.1, 0.5])
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_sweep_monotone_and_consistent(small_model_and_data):
    model, test = small_model_and_data
    ts = np.arange(0.05, 0.999, 0.05)
    reports = threshold_sweep(model, test, ts)
    recalls = [r.recall for r in reports]
    assert all(b <= a for a, b in zip(recalls, recalls[1:]))
    for a, b in zip(reports, reports[1:]):
        assert (b.recall_i <= a.recall_i).all()
    single = evaluate(model, test, float(ts[4]))
    np.testing.assert_array_equal(single.f1_i, reports[4].f1_i)
    near_one = threshold_sweep(model, test, [1 - 1e-12])[0]
    assert near_one.recall <= 0.05


def test_sweep_requires_ascending(small_model_and_data):
    model, test = small_model_and_data
    with pytest.raises(ValueError):
        threshold_sweep(model, test, [0.5, 0.2])


# -- cross-validation plan ---------------------------------------------------

def _plain(n, n_herbs=3, size=8):
    rng = make_rng(n)
    labels = np.zeros((n, n_herbs), np.uint8)
    labels[:, 0] = 1
    return Dataset.from_faces([f"f{i}" for i in range(n)], rng.random((n, size, size, 3)),
                              labels, HerbDictionary.generic(n_herbs))


def test_fold_tests_disjoint_and_partition():
    data = _plain(60)
    plan = make_fold_plan(data, seed=1)
    assert plan.n_folds == 5
    for a, b in itertools.combinations(plan.test, 2):
        assert not set(a) & set(b)
    for te, tr in zip(plan.test, plan.train):
        assert len(te) == 12
        assert sorted(set(te) | set(tr)) == list(range(60))
        assert not set(te) & set(tr)


def test_fold_test_size_capped():
    data = _plain(3000, size=8)
    plan = make_fold_plan(data, seed=0)
    assert all(len(t) == 500 for t in plan.test)


def test_fold_plan_too_small():
    with pytest.raises(FoldPlanError):
        make_fold_plan(_plain(4), seed=0)


def test_augmented_copies_never_straddle_folds():
    from facerx.data import expand_dataset

    data = expand_dataset(_plain(25), 1.91, make_rng(3))
    plan = make_fold_plan(data, seed=4)
    for te, tr in zip(plan.test, plan.train):
        test_sources = {data.source_ids[i] for i in te}
        train_sources = {data.source_ids[i] for i in tr}
        assert not test_sources & train_sources


def test_mean_of_equal_folds():
    def report(v):
        arr = np.full(4, v)
        return EvalReport(0.25, arr, arr, arr)

    res = CrossValResult("m", [FoldResult(k, report(0.4), None) for k in range(5)])
    assert res.mean("f1") == pytest.approx(0.4)
    assert res.std("f1") == 0.0
    assert res.row() == "m\t40.00 ± 0.00\t40.00 ± 0.00\t40.00 ± 0.00"


# -- training --------------------------------------------------------------

@pytest.mark.parametrize("kw", [{"val_fraction": 0.0}, {"val_fraction": 1.0}, {"patience": 0},
                                {"threshold": 1.0}, {"batch_size": 0}])
def test_config_invariants(kw):
    with pytest.raises(TrainingError):
        TrainConfig(**kw)


def test_training_errors():
    model = build_model("conventional", 3, 8, make_rng(0))
    data = _plain(6)
    with pytest.raises(TrainingError, match="exceeds"):
        fit(model, data, None, TrainConfig(batch_size=64), make_rng(0))
    with pytest.raises(TrainingError):
        train(model, data.subset([]), TrainConfig())


def test_patience_one_stops_after_second_epoch(monkeypatch):
    scripted = iter([1.0, 1.5, 0.5, 0.4])
    monkeypatch.setattr(training, "dataset_loss", lambda m, d: (next(scripted), (0.0,)))
    model = build_model("conventional", 3, 8, make_rng(0))
    data = _plain(8)
    snapshots = []
    cfg = TrainConfig(batch_size=4, max_epochs=10, patience=1)
    hist = fit(model, data, data, cfg, make_rng(1),
               stop_when=lambda m, rec: snapshots.append(m.state_dict()) or False)
    assert hist.epochs_run == 2
    assert hist.stopped_early and hist.best_epoch == 1
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, snapshots[0][k])


def test_restored_model_has_minimum_val_loss():
    spec = default_signal_spec(4, seed=0, amplitude=0.45)
    data = gen_synthetic(40, 4, 16, spec, make_rng(5))
    model = build_model("conventional", 4, 16, make_rng(6))
    fit_set, val = split_train_val(data, 0.25, make_rng(7))
    hist = fit(model, fit_set, val, TrainConfig(batch_size=5, max_epochs=8, patience=3,
                                                learning_rate=0.05), make_rng(8))
    best = min(hist.val_losses)
    assert hist.records[hist.best_epoch - 1].val_loss == best
    assert training.dataset_loss(model, val)[0] == pytest.approx(best, rel=1e-6)


def test_split_is_partition():
    data = _plain(30)
    fit_set, val = split_train_val(data, 0.1, make_rng(0))
    assert len(val) == 3 and len(fit_set) == 27
    assert sorted(fit_set.ids + val.ids) == sorted(data.ids)


def test_history_records_heads():
    spec = default_signal_spec(4, seed=0)
    data = gen_synthetic(20, 4, 16, spec, make_rng(9))
    model = build_model("three-grained", 4, 16, make_rng(10))
    _, hist = train(model, data, TrainConfig(batch_size=6, max_epochs=2))
    assert len(hist.records[0].train_heads) == 3 and len(hist.records[0].val_heads) == 3
    r = hist.records[0]
    assert r.train_loss == pytest.approx(sum(r.train_heads))
    assert r.val_loss == pytest.approx(sum(r.val_heads))
    lines = hist.to_tsv().splitlines()
    assert lines[0].split("\t")[:3] == ["epoch", "train_loss", "val_loss"]
    assert len(lines) == 3


def test_training_deterministic():
    spec = default_signal_spec(4, seed=0)
    data = gen_synthetic(24, 4, 16, spec, make_rng(11))
    cfg = TrainConfig(batch_size=6, max_epochs=2, augment_factor=1.5, seed=3)
    runs = []
    for _ in range(2):
        model = build_model("three-grained", 4, 16, make_rng(12))
        model, hist = train(model, data, cfg)
        runs.append((model.state_dict(), hist.to_tsv()))
    assert runs[0][1] == runs[1][1]
    for k in runs[0][0]:
        np.testing.assert_array_equal(runs[0][0][k], runs[1][0][k])


def test_memorizes_ten_samples():
    spec = default_signal_spec(5, seed=0)
    data = gen_synthetic(10, 5, 16, spec, make_rng(13))
    model = build_model("conventional", 5, 16, make_rng(14))
    cfg = TrainConfig(batch_size=2, max_epochs=300)

    def done(m, rec):
        return evaluate(m, data, 0.25).f1 >= 0.99

    fit(model, data, None, cfg, make_rng(15), stop_when=done)
    assert evaluate(model, data, 0.25).f1 >= 0.99
