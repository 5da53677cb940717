"""Scoring tests: per-class tables, harmonic mean, scopes, chance level."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zslinear.data import Dataset, SemanticSpace
from zslinear.errors import DegeneratePredictionError, ValidationError
from zslinear.eval import (
    EvalReport,
    evaluate_full,
    evaluate_gzsl,
    evaluate_zsl,
    harmonic_mean,
    macro_average,
    per_class_accuracy,
    predict_batch,
)
from zslinear.indicators import IndicatorEncoder, compute_indicators
from zslinear.model import CompositeModel, init_model, predict_class

# One-decimal (U, S, H) percent score triples from generalized zero-shot
# comparisons. Each printed H must recompute from its own U and S up to
# one step in the last printed digit.
REPORTED_SCORE_TRIPLES = [
    (57.9, 61.4, 59.6), (43.7, 57.7, 49.7), (42.6, 36.6, 39.4),
    (58.3, 68.1, 62.8), (41.5, 53.3, 46.7), (40.9, 30.5, 34.9),
    (37.6, 87.1, 52.5), (36.7, 71.3, 48.5), (54.7, 79.1, 64.7),
    (63.2, 69.0, 66.0), (40.3, 32.3, 35.9), (30.0, 47.9, 36.9),
    (54.6, 74.6, 63.0), (48.1, 59.1, 53.0), (44.8, 37.7, 40.9),
    (75.7, 60.3, 67.1), (59.6, 56.7, 58.1), (24.3, 52.3, 33.2),
    (59.5, 73.4, 65.7), (44.8, 59.9, 51.3), (44.8, 42.9, 43.8),
    (67.1, 76.5, 71.5), (60.0, 73.5, 66.1), (44.0, 31.7, 36.8),
    (30.4, 48.1, 37.2), (83.9, 54.8, 66.4), (55.9, 48.1, 51.7),
    (40.6, 35.4, 37.8), (74.7, 32.7, 45.5), (56.7, 79.8, 66.3),
    (52.7, 58.3, 55.3), (48.6, 39.0, 43.3), (59.2, 74.9, 66.1),
    (44.2, 62.8, 51.9), (51.2, 81.8, 63.0), (21.9, 45.5, 29.5),
    (24.1, 31.8, 27.4), (73.6, 77.3, 75.4), (70.1, 77.8, 73.8),
    (61.7, 45.3, 52.3), (52.3, 71.1, 60.3), (65.9, 78.2, 71.5),
    (71.4, 64.8, 68.0), (49.9, 37.6, 42.8), (38.0, 63.5, 47.6),
    (77.6, 81.4, 79.5), (72.8, 79.4, 76.0), (57.2, 49.5, 53.1),
    (42.3, 68.6, 52.3),
]


def small_setup(c_seen=2, c_unseen=2, d=6, s=4, k_networks=3, k_active=2,
                seed=99):
    """Random descriptors/encoder/model sized for fast scope tests."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    total = c_seen + c_unseen
    desc = rng.normal(size=(total, s))
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    mask = np.arange(total) < c_seen
    space = SemanticSpace(desc, mask)
    enc = IndicatorEncoder(rng.normal(size=(d, d)), k_networks, k_active)
    model = init_model(k_networks, d, s, k_active, seed=seed + 1)
    return space, enc, model


class TestHarmonicMean:
    def test_named_pair_recomputes(self):
        # 77.6 and 81.4 combine to 79.5 at half-a-point precision
        h = harmonic_mean(0.776, 0.814)
        assert abs(100.0 * h - 79.5) <= 0.05

    def test_equal_inputs_pass_through(self):
        assert harmonic_mean(0.37, 0.37) == pytest.approx(0.37, abs=1e-15)

    def test_zero_short_circuits(self):
        assert harmonic_mean(0.0, 0.9) == 0.0
        assert harmonic_mean(0.9, 0.0) == 0.0
        assert harmonic_mean(0.0, 0.0) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            harmonic_mean(-0.1, 0.5)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_bounds(self, u, s):
        h = harmonic_mean(u, s)
        assert h <= 2.0 * min(u, s) + 1e-12
        assert h <= max(u, s) + 1e-12
        assert (h == 0.0) == (u * s == 0.0)

    @given(st.floats(0.001, 1.0), st.floats(0.001, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_scale_equivariant(self, u, s):
        assert harmonic_mean(100 * u, 100 * s) == pytest.approx(
            100 * harmonic_mean(u, s), rel=1e-12
        )


class TestReportedTriples:
    def test_every_row_recomputes(self):
        # Printed composites carry one decimal, so compare at that
        # resolution and allow one final-digit step.
        for u, s, h in REPORTED_SCORE_TRIPLES:
            got = round(100.0 * harmonic_mean(u / 100.0, s / 100.0), 1)
            assert abs(got - h) <= 0.1 + 1e-9, (u, s, h, got)

    def test_reference_rows_exact(self):
        assert round(100.0 * harmonic_mean(0.776, 0.814), 1) == 79.5
        assert round(100.0 * harmonic_mean(0.728, 0.794), 1) == 76.0


class TestPerClassAccuracy:
    def test_all_correct(self):
        table = per_class_accuracy([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert table == {0: (1.0, 1), 1: (1.0, 2), 2: (1.0, 1)}

    def test_macro_differs_from_pooled(self):
        # class 0: 1 of 2 right, class 1: 1 of 1 -> macro 0.75, pooled 2/3
        table = per_class_accuracy([0, 1, 1], [0, 0, 1], 2)
        assert macro_average(table) == pytest.approx(0.75)
        pooled = 2 / 3
        assert macro_average(table) != pytest.approx(pooled)

    def test_empty_class_absent(self):
        table = per_class_accuracy([0, 0], [0, 0], 5)
        assert set(table) == {0}

    def test_empty_input_rejected(self):
        with pytest.raises(ValidationError):
            per_class_accuracy([], [], 2)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="mismatch"):
            per_class_accuracy([0, 1], [0], 2)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            per_class_accuracy([0, 1], [0, 5], 2)

    def test_counts_sum_to_sample_count(self):
        rng = np.random.Generator(np.random.Philox(key=3))
        labels = rng.integers(0, 7, size=60)
        preds = rng.integers(0, 7, size=60)
        table = per_class_accuracy(preds, labels, 7)
        assert sum(c for _, c in table.values()) == 60

    def test_macro_empty_table_rejected(self):
        with pytest.raises(ValidationError):
            macro_average({})


class TestPredictBatch:
    def test_matches_scalar_prediction(self):
        space, enc, model = small_setup()
        rng = np.random.Generator(np.random.Philox(key=17))
        feats = rng.normal(size=(12, 6))
        for scope in ("all", "unseen_only"):
            batch = predict_batch(model, enc, feats, space, scope=scope)
            for i, x in enumerate(feats):
                gates = compute_indicators(enc, x)
                assert batch[i] == predict_class(model, x, gates, space, scope)

    def test_scope_containment(self):
        space, enc, model = small_setup(c_seen=3, c_unseen=2, seed=41)
        rng = np.random.Generator(np.random.Philox(key=18))
        feats = rng.normal(size=(30, 6))
        restricted = predict_batch(model, enc, feats, space, scope="unseen_only")
        assert np.all(np.isin(restricted, space.unseen_ids))
        full = predict_batch(model, enc, feats, space, scope="all")
        assert np.all((full >= 0) & (full < space.class_count))

    def test_unknown_scope_rejected(self):
        space, enc, model = small_setup()
        with pytest.raises(ValidationError, match="scope"):
            predict_batch(model, enc, np.zeros((2, 6)), space, scope="seen")

    def test_zero_prediction_degenerate(self):
        space, enc, _ = small_setup()
        dead = CompositeModel(
            np.zeros((3, 6, 4)), np.zeros((3, 4)), np.zeros(4), 2, "identity"
        )
        with pytest.raises(DegeneratePredictionError):
            predict_batch(dead, enc, np.ones((2, 6)), space)


class TestEvaluateZsl:
    def test_single_unseen_class_is_free(self):
        # scope restriction leaves exactly one candidate
        space, enc, model = small_setup(c_seen=3, c_unseen=1)
        rng = np.random.Generator(np.random.Philox(key=5))
        ds = Dataset(rng.normal(size=(8, 6)), np.full(8, 3), 4)
        assert evaluate_zsl(model, ds, space, enc) == 1.0

    def test_seen_sample_rejected(self):
        space, enc, model = small_setup()
        ds = Dataset(np.ones((3, 6)), [0, 2, 3], 4)
        with pytest.raises(ValidationError, match="seen-class"):
            evaluate_zsl(model, ds, space, enc)

    def test_chance_level_on_random_models(self):
        # Orthonormal descriptors make the win probability of an untrained
        # isotropic model exactly uniform, so the across-model mean must
        # sit within three standard errors of 1/c.
        rng = np.random.Generator(np.random.Philox(key=99))
        ds = Dataset(rng.normal(size=(100, 6)), np.repeat(np.arange(4), 25), 4)
        space = SemanticSpace(np.eye(4), np.zeros(4, dtype=bool))
        enc = IndicatorEncoder(rng.normal(size=(6, 6)), 3, 2)
        runs = 40
        accs = np.array([
            evaluate_zsl(init_model(3, 6, 4, 2, seed=r), ds, space, enc)
            for r in range(runs)
        ])
        sem = accs.std(ddof=1) / np.sqrt(runs)
        assert abs(accs.mean() - 0.25) <= 3.0 * sem + 1e-9


class TestEvaluateGzsl:
    def make_splits(self, space, enc, seed=23, per_class=10):
        rng = np.random.Generator(np.random.Philox(key=seed))
        d = enc.feature_dim
        seen = space.seen_ids
        unseen = space.unseen_ids
        ds_seen = Dataset(
            rng.normal(size=(per_class * seen.size, d)),
            np.repeat(seen, per_class), space.class_count,
        )
        ds_unseen = Dataset(
            rng.normal(size=(per_class * unseen.size, d)),
            np.repeat(unseen, per_class), space.class_count,
        )
        return ds_seen, ds_unseen

    def test_report_consistent(self):
        space, enc, model = small_setup(c_seen=3, c_unseen=2, seed=7)
        ds_seen, ds_unseen = self.make_splits(space, enc)
        rep = evaluate_gzsl(model, ds_seen, ds_unseen, space, enc)
        assert rep.harmonic == pytest.approx(
            harmonic_mean(rep.unseen_accuracy, rep.seen_accuracy), abs=1e-15
        )
        assert rep.zsl_accuracy is None
        assert set(rep.per_class) == set(range(space.class_count))
        assert sum(c for _, c in rep.per_class.values()) == 50

    def test_split_contamination_rejected(self):
        space, enc, model = small_setup(c_seen=3, c_unseen=2, seed=7)
        ds_seen, ds_unseen = self.make_splits(space, enc)
        with pytest.raises(ValidationError):
            evaluate_gzsl(model, ds_unseen, ds_unseen, space, enc)
        with pytest.raises(ValidationError):
            evaluate_gzsl(model, ds_seen, ds_seen, space, enc)

    def test_full_report_adds_zsl(self):
        space, enc, model = small_setup(c_seen=3, c_unseen=2, seed=7)
        ds_seen, ds_unseen = self.make_splits(space, enc)
        rep = evaluate_full(model, ds_seen, ds_unseen, space, enc)
        assert rep.zsl_accuracy is not None
        assert rep.zsl_accuracy >= rep.unseen_accuracy - 1e-12


class TestEvalReport:
    def good(self, **kw):
        base = dict(
            unseen_accuracy=0.5, seen_accuracy=0.75,
            harmonic=harmonic_mean(0.5, 0.75),
            per_class={0: (0.75, 4), 2: (0.5, 10)},
        )
        base.update(kw)
        return EvalReport(**base)

    def test_inconsistent_harmonic_rejected(self):
        with pytest.raises(ValidationError, match="harmonic"):
            self.good(harmonic=0.61)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            self.good(unseen_accuracy=1.2, harmonic=harmonic_mean(1.2, 0.75))

    def test_bad_count_rejected(self):
        with pytest.raises(ValidationError, match="count"):
            self.good(per_class={1: (0.5, 0)})

    def test_zero_corner_accepted(self):
        rep = self.good(unseen_accuracy=0.0, harmonic=0.0)
        assert rep.harmonic == 0.0

    def test_csv_layout(self):
        rep = self.good()
        lines = rep.to_csv().splitlines()
        assert lines[0] == "metric,value"
        assert lines[1].startswith("unseen_accuracy,")
        assert float(lines[1].split(",")[1]) == 0.5
        class_rows = [l for l in lines if l.startswith("class,")]
        assert [int(r.split(",")[1]) for r in class_rows] == [0, 2]
        acc, count = class_rows[1].split(",")[2:]
        assert float(acc) == 0.5 and int(count) == 10

    def test_csv_zsl_row_only_when_present(self):
        assert "zsl_accuracy" not in self.good().to_csv()
        rep = self.good(zsl_accuracy=0.625)
        lines = rep.to_csv().splitlines()
        assert lines[1] == f"zsl_accuracy,{0.625!r}"
