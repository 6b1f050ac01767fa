"""Retrieval evaluation: ranking, scalar AP, and whole-task MAP."""

import numpy as np
import pytest

from uch.encoder import pack_codes
from uch.errors import DataError, UsageError
from uch.evaluate import (
    RetrievalReport,
    average_precision,
    evaluate_task,
    hamming_rank,
)
from uch.kernels import hamming_distances
from uch.model import CodeMatrix, UchModel, sign_quantize
from uch.trainer import TrainConfig, train

from conftest import build_split, two_view_blobs


class TestHammingRank:
    def test_orders_by_distance(self):
        q = CodeMatrix(np.array([[1, 1, 1, 1]], dtype=np.int8))
        db = CodeMatrix(np.array(
            [[-1, -1, -1, -1], [1, 1, 1, -1], [1, 1, 1, 1]], dtype=np.int8
        ))
        np.testing.assert_array_equal(hamming_rank(q, db)[0], [2, 1, 0])

    def test_ties_break_by_index(self):
        q = CodeMatrix(np.array([[1, 1]], dtype=np.int8))
        db = CodeMatrix(np.array([[1, -1], [-1, 1], [1, -1]], dtype=np.int8))
        # all three sit at distance 1
        np.testing.assert_array_equal(hamming_rank(q, db)[0], [0, 1, 2])

    def test_matches_distance_argsort(self):
        rng = np.random.default_rng(1)
        q = sign_quantize(rng.normal(size=(6, 24)))
        db = sign_quantize(rng.normal(size=(40, 24)))
        order = hamming_rank(q, db)
        dist = hamming_distances(pack_codes(q), pack_codes(db))
        for i in range(6):
            sorted_d = dist[i][order[i]]
            assert np.all(np.diff(sorted_d) >= 0)

    def test_width_mismatch(self):
        q = CodeMatrix(np.ones((1, 8), dtype=np.int8))
        db = CodeMatrix(np.ones((1, 16), dtype=np.int8))
        with pytest.raises(DataError, match="code length mismatch"):
            hamming_rank(q, db)


class TestScalarAp:
    def test_known_value(self):
        assert average_precision([1, 0, 1], 3) == pytest.approx(5.0 / 6.0)

    def test_zero_without_hits(self):
        assert average_precision([0, 0, 0], 3) == 0.0

    def test_cutoff_limits_view(self):
        # the late hit is invisible at cutoff 2
        assert average_precision([0, 1, 1, 1], 2) == pytest.approx(0.5)

    def test_bad_cutoff(self):
        with pytest.raises(UsageError):
            average_precision([1, 0], 0)
        with pytest.raises(UsageError):
            average_precision([1, 0], 3)


class TestRetrievalReport:
    def _ap(self):
        return np.array([0.25, 0.75])

    def test_accepts_consistent_map(self):
        rep = RetrievalReport(task="i2t", map=0.5, ap_per_query=self._ap(),
                              r_cutoff=10, code_length=8)
        assert rep.map == 0.5

    def test_rejects_inconsistent_map(self):
        with pytest.raises(DataError, match="map"):
            RetrievalReport(task="i2t", map=0.9, ap_per_query=self._ap(),
                            r_cutoff=10, code_length=8)

    def test_rejects_out_of_range_ap(self):
        with pytest.raises(DataError):
            RetrievalReport(task="t2i", map=1.5, ap_per_query=np.array([1.5]),
                            r_cutoff=5, code_length=8)


def perfect_model(split, r=16):
    """A hand-built model whose codes separate the two classes exactly."""
    labels = split.train_labels
    rng = np.random.default_rng(0)
    class_codes = sign_quantize(rng.normal(size=(2, r))).codes
    b = CodeMatrix(class_codes[labels].astype(np.int8))
    # projections map each view to its class code via least squares
    ps = []
    for fm in split.train_features:
        p, *_ = np.linalg.lstsq(fm.data, b.codes.astype(float), rcond=None)
        ps.append(p)
    return UchModel(
        projections=tuple(ps),
        means=tuple(fm.mean for fm in split.train_features),
        alphas=np.array([0.5, 0.5]),
        training_codes=b,
        gamma=2.0,
        variant="lle",
        hyper={},
    )


@pytest.fixture(scope="module")
def separable_split():
    train_views, train_labels, query_views, query_labels = two_view_blobs(
        n_per_class=25, n_query_per_class=10, classes=2, dims=(8, 6),
        sep=12.0, seed=31,
    )
    return build_split(train_views, train_labels, query_views, query_labels)


class TestEvaluateTask:
    def test_perfect_codes_give_map_one(self, separable_split):
        model = perfect_model(separable_split)
        for task in ("i2t", "t2i"):
            rep = evaluate_task(model, separable_split, task)
            assert rep.map == pytest.approx(1.0)
            assert rep.task == task
            assert rep.ap_per_query.shape == (20,)

    def test_matches_manual_pipeline(self, blobs_split):
        cfg = TrainConfig(bits=16, neighbors=8, max_iters=6, seed=0)
        model = train(blobs_split, cfg).model
        rep = evaluate_task(model, blobs_split, "i2t")
        # manual: rank train codes by the re-encoded image queries
        from uch.encoder import encode
        order = hamming_rank(
            encode(model, blobs_split.query_features[0], 1), model.training_codes
        )
        ranked = blobs_split.train_labels[order]
        want = np.array([
            average_precision(
                (ranked[i] == blobs_split.query_labels[i]).astype(np.uint8),
                ranked.shape[1],
            )
            for i in range(order.shape[0])
        ])
        np.testing.assert_allclose(rep.ap_per_query, want, atol=1e-12)
        assert rep.map == pytest.approx(want.mean(), abs=1e-12)

    def test_r_cutoff_changes_report(self, separable_split):
        model = perfect_model(separable_split)
        rep = evaluate_task(model, separable_split, "i2t", r_cutoff=5)
        assert rep.r_cutoff == 5
        assert rep.map == pytest.approx(1.0)  # perfect codes stay perfect

    def test_query_database_mode(self, separable_split):
        # i2t with db="query" ranks the re-encoded text queries, not the
        # training codes; rebuild that ranking by hand
        from uch.encoder import encode
        model = perfect_model(separable_split)
        rep = evaluate_task(model, separable_split, "i2t", db="query")
        assert rep.ap_per_query.shape == (20,)
        order = hamming_rank(
            encode(model, separable_split.query_features[0], 1),
            encode(model, separable_split.query_features[1], 2),
        )
        ranked = separable_split.query_labels[order]
        want = np.mean([
            average_precision(
                (ranked[i] == separable_split.query_labels[i]).astype(np.uint8), 20
            )
            for i in range(20)
        ])
        assert rep.map == pytest.approx(want, abs=1e-12)

    def test_rejects_unknown_db(self, separable_split):
        model = perfect_model(separable_split)
        with pytest.raises(UsageError, match="db must be"):
            evaluate_task(model, separable_split, "i2t", db="all")

    def test_rejects_unknown_task(self, separable_split):
        model = perfect_model(separable_split)
        with pytest.raises(UsageError, match="task must be one of"):
            evaluate_task(model, separable_split, "x2y")

    def test_rejects_bad_cutoff(self, separable_split):
        model = perfect_model(separable_split)
        with pytest.raises(UsageError, match="r_cutoff"):
            evaluate_task(model, separable_split, "i2t", r_cutoff=10**6)

    def test_rejects_missing_query_split(self):
        train_views, train_labels, _, _ = two_view_blobs(
            n_per_class=10, classes=2, dims=(6, 5), seed=33
        )
        split = build_split(train_views, train_labels)
        cfg = TrainConfig(bits=8, neighbors=4, max_iters=3, seed=0)
        model = train(split, cfg).model
        with pytest.raises(DataError, match="empty query"):
            evaluate_task(model, split, "i2t")
