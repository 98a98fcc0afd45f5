import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_lattice, tags_of
from nestseq.decode import DecodedPath, ExhaustedError, viterbi_best
from nestseq.lattice import LatticeScores, ShapeError, path_score
from nestseq.objective import (
    EXCLUDE_MODEL_BEST, OBJECTIVE_FLAT, log_partition, log_partition_except_best, logsumexp, loss_and_grad,
    sentence_loss, sentence_loss_grad,
)
from nestseq.oracle import (
    central_differences, oracle_crf_marginals, oracle_gradient, oracle_log_partition, oracle_log_partition_except_best,
    oracle_sentence_loss, random_nested_mentions,
)
from nestseq.tagging import GoldRecord, LevelizedGold, MalformedTagsError, Mention, Tag, levelize


def test_logsumexp_edge_cases():
    assert logsumexp([-math.inf, -math.inf]) == -math.inf
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2))
    np.testing.assert_allclose(logsumexp(np.array([[0.0, -math.inf], [0.0, 0.0]]), axis=1), [0.0, math.log(2)])


class TestPartition:
    def test_small_values(self):
        assert log_partition(LatticeScores("X", np.zeros((5, 1))), (0, 1)) == pytest.approx(math.log(2), abs=1e-12)
        assert log_partition(LatticeScores("X", np.zeros((5, 2))), (0, 2)) == pytest.approx(math.log(5), abs=1e-12)

    def test_except_best_small_values(self):
        p = np.zeros((5, 1))
        p[Tag.O, 0], p[Tag.S, 0] = 5.0, 3.0
        sc = LatticeScores("X", p)
        assert log_partition_except_best(sc, (0, 1), viterbi_best(sc, (0, 1))) == pytest.approx(3.0, abs=1e-12)
        zeros = LatticeScores("X", np.zeros((5, 2)))
        got = log_partition_except_best(zeros, (0, 2), tags_of("O O"))
        assert got == pytest.approx(math.log(4), abs=1e-12)

    def test_random_against_enumeration(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 8))
            sc = random_lattice(rng, n)
            s = int(rng.integers(0, n))
            e = int(rng.integers(s + 1, n + 1))
            best = viterbi_best(sc, (s, e))
            assert abs(log_partition(sc, (s, e)) - oracle_log_partition(sc, (s, e))) < 1e-9
            assert abs(log_partition_except_best(sc, (s, e), best)
                       - oracle_log_partition_except_best(sc, (s, e))) < 1e-9

    def test_excluding_arbitrary_path(self, rng):
        sc = random_lattice(rng, 5)
        path = tags_of("O B I E S")
        assert abs(log_partition_except_best(sc, (0, 5), path)
                   - oracle_log_partition_except_best(sc, (0, 5), path)) < 1e-9

    def test_consistency_and_monotonicity(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 8))
            sc = random_lattice(rng, n, low=-10, high=10)
            best = viterbi_best(sc, (0, n))
            z = log_partition(sc, (0, n))
            zx = log_partition_except_best(sc, (0, n), best)
            assert zx < z
            assert abs(math.exp(zx) + math.exp(best.score) - math.exp(z)) / math.exp(z) < 1e-9

    def test_dominant_best_path(self):
        # Best path ahead of every other by at least 50.
        p = np.zeros((5, 6))
        p[Tag.O] = 60.0
        sc = LatticeScores("X", p)
        got = log_partition_except_best(sc, (0, 6), viterbi_best(sc, (0, 6)))
        assert abs(got - oracle_log_partition_except_best(sc, (0, 6))) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            log_partition_except_best(LatticeScores("X", np.zeros((5, 3))), (0, 3), tags_of("O O"))

    def test_bounds(self):
        with pytest.raises(IndexError):
            log_partition(LatticeScores("X", np.zeros((5, 3))), (1, 1))


def _gold(mentions, n, types=("P",), **kw):
    return levelize(mentions, n, list(types), **kw)


class TestLoss:
    def test_no_mentions(self, rng):
        lats = [random_lattice(rng, 4, "P"), random_lattice(rng, 4, "Q")]
        loss = sentence_loss(lats, _gold([], 4, ("P", "Q")))
        want = -sum(path_score(sc, (0, 4), tags_of("O O O O")) - log_partition(sc, (0, 4)) for sc in lats)
        assert loss.total == pytest.approx(want, abs=1e-12)
        assert loss.total > 0

    def test_worked_example_terms(self, worked_example):
        sc = worked_example["lattice"]
        p = sc.emissions
        gold = _gold([Mention(1, 5, "PROTEIN"), Mention(3, 5, "PROTEIN"), Mention(3, 4, "PROTEIN")], 6, ("PROTEIN",))
        loss = sentence_loss([sc], gold)
        terms = [(t.level, t.span) for t in loss.per_level_terms]
        assert terms == [(1, (0, 6)), (2, (1, 5)), (3, (3, 5))]
        want = [
            path_score(sc, (0, 6), tags_of("O B I I E O")) - oracle_log_partition(p, (0, 6)),
            path_score(sc, (1, 5), tags_of("O O B E")) - oracle_log_partition_except_best(p, (1, 5), tags_of("B I I E")),
            path_score(sc, (3, 5), tags_of("S O")) - oracle_log_partition_except_best(p, (3, 5), tags_of("B E")),
        ]
        np.testing.assert_allclose([t.value for t in loss.per_level_terms], want, atol=1e-9)
        assert loss.total == pytest.approx(-sum(want), abs=1e-9)

    def test_random_against_enumeration(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 7))
            types = ("P", "Q")
            lats = [random_lattice(rng, n, k) for k in types]
            gold = _gold(random_nested_mentions(n, rng, types), n, types)
            loss = sentence_loss(lats, gold)
            assert abs(loss.total - oracle_sentence_loss(lats, gold)) < 1e-9
            assert all(t.value <= 0 for t in loss.per_level_terms)
            assert loss.total >= 0
            assert loss.total == pytest.approx(-sum(loss.per_type.values()))

    def test_flat_objective_keeps_level_one(self, worked_example):
        gold = _gold([Mention(1, 5, "PROTEIN"), Mention(3, 5, "PROTEIN")], 6, ("PROTEIN",))
        flat = sentence_loss([worked_example["lattice"]], gold, objective=OBJECTIVE_FLAT)
        assert [t.level for t in flat.per_level_terms] == [1]
        assert flat.total == pytest.approx(oracle_sentence_loss([worked_example["lattice"]], gold, flat=True))

    def test_model_best_exclusion(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 7))
            sc = random_lattice(rng, n, "P")
            gold = _gold(random_nested_mentions(n, rng, ("P",), rate=0.8), n)
            breakdown, grads = loss_and_grad([sc], gold, exclude=EXCLUDE_MODEL_BEST)
            want = 0.0
            for level, rec in gold.records("P"):
                gscore = path_score(sc, rec.span, rec.tags)
                if level == 1:
                    want -= gscore - oracle_log_partition(sc, rec.span)
                    continue
                excluded = viterbi_best(sc, rec.span).tags
                if excluded == rec.tags:
                    excluded = tuple([int(Tag.B)] + [int(Tag.I)] * (len(rec.tags) - 2) + [int(Tag.E)])
                want -= gscore - oracle_log_partition_except_best(sc, rec.span, excluded)
            assert breakdown.total == pytest.approx(want, abs=1e-9)

    def test_malformed_gold(self):
        gold = LevelizedGold(3, {"P": [[GoldRecord((0, 3), tags_of("O I E"))]]})
        with pytest.raises(MalformedTagsError):
            sentence_loss([LatticeScores("P", np.zeros((5, 3)))], gold)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            sentence_loss([LatticeScores("P", np.zeros((5, 3)))], _gold([], 4))

    def test_unknown_options(self):
        sc = [LatticeScores("P", np.zeros((5, 2)))]
        with pytest.raises(ValueError):
            loss_and_grad(sc, _gold([], 2), exclude="nope")
        with pytest.raises(ValueError):
            loss_and_grad(sc, _gold([], 2), objective="nope")

    @given(st.integers(1, 6), st.integers(0, 2**31), st.integers(0, 5), st.floats(-20, 20))
    def test_shift_invariance(self, n, seed, pos, shift):
        # Adding a constant to every tag at one token moves gold score and partitions alike.
        rng = np.random.default_rng(seed)
        pos = pos % n
        sc = random_lattice(rng, n, "P")
        gold = _gold(random_nested_mentions(n, rng, ("P",)), n)
        p = sc.emissions.copy()
        p[:, pos] += shift
        assert sentence_loss([LatticeScores("P", p)], gold).total == pytest.approx(
            sentence_loss([sc], gold).total, abs=1e-8)


class TestGradient:
    def test_single_token(self):
        sc = LatticeScores("P", np.zeros((5, 1)))
        grad = sentence_loss_grad([sc], _gold([], 1))["P"]
        assert grad[Tag.O, 0] == pytest.approx(-0.5)
        assert grad[Tag.S, 0] == pytest.approx(0.5)
        assert grad[Tag.B, 0] == grad[Tag.I, 0] == grad[Tag.E, 0] == 0.0

    def test_no_mentions_matches_forward_backward(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 9))
            sc = random_lattice(rng, n, "P")
            grad = sentence_loss_grad([sc], _gold([], n))["P"]
            onehot = np.zeros((5, n))
            onehot[Tag.O] = 1.0
            np.testing.assert_allclose(grad, oracle_crf_marginals(sc) - onehot, atol=1e-9)

    def test_finite_differences(self, rng):
        worst = 0.0
        for _ in range(40):
            n = int(rng.integers(1, 7))
            types = ("P", "Q")
            lats = [random_lattice(rng, n, k) for k in types]
            gold = _gold(random_nested_mentions(n, rng, types), n, types)
            fast = sentence_loss_grad(lats, gold)
            slow = oracle_gradient(lats, gold)
            worst = max(worst, max(float(np.abs(fast[k] - slow[k]).max()) for k in types))
        assert worst < 1e-6

    def test_model_best_and_flat(self, rng):
        for exclude, objective in ((EXCLUDE_MODEL_BEST, "nested"), ("gold_parent", OBJECTIVE_FLAT)):
            for _ in range(10):
                n = int(rng.integers(2, 6))
                sc = random_lattice(rng, n, "P")
                gold = _gold(random_nested_mentions(n, rng, ("P",), rate=0.8), n)
                grad = sentence_loss_grad([sc], gold, exclude=exclude, objective=objective)["P"]

                def loss(p):
                    return sentence_loss([LatticeScores("P", p)], gold, exclude=exclude, objective=objective).total

                # The model-best target is piecewise constant; stay off its switching points.
                np.testing.assert_allclose(grad, central_differences(loss, sc.emissions), atol=1e-6)

    def test_exhausted_is_defensive(self):
        # Every span has at least two legal paths; excluding one never empties the set.
        for n in range(1, 6):
            sc = LatticeScores("P", np.zeros((5, n)))
            for path in (tags_of(" ".join(["O"] * n)),):
                assert math.isfinite(log_partition_except_best(sc, (0, n), DecodedPath(path, 0.0)))
        assert issubclass(ExhaustedError, RuntimeError)
