import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grwczsl import losses
from grwczsl.exceptions import (ConfigError, InsufficientClassesError, InvalidLabelError,
                                ShapeError)
from grwczsl.losses import LossWeights
from grwczsl.nets import numeric_grad, relative_error


def unit(deg):
    r = math.radians(deg)
    return np.array([math.cos(r), math.sin(r)])


class TestLossWeights:
    def test_defaults_valid(self):
        w = LossWeights()
        w.validate()
        assert (w.tau, w.gamma, w.R, w.sal_neighbors, w.sal_margin) == (10.0, 0.7, 3, 3, 0.1)

    @pytest.mark.parametrize("field,value", [("lambda_i", -1.0), ("tau", 0.0), ("gamma", 1.5),
                                             ("R", -1), ("sal_neighbors", 0),
                                             ("sal_margin", -0.1), ("lambda_c", float("nan"))])
    def test_invalid(self, field, value):
        with pytest.raises(ConfigError):
            LossWeights(**{field: value}).validate()


class TestRealFake:
    def test_both_aligned(self):
        e = np.array([[1.0, 2.0]])
        assert losses.real_fake_loss(e, e, e) == pytest.approx(0.0, abs=1e-15)

    def test_fake_opposite(self):
        e = np.array([[1.0, 0.0]])
        v = losses.real_fake_loss(e, -e, e)
        assert v == pytest.approx(-math.log(1e-12), rel=1e-9)
        assert v == pytest.approx(27.631, abs=1e-3)

    def test_identical_batches(self):
        rng = np.random.default_rng(0)
        X, E = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        assert losses.real_fake_loss(X, X, E) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            losses.real_fake_loss(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((2, 3)))


class TestClassification:
    def test_two_class_closed_form(self):
        x = np.array([[1.0, 0.0]])
        bank = np.array([[2.0, 0.0], [0.0, 5.0]])
        v = losses.classification_loss(x, [0], bank, tau=1.0)
        # the norm epsilon in the cosine shifts the value by ~1e-12
        assert v == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-10)
        assert v == pytest.approx(0.31326, abs=1e-5)

    def test_equidistant_is_log_n(self):
        bank = np.array([unit(0), unit(120), unit(240)])
        x = np.array([[0.0, 0.0]])
        assert losses.classification_loss(x, [1], bank) == pytest.approx(math.log(3), abs=1e-9)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(1)
        x, bank = rng.normal(size=(6, 4)), rng.normal(size=(3, 4))
        y = rng.integers(0, 3, size=6)
        perm = np.array([2, 0, 1])
        inv = np.argsort(perm)
        a = losses.classification_loss(x, y, bank)
        b = losses.classification_loss(x, inv[y], bank[perm])
        assert a == pytest.approx(b, rel=1e-13)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-2, 1e2), st.integers(0, 2**31))
    def test_scale_invariance(self, c, seed):
        # exact up to the norm epsilon in the cosine denominator
        rng = np.random.default_rng(seed)
        x, bank = rng.normal(size=(4, 3)), rng.normal(size=(3, 3))
        y = rng.integers(0, 3, size=4)
        np.testing.assert_allclose(losses.cosine_logits(c * x, bank, 10.0),
                                   losses.cosine_logits(x, bank, 10.0), atol=1e-8)
        assert losses.classification_loss(c * x, y, bank) == pytest.approx(
            losses.classification_loss(x, y, bank), rel=1e-8)

    def test_bad_label(self):
        with pytest.raises(InvalidLabelError):
            losses.classification_loss(np.ones((1, 2)), [2], np.eye(2))
        with pytest.raises(InvalidLabelError):
            losses.classification_loss(np.ones((1, 2)), [-1], np.eye(2))


class TestCreativity:
    def test_uniform_logits(self):
        bank = np.array([unit(0), unit(120), unit(240)])
        assert losses.creativity_loss(np.zeros((2, 2)), bank) == pytest.approx(0.0, abs=1e-10)

    def test_one_hot_like(self):
        bank = np.array([[1.0, 0.0], [-1.0, 0.0]])
        v = losses.creativity_loss(np.array([[1.0, 0.0]]), bank, tau=50.0)
        assert v == pytest.approx(math.log(2), abs=1e-9)

    def test_direct_kl_oracle(self):
        rng = np.random.default_rng(3)
        X, bank = rng.normal(size=(5, 4)), rng.normal(size=(3, 4))
        Z = 10.0 * np.array([[x @ b / (np.linalg.norm(x) * np.linalg.norm(b)) for b in bank] for x in X])
        P = np.exp(Z) / np.exp(Z).sum(axis=1, keepdims=True)
        ref = np.mean([sum(p * math.log(p / (1 / 3)) for p in row) for row in P])
        assert losses.creativity_loss(X, bank) == pytest.approx(ref, abs=1e-12)

    def test_needs_two_classes(self):
        with pytest.raises(InsufficientClassesError):
            losses.creativity_loss(np.ones((2, 2)), np.ones((1, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        assert losses.creativity_loss(rng.normal(size=(4, 3)), rng.normal(size=(3, 3))) >= -1e-12


class TestRegularizers:
    def test_rd_zero(self):
        E = np.arange(6.0).reshape(2, 3)
        assert losses.discriminator_regularizer(E, E) == 0.0

    def test_rd_one_entry(self):
        E = np.zeros((2, 2))
        C = E.copy()
        C[1, 0] = 2.0
        assert losses.discriminator_regularizer(E, C) == 4.0

    def test_rd_loop_oracle(self):
        rng = np.random.default_rng(0)
        E, C = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        ref = sum((E[i, j] - C[i, j]) ** 2 for i in range(3) for j in range(4))
        assert losses.discriminator_regularizer(E, C) == pytest.approx(ref, rel=1e-14)

    def _triangle(self):
        # cos(a0, a1) = 0.5, cos(a1, a2) = 0, cos(a0, a2) = -0.866; with k = 1 the
        # neighbours are 0 -> 1, 1 -> 0 and 2 -> 1
        return np.array([unit(0), unit(60), unit(150)])

    def test_rg_zero_when_aligned(self):
        A = self._triangle()
        w = LossWeights(sal_neighbors=2)
        assert losses.generator_regularizer(A, A.copy(), A, w) == pytest.approx(0.0, abs=1e-12)

    def test_rg_equal_centers_leaves_only_alignment(self):
        rng = np.random.default_rng(0)
        C, A = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        nuc, _ = losses.nuclear_loss_grad(C, C.copy())
        assert nuc == 0.0
        sal, _ = losses.semantic_alignment_loss_grad(C, C.copy(), A, 2, 0.1)
        assert losses.generator_regularizer(C, C.copy(), A, LossWeights(sal_neighbors=2)) == \
            pytest.approx(sal, abs=1e-15)

    def test_single_violated_hinge(self):
        A = self._triangle()
        Cs = A.copy()
        Cg = A.copy()
        # rotate generated center 2 so its cosine with real center 1 is 0.3:
        # attribute cosine 0 + margin 0.1 is exceeded by 0.2
        Cg[2] = unit(60 + math.degrees(math.acos(0.3)))
        sal, _ = losses.semantic_alignment_loss_grad(Cs, Cg, A, 1, 0.1)
        assert sal == pytest.approx(0.04 / 3, abs=1e-12)

    def test_k_too_large(self):
        A = self._triangle()
        with pytest.raises(ConfigError):
            losses.generator_regularizer(A, A, A, LossWeights(sal_neighbors=3))

    def test_generator_regularizer_gradient(self):
        rng = np.random.default_rng(7)
        Cs, Cg, A = rng.normal(size=(4, 5)), rng.normal(size=(4, 5)), rng.normal(size=(4, 3))
        w = LossWeights(sal_neighbors=2)
        _, d = losses.generator_regularizer_grad(Cs, Cg, A, w)
        num = numeric_grad(lambda: losses.generator_regularizer(Cs, Cg, A, w), Cg)
        assert relative_error(d, num) < 1e-4


class TestCompose:
    def test_discriminator(self):
        w = LossWeights()
        zero = {"real_fake": 0.0, "classification": 0.0, "rd": 0.0}
        assert losses.compose_discriminator_loss(zero, w) == 0.0
        assert losses.compose_discriminator_loss({**zero, "real_fake": 2.0}, w) == -2.0
        assert losses.compose_discriminator_loss(
            {"real_fake": 1.0, "classification": 1.0, "rd": 1.0}, w) == 1.0

    def test_generator(self):
        zero = dict.fromkeys(["real_fake", "classification", "creativity", "grw", "grw_reg", "rg"], 0.0)
        assert losses.compose_generator_loss(zero, LossWeights()) == 0.0
        assert losses.compose_generator_loss({**zero, "grw": 1.0}, LossWeights(lambda_i=2.0)) == 2.0
        assert losses.compose_generator_loss({**zero, "creativity": 0.5},
                                             LossWeights(lambda_c=10.0)) == 5.0
        # both walk terms share lambda_i
        assert losses.compose_generator_loss({**zero, "grw_reg": 1.0},
                                             LossWeights(lambda_i=0.5)) == 0.5

    def test_unknown_part(self):
        with pytest.raises(KeyError):
            losses.compose_discriminator_loss({"bogus": 1.0}, LossWeights())
