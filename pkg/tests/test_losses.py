"""Objective terms: fixed points, oracles, Gram properties, weighting."""
import math

import numpy as np
import pytest

from sketchfill.autodiff import Tensor, backprop, named_tensors
from sketchfill.gradcheck import grad_check
from sketchfill.losses import (
    FeatureExtractor,
    LossWeights,
    adversarial_loss,
    gram,
    perceptual_loss,
    pixel_loss,
    style_loss,
    total_loss,
    tv_loss,
    weighted_total,
)


@pytest.fixture(scope="module")
def fx():
    return FeatureExtractor.build(0)


class TestPixelLoss:
    def test_identical_inputs(self, rng):
        x = Tensor(rng.random((1, 3, 8, 8)))
        assert pixel_loss(x, x).item() == 0.0

    def test_zeros_vs_ones(self):
        a = Tensor(np.zeros((1, 3, 4, 4)))
        b = Tensor(np.ones((1, 3, 4, 4)))
        assert pixel_loss(a, b).item() == 1.0

    def test_matches_direct_sum(self, rng):
        a, b = rng.random((2, 3, 6, 6)), rng.random((2, 3, 6, 6))
        got = pixel_loss(Tensor(a), Tensor(b)).item()
        want = np.abs(a - b).sum() / a.size
        assert abs(got - want) < 1e-12


class TestPerceptualLoss:
    def test_identical_inputs(self, fx, rng):
        x = Tensor(rng.random((1, 3, 16, 16)))
        assert perceptual_loss(x, x, fx).item() == 0.0

    def test_symmetric(self, fx, rng):
        a = Tensor(rng.random((1, 3, 16, 16)))
        b = Tensor(rng.random((1, 3, 16, 16)))
        assert perceptual_loss(a, b, fx).item() == perceptual_loss(b, a, fx).item()

    def test_matches_stage_oracle(self, fx, rng):
        a = Tensor(rng.random((1, 3, 16, 16)))
        b = Tensor(rng.random((1, 3, 16, 16)))
        got = perceptual_loss(a, b, fx).item()
        want = 0.0
        for fa, fb in zip(fx.features(a), fx.features(b)):
            want += np.abs(fa.data - fb.data).sum() / fa.data.size
        assert abs(got - want) < 1e-10

    def test_extractor_is_frozen_and_seeded(self):
        a = FeatureExtractor.build(3)
        b = FeatureExtractor.build(3)
        for (na, ta), (nb, tb) in zip(named_tensors(a), named_tensors(b)):
            assert ta.data.tobytes() == tb.data.tobytes()
            assert not ta.requires_grad

    def test_stage_strides(self, fx):
        x = Tensor(np.zeros((1, 3, 32, 32)))
        sizes = [f.shape[2] for f in fx.features(x)]
        assert sizes == [32, 16, 8, 4, 2]


class TestGram:
    def test_zero_features(self):
        g = gram(Tensor(np.zeros((1, 4, 3, 3))))
        assert np.array_equal(g.data, np.zeros((1, 4, 4)))

    def test_constant_single_channel(self):
        g = gram(Tensor(np.ones((1, 1, 2, 2))))
        assert g.shape == (1, 1, 1)
        assert g.item() == 1.0  # (1*4) / (1*2*2)

    def test_orthogonal_rows_zero_off_diagonal(self):
        f = np.zeros((1, 2, 1, 4))
        f[0, 0, 0] = [1.0, 1.0, 0.0, 0.0]
        f[0, 1, 0] = [0.0, 0.0, 1.0, 1.0]
        g = gram(Tensor(f)).data[0]
        assert g[0, 1] == 0.0 and g[1, 0] == 0.0
        assert abs(g[0, 0] - 2.0 / 8.0) < 1e-15

    def test_symmetry_and_psd(self, rng):
        for _ in range(20):
            f = Tensor(rng.standard_normal((2, 5, 4, 4)))
            g = gram(f).data
            assert np.abs(g - g.transpose(0, 2, 1)).max() < 1e-12
            for sample in g:
                np.linalg.cholesky(sample + 1e-8 * np.eye(5))


class TestStyleLoss:
    def test_identical_inputs(self, fx, rng):
        x = Tensor(rng.random((1, 3, 16, 16)))
        assert style_loss(x, x, fx).item() == 0.0

    def test_symmetric(self, fx, rng):
        a = Tensor(rng.random((1, 3, 16, 16)))
        b = Tensor(rng.random((1, 3, 16, 16)))
        assert style_loss(a, b, fx).item() == style_loss(b, a, fx).item()

    def test_matches_gram_oracle(self, fx, rng):
        a = Tensor(rng.random((1, 3, 16, 16)))
        b = Tensor(rng.random((1, 3, 16, 16)))
        got = style_loss(a, b, fx).item()
        want = 0.0
        for fa, fb in zip(fx.features(a), fx.features(b)):
            n, c, h, w = fa.shape
            fa2 = fa.data.reshape(n, c, h * w)
            fb2 = fb.data.reshape(n, c, h * w)
            ga = fa2 @ fa2.transpose(0, 2, 1) / (c * h * w)
            gb = fb2 @ fb2.transpose(0, 2, 1) / (c * h * w)
            want += np.abs(ga - gb).sum() / ga.size
        assert abs(got - want) < 1e-10


class TestAdversarialLoss:
    def test_equal_scores_give_2ln2(self):
        for const in (0.0, 3.7, -1.2):
            r = Tensor(np.full((4, 1), const))
            f = Tensor(np.full((4, 1), const))
            for role in ("generator", "discriminator"):
                val = adversarial_loss(r, f, role).item()
                assert abs(val - 2.0 * math.log(2.0)) < 1e-9

    def test_separated_scores_match_scalar_oracle(self):
        r = Tensor(np.array([[10.0]]))
        f = Tensor(np.array([[-10.0]]))

        def sig(x):
            return 1.0 / (1.0 + math.exp(-x))

        gen_want = -math.log(max(1.0 - sig(20.0), 1e-12)) - math.log(max(sig(-20.0), 1e-12))
        disc_want = -math.log(max(sig(20.0), 1e-12)) - math.log(max(1.0 - sig(-20.0), 1e-12))
        assert abs(adversarial_loss(r, f, "generator").item() - gen_want) < 1e-9
        assert abs(adversarial_loss(r, f, "discriminator").item() - disc_want) < 1e-9
        assert abs(gen_want - 40.0) < 1e-6

    def test_duplicating_scores_is_invariant(self, rng):
        r = rng.standard_normal((3, 1))
        f = rng.standard_normal((3, 1))
        base = adversarial_loss(Tensor(r), Tensor(f), "generator").item()
        dup = adversarial_loss(
            Tensor(np.concatenate([r, r])), Tensor(np.concatenate([f, f])), "generator"
        ).item()
        assert abs(base - dup) < 1e-12

    def test_roles_pull_fakes_in_opposite_directions(self):
        r = Tensor(np.full((2, 1), 0.5))
        f = Tensor(np.full((2, 1), 0.5), requires_grad=True)
        backprop(adversarial_loss(r, f, "generator"))
        g_gen = f.grad.copy()
        f.grad = None
        backprop(adversarial_loss(r, f, "discriminator"))
        g_disc = f.grad.copy()
        assert np.all(g_gen * g_disc < 0)

    def test_nonfinite_scores_rejected(self):
        with pytest.raises(ValueError):
            adversarial_loss(Tensor(np.array([[np.nan]])), Tensor(np.array([[0.0]])), "generator")

    def test_unknown_role_rejected(self):
        with pytest.raises(ValueError):
            adversarial_loss(Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 1))), "critic")


class TestTvLoss:
    def test_constant_image(self):
        img = Tensor(np.full((1, 3, 5, 5), 0.7))
        mask = Tensor(np.ones((1, 1, 5, 5)))
        assert tv_loss(img, mask).item() == 0.0

    def test_empty_mask(self, rng):
        img = Tensor(rng.random((1, 3, 5, 5)))
        mask = Tensor(np.zeros((1, 1, 5, 5)))
        assert tv_loss(img, mask).item() == 0.0

    def test_matches_pair_enumeration(self, rng):
        img = rng.random((1, 1, 3, 3))
        img[0, 0, :, 2] += 1.0  # vertical step
        mask = np.ones((1, 1, 3, 3))
        got = tv_loss(Tensor(img), Tensor(mask)).item()
        want = 0.0
        for i in range(3):
            for j in range(3):
                if j + 1 < 3:
                    want += abs(img[0, 0, i, j + 1] - img[0, 0, i, j])
                if i + 1 < 3:
                    want += abs(img[0, 0, i + 1, j] - img[0, 0, i, j])
        want /= img.size
        assert abs(got - want) < 1e-12

    def test_partial_mask_restricts_pairs(self, rng):
        img = rng.random((1, 1, 4, 4))
        mask = np.zeros((1, 1, 4, 4))
        mask[0, 0, 1:3, 1:3] = 1.0
        got = tv_loss(Tensor(img), Tensor(mask)).item()
        want = 0.0
        for i in range(4):
            for j in range(4):
                if j + 1 < 4 and mask[0, 0, i, j] and mask[0, 0, i, j + 1]:
                    want += abs(img[0, 0, i, j + 1] - img[0, 0, i, j])
                if i + 1 < 4 and mask[0, 0, i, j] and mask[0, 0, i + 1, j]:
                    want += abs(img[0, 0, i + 1, j] - img[0, 0, i, j])
        assert abs(got - want / img.size) < 1e-12


class TestTotalLoss:
    def test_all_zero_terms(self):
        assert total_loss(0, 0, 0, 0, 0).total == 0.0

    def test_unit_terms_with_default_weights(self):
        # lambda = (1, 0.05, 250, 0.1, 0.1) summed over unit terms
        report = total_loss(1.0, 1.0, 1.0, 1.0, 1.0)
        assert abs(report.total - 251.25) < 1e-12

    def test_zero_weights_kill_everything(self, rng):
        w = LossWeights(0, 0, 0, 0, 0)
        vals = rng.random(5)
        assert total_loss(*vals, weights=w).total == 0.0

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(re=-1.0)

    def test_report_matches_weighted_sum(self, rng):
        w = LossWeights()
        vals = [float(v) for v in rng.random(5)]
        report = total_loss(*vals, weights=w)
        expected = (
            w.re * vals[0] + w.prec * vals[1] + w.style * vals[2]
            + w.tv * vals[3] + w.adv * vals[4]
        )
        assert abs(report.total - expected) < 1e-12

    def test_tensor_total_matches_report(self, rng):
        w = LossWeights()
        terms = [Tensor(np.array([float(v)])) for v in rng.random(5)]
        t = weighted_total(*terms, weights=w)
        report = total_loss(*terms, weights=w)
        assert t.item() == report.total


class TestLossGradients:
    def test_all_losses_pass_gradcheck(self, fx, rng):
        a = Tensor(rng.random((1, 3, 8, 8)))
        b = Tensor(rng.random((1, 3, 8, 8)))
        mask = Tensor((rng.random((1, 1, 8, 8)) < 0.6).astype(np.float64))
        checks = {
            "pixel": lambda p: pixel_loss(p[0], p[1]),
            "perceptual": lambda p: perceptual_loss(p[0], p[1], fx),
            "style": lambda p: style_loss(p[0], p[1], fx),
            "tv": lambda p: tv_loss(p[0], mask),
        }
        for name, closure in checks.items():
            err = grad_check(closure, [a, b], max_coords=24)
            assert err <= 1e-4, name
