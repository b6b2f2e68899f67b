"""Pairwise loss closed forms, numerical stability, and gradient checks."""

import math

import numpy as np
import pytest

from caprank.reward import HeadArchitecture, init_parameters, pair_loss, zero_parameters
from caprank.reward.head import make_dropout_masks
from caprank.reward.loss import pair_loss_batch, softplus, stable_sigmoid

from oracles import finite_difference_gradients, max_relative_gradient_error


def _identity_head():
    """One 1->1 layer with weight 1, bias 0: reward(x) = x."""
    arch = HeadArchitecture(layer_widths=(1,), dropout_rates=())
    params = zero_parameters(arch)
    params.weights[0][0, 0] = 1.0
    return arch, params


class TestClosedForms:
    def test_zero_delta_gives_ln2(self):
        arch = HeadArchitecture(layer_widths=(4, 8), dropout_rates=())
        params = init_parameters(arch, np.random.default_rng(0))
        e = np.random.default_rng(1).normal(size=4)
        loss, _ = pair_loss(arch, params, e, e)
        assert abs(loss - math.log(2)) < 1e-12

    def test_minus_ln3_delta_gives_ln4(self):
        arch, params = _identity_head()
        loss, _ = pair_loss(arch, params, np.array([0.0]), np.array([math.log(3)]))
        assert abs(loss - math.log(4)) < 1e-12

    def test_large_deltas_stay_finite(self):
        arch, params = _identity_head()
        lo, _ = pair_loss(arch, params, np.array([50.0]), np.array([0.0]))
        hi, _ = pair_loss(arch, params, np.array([0.0]), np.array([50.0]))
        assert math.isfinite(lo) and math.isfinite(hi)
        assert lo == pytest.approx(0.0, abs=1e-20)
        assert hi == pytest.approx(50.0, rel=1e-12)

    def test_loss_always_positive(self):
        arch, params = _identity_head()
        rng = np.random.default_rng(2)
        for _ in range(100):
            a, b = rng.normal(size=2) * 10
            loss, _ = pair_loss(arch, params, np.array([a]), np.array([b]))
            assert loss > 0.0

    def test_symmetry_sum_bound(self):
        # loss(i,j) + loss(j,i) >= 2 ln 2, equality iff delta = 0
        arch, params = _identity_head()
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = rng.normal(size=2)
            lij, _ = pair_loss(arch, params, np.array([a]), np.array([b]))
            lji, _ = pair_loss(arch, params, np.array([b]), np.array([a]))
            assert lij + lji >= 2 * math.log(2) - 1e-12
        same, _ = pair_loss(arch, params, np.array([1.0]), np.array([1.0]))
        assert same * 2 == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_shift_invariance_via_bias(self):
        # adding a constant to every reward leaves the loss unchanged
        arch = HeadArchitecture(layer_widths=(3, 4), dropout_rates=())
        params = init_parameters(arch, np.random.default_rng(4))
        rng = np.random.default_rng(5)
        e1, e2 = rng.normal(size=3), rng.normal(size=3)
        base, _ = pair_loss(arch, params, e1, e2)
        params.biases[-1][0] += 123.456  # shifts both rewards equally
        shifted, _ = pair_loss(arch, params, e1, e2)
        assert shifted == pytest.approx(base, rel=1e-12)


class TestStability:
    def test_sigmoid_extremes(self):
        x = np.array([-1000.0, -50.0, 0.0, 50.0, 1000.0])
        s = stable_sigmoid(x)
        assert np.all(np.isfinite(s))
        assert s[2] == 0.5
        assert np.all(np.diff(s) >= 0)

    def test_softplus_extremes(self):
        x = np.array([-1000.0, 0.0, 1000.0])
        sp = softplus(x)
        assert np.all(np.isfinite(sp))
        assert sp[1] == pytest.approx(math.log(2))
        assert sp[2] == pytest.approx(1000.0)


class TestGradients:
    def _loss_fn(self, arch, e1, e2):
        def fn(params):
            loss, _ = pair_loss(arch, params, e1, e2)
            return loss

        return fn

    @pytest.mark.parametrize("activation", ["relu", "gelu", "tanh"])
    def test_finite_difference_sweep(self, activation):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(8):
            depth = int(rng.integers(1, 4))
            widths = tuple(int(rng.integers(2, 10)) for _ in range(depth))
            arch = HeadArchitecture(layer_widths=widths, dropout_rates=(), activation=activation)
            params = init_parameters(arch, rng)
            for b in params.biases:  # keep pre-activations off the relu kink
                b += rng.uniform(0.05, 0.15, size=b.shape)
            e1 = rng.normal(size=widths[0])
            e2 = rng.normal(size=widths[0])
            _, (gw, gb) = pair_loss(arch, params, e1, e2)
            fd_w, fd_b = finite_difference_gradients(self._loss_fn(arch, e1, e2), params)
            worst = max(
                worst,
                max_relative_gradient_error(gw, fd_w),
                max_relative_gradient_error(gb, fd_b),
            )
        assert worst < 1e-4

    def test_gradients_with_dropout_masks(self):
        # fixed masks make the dropped network a plain deterministic net,
        # so finite differences still apply
        rng = np.random.default_rng(13)
        arch = HeadArchitecture(layer_widths=(6, 8, 4), dropout_rates=(0.3, 0.2))
        params = init_parameters(arch, rng)
        e1 = rng.normal(size=(1, 6))
        e2 = rng.normal(size=(1, 6))
        masks_p = make_dropout_masks(arch, np.random.default_rng(21), 1)
        masks_d = make_dropout_masks(arch, np.random.default_rng(22), 1)

        def fn(p):
            loss, _, _ = pair_loss_batch(
                arch, p, e1, e2, masks_preferred=masks_p, masks_dispreferred=masks_d
            )
            return loss

        _, (gw, gb), _ = pair_loss_batch(
            arch, params, e1, e2, masks_preferred=masks_p, masks_dispreferred=masks_d
        )
        fd_w, fd_b = finite_difference_gradients(fn, params)
        assert max_relative_gradient_error(gw, fd_w) < 1e-4
        assert max_relative_gradient_error(gb, fd_b) < 1e-4

    def test_batch_gradient_is_mean_of_pair_gradients(self):
        rng = np.random.default_rng(17)
        arch = HeadArchitecture(layer_widths=(5, 7), dropout_rates=())
        params = init_parameters(arch, rng)
        E1 = rng.normal(size=(4, 5))
        E2 = rng.normal(size=(4, 5))
        loss_b, (gw_b, gb_b), _ = pair_loss_batch(arch, params, E1, E2)
        singles = [pair_loss(arch, params, e1, e2) for e1, e2 in zip(E1, E2)]
        assert loss_b == pytest.approx(np.mean([s[0] for s in singles]), rel=1e-12)
        for layer in range(arch.layer_count):
            mean_gw = np.mean([s[1][0][layer] for s in singles], axis=0)
            np.testing.assert_allclose(gw_b[layer], mean_gw, rtol=1e-10, atol=1e-14)

    def test_weighted_batch(self):
        rng = np.random.default_rng(19)
        arch = HeadArchitecture(layer_widths=(3, 4), dropout_rates=())
        params = init_parameters(arch, rng)
        E1 = rng.normal(size=(2, 3))
        E2 = rng.normal(size=(2, 3))
        weights = np.array([0.75, 0.25])
        loss_w, _, _ = pair_loss_batch(arch, params, E1, E2, weights=weights)
        l0, _ = pair_loss(arch, params, E1[0], E2[0])
        l1, _ = pair_loss(arch, params, E1[1], E2[1])
        assert loss_w == pytest.approx(0.75 * l0 + 0.25 * l1, rel=1e-12)
