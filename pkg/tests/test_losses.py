"""Objective functions: InfoNCE closed forms, reconstruction MSE, temperature."""

import math

import numpy as np
import pytest
import torch

from cadsearch.encoders import FeatureMap
from cadsearch.errors import InputDomainError, TrainingDivergenceError
from cadsearch.losses import (
    Temperature,
    info_nce_direction,
    reconstruction_loss,
    retrieval_loss,
    total_loss,
)

torch.manual_seed(0)


def unit_rows(b, d, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(b, d, generator=g, dtype=dtype)
    return x / x.norm(dim=-1, keepdim=True)


class TestInfoNceDirection:
    def test_identity_similarity_b2_tau1(self):
        f = torch.eye(2, dtype=torch.float64)
        loss = info_nce_direction(f, f, 1.0)
        assert abs(float(loss) - math.log(1 + math.exp(-1))) < 1e-5

    def test_uniform_similarities_give_log_b(self):
        for b in (2, 5, 8):
            f = torch.ones(b, 16, dtype=torch.float64)
            loss = info_nce_direction(f, f, 0.07)
            assert abs(float(loss) - math.log(b)) < 1e-10

    def test_saturated_diagonal_small_tau(self):
        f = torch.eye(2, dtype=torch.float64)
        assert float(info_nce_direction(f, f, 0.01)) < 1e-10

    def test_nonnegative(self):
        for seed in range(5):
            a, b = unit_rows(6, 12, seed), unit_rows(6, 12, seed + 100)
            assert float(info_nce_direction(a, b, 0.1)) >= 0.0

    def test_batch_of_one_rejected(self):
        f = torch.ones(1, 4)
        with pytest.raises(InputDomainError):
            info_nce_direction(f, f, 1.0)

    def test_batch_mismatch_rejected(self):
        with pytest.raises(InputDomainError):
            info_nce_direction(torch.ones(3, 4), torch.ones(2, 4), 1.0)

    def test_scale_invariance_of_features(self):
        a, b = unit_rows(5, 8, 1), unit_rows(5, 8, 2)
        base = float(info_nce_direction(a, b, 0.5))
        scaled = float(info_nce_direction(a * 7.3, b * 0.02, 0.5))
        assert abs(base - scaled) < 1e-12

    def test_temperature_monotone_on_dominant_diagonal(self):
        # identical unit rows give sim with diagonal exactly 1 > off-diagonals
        f = unit_rows(8, 32, seed=3)
        losses = [float(info_nce_direction(f, f, tau)) for tau in (1.0, 0.5, 0.2, 0.1, 0.05)]
        assert all(a > b for a, b in zip(losses, losses[1:]))


class TestRetrievalLoss:
    def test_identical_batches_double_single_direction(self):
        f = unit_rows(6, 16, seed=4)
        d = float(info_nce_direction(f, f, 0.2))
        total, directions = retrieval_loss(f, f, f, 0.2)
        assert abs(float(total) - 2 * d) < 1e-12
        assert set(directions) == {"t2s", "s2t", "t2p", "p2t"}
        for v in directions.values():
            assert abs(float(v) - d) < 1e-12

    def test_single_branch_equals_log_b_when_uniform(self):
        f = torch.ones(4, 8, dtype=torch.float64)
        total, _ = retrieval_loss(f, f, None, 0.07)
        assert abs(float(total) - math.log(4)) < 1e-10

    def test_symmetric_under_branch_swap(self):
        f_t, f_s, f_p = unit_rows(5, 8, 1), unit_rows(5, 8, 2), unit_rows(5, 8, 3)
        a, _ = retrieval_loss(f_t, f_s, f_p, 0.3)
        b, _ = retrieval_loss(f_t, f_p, f_s, 0.3)
        assert abs(float(a) - float(b)) < 1e-12

    def test_joint_permutation_invariance(self):
        f_t, f_s, f_p = unit_rows(6, 8, 1), unit_rows(6, 8, 2), unit_rows(6, 8, 3)
        base, _ = retrieval_loss(f_t, f_s, f_p, 0.3)
        perm = torch.randperm(6)
        permuted, _ = retrieval_loss(f_t[perm], f_s[perm], f_p[perm], 0.3)
        assert abs(float(base) - float(permuted)) < 1e-10

    def test_needs_at_least_one_branch(self):
        with pytest.raises(InputDomainError):
            retrieval_loss(torch.ones(3, 4), None, None, 1.0)


class TestReconstructionLoss:
    def fm(self, values, mask=None):
        mask = torch.ones(values.shape[:2], dtype=torch.bool) if mask is None else mask
        return FeatureMap(values, mask)

    def test_exact_match_is_zero(self):
        x = torch.randn(2, 5, 8)
        assert float(reconstruction_loss(self.fm(x), self.fm(x.detach()))) == 0.0

    def test_all_ones_residual_6x8(self):
        target = torch.zeros(1, 6, 8)
        pred = torch.ones(1, 6, 8)
        assert float(reconstruction_loss(self.fm(pred), self.fm(target))) == 48.0

    def test_quadratic_scaling(self):
        target = torch.zeros(3, 4, 8)
        pred = torch.randn(3, 4, 8)
        base = float(reconstruction_loss(self.fm(pred), self.fm(target)))
        doubled = float(reconstruction_loss(self.fm(2 * pred), self.fm(target)))
        assert abs(doubled - 4 * base) < 1e-4 * base

    def test_padding_contributes_zero(self):
        pred = torch.ones(1, 6, 8)
        target = torch.zeros(1, 6, 8)
        mask = torch.tensor([[True] * 4 + [False] * 2])
        loss = reconstruction_loss(FeatureMap(pred, mask), FeatureMap(target, mask))
        assert float(loss) == 32.0  # only 4 valid rows count

    def test_gradient_formula(self):
        pred = torch.randn(3, 5, 8, dtype=torch.float64, requires_grad=True)
        target = torch.randn(3, 5, 8, dtype=torch.float64)
        loss = reconstruction_loss(self.fm(pred), self.fm(target))
        loss.backward()
        expected = 2 * (pred.detach() - target) / 3
        np.testing.assert_allclose(pred.grad, expected, rtol=1e-12)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(1)
        pred = torch.randn(2, 3, 4, dtype=torch.float64, requires_grad=True)
        target = torch.randn(2, 3, 4, dtype=torch.float64)
        loss = reconstruction_loss(self.fm(pred), self.fm(target))
        loss.backward()
        h = 1e-6
        rng = np.random.default_rng(0)
        for _ in range(10):
            i, j, k = rng.integers(2), rng.integers(3), rng.integers(4)
            p = pred.detach().clone()
            p[i, j, k] += h
            up = float(reconstruction_loss(self.fm(p), self.fm(target)))
            p[i, j, k] -= 2 * h
            down = float(reconstruction_loss(self.fm(p), self.fm(target)))
            fd = (up - down) / (2 * h)
            analytic = float(pred.grad[i, j, k])
            assert abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-12) < 1e-4

    def test_live_target_rejected(self):
        pred = torch.randn(1, 2, 3)
        target = torch.randn(1, 2, 3, requires_grad=True)
        with pytest.raises(InputDomainError):
            reconstruction_loss(self.fm(pred), self.fm(target))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InputDomainError):
            reconstruction_loss(self.fm(torch.ones(1, 2, 3)), self.fm(torch.ones(1, 2, 4)))


class TestTotalLoss:
    def test_lambda_zero(self):
        l_ret = torch.tensor(1.25)
        assert float(total_loss(l_ret, torch.tensor(9.0), 0.0)) == 1.25

    def test_lambda_one_default_sum(self):
        assert float(total_loss(torch.tensor(1.0), torch.tensor(0.5), 1.0)) == 1.5

    def test_weighted(self):
        assert float(total_loss(torch.tensor(1.0), torch.tensor(0.5), 2.0)) == 2.0

    def test_nan_raises_divergence(self):
        with pytest.raises(TrainingDivergenceError):
            total_loss(torch.tensor(float("nan")), torch.tensor(0.0), 1.0)

    def test_negative_lambda_rejected(self):
        with pytest.raises(InputDomainError):
            total_loss(torch.tensor(1.0), torch.tensor(1.0), -0.5)


class TestTemperature:
    def test_initial_value(self):
        t = Temperature(0.07)
        assert abs(float(t.tau.detach()) - 0.07) < 1e-6

    def test_scale_clamped_to_100(self):
        t = Temperature()
        with torch.no_grad():
            t.logit_scale.fill_(20.0)
            assert float(t.scale) == 100.0
            assert float(t.tau) > 0
            t.clamp_()
            assert float(t.logit_scale) <= math.log(100.0) + 1e-6
            assert float(t.scale) <= 100.0

    def test_learnable(self):
        t = Temperature()
        f = unit_rows(4, 8, seed=5, dtype=torch.float32)
        loss = info_nce_direction(f, f + 0.01, t.tau)
        loss.backward()
        assert t.logit_scale.grad is not None
