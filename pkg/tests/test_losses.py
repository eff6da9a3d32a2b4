import math

import pytest
import torch

from hpix.errors import ConfigError, NumericError, ShapeError
from hpix.model import GeneratorOutput
from hpix.training import (
    LossWeights,
    adversarial_loss,
    discriminator_loss,
    generator_global_loss,
    generator_local_loss,
    l1_loss,
)

LN2 = math.log(2.0)


def rand_logits(seed, shape=(1, 26, 26)):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=gen) * 3


class TestAdversarialLoss:
    def test_zero_logits_give_ln2(self):
        z = torch.zeros(1, 26, 26)
        assert abs(adversarial_loss(z, True).item() - LN2) < 1e-6
        assert abs(adversarial_loss(z, False).item() - LN2) < 1e-6

    def test_saturated_real_logits_vanish(self):
        z = torch.full((1, 26, 26), 40.0)
        assert adversarial_loss(z, True).item() < 1e-6

    def test_sigmoid_symmetry(self):
        for seed in range(5):
            z = rand_logits(seed)
            real = adversarial_loss(z, True).item()
            fake = adversarial_loss(-z, False).item()
            assert abs(real - fake) < 1e-6

    @pytest.mark.parametrize("magnitude", [80.0, -80.0])
    def test_stable_at_extreme_logits(self, magnitude):
        z = torch.full((4, 4), magnitude)
        assert math.isfinite(adversarial_loss(z, True).item())
        assert math.isfinite(adversarial_loss(z, False).item())

    def test_nonfinite_logits_raise(self):
        z = torch.tensor([[float("inf")]])
        with pytest.raises(NumericError):
            adversarial_loss(z, True)


class TestL1Loss:
    def test_identity_is_zero(self):
        x = rand_logits(0, (3, 8, 8))
        assert l1_loss(x, x).item() == 0.0

    def test_constant_offset(self):
        x = rand_logits(1, (3, 8, 8))
        assert abs(l1_loss(x + 0.5, x).item() - 0.5) < 1e-6

    def test_matches_elementwise_reference(self):
        gen = torch.Generator().manual_seed(2)
        for _ in range(10):
            a = torch.rand(3, 16, 16, generator=gen, dtype=torch.float64)
            b = torch.rand(3, 16, 16, generator=gen, dtype=torch.float64)
            total = 0.0
            for c in range(3):
                for i in range(16):
                    for j in range(16):
                        total += abs(a[c, i, j].item() - b[c, i, j].item())
            expected = total / (3 * 16 * 16)
            assert abs(l1_loss(a, b).item() - expected) < 1e-7

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            l1_loss(torch.zeros(3, 4, 4), torch.zeros(3, 5, 5))


class TestGeneratorGlobalLoss:
    def _output(self, final, heads):
        return GeneratorOutput(final=final, supervision_heads=heads)

    def test_perfect_output_with_saturated_logits_is_near_zero(self):
        y = rand_logits(3, (3, 16, 16)).clamp(-1, 1)
        out = self._output(y.clone(), [y.clone() for _ in range(6)])
        logits = torch.full((1, 1, 1), 40.0)
        total, comps = generator_global_loss(y, out, logits, LossWeights())
        assert total.item() < 1e-6
        assert comps["total"] < 1e-6

    def test_zero_weights_leave_pure_adversarial_term(self):
        y = rand_logits(4, (3, 16, 16))
        out = self._output(rand_logits(5, (3, 16, 16)), [rand_logits(6, (3, 16, 16))] * 6)
        logits = rand_logits(7)
        total, comps = generator_global_loss(y, out, logits, LossWeights(0.0, 0.0))
        assert abs(total.item() - adversarial_loss(logits, True).item()) < 1e-7
        assert comps["l1"] == 0.0 and comps["ds"] == 0.0

    def test_components_sum_to_total(self):
        y = rand_logits(8, (3, 16, 16))
        out = self._output(rand_logits(9, (3, 16, 16)), [rand_logits(10 + k, (3, 16, 16)) for k in range(6)])
        logits = rand_logits(20)
        _, comps = generator_global_loss(y, out, logits, LossWeights())
        assert abs(comps["total"] - (comps["adv"] + comps["l1"] + comps["ds"])) < 1e-7

    def test_missing_heads_raise(self):
        y = rand_logits(21, (3, 16, 16))
        out = self._output(rand_logits(22, (3, 16, 16)), [])
        with pytest.raises(ConfigError):
            generator_global_loss(y, out, rand_logits(23), LossWeights())


class TestGeneratorLocalLoss:
    def test_perfect_output_near_zero(self):
        y = rand_logits(30, (3, 16, 16)).clamp(-1, 1)
        total, _ = generator_local_loss(y, y.clone(), torch.full((1, 2, 2), 40.0), LossWeights())
        assert total.item() < 1e-6

    def test_doubling_lambda_doubles_l1_component(self):
        y = rand_logits(31, (3, 16, 16))
        pred = rand_logits(32, (3, 16, 16))
        logits = rand_logits(33)
        _, base = generator_local_loss(y, pred, logits, LossWeights(lambda_l1=100.0))
        _, doubled = generator_local_loss(y, pred, logits, LossWeights(lambda_l1=200.0))
        assert doubled["l1"] == 2.0 * base["l1"]
        assert doubled["adv"] == base["adv"]

    def test_equals_independent_recomputation(self):
        y = rand_logits(34, (3, 16, 16))
        pred = rand_logits(35, (3, 16, 16))
        logits = rand_logits(36)
        w = LossWeights(lambda_l1=17.0)
        total, comps = generator_local_loss(y, pred, logits, w)
        expected = adversarial_loss(logits, True).item() + 17.0 * l1_loss(pred, y).item()
        assert abs(comps["total"] - expected) < 1e-7


class TestDiscriminatorLoss:
    def test_zero_logits_give_ln2(self):
        z = torch.zeros(1, 26, 26)
        assert abs(discriminator_loss(z, z).item() - LN2) < 1e-6

    def test_perfect_discrimination_vanishes(self):
        real = torch.full((1, 26, 26), 40.0)
        fake = torch.full((1, 26, 26), -40.0)
        assert discriminator_loss(real, fake).item() < 1e-6

    def test_swap_with_negation_invariance(self):
        for seed in range(5):
            real, fake = rand_logits(seed), rand_logits(seed + 100)
            a = discriminator_loss(real, fake).item()
            b = discriminator_loss(-fake, -real).item()
            assert abs(a - b) < 1e-6

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            discriminator_loss(torch.zeros(1, 26, 26), torch.zeros(1, 13, 13))


class TestLossWeights:
    @pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
    def test_invalid_weights_raise(self, bad):
        with pytest.raises(ConfigError):
            LossWeights(lambda_l1=bad)
