"""Loss values, gradients against central finite differences, reports."""

import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gfd.errors import ConfigError
from gfd.losses import (
    LossWeights,
    ablation_variants,
    adversarial_discriminator_loss,
    adversarial_generator_loss,
    classification_loss,
    dc_report,
    generator_report,
    perceptual_loss,
    total_dc_value,
    total_generator_loss,
    total_generator_value,
)
from gfd.networks import PerceptualExtractor, SmallConvClassifier

torch.set_num_threads(1)

STEP = 1e-3
REL_TOL = 1e-4


def central_difference_grad(fn, leaf: torch.Tensor) -> torch.Tensor:
    """Numeric gradient of a scalar-valued fn, one element at a time."""
    grad = torch.zeros_like(leaf)
    flat = leaf.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + STEP
        hi = fn().item()
        flat[i] = orig - STEP
        lo = fn().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * STEP)
    return grad


def assert_grad_matches(fn, leaf: torch.Tensor):
    leaf.requires_grad_(True)
    if leaf.grad is not None:
        leaf.grad = None
    fn().backward()
    analytic = leaf.grad.detach().clone()
    leaf.requires_grad_(False)
    numeric = central_difference_grad(fn, leaf.detach())
    rel = (analytic - numeric).norm() / numeric.norm().clamp_min(1e-12)
    assert rel.item() <= REL_TOL, f"relative gradient error {rel.item():.2e}"


class TestGradients:
    """Every term, double precision, random 8x8 inputs, step 1e-3."""

    def test_classification_loss(self):
        g = torch.Generator().manual_seed(1)
        logits = torch.randn(8, 8, generator=g, dtype=torch.float64)
        labels = torch.arange(8) % 8
        assert_grad_matches(lambda: classification_loss(logits, labels), logits)

    def test_adversarial_generator_loss(self):
        g = torch.Generator().manual_seed(2)
        fake = torch.randn(1, 1, 8, 8, generator=g, dtype=torch.float64)
        assert_grad_matches(lambda: adversarial_generator_loss(fake), fake)

    def test_adversarial_discriminator_loss_wrt_real(self):
        g = torch.Generator().manual_seed(3)
        real = torch.randn(1, 1, 8, 8, generator=g, dtype=torch.float64)
        fake = torch.randn(1, 1, 8, 8, generator=g, dtype=torch.float64)
        assert_grad_matches(lambda: adversarial_discriminator_loss(real, fake), real)

    def test_adversarial_discriminator_loss_wrt_fake(self):
        g = torch.Generator().manual_seed(4)
        real = torch.randn(1, 1, 8, 8, generator=g, dtype=torch.float64)
        fake = torch.randn(1, 1, 8, 8, generator=g, dtype=torch.float64)
        assert_grad_matches(lambda: adversarial_discriminator_loss(real, fake), fake)

    def test_perceptual_loss_wrt_features(self):
        # the unit-normalization chain inside the term is the part autograd
        # could plausibly get wrong; feature maps are this loss's inputs
        g = torch.Generator().manual_seed(5)
        fa = [torch.randn(2, c, 8, 8, generator=g, dtype=torch.float64) for c in (4, 8)]
        fb = [torch.randn(2, c, 8, 8, generator=g, dtype=torch.float64) for c in (4, 8)]
        for leaf in (fa[0], fa[1], fb[0]):
            assert_grad_matches(lambda: perceptual_loss(fa, fb), leaf)

    def test_aux_classification_through_classifier_pixels(self):
        # finite differences w.r.t. the fingerprinted image itself, with the
        # classifier in the chain
        g = torch.Generator().manual_seed(7)
        torch.manual_seed(7)
        clf = SmallConvClassifier(num_classes=3, base_channels=4).double()
        x_fp = torch.randn(2, 3, 8, 8, generator=g, dtype=torch.float64) * 0.3
        labels = torch.tensor([0, 2])
        assert_grad_matches(lambda: classification_loss(clf(x_fp), labels), x_fp)

    def test_total_generator_loss(self):
        g = torch.Generator().manual_seed(6)
        w = LossWeights()
        latent_logits = torch.randn(8, 8, generator=g, dtype=torch.float64)
        labels = torch.arange(8) % 8
        adv = torch.randn(1, 1, 8, 8, generator=g, dtype=torch.float64)
        aux_logits = torch.randn(8, 8, generator=g, dtype=torch.float64)
        fa = [torch.randn(1, 4, 8, 8, generator=g, dtype=torch.float64)]
        fb = [torch.randn(1, 4, 8, 8, generator=g, dtype=torch.float64)]

        def total():
            return total_generator_loss(
                w,
                classification_loss(latent_logits, labels),
                adversarial_generator_loss(adv),
                classification_loss(aux_logits, labels),
                perceptual_loss(fa, fb),
            )

        for leaf in (latent_logits, adv, aux_logits, fa[0]):
            assert_grad_matches(total, leaf)


class TestValues:
    def test_uninformative_discriminator_sits_at_ln2(self):
        zeros = torch.zeros(2, 1, 3, 3)
        loss = adversarial_discriminator_loss(zeros, zeros)
        assert loss.item() == pytest.approx(math.log(2), abs=1e-7)

    def test_uniform_logits_cross_entropy_is_ln_num_classes(self):
        logits = torch.zeros(4, 5)
        labels = torch.tensor([0, 1, 2, 3])
        loss = classification_loss(logits, labels)
        assert abs(loss.item() - math.log(5)) <= 1e-6

    def test_total_generator_arithmetic_is_exact(self):
        w = LossWeights(latent=10.0, adversarial=0.1, auxiliary=1.0, perceptual=1.0)
        assert total_generator_value(w, 1.0, 1.0, 1.0, 1.0) == 12.1

    def test_total_dc_is_plain_sum(self):
        assert total_dc_value(1.0, 1.0) == 2.0
        assert total_dc_value(0.0, 0.25) == 0.25

    def test_perfect_discriminator_generator_loss_is_zero(self):
        huge = torch.full((1, 1, 2, 2), 50.0)
        assert adversarial_generator_loss(huge).item() == pytest.approx(0.0, abs=1e-6)

    def test_perceptual_identity_is_zero(self):
        f = PerceptualExtractor(weights="random")
        x = torch.randn(1, 3, 16, 16) * 0.4
        assert perceptual_loss(f(x), f(x)).item() == 0.0

    def test_perceptual_is_symmetric(self):
        f = PerceptualExtractor(weights="random")
        a, b = torch.randn(2, 1, 3, 16, 16) * 0.4
        assert perceptual_loss(f(a), f(b)).item() == perceptual_loss(f(b), f(a)).item()

    def test_perceptual_requires_paired_taps(self):
        f = PerceptualExtractor(weights="random")
        x = torch.randn(1, 3, 16, 16)
        with pytest.raises(ConfigError):
            perceptual_loss(f(x), f(x)[:-1])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_losses_nonnegative_and_finite(self, seed):
        g = torch.Generator().manual_seed(seed)
        logits = torch.randn(4, 3, generator=g) * 5
        labels = torch.randint(0, 3, (4,), generator=g)
        real = torch.randn(1, 1, 4, 4, generator=g) * 5
        fake = torch.randn(1, 1, 4, 4, generator=g) * 5
        for val in (
            classification_loss(logits, labels),
            adversarial_generator_loss(fake),
            adversarial_discriminator_loss(real, fake),
        ):
            assert torch.isfinite(val)
            assert val.item() >= 0.0


class TestWeights:
    def test_defaults_are_attribution_defaults(self):
        w = LossWeights()
        assert w.as_tuple() == (10.0, 0.1, 1.0, 1.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(latent=-1.0)

    def test_non_finite_weight_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(perceptual=float("nan"))

    def test_ablation_variants_cover_the_standard_sweep(self):
        v = ablation_variants()
        assert set(v) == {"G", "G+D", "G+C", "G+D+C", "full"}
        assert not v["G"].use_adversarial and not v["G"].use_auxiliary and not v["G"].use_perceptual
        assert v["G+D"].use_adversarial and not v["G+D"].use_auxiliary
        assert v["G+C"].use_auxiliary and not v["G+C"].use_adversarial
        assert v["G+D+C"].use_adversarial and v["G+D+C"].use_auxiliary and not v["G+D+C"].use_perceptual
        assert v["full"].use_perceptual

    def test_disabled_terms_do_not_enter_the_total(self):
        w = LossWeights(use_adversarial=False, use_auxiliary=False, use_perceptual=False)
        latent = torch.tensor(2.0)
        total = total_generator_loss(w, latent)
        assert total.item() == 20.0
        assert total_generator_value(w, 2.0, 99.0, 99.0, 99.0) == 20.0


class TestReports:
    def test_generator_report_records_disabled_terms_as_exact_zero(self):
        w = LossWeights(use_adversarial=False, use_perceptual=False)
        r = generator_report(3, 1e-4, w, latent=1.5, adversarial=7.0, auxiliary=0.25, perceptual=7.0)
        assert r.terms["adversarial"] == 0.0
        assert r.terms["perceptual"] == 0.0
        assert r.terms["auxiliary"] == 0.25
        assert r.phase == "generator"
        assert r.total == 10 * 1.5 + 0.25

    def test_dc_report_shape(self):
        r = dc_report(5, 9e-5, discriminator=0.7, classifier=0.2)
        assert r.phase == "dc"
        assert r.total == pytest.approx(0.9)
        d = r.as_dict()
        assert d["iteration"] == 5 and d["lr"] == 9e-5
        assert set(d) == {"iteration", "phase", "lr", "discriminator", "classifier", "total"}
