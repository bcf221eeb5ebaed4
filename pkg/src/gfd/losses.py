"""Loss terms and their weighted combination.

Sign conventions: every function here is a quantity to *minimize* for the
network named in its docstring. The discriminator objective is the mean of
its real and fake binary cross-entropies, so an uninformative discriminator
(zero logits everywhere) sits at ln 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F

from .errors import ConfigError


@dataclass(frozen=True)
class LossWeights:
    """Term weights for the generator objective, with per-term switches.

    A disabled term is skipped entirely: it contributes no gradient and is
    reported as exactly 0.0.
    """

    latent: float = 10.0
    adversarial: float = 0.1
    auxiliary: float = 1.0
    perceptual: float = 1.0
    use_adversarial: bool = True
    use_auxiliary: bool = True
    use_perceptual: bool = True

    def __post_init__(self):
        for name in ("latent", "adversarial", "auxiliary", "perceptual"):
            w = getattr(self, name)
            if not math.isfinite(w) or w < 0:
                raise ConfigError(f"weight {name} must be finite and non-negative, got {w}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.latent, self.adversarial, self.auxiliary, self.perceptual)


def ablation_variants() -> dict[str, LossWeights]:
    """The standard sweep over which companion networks take part."""
    base = LossWeights()
    return {
        "G": replace(base, use_adversarial=False, use_auxiliary=False, use_perceptual=False),
        "G+D": replace(base, use_auxiliary=False, use_perceptual=False),
        "G+C": replace(base, use_adversarial=False, use_perceptual=False),
        "G+D+C": replace(base, use_perceptual=False),
        "full": base,
    }


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy; shared by the latent head and the auxiliary
    classifier (both on fingerprinted images, for the generator, and on
    labeled images, for the classifier itself)."""
    return F.cross_entropy(logits, labels)


def adversarial_generator_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term: -mean log sigmoid(D(fingerprinted))."""
    return F.binary_cross_entropy_with_logits(fake_logits, torch.ones_like(fake_logits))


def adversarial_discriminator_loss(
    real_logits: torch.Tensor, fake_logits: torch.Tensor
) -> torch.Tensor:
    """Discriminator term: mean of the real->1 and fingerprinted->0 BCEs."""
    real = F.binary_cross_entropy_with_logits(real_logits, torch.ones_like(real_logits))
    fake = F.binary_cross_entropy_with_logits(fake_logits, torch.zeros_like(fake_logits))
    return 0.5 * (real + fake)


def _unit_rows(feat: torch.Tensor) -> torch.Tensor:
    v = feat.flatten(1)
    return v / v.norm(dim=1, keepdim=True).clamp_min(1e-12)


def perceptual_loss(
    feats_a: list[torch.Tensor], feats_b: list[torch.Tensor]
) -> torch.Tensor:
    """Squared L2 between per-sample unit-normalized features, summed over
    taps, averaged over the batch."""
    if len(feats_a) != len(feats_b):
        raise ConfigError("feature lists must pair up tap for tap")
    per_sample = None
    for fa, fb in zip(feats_a, feats_b):
        d = ((_unit_rows(fa) - _unit_rows(fb)) ** 2).sum(dim=1)
        per_sample = d if per_sample is None else per_sample + d
    return per_sample.mean()


def total_generator_loss(
    weights: LossWeights,
    latent: torch.Tensor,
    adversarial: torch.Tensor | None = None,
    auxiliary: torch.Tensor | None = None,
    perceptual: torch.Tensor | None = None,
) -> torch.Tensor:
    """Backpropagatable weighted sum; disabled terms must be passed as None."""
    total = weights.latent * latent
    if weights.use_adversarial:
        total = total + weights.adversarial * adversarial
    if weights.use_auxiliary:
        total = total + weights.auxiliary * auxiliary
    if weights.use_perceptual:
        total = total + weights.perceptual * perceptual
    return total


def total_generator_value(
    weights: LossWeights,
    latent: float,
    adversarial: float = 0.0,
    auxiliary: float = 0.0,
    perceptual: float = 0.0,
) -> float:
    """Reported scalar total, accumulated with math.fsum so the value is the
    correctly rounded sum of the weighted terms."""
    terms = [weights.latent * latent]
    if weights.use_adversarial:
        terms.append(weights.adversarial * adversarial)
    if weights.use_auxiliary:
        terms.append(weights.auxiliary * auxiliary)
    if weights.use_perceptual:
        terms.append(weights.perceptual * perceptual)
    return math.fsum(terms)


def total_dc_value(discriminator: float, classifier: float) -> float:
    return math.fsum((discriminator, classifier))


@dataclass(frozen=True)
class LossReport:
    """Scalar snapshot of one optimization phase.

    ``terms`` holds the unweighted per-term values; ``total`` is the weighted
    objective actually minimized in that phase, accumulated with math.fsum.
    """

    iteration: int
    phase: str
    terms: dict[str, float]
    total: float
    lr: float

    def as_dict(self) -> dict[str, float | int | str]:
        row: dict[str, float | int | str] = {
            "iteration": self.iteration,
            "phase": self.phase,
            "lr": self.lr,
        }
        row.update(self.terms)
        row["total"] = self.total
        return row


def generator_report(
    iteration: int,
    lr: float,
    weights: LossWeights,
    latent: float,
    adversarial: float = 0.0,
    auxiliary: float = 0.0,
    perceptual: float = 0.0,
) -> LossReport:
    """Phase-1 report; disabled terms are recorded as exactly 0.0."""
    terms = {
        "latent": latent,
        "adversarial": adversarial if weights.use_adversarial else 0.0,
        "auxiliary": auxiliary if weights.use_auxiliary else 0.0,
        "perceptual": perceptual if weights.use_perceptual else 0.0,
    }
    total = total_generator_value(weights, latent, adversarial, auxiliary, perceptual)
    return LossReport(iteration, "generator", terms, total, lr)


def dc_report(iteration: int, lr: float, discriminator: float, classifier: float) -> LossReport:
    terms = {"discriminator": discriminator, "classifier": classifier}
    return LossReport(iteration, "dc", terms, total_dc_value(discriminator, classifier), lr)
