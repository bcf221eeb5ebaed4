"""Checkpoint-backed attribution, detection, fingerprint extraction, and the
closed/open-world evaluation harness.

Test-time protocol is a single center crop in eval mode throughout, so every
operation here is deterministic for a given checkpoint and input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import DatasetManifest, ManifestDataset, prepare_patch
from .errors import ConfigError
from .training import TrainState, class_index_map, load_checkpoint


@dataclass(frozen=True)
class Prediction:
    """Source attribution for one image: raw logits, argmax label, and the
    softmax mass at that label."""

    logits: tuple[float, ...]
    label: int
    name: str
    confidence: float


@dataclass(frozen=True)
class DetectionResult:
    """Binary verdict; score is the probability mass on non-real sources."""

    label: str
    score: float
    logits: tuple[float, ...]


@dataclass(frozen=True)
class EvalReport:
    mode: str
    overall_accuracy: float
    per_class_accuracy: dict[str, float]
    confusion: tuple[tuple[int, ...], ...]
    class_names: tuple[str, ...]
    sample_count: int

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": dict(self.per_class_accuracy),
            "confusion": [list(row) for row in self.confusion],
            "class_names": list(self.class_names),
            "sample_count": self.sample_count,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")


class LoadedModel:
    """Read-only inference view over a training checkpoint.

    Attribution and detection touch only the encoder and latent head;
    fingerprint extraction additionally runs the decoder.
    """

    def __init__(self, state: TrainState):
        self.state = state
        for net in state.networks().values():
            net.eval()
            for p in net.parameters():
                p.requires_grad_(False)
        self.policy = state.policy.with_mode("eval")

    @classmethod
    def load(cls, path: str | Path, device: str | torch.device = "cpu") -> "LoadedModel":
        return cls(load_checkpoint(path, device))

    @property
    def labels(self):
        return self.state.labels

    @property
    def task(self) -> str:
        return self.state.config.task

    @property
    def device(self) -> torch.device:
        return self.state.device

    @property
    def real_index(self) -> int:
        return next(lab.index for lab in self.labels if lab.is_real)

    def prepare(self, image: torch.Tensor) -> torch.Tensor:
        return prepare_patch(image, self.policy)

    @torch.no_grad()
    def logits_for(self, batch: torch.Tensor) -> torch.Tensor:
        z, _ = self.state.generator.encoder(batch.to(self.device))
        return self.state.head(z)


def attribute(image: torch.Tensor, model: LoadedModel) -> Prediction:
    """Classify one image among the checkpoint's source labels."""
    logits = model.logits_for(model.prepare(image)[None])[0]
    probs = F.softmax(logits, dim=0)
    idx = int(logits.argmax())
    return Prediction(
        logits=tuple(float(v) for v in logits),
        label=idx,
        name=model.labels[idx].name,
        confidence=float(probs[idx]),
    )


def detect(image: torch.Tensor, model: LoadedModel) -> DetectionResult:
    """Binary real/fake verdict; the score pools softmax mass over every
    non-real class, so it works for both binary and attribution checkpoints."""
    logits = model.logits_for(model.prepare(image)[None])[0]
    probs = F.softmax(logits, dim=0)
    score = float(1.0 - probs[model.real_index])
    return DetectionResult(
        label="fake" if score >= 0.5 else "real",
        score=score,
        logits=tuple(float(v) for v in logits),
    )


@torch.no_grad()
def extract_fingerprint(image: torch.Tensor, model: LoadedModel) -> torch.Tensor:
    """The generator's residual for a center-cropped patch, on the CPU."""
    residual, _ = model.state.generator(model.prepare(image)[None].to(model.device))
    return residual[0].cpu()


def _taxonomy_map(manifest: DatasetManifest, model: LoadedModel) -> dict[int, int]:
    """Manifest class index -> checkpoint label index.

    Binary checkpoints accept any manifest (every fake source collapses to
    the fake label). Attribution checkpoints match classes by name, which is
    also how open-world data is fed in: unseen generators are listed under
    the training label of their architecture.
    """
    if model.task == "detection":
        return class_index_map(manifest, "detection")
    by_name = {lab.name: lab for lab in model.labels}
    mapping = {}
    for c in manifest.classes:
        known = by_name.get(c.label.name)
        if known is None:
            raise ConfigError(
                f"label taxonomy mismatch: manifest class {c.label.name!r} "
                f"is not among checkpoint labels {sorted(by_name)}"
            )
        if known.is_real != c.label.is_real:
            raise ConfigError(
                f"label taxonomy mismatch: class {c.label.name!r} disagrees "
                "with the checkpoint on is_real"
            )
        mapping[c.label.index] = known.index
    return mapping


def evaluate(
    manifest: DatasetManifest,
    model: LoadedModel,
    mode: str = "closed",
    batch_size: int = 16,
) -> EvalReport:
    """Accuracy and confusion over the manifest's test split.

    The per-class breakdown is keyed by manifest class, so a binary
    checkpoint still reports how well each individual source is caught.
    """
    if mode not in ("closed", "open"):
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    manifest.require_splits("test")
    mapping = _taxonomy_map(manifest, model)
    ds = ManifestDataset(manifest, "test", model.policy)
    k = len(model.labels)
    confusion = np.zeros((k, k), dtype=np.int64)
    by_class: dict[str, list[int]] = {
        c.label.name: [0, 0] for c in manifest.classes
    }
    class_of = {c.label.index: c.label.name for c in manifest.classes}

    for start in range(0, len(ds), batch_size):
        idxs = range(start, min(start + batch_size, len(ds)))
        x = torch.stack([prepare_patch(ds.image(i), model.policy) for i in idxs])
        preds = model.logits_for(x).argmax(dim=1).cpu()
        for i, pred in zip(idxs, preds):
            mlabel = ds.samples[i][1]
            true = mapping[mlabel]
            confusion[true, int(pred)] += 1
            hit_total = by_class[class_of[mlabel]]
            hit_total[0] += int(pred == true)
            hit_total[1] += 1

    total = int(confusion.sum())
    overall = float(np.trace(confusion)) / total
    per_class = {name: hit / tot for name, (hit, tot) in by_class.items()}
    return EvalReport(
        mode=mode,
        overall_accuracy=overall,
        per_class_accuracy=per_class,
        confusion=tuple(tuple(int(v) for v in row) for row in confusion),
        class_names=tuple(lab.name for lab in model.labels),
        sample_count=total,
    )
