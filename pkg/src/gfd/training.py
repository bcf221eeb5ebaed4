"""Alternating two-phase optimization of the four-network ensemble.

Every iteration runs two phases on the same batch: first the generator and
its latent head learn with the discriminator and auxiliary classifier held
fixed, then those two learn on fresh forward passes with the generator
frozen. The frozen perceptual extractor never updates. One Adam optimizer
per parameter group (generator+head, discriminator, classifier), all on the
same step-decay schedule lr(t) = lr * gamma^floor(t / step).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torch.optim import Adam
from torch.optim.lr_scheduler import LambdaLR

from .data import (
    DatasetManifest,
    ManifestDataset,
    PatchPolicy,
    SourceLabel,
    composite_tensors,
    default_patch_policy,
    prepare_patch,
)
from .errors import BatchCompositionError, CheckpointError, ConfigError
from .losses import (
    LossReport,
    LossWeights,
    adversarial_discriminator_loss,
    adversarial_generator_loss,
    classification_loss,
    dc_report,
    generator_report,
    perceptual_loss,
    total_generator_loss,
)
from .networks import (
    ClassificationHead,
    FingerprintGenerator,
    GeneratorConfig,
    PatchDiscriminator,
    PerceptualExtractor,
    build_classifier,
    parameter_shape_manifest,
    state_hash,
)

logger = logging.getLogger(__name__)

TASKS = ("attribution", "detection")


def default_loss_weights(task: str) -> LossWeights:
    # detection runs the adversarial term an order of magnitude softer
    if task == "detection":
        return LossWeights(adversarial=0.01)
    return LossWeights()


@dataclass(frozen=True)
class TrainConfig:
    task: str = "attribution"
    iterations: int = 2000
    batch_size: int = 16
    lr: float = 1e-4
    lr_gamma: float = 0.9
    lr_step: int = 500
    weights: LossWeights | None = None
    pretrain_iters: int = 1000
    seed: int = 0
    backbone: str = "unet"
    base_channels: int = 64
    depth: int = 5
    classifier_arch: str = "resnet50"
    perceptual_weights: str = "auto"
    crop: int = 224
    checkpoint_every: int = 500
    val_every: int = 500
    log_every: int = 50

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.weights is None:
            object.__setattr__(self, "weights", default_loss_weights(self.task))
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.lr_gamma <= 1:
            raise ConfigError("lr_gamma must lie in (0, 1]")
        if self.lr_step < 1:
            raise ConfigError("lr_step must be at least 1")
        if self.pretrain_iters < 0:
            raise ConfigError("pretrain_iters must be non-negative")
        if self.crop < 1:
            raise ConfigError("crop must be positive")
        for name in ("checkpoint_every", "val_every", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def config_from_dict(data: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    data = dict(data)
    if isinstance(data.get("weights"), dict):
        wknown = {f.name for f in fields(LossWeights)}
        wunknown = set(data["weights"]) - wknown
        if wunknown:
            raise ConfigError(f"unknown weight keys: {', '.join(sorted(wunknown))}")
        data["weights"] = LossWeights(**data["weights"])
    return TrainConfig(**data)


def task_labels(manifest: DatasetManifest, task: str) -> tuple[SourceLabel, ...]:
    """Label set the networks are trained over. Detection collapses all fake
    sources into a single class at index 1."""
    if task == "attribution":
        return manifest.labels
    return (
        SourceLabel(0, manifest.real_class.label.name, True),
        SourceLabel(1, "fake", False),
    )


def class_index_map(manifest: DatasetManifest, task: str) -> dict[int, int]:
    """Manifest class index -> training label index."""
    if task == "attribution":
        return {lab.index: lab.index for lab in manifest.labels}
    return {lab.index: 0 if lab.is_real else 1 for lab in manifest.labels}


@dataclass
class TrainState:
    config: TrainConfig
    labels: tuple[SourceLabel, ...]
    policy: PatchPolicy
    generator: FingerprintGenerator
    head: ClassificationHead
    discriminator: PatchDiscriminator | None
    classifier: nn.Module | None
    perceptual: PerceptualExtractor | None
    opt_g: Adam
    opt_d: Adam | None
    opt_c: Adam | None
    sched_g: LambdaLR
    sched_d: LambdaLR | None
    sched_c: LambdaLR | None
    rng: np.random.Generator
    device: torch.device
    iteration: int = 0
    best_val: float = float("-inf")
    pretrained: bool = False

    def current_lr(self) -> float:
        return self.opt_g.param_groups[0]["lr"]

    def networks(self) -> dict[str, nn.Module]:
        nets = {"G": self.generator, "H": self.head}
        if self.discriminator is not None:
            nets["D"] = self.discriminator
        if self.classifier is not None:
            nets["C"] = self.classifier
        return nets


def _make_scheduler(opt: Adam, cfg: TrainConfig) -> LambdaLR:
    return LambdaLR(opt, lambda t: cfg.lr_gamma ** (t // cfg.lr_step))


def init_state(
    manifest: DatasetManifest, cfg: TrainConfig, device: str | torch.device = "cpu"
) -> TrainState:
    device = torch.device(device)
    torch.manual_seed(cfg.seed)
    labels = task_labels(manifest, cfg.task)
    gcfg = GeneratorConfig(cfg.backbone, cfg.base_channels, cfg.depth, len(labels))
    generator = FingerprintGenerator(gcfg).to(device)
    head = ClassificationHead(gcfg.latent_channels, len(labels)).to(device)
    w = cfg.weights
    discriminator = PatchDiscriminator().to(device) if w.use_adversarial else None
    classifier = (
        build_classifier(cfg.classifier_arch, len(labels)).to(device)
        if w.use_auxiliary
        else None
    )
    perceptual = (
        PerceptualExtractor(cfg.perceptual_weights).to(device)
        if w.use_perceptual
        else None
    )

    opt_g = Adam(list(generator.parameters()) + list(head.parameters()), lr=cfg.lr)
    opt_d = Adam(discriminator.parameters(), lr=cfg.lr) if discriminator else None
    opt_c = Adam(classifier.parameters(), lr=cfg.lr) if classifier else None

    return TrainState(
        config=cfg,
        labels=labels,
        policy=default_patch_policy(manifest.native_resolution, cfg.crop, "train"),
        generator=generator,
        head=head,
        discriminator=discriminator,
        classifier=classifier,
        perceptual=perceptual,
        opt_g=opt_g,
        opt_d=opt_d,
        opt_c=opt_c,
        sched_g=_make_scheduler(opt_g, cfg),
        sched_d=_make_scheduler(opt_d, cfg) if opt_d else None,
        sched_c=_make_scheduler(opt_c, cfg) if opt_c else None,
        rng=np.random.default_rng(cfg.seed),
        device=device,
    )


def _set_trainable(module: nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)
    module.train(flag)


def _scalar(t: torch.Tensor | None) -> float:
    return 0.0 if t is None else float(t.detach())


class BalancedSampler:
    """Class-balanced batch sampling with replacement.

    Every batch contains at least one image of every training class, which
    in particular guarantees the real carrier the compositing step needs.
    """

    def __init__(
        self,
        dataset: ManifestDataset,
        labels: tuple[SourceLabel, ...],
        index_map: dict[int, int],
        batch_size: int,
    ):
        if batch_size < len(labels):
            raise ConfigError(
                f"batch_size {batch_size} cannot cover all {len(labels)} classes"
            )
        self.batch_size = batch_size
        self.pools: list[np.ndarray] = [np.empty(0, dtype=np.int64) for _ in labels]
        grouped: dict[int, list[int]] = {lab.index: [] for lab in labels}
        for i, (_, mlabel) in enumerate(dataset.samples):
            grouped[index_map[mlabel]].append(i)
        for lab in labels:
            pool = grouped[lab.index]
            if not pool:
                raise ConfigError(f"no training images for class {lab.name!r}")
            self.pools[lab.index] = np.asarray(pool, dtype=np.int64)
        self.train_label = {
            i: index_map[mlabel] for i, (_, mlabel) in enumerate(dataset.samples)
        }

    def draw(self, rng: np.random.Generator) -> list[tuple[int, int]]:
        k = len(self.pools)
        counts = np.full(k, self.batch_size // k, dtype=np.int64)
        extra = self.batch_size - int(counts.sum())
        if extra:
            counts[rng.choice(k, size=extra, replace=False)] += 1
        picks: list[tuple[int, int]] = []
        for cls, n in enumerate(counts):
            chosen = self.pools[cls][rng.integers(0, len(self.pools[cls]), size=n)]
            picks.extend((int(i), cls) for i in chosen)
        rng.shuffle(picks)
        return picks


def sample_batch(
    state: TrainState, dataset: ManifestDataset, sampler: BalancedSampler
) -> tuple[torch.Tensor, torch.Tensor]:
    picks = sampler.draw(state.rng)
    patches, ys = [], []
    for idx, train_label in picks:
        patch, _ = dataset.get(idx, state.rng)
        patches.append(patch)
        ys.append(train_label)
    x = torch.stack(patches).to(state.device)
    y = torch.tensor(ys, dtype=torch.long, device=state.device)
    return x, y


def train_step(
    state: TrainState, x: torch.Tensor, y: torch.Tensor
) -> tuple[LossReport, LossReport]:
    """One full iteration: generator phase then discriminator/classifier
    phase, on the same batch, followed by one scheduler tick."""
    cfg = state.config
    w = cfg.weights
    x = x.to(state.device)
    y = y.to(state.device)

    real_idx = (y == 0).nonzero(as_tuple=True)[0]
    if real_idx.numel() == 0:
        raise BatchCompositionError("batch has no real image to composite onto")
    pick = state.rng.integers(0, real_idx.numel(), size=x.shape[0])
    carrier_idx = real_idx[torch.from_numpy(pick).to(real_idx.device)]
    carriers = x[carrier_idx]
    lr = state.current_lr()

    # phase 1: update G and H; D, C, F are frozen spectators
    _set_trainable(state.generator, True)
    _set_trainable(state.head, True)
    for net in (state.discriminator, state.classifier):
        if net is not None:
            _set_trainable(net, False)

    residual, z = state.generator(x)
    latent = classification_loss(state.head(z), y)
    fingerprinted = composite_tensors(residual, carriers)
    adv = aux = perc = None
    if w.use_adversarial:
        adv = adversarial_generator_loss(state.discriminator(fingerprinted))
    if w.use_auxiliary:
        aux = classification_loss(state.classifier(fingerprinted), y)
    if w.use_perceptual:
        perc = perceptual_loss(
            state.perceptual(fingerprinted), state.perceptual(carriers)
        )
    total = total_generator_loss(w, latent, adv, aux, perc)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    report_g = generator_report(
        state.iteration, lr, w, _scalar(latent), _scalar(adv), _scalar(aux), _scalar(perc)
    )

    # phase 2: update D and C on fresh forwards through the frozen generator
    _set_trainable(state.generator, False)
    _set_trainable(state.head, False)
    d_val = c_val = 0.0
    if state.discriminator is not None:
        _set_trainable(state.discriminator, True)
        with torch.no_grad():
            residual2, _ = state.generator(x)
            fingerprinted2 = composite_tensors(residual2, carriers)
        d_loss = adversarial_discriminator_loss(
            state.discriminator(x[real_idx]), state.discriminator(fingerprinted2)
        )
        state.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        state.opt_d.step()
        d_val = _scalar(d_loss)
    if state.classifier is not None:
        _set_trainable(state.classifier, True)
        c_loss = classification_loss(state.classifier(x), y)
        state.opt_c.zero_grad(set_to_none=True)
        c_loss.backward()
        state.opt_c.step()
        c_val = _scalar(c_loss)
    report_dc = dc_report(state.iteration, lr, d_val, c_val)

    for sched in (state.sched_g, state.sched_d, state.sched_c):
        if sched is not None:
            sched.step()
    state.iteration += 1
    return report_g, report_dc


def pretrain_classifier(
    state: TrainState,
    dataset: ManifestDataset,
    sampler: BalancedSampler,
    on_report=None,
) -> float | None:
    """Train C alone on labeled images before joint optimization starts.

    Runs at the configured initial lr without advancing the shared schedule,
    so the joint phase still starts from lr(0). Returns the final loss, or
    None when nothing runs.
    """
    iters = state.config.pretrain_iters
    if state.classifier is None or iters == 0:
        state.pretrained = True
        return None
    _set_trainable(state.classifier, True)
    lr = state.opt_c.param_groups[0]["lr"]
    last = None
    for i in range(iters):
        x, y = sample_batch(state, dataset, sampler)
        loss = classification_loss(state.classifier(x), y)
        state.opt_c.zero_grad(set_to_none=True)
        loss.backward()
        state.opt_c.step()
        last = _scalar(loss)
        if on_report is not None:
            on_report(LossReport(i, "pretrain", {"classifier": last}, last, lr))
        if (i + 1) % state.config.log_every == 0:
            logger.info("pretrain %d/%d classifier loss %.4f", i + 1, iters, last)
    state.pretrained = True
    return last


@torch.no_grad()
def evaluate_attribution_accuracy(
    state: TrainState,
    dataset: ManifestDataset,
    index_map: dict[int, int],
    batch_size: int | None = None,
) -> float:
    """Closed-world accuracy of the latent head on center-cropped patches."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty split")
    policy = dataset.policy.with_mode("eval")
    state.generator.eval()
    state.head.eval()
    bs = batch_size or state.config.batch_size
    correct = 0
    for start in range(0, len(dataset), bs):
        idxs = range(start, min(start + bs, len(dataset)))
        x = torch.stack(
            [prepare_patch(dataset.image(i), policy) for i in idxs]
        ).to(state.device)
        y = torch.tensor(
            [index_map[dataset.samples[i][1]] for i in idxs], device=state.device
        )
        z, _ = state.generator.encoder(x)
        pred = state.head(z).argmax(dim=1)
        correct += int((pred == y).sum())
    return correct / len(dataset)


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(path: str | Path, state: TrainState) -> Path:
    """Checkpoint directory: one weights blob per network, optimizer and
    scheduler state, RNG state, a config snapshot, and a parameter manifest
    with per-network hashes for integrity checks on load."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    nets = state.networks()
    for name, net in nets.items():
        torch.save(net.state_dict(), path / f"{name}.pt")
    torch.save(
        {
            "opt_g": state.opt_g.state_dict(),
            "opt_d": state.opt_d.state_dict() if state.opt_d else None,
            "opt_c": state.opt_c.state_dict() if state.opt_c else None,
            "sched_g": state.sched_g.state_dict(),
            "sched_d": state.sched_d.state_dict() if state.sched_d else None,
            "sched_c": state.sched_c.state_dict() if state.sched_c else None,
        },
        path / "optim.pt",
    )
    torch.save(
        {"numpy": state.rng.bit_generator.state, "torch": torch.get_rng_state()},
        path / "rng.pt",
    )
    snapshot = {
        "config": config_to_dict(state.config),
        "labels": [
            {"index": lab.index, "name": lab.name, "is_real": lab.is_real}
            for lab in state.labels
        ],
        "policy": {
            "resize_to": state.policy.resize_to,
            "crop": state.policy.crop,
            "interpolation": state.policy.interpolation,
        },
        "perceptual_source": (
            state.perceptual.weights_source if state.perceptual else None
        ),
        "iteration": state.iteration,
        "best_val": state.best_val,
        "pretrained": state.pretrained,
    }
    (path / "config.json").write_text(json.dumps(snapshot, indent=2))
    integrity = {
        name: {
            "sha256": state_hash(net),
            "shapes": [[n, list(s)] for n, s in parameter_shape_manifest(net)],
        }
        for name, net in nets.items()
    }
    (path / "integrity.json").write_text(json.dumps(integrity, indent=2))
    return path


def _load_blob(path: Path, net: nn.Module, name: str) -> None:
    blob = path / f"{name}.pt"
    if not blob.exists():
        raise CheckpointError(f"checkpoint is missing {blob.name}")
    try:
        net.load_state_dict(torch.load(blob, map_location="cpu", weights_only=True))
    except RuntimeError as e:
        raise CheckpointError(f"{name} weights do not fit the configured network: {e}")


def load_checkpoint(path: str | Path, device: str | torch.device = "cpu") -> TrainState:
    path = Path(path)
    device = torch.device(device)
    snap_file = path / "config.json"
    if not snap_file.exists():
        raise CheckpointError(f"no checkpoint at {path} (config.json missing)")
    try:
        snapshot = json.loads(snap_file.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable checkpoint config: {e}")
    cfg = config_from_dict(snapshot["config"])
    labels = tuple(
        SourceLabel(c["index"], c["name"], c["is_real"]) for c in snapshot["labels"]
    )
    pol = snapshot["policy"]
    policy = PatchPolicy(pol["resize_to"], pol["crop"], "train", pol["interpolation"])

    gcfg = GeneratorConfig(cfg.backbone, cfg.base_channels, cfg.depth, len(labels))
    generator = FingerprintGenerator(gcfg)
    head = ClassificationHead(gcfg.latent_channels, len(labels))
    w = cfg.weights
    discriminator = PatchDiscriminator() if w.use_adversarial else None
    classifier = build_classifier(cfg.classifier_arch, len(labels)) if w.use_auxiliary else None
    perceptual = None
    if w.use_perceptual:
        perceptual = PerceptualExtractor(snapshot["perceptual_source"] or "auto")

    _load_blob(path, generator, "G")
    _load_blob(path, head, "H")
    if discriminator is not None:
        _load_blob(path, discriminator, "D")
    if classifier is not None:
        _load_blob(path, classifier, "C")

    nets = {"G": generator, "H": head}
    if discriminator is not None:
        nets["D"] = discriminator
    if classifier is not None:
        nets["C"] = classifier
    integrity_file = path / "integrity.json"
    if integrity_file.exists():
        integrity = json.loads(integrity_file.read_text())
        for name, net in nets.items():
            stored = integrity.get(name, {}).get("sha256")
            if stored and stored != state_hash(net):
                raise CheckpointError(f"{name} weights fail their integrity hash")

    for net in nets.values():
        net.to(device)
    if perceptual is not None:
        perceptual.to(device)

    opt_g = Adam(list(generator.parameters()) + list(head.parameters()), lr=cfg.lr)
    opt_d = Adam(discriminator.parameters(), lr=cfg.lr) if discriminator else None
    opt_c = Adam(classifier.parameters(), lr=cfg.lr) if classifier else None
    sched_g = _make_scheduler(opt_g, cfg)
    sched_d = _make_scheduler(opt_d, cfg) if opt_d else None
    sched_c = _make_scheduler(opt_c, cfg) if opt_c else None
    optim = torch.load(path / "optim.pt", map_location="cpu", weights_only=False)
    opt_g.load_state_dict(optim["opt_g"])
    sched_g.load_state_dict(optim["sched_g"])
    if opt_d is not None:
        opt_d.load_state_dict(optim["opt_d"])
        sched_d.load_state_dict(optim["sched_d"])
    if opt_c is not None:
        opt_c.load_state_dict(optim["opt_c"])
        sched_c.load_state_dict(optim["sched_c"])

    rng_state = torch.load(path / "rng.pt", map_location="cpu", weights_only=False)
    rng = np.random.default_rng()
    rng.bit_generator.state = rng_state["numpy"]
    torch.set_rng_state(rng_state["torch"])

    return TrainState(
        config=cfg,
        labels=labels,
        policy=policy,
        generator=generator,
        head=head,
        discriminator=discriminator,
        classifier=classifier,
        perceptual=perceptual,
        opt_g=opt_g,
        opt_d=opt_d,
        opt_c=opt_c,
        sched_g=sched_g,
        sched_d=sched_d,
        sched_c=sched_c,
        rng=rng,
        device=device,
        iteration=snapshot["iteration"],
        best_val=snapshot["best_val"],
        pretrained=snapshot["pretrained"],
    )


# ---------------------------------------------------------------------------
# full runs

def fit(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    out_dir: str | Path,
    device: str | torch.device = "cpu",
    resume: str | Path | None = None,
) -> TrainState:
    """Pretrain C, run the alternating loop, checkpoint periodically and at
    each new best validation accuracy. Metrics go to <out_dir>/metrics.jsonl
    as one JSON object per phase per iteration."""
    manifest.require_splits("train")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        state = load_checkpoint(resume, device)
        target = max(cfg.iterations, state.iteration)
        logger.info("resumed at iteration %d from %s", state.iteration, resume)
    else:
        state = init_state(manifest, cfg, device)
        target = cfg.iterations

    index_map = class_index_map(manifest, state.config.task)
    train_ds = ManifestDataset(manifest, "train", state.policy)
    val_ds = None
    if "val" in manifest.classes[0].files:
        val_ds = ManifestDataset(manifest, "val", state.policy.with_mode("eval"))
    sampler = BalancedSampler(train_ds, state.labels, index_map, state.config.batch_size)

    mode = "a" if state.iteration > 0 else "w"
    with open(out / "metrics.jsonl", mode) as mf:

        def emit(report: LossReport) -> None:
            mf.write(json.dumps(report.as_dict()) + "\n")

        if not state.pretrained:
            pretrain_classifier(state, train_ds, sampler, on_report=emit)
            mf.flush()

        while state.iteration < target:
            x, y = sample_batch(state, train_ds, sampler)
            rep_g, rep_dc = train_step(state, x, y)
            emit(rep_g)
            emit(rep_dc)
            it = state.iteration
            if it % state.config.log_every == 0 or it == target:
                logger.info(
                    "iter %d/%d G %.4f DC %.4f lr %.2e",
                    it, target, rep_g.total, rep_dc.total, rep_g.lr,
                )
                mf.flush()
            if val_ds is not None and (it % state.config.val_every == 0 or it == target):
                acc = evaluate_attribution_accuracy(state, val_ds, index_map)
                emit(LossReport(it, "val", {"accuracy": acc}, acc, rep_g.lr))
                mf.flush()
                logger.info("iter %d val accuracy %.4f", it, acc)
                if acc > state.best_val:
                    state.best_val = acc
                    save_checkpoint(out / "best", state)
            if it % state.config.checkpoint_every == 0:
                save_checkpoint(out / "last", state)

    save_checkpoint(out / "last", state)
    if val_ds is None or state.best_val == float("-inf"):
        save_checkpoint(out / "best", state)
    return state
