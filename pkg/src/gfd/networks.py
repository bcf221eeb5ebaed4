"""Trainable and frozen function approximators.

Four players: a fingerprint generator (encoder + decoder + classification
head), a patch-level discriminator, an auxiliary source classifier, and a
frozen feature extractor for the perceptual distance. The generator encoder
can be the built-in strided U-Net or a standard ResNet-50 / DenseNet-121
feature stack, so that detection-time inference (encoder + head only) has
exactly the topology of the corresponding plain classifier.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision.models as tvm

from .errors import ConfigError, ShapeError, WeightsUnavailableError

BACKBONES = ("unet", "resnet50-encoder", "densenet-encoder")
CLASSIFIER_ARCHS = ("resnet50", "small")

# last activation of each of the four pre-pool VGG-16 conv blocks
PERCEPTUAL_TAPS = (3, 8, 15, 22)
_VGG16_WEIGHTS_FILE = "vgg16-397923af.pth"


@dataclass(frozen=True)
class GeneratorConfig:
    backbone: str = "unet"
    base_channels: int = 64
    depth: int = 5
    num_classes: int = 2

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.depth < 2:
            raise ConfigError("encoder depth must be at least 2")
        if self.backbone != "unet" and self.depth != 5:
            raise ConfigError(f"{self.backbone} has a fixed stage depth of 5")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes (real plus one source)")

    @property
    def latent_channels(self) -> int:
        if self.backbone == "unet":
            return self.base_channels * 2 ** (self.depth - 1)
        return 2048 if self.backbone == "resnet50-encoder" else 1024


def init_conv_weights(module: nn.Module, std: float = 0.02) -> None:
    """DCGAN-style normal(0, std) init for conv and linear layers."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class UNetEncoder(nn.Module):
    """Strided conv encoder; stage i halves resolution and doubles width."""

    def __init__(self, base_channels: int, depth: int):
        super().__init__()
        chans = [base_channels * 2**i for i in range(depth)]
        stages = []
        cin = 3
        for i, cout in enumerate(chans):
            block = [nn.Conv2d(cin, cout, 4, stride=2, padding=1)]
            # no norm on the outermost stage (raw pixels) or the bottleneck:
            # normalizing the bottleneck would erase the per-channel energies
            # the pooled classification head reads
            if 0 < i < len(chans) - 1:
                block.append(nn.InstanceNorm2d(cout))
            block.append(nn.LeakyReLU(0.2, inplace=True))
            stages.append(nn.Sequential(*block))
            cin = cout
        self.stages = nn.ModuleList(stages)
        self.stage_channels = chans

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return x, feats[:-1]


class ResNet50Encoder(nn.Module):
    """ResNet-50 feature stack exposing its five standard stages."""

    def __init__(self):
        super().__init__()
        m = tvm.resnet50(weights=None)
        self.stem = nn.Sequential(m.conv1, m.bn1, m.relu)
        self.pool = m.maxpool
        self.layer1, self.layer2 = m.layer1, m.layer2
        self.layer3, self.layer4 = m.layer3, m.layer4
        self.stage_channels = [64, 256, 512, 1024, 2048]

    def forward(self, x):
        s1 = self.stem(x)
        s2 = self.layer1(self.pool(s1))
        s3 = self.layer2(s2)
        s4 = self.layer3(s3)
        z = self.layer4(s4)
        return z, [s1, s2, s3, s4]


class DenseNetEncoder(nn.Module):
    """DenseNet-121 feature stack exposing its five standard stages."""

    def __init__(self):
        super().__init__()
        f = tvm.densenet121(weights=None).features
        self.stem = nn.Sequential(f.conv0, f.norm0, f.relu0)
        self.stage2 = nn.Sequential(f.pool0, f.denseblock1)
        self.stage3 = nn.Sequential(f.transition1, f.denseblock2)
        self.stage4 = nn.Sequential(f.transition2, f.denseblock3)
        self.stage5 = nn.Sequential(f.transition3, f.denseblock4, f.norm5)
        self.stage_channels = [64, 256, 512, 1024, 1024]

    def forward(self, x):
        s1 = self.stem(x)
        s2 = self.stage2(s1)
        s3 = self.stage3(s2)
        s4 = self.stage4(s3)
        z = F.relu(self.stage5(s4), inplace=True)
        return z, [s1, s2, s3, s4]


class _UpBlock(nn.Module):
    """Resize-conv upsampling stage, optionally fusing an encoder skip."""

    def __init__(self, cin: int, cout: int, skip: int | None):
        super().__init__()
        self.up = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(cin, cout, 3, padding=1),
            nn.InstanceNorm2d(cout),
            nn.ReLU(inplace=True),
        )
        self.fuse = None
        if skip is not None:
            self.fuse = nn.Sequential(
                nn.Conv2d(cout + skip, cout, 3, padding=1),
                nn.InstanceNorm2d(cout),
                nn.ReLU(inplace=True),
            )

    def forward(self, x, skip=None):
        x = self.up(x)
        if self.fuse is not None:
            x = self.fuse(torch.cat([x, skip], dim=1))
        return x


class FingerprintDecoder(nn.Module):
    """Mirrors the encoder with nearest-resize + conv stages.

    The final projection is linear: residual amplitude is left to the losses
    rather than squashed architecturally.
    """

    def __init__(self, latent_channels: int, skip_channels: list[int], out_base: int):
        super().__init__()
        depth = len(skip_channels) + 1
        blocks = []
        cin = latent_channels
        for j in range(depth):
            if j < depth - 1:
                skip = skip_channels[depth - 2 - j]
                cout = skip
            else:
                skip, cout = None, out_base
            blocks.append(_UpBlock(cin, cout, skip))
            cin = cout
        self.blocks = nn.ModuleList(blocks)
        self.out = nn.Conv2d(out_base, 3, 3, padding=1)

    def forward(self, z, skips):
        x = z
        n = len(self.blocks)
        for j, block in enumerate(self.blocks):
            skip = skips[n - 2 - j] if j < n - 1 else None
            x = block(x, skip)
        return self.out(x)


class ClassificationHead(nn.Module):
    """Global average pooling followed by one fully-connected layer."""

    def __init__(self, in_channels: int, num_classes: int):
        super().__init__()
        self.fc = nn.Linear(in_channels, num_classes)

    def forward(self, z):
        return self.fc(z.mean(dim=(2, 3)))


class FingerprintGenerator(nn.Module):
    """Image-to-residual generator exposing its bottleneck code."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        if config.backbone == "unet":
            self.encoder = UNetEncoder(config.base_channels, config.depth)
            out_base = config.base_channels
        elif config.backbone == "resnet50-encoder":
            self.encoder = ResNet50Encoder()
            out_base = 64
        else:
            self.encoder = DenseNetEncoder()
            out_base = 64
        chans = self.encoder.stage_channels
        self.decoder = FingerprintDecoder(chans[-1], chans[:-1], out_base)
        if config.backbone == "unet":
            init_conv_weights(self.encoder)
        init_conv_weights(self.decoder)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (residual, latent). Input is [B, 3, S, S] with S a
        multiple of 2**depth."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected [B, 3, H, W], got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h != w:
            raise ShapeError(f"patches must be square, got {h}x{w}")
        div = 2**self.config.depth
        if h % div:
            raise ShapeError(f"input size {h} not divisible by 2**depth = {div}")
        z, skips = self.encoder(x)
        residual = self.decoder(z, skips)
        return residual, z


class PatchDiscriminator(nn.Module):
    """Three stride-2 conv stages plus a 1-channel projection.

    Produces a grid of per-patch realism logits rather than a global score.
    """

    def __init__(self, base_channels: int = 64):
        super().__init__()
        c = base_channels
        self.model = nn.Sequential(
            nn.Conv2d(3, c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c, c * 2, 4, stride=2, padding=1),
            nn.InstanceNorm2d(c * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c * 2, c * 4, 4, stride=2, padding=1),
            nn.InstanceNorm2d(c * 4),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c * 4, 1, 4, stride=1, padding=1),
        )
        init_conv_weights(self)

    def forward(self, x):
        return self.model(x)


class SmallConvClassifier(nn.Module):
    """Compact four-stage classifier for small patches and quick studies."""

    def __init__(self, num_classes: int, base_channels: int = 16):
        super().__init__()
        chans = [base_channels * 2**i for i in range(4)]
        layers = []
        cin = 3
        for i, cout in enumerate(chans):
            layers.append(nn.Conv2d(cin, cout, 3, stride=2, padding=1))
            if i > 0:
                # group norm: well-defined even when the map shrinks to 1x1
                layers.append(nn.GroupNorm(4, cout))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            cin = cout
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(chans[-1], num_classes)
        init_conv_weights(self)

    def forward(self, x):
        return self.fc(self.features(x).mean(dim=(2, 3)))


def build_classifier(arch: str, num_classes: int) -> nn.Module:
    if arch == "resnet50":
        return tvm.resnet50(weights=None, num_classes=num_classes)
    if arch == "small":
        return SmallConvClassifier(num_classes)
    raise ConfigError(f"unknown classifier arch {arch!r}")


class PerceptualExtractor(nn.Module):
    """Frozen VGG-16 feature pyramid used for the perceptual distance.

    ``weights``:
      * "imagenet" requires the torchvision VGG-16 checkpoint in the local
        cache (GFD_CACHE or the torch hub dir); raises if absent.
      * "random" uses a fixed-seed He init, giving a deterministic frozen
        extractor with no download.
      * "auto" picks "imagenet" when cached, otherwise falls back to "random".
    """

    def __init__(self, weights: str = "auto", taps: tuple[int, ...] = PERCEPTUAL_TAPS):
        super().__init__()
        if weights not in ("auto", "imagenet", "random"):
            raise ConfigError(f"unknown perceptual weights mode {weights!r}")
        self.taps = tuple(sorted(taps))
        vgg = tvm.vgg16(weights=None)
        self.features = vgg.features[: self.taps[-1] + 1]

        path = _vgg16_cache_path()
        if weights == "auto":
            weights = "imagenet" if path.exists() else "random"
        self.weights_source = weights
        if weights == "imagenet":
            if not path.exists():
                raise WeightsUnavailableError(
                    f"VGG-16 weights not found at {path}; set GFD_CACHE or use 'random'"
                )
            state = torch.load(path, map_location="cpu", weights_only=True)
            own = {
                k.removeprefix("features."): v
                for k, v in state.items()
                if k.startswith("features.")
            }
            self.features.load_state_dict(own, strict=False)
        else:
            self._seeded_init()

        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        self.register_buffer("input_mean", mean)
        self.register_buffer("input_std", std)
        for p in self.parameters():
            p.requires_grad_(False)
        super().train(False)

    def _seeded_init(self):
        g = torch.Generator().manual_seed(0x6FD)
        with torch.no_grad():
            for m in self.features.modules():
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                    w = torch.randn(m.weight.shape, generator=g, dtype=torch.float32)
                    m.weight.copy_(w * math.sqrt(2.0 / fan_in))
                    m.bias.zero_()

    def train(self, mode: bool = True):
        # the extractor stays frozen in eval mode regardless of trainer state
        return super().train(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = (x + 1.0) / 2.0
        x = (x - self.input_mean.to(x.dtype)) / self.input_std.to(x.dtype)
        out = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.taps:
                out.append(x)
        return out


def _vgg16_cache_path() -> Path:
    cache = os.environ.get("GFD_CACHE")
    if cache:
        root = Path(cache)
    else:
        root = Path(torch.hub.get_dir()) / "checkpoints"
    return root / _VGG16_WEIGHTS_FILE


# ---------------------------------------------------------------------------
# parameter bookkeeping

def parameter_shape_manifest(module: nn.Module) -> list[tuple[str, tuple[int, ...]]]:
    return [(name, tuple(p.shape)) for name, p in module.named_parameters()]


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def state_hash(module: nn.Module) -> str:
    """sha256 over all parameters and buffers, in state_dict order."""
    h = hashlib.sha256()
    for key, t in module.state_dict().items():
        h.update(key.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def shapes_match(a: nn.Module, b: nn.Module) -> bool:
    """True when two modules hold the same multiset of parameter shapes."""
    sa = sorted(s for _, s in parameter_shape_manifest(a))
    sb = sorted(s for _, s in parameter_shape_manifest(b))
    return sa == sb


def detection_topology_reference(backbone: str, num_classes: int) -> nn.Module:
    """The plain classifier a detection-mode encoder + head must match."""
    if backbone == "resnet50-encoder":
        return tvm.resnet50(weights=None, num_classes=num_classes)
    if backbone == "densenet-encoder":
        return tvm.densenet121(weights=None, num_classes=num_classes)
    raise ConfigError(f"no standalone classifier recipe for backbone {backbone!r}")
