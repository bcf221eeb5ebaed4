"""Domain types, dataset manifests, and the resize/crop patch pipeline.

Images are CHW float32 tensors in [-1, 1]. The manifest is a JSON document
listing one entry per source class with per-split file globs; the real class
always receives label index 0 and fake sources follow in listed order.
"""

from __future__ import annotations

import glob as _glob
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ManifestError, ShapeError

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SourceLabel:
    """One entry of the source taxonomy. Index 0 is always the real class."""

    index: int
    name: str
    is_real: bool


@dataclass(frozen=True)
class LabeledImage:
    image: torch.Tensor
    label: SourceLabel


@dataclass(frozen=True)
class Fingerprint:
    """Signed residual map with the spatial shape of the patch it came from."""

    residual: torch.Tensor


@dataclass(frozen=True)
class FingerprintedImage:
    """A real carrier with a fingerprint planted on it, clamped to [-1, 1]."""

    image: torch.Tensor
    origin_label: SourceLabel
    carrier: torch.Tensor


@dataclass(frozen=True)
class PatchPolicy:
    """Resize-then-crop protocol for feeding fixed-size patches to networks.

    ``resize_to`` of None keeps the native resolution. Train mode samples the
    crop offset uniformly; eval mode uses the centered offset
    floor((S - crop) / 2) on each axis.
    """

    resize_to: int | None = None
    crop: int = 224
    mode: str = "train"
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.mode not in ("train", "eval"):
            raise ValueError(f"unknown patch mode {self.mode!r}")
        if self.crop < 1:
            raise ValueError("crop must be positive")
        if self.resize_to is not None and self.crop > self.resize_to:
            raise ValueError("crop larger than resize target")

    def with_mode(self, mode: str) -> "PatchPolicy":
        return PatchPolicy(self.resize_to, self.crop, mode, self.interpolation)


def default_patch_policy(native_resolution: int, crop: int = 224, mode: str = "train") -> PatchPolicy:
    """Default protocol: 128px sources are upscaled x4 before cropping."""
    resize_to = 512 if native_resolution == 128 else None
    return PatchPolicy(resize_to=resize_to, crop=crop, mode=mode)


@dataclass(frozen=True)
class ManifestClass:
    label: SourceLabel
    files: dict[str, tuple[Path, ...]]  # split name -> resolved, sorted paths

    def split(self, name: str) -> tuple[Path, ...]:
        return self.files.get(name, ())


@dataclass(frozen=True)
class DatasetManifest:
    classes: tuple[ManifestClass, ...]
    native_resolution: int
    path: Path | None = None

    @property
    def labels(self) -> tuple[SourceLabel, ...]:
        return tuple(c.label for c in self.classes)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_fake_sources(self) -> int:
        return len(self.classes) - 1

    @property
    def real_class(self) -> ManifestClass:
        return self.classes[0]

    def class_by_name(self, name: str) -> ManifestClass:
        for c in self.classes:
            if c.label.name == name:
                return c
        raise ManifestError(f"unknown class {name!r}")

    def require_splits(self, *names: str) -> None:
        for c in self.classes:
            for split in names:
                if not c.split(split):
                    raise ManifestError(
                        f"class {c.label.name!r} has no files for split {split!r}"
                    )


def _resolve_patterns(patterns, base_dir: Path, cls: str, split: str) -> tuple[Path, ...]:
    if isinstance(patterns, str):
        patterns = [patterns]
    if not isinstance(patterns, list):
        raise ManifestError(f"class {cls!r} split {split!r}: expected a path list")
    files: list[Path] = []
    for pat in patterns:
        p = Path(pat)
        if not p.is_absolute():
            p = base_dir / p
        if any(ch in pat for ch in "*?["):
            files.extend(Path(m) for m in _glob.glob(str(p)))
        elif p.exists():
            files.append(p)
        else:
            raise ManifestError(f"class {cls!r} split {split!r}: missing file {pat}")
    if not files:
        raise ManifestError(f"empty split: class {cls!r} has no files under {split!r}")
    return tuple(sorted(files))


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a dataset manifest.

    Declared splits must resolve to at least one file each; exactly one class
    must be flagged real and it is assigned index 0.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "classes" not in doc:
        raise ManifestError("manifest must be an object with a 'classes' list")
    native = doc.get("native_resolution")
    if not isinstance(native, int) or native < 1:
        raise ManifestError("native_resolution must be a positive integer")

    raw_classes = doc["classes"]
    if not isinstance(raw_classes, list) or not raw_classes:
        raise ManifestError("'classes' must be a nonempty list")

    names = [c.get("name") for c in raw_classes]
    if len(set(names)) != len(names):
        raise ManifestError("duplicate class name in manifest")
    real = [c for c in raw_classes if c.get("is_real")]
    if len(real) != 1:
        raise ManifestError("manifest must declare exactly one real class")

    base_dir = path.parent
    ordered = real + [c for c in raw_classes if not c.get("is_real")]
    classes = []
    for idx, entry in enumerate(ordered):
        name = entry.get("name")
        if not isinstance(name, str) or not name:
            raise ManifestError("every class needs a nonempty name")
        files = {}
        for split in SPLITS:
            if split in entry:
                files[split] = _resolve_patterns(entry[split], base_dir, name, split)
        if not files:
            raise ManifestError(f"class {name!r} declares no splits")
        label = SourceLabel(index=idx, name=name, is_real=bool(entry.get("is_real")))
        classes.append(ManifestClass(label=label, files=files))
    if len(classes) < 2:
        raise ManifestError("manifest needs the real class plus at least one source")
    return DatasetManifest(classes=tuple(classes), native_resolution=native, path=path)


# ---------------------------------------------------------------------------
# pixel encoding

def from_uint8(pixels: np.ndarray) -> torch.Tensor:
    """HWC uint8 [0, 255] -> CHW float32 in [-1, 1]."""
    if pixels.ndim == 2:
        pixels = np.stack([pixels] * 3, axis=-1)
    arr = pixels.astype(np.float32) / 127.5 - 1.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def to_uint8(image: torch.Tensor | np.ndarray) -> np.ndarray:
    """CHW float [-1, 1] -> HWC uint8, rounding to the nearest level."""
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    arr = np.asarray(image).transpose(1, 2, 0)
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def load_image(path) -> torch.Tensor:
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def save_image(image: torch.Tensor, path) -> None:
    Image.fromarray(to_uint8(image)).save(path)


# ---------------------------------------------------------------------------
# patch pipeline

def _resized(img: torch.Tensor, policy: PatchPolicy) -> torch.Tensor:
    if policy.resize_to is None:
        return img
    size = (policy.resize_to, policy.resize_to)
    if img.shape[-2:] == size:
        return img
    out = F.interpolate(
        img.unsqueeze(0),
        size=size,
        mode=policy.interpolation,
        align_corners=False if policy.interpolation in ("bilinear", "bicubic") else None,
    )
    return out.squeeze(0)


def prepare_patch(img: torch.Tensor, policy: PatchPolicy, rng: np.random.Generator | None = None) -> torch.Tensor:
    """Resize per policy, then crop to ``crop`` x ``crop``.

    ``rng`` is required in train mode and drives the crop offset; eval mode is
    deterministic.
    """
    if img.ndim != 3:
        raise ShapeError(f"expected CHW image, got shape {tuple(img.shape)}")
    img = _resized(img, policy)
    h, w = img.shape[-2:]
    c = policy.crop
    if h < c or w < c:
        raise ShapeError(f"image {h}x{w} smaller than crop {c}")
    if policy.mode == "train":
        if rng is None:
            raise ValueError("train-mode cropping needs a random generator")
        top = int(rng.integers(0, h - c + 1))
        left = int(rng.integers(0, w - c + 1))
    else:
        top = (h - c) // 2
        left = (w - c) // 2
    return img[:, top : top + c, left : left + c].contiguous()


def center_offset(size: int, crop: int) -> tuple[int, int]:
    off = (size - crop) // 2
    return off, off


# ---------------------------------------------------------------------------
# compositing

def composite_tensors(residual: torch.Tensor, carrier: torch.Tensor) -> torch.Tensor:
    """clamp(carrier + residual, -1, 1); shapes must match exactly."""
    if residual.shape != carrier.shape:
        raise ShapeError(
            f"fingerprint shape {tuple(residual.shape)} != carrier shape {tuple(carrier.shape)}"
        )
    return torch.clamp(carrier + residual, -1.0, 1.0)


def composite(fp: Fingerprint, carrier: torch.Tensor, origin_label: SourceLabel) -> FingerprintedImage:
    """Plant a fingerprint on a real carrier image."""
    image = composite_tensors(fp.residual, carrier)
    return FingerprintedImage(image=image, origin_label=origin_label, carrier=carrier)


# ---------------------------------------------------------------------------
# fingerprint export

def save_fingerprint(residual: torch.Tensor, out_base) -> tuple[Path, Path]:
    """Write a float32 .npy plus an 8-bit .png preview (min/max remapped)."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    arr = residual.detach().cpu().numpy().astype(np.float32)
    npy_path = out_base.with_suffix(".npy")
    np.save(npy_path, arr)
    lo, hi = float(arr.min()), float(arr.max())
    vis = np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo)
    png_path = out_base.with_suffix(".png")
    Image.fromarray(
        np.clip(np.rint(vis.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    ).save(png_path)
    return npy_path, png_path


class ManifestDataset:
    """Patch-level view of one split of a manifest.

    Samples are (patch, label_index). Decoded images are cached in memory,
    which suits the small study datasets this toolkit trains on directly.
    """

    def __init__(self, manifest: DatasetManifest, split: str, policy: PatchPolicy, cache: bool = True):
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        self.manifest = manifest
        self.split = split
        self.policy = policy
        self.samples: list[tuple[Path, int]] = []
        for cls in manifest.classes:
            for f in cls.split(split):
                self.samples.append((f, cls.label.index))
        self._cache: dict[Path, torch.Tensor] | None = {} if cache else None

    def __len__(self) -> int:
        return len(self.samples)

    def indices_for_class(self, label_index: int) -> list[int]:
        return [i for i, (_, y) in enumerate(self.samples) if y == label_index]

    def image(self, i: int) -> torch.Tensor:
        path, _ = self.samples[i]
        if self._cache is not None:
            if path not in self._cache:
                self._cache[path] = load_image(path)
            return self._cache[path]
        return load_image(path)

    def get(self, i: int, rng: np.random.Generator | None = None) -> tuple[torch.Tensor, int]:
        patch = prepare_patch(self.image(i), self.policy, rng)
        return patch, self.samples[i][1]
