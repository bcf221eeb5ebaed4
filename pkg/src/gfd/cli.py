"""Command-line entry point.

One subcommand per workflow stage: train, eval, attribute, detect,
extract-fp, composite, analyze-glcm. Every failure exits nonzero with a
single `error: ...` line on stderr; argparse handles usage errors itself.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import analysis
from .config import (
    add_glcm_flags,
    add_train_flags,
    apply_glcm_overrides,
    apply_train_overrides,
    load_run_config,
    run_config_to_dict,
    save_run_config,
)
from .data import (
    composite_tensors,
    load_image,
    load_manifest,
    save_fingerprint,
    save_image,
)
from .errors import ConfigError, GfdError
from .inference import LoadedModel, attribute, detect, evaluate, extract_fingerprint
from .training import fit

logger = logging.getLogger(__name__)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    parser.add_argument("--device", default="cpu", help="torch device (default cpu)")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfd",
        description="Fingerprint-based attribution and detection of generated images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the four-network ensemble")
    p.add_argument("--config", default=None, help="JSON run configuration")
    p.add_argument("--manifest", default=None, help="dataset manifest")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint directory to resume")
    add_train_flags(p)
    _common_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="closed- or open-world accuracy of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--mode", choices=["closed", "open"], default="closed")
    p.add_argument("--report", default=None, help="write the report JSON here")
    _common_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("attribute", help="predict the source of one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    _common_flags(p)
    p.set_defaults(func=_cmd_attribute)

    p = sub.add_parser("detect", help="real-versus-fake verdict for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    _common_flags(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("extract-fp", help="extract and save an image's fingerprint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output base path (.npy and .png)")
    _common_flags(p)
    p.set_defaults(func=_cmd_extract_fp)

    p = sub.add_parser("composite", help="add a saved fingerprint onto a carrier")
    p.add_argument("--fp", required=True, help="fingerprint .npy file")
    p.add_argument("--carrier", required=True, help="carrier image")
    p.add_argument("--out", required=True, help="output image path")
    _common_flags(p)
    p.set_defaults(func=_cmd_composite)

    p = sub.add_parser("analyze-glcm", help="texture statistics over fingerprints")
    p.add_argument("--fp-dir", required=True, help="directory of .npy fingerprints")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--plot", default=None, help="optional mean/std bar plot PNG")
    add_glcm_flags(p)
    _common_flags(p)
    p.set_defaults(func=_cmd_analyze_glcm)

    return parser


def _resolve_seed(cfg_seed: int, args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else cfg_seed
    logger.info("seed %d", seed)
    return seed


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    train_cfg = apply_train_overrides(cfg.train, args)
    glcm_cfg = apply_glcm_overrides(cfg.glcm, args)
    manifest_path = args.manifest or cfg.manifest
    out = args.out or cfg.out
    resume = args.resume or cfg.resume
    if manifest_path is None:
        raise ConfigError("a dataset manifest is required (--manifest)")
    if out is None:
        raise ConfigError("an output directory is required (--out)")
    train_cfg = replace(train_cfg, seed=_resolve_seed(train_cfg.seed, args))

    manifest = load_manifest(manifest_path)
    final = replace(
        cfg,
        train=train_cfg,
        glcm=glcm_cfg,
        manifest=str(manifest_path),
        out=str(out),
        resume=str(resume) if resume else None,
    )
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_run_config(final, out_dir / "run_config.json")

    state = fit(manifest, train_cfg, out_dir, device=args.device, resume=resume)
    summary = {
        "iterations": state.iteration,
        "best_val_accuracy": None if state.best_val == float("-inf") else state.best_val,
        "checkpoints": {"last": str(out_dir / "last"), "best": str(out_dir / "best")},
        "metrics": str(out_dir / "metrics.jsonl"),
    }
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_eval(args) -> int:
    if args.manifest is None:
        raise ConfigError(
            f"--manifest is required: {args.mode} mode needs a labeled test manifest"
        )
    model = LoadedModel.load(args.ckpt, args.device)
    report = evaluate(load_manifest(args.manifest), model, mode=args.mode)
    if args.report:
        report.save(args.report)
    print(json.dumps(report.as_dict(), indent=2))
    return 0


def _cmd_attribute(args) -> int:
    model = LoadedModel.load(args.ckpt, args.device)
    pred = attribute(load_image(args.image), model)
    print(
        json.dumps(
            {
                "label": pred.label,
                "name": pred.name,
                "confidence": pred.confidence,
                "logits": list(pred.logits),
            },
            indent=2,
        )
    )
    return 0


def _cmd_detect(args) -> int:
    model = LoadedModel.load(args.ckpt, args.device)
    result = detect(load_image(args.image), model)
    print(json.dumps({"label": result.label, "score": result.score}, indent=2))
    return 0


def _cmd_extract_fp(args) -> int:
    model = LoadedModel.load(args.ckpt, args.device)
    fp = extract_fingerprint(load_image(args.image), model)
    npy_path, png_path = save_fingerprint(fp, args.out)
    print(json.dumps({"npy": str(npy_path), "png": str(png_path)}, indent=2))
    return 0


def _center_crop_to(carrier: torch.Tensor, h: int, w: int) -> torch.Tensor:
    ch, cw = carrier.shape[-2:]
    if (ch, cw) == (h, w):
        return carrier
    if ch < h or cw < w:
        raise ConfigError(
            f"carrier {ch}x{cw} is smaller than the fingerprint {h}x{w}"
        )
    top, left = (ch - h) // 2, (cw - w) // 2
    return carrier[..., top : top + h, left : left + w]


def _cmd_composite(args) -> int:
    fp = torch.from_numpy(np.load(args.fp).astype(np.float32))
    if fp.ndim != 3:
        raise ConfigError(f"fingerprint must be [C, H, W], got shape {tuple(fp.shape)}")
    carrier = load_image(args.carrier)
    carrier = _center_crop_to(carrier, fp.shape[-2], fp.shape[-1])
    save_image(composite_tensors(fp, carrier), args.out)
    print(json.dumps({"out": args.out}, indent=2))
    return 0


def _collect_fingerprints(fp_dir: Path) -> list[tuple[str, str, Path]]:
    """(relative name, source group, path) per .npy; the group is the first
    subdirectory under fp_dir, or 'all' for flat layouts."""
    files = sorted(fp_dir.rglob("*.npy"))
    out = []
    for f in files:
        rel = f.relative_to(fp_dir)
        group = rel.parts[0] if len(rel.parts) > 1 else "all"
        out.append((str(rel), group, f))
    return out


def _cmd_analyze_glcm(args) -> int:
    cfg = apply_glcm_overrides(analysis.GlcmConfig(), args)
    fp_dir = Path(args.fp_dir)
    if not fp_dir.is_dir():
        raise ConfigError(f"not a directory: {fp_dir}")
    entries = _collect_fingerprints(fp_dir)
    if not entries:
        raise ConfigError(f"no .npy fingerprints under {fp_dir}")

    labels = analysis.pair_labels(cfg)
    by_group: dict[str, list[np.ndarray]] = {}
    rows = []
    skipped = 0
    for rel, group, path in entries:
        try:
            vec = analysis.fingerprint_correlation_vector(np.load(path), cfg)
        except GfdError as e:
            logger.warning("skipping %s: %s", rel, e)
            skipped += 1
            continue
        rows.append([rel, group, "sample", *map(float, vec)])
        by_group.setdefault(group, []).append(vec)
    if not rows:
        raise ConfigError("every fingerprint was degenerate; nothing to report")

    stats = {}
    for group, vecs in sorted(by_group.items()):
        stack = np.stack(vecs)
        stats[group] = (stack.mean(axis=0), stack.var(axis=0))

    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["file", "source", "kind", *labels])
        writer.writerows(rows)
        for group, (mean, var) in stats.items():
            writer.writerow(["", group, "mean", *map(float, mean)])
            writer.writerow(["", group, "variance", *map(float, var)])
            writer.writerow(["", group, "std", *map(float, np.sqrt(var))])

    if args.plot:
        _plot_population(stats, labels, args.plot)
    print(
        json.dumps(
            {
                "out": args.out,
                "fingerprints": len(rows),
                "skipped": skipped,
                "sources": sorted(stats),
                "plot": args.plot,
            },
            indent=2,
        )
    )
    return 0


def _plot_population(stats, labels, out_path) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("matplotlib is required for --plot (install gfd[plots])")
    x = np.arange(len(labels))
    width = 0.8 / max(1, len(stats))
    fig, ax = plt.subplots(figsize=(12, 4))
    for i, (group, (mean, var)) in enumerate(sorted(stats.items())):
        ax.bar(x + i * width, mean, width, yerr=np.sqrt(var), capsize=2, label=group)
    ax.set_xticks(x + width * (len(stats) - 1) / 2)
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("co-occurrence correlation")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except GfdError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
