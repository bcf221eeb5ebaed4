"""Checkpoint-backed prediction, detection, extraction, and evaluation."""

import json

import numpy as np
import pytest
import torch

from gfd.data import load_image, load_manifest
from gfd.errors import ConfigError
from gfd.inference import (
    DetectionResult,
    LoadedModel,
    Prediction,
    attribute,
    detect,
    evaluate,
    extract_fingerprint,
)
from gfd.networks import state_hash
from gfd.training import fit

from conftest import micro_config

torch.set_num_threads(1)


@pytest.fixture(scope="module")
def micro_checkpoint(tmp_path_factory):
    from toyset import build_microset

    root = tmp_path_factory.mktemp("infer")
    manifest = load_manifest(build_microset(root / "data"))
    fit(manifest, micro_config(iterations=2, pretrain_iters=1), root / "run")
    return manifest, root / "run" / "last"


@pytest.fixture(scope="module")
def model(micro_checkpoint):
    _, path = micro_checkpoint
    return LoadedModel.load(path)


class TestLoadedModel:
    def test_networks_are_frozen_and_eval(self, model):
        for net in model.state.networks().values():
            assert not net.training
            assert all(not p.requires_grad for p in net.parameters())

    def test_labels_and_task(self, model):
        assert model.task == "attribution"
        assert [l.name for l in model.labels] == ["real", "a", "b"]
        assert model.real_index == 0


class TestAttribute:
    def test_prediction_is_consistent(self, micro_checkpoint, model):
        manifest, _ = micro_checkpoint
        pred = attribute(load_image(manifest.classes[1].split("test")[0]), model)
        assert isinstance(pred, Prediction)
        assert len(pred.logits) == 3
        assert pred.name == model.labels[pred.label].name
        assert 0.0 < pred.confidence <= 1.0
        assert pred.label == int(np.argmax(pred.logits))

    def test_deterministic(self, micro_checkpoint, model):
        manifest, _ = micro_checkpoint
        img = load_image(manifest.classes[2].split("test")[0])
        a, b = attribute(img, model), attribute(img, model)
        assert a == b


class TestDetect:
    def test_score_is_non_real_mass(self, micro_checkpoint, model):
        manifest, _ = micro_checkpoint
        img = load_image(manifest.classes[0].split("test")[0])
        r = detect(img, model)
        assert isinstance(r, DetectionResult)
        probs = torch.softmax(torch.tensor(r.logits), dim=0)
        assert r.score == pytest.approx(1.0 - float(probs[model.real_index]), abs=1e-6)
        assert r.label == ("fake" if r.score >= 0.5 else "real")


class TestExtractFingerprint:
    def test_shape_and_dtype(self, micro_checkpoint, model):
        manifest, _ = micro_checkpoint
        img = load_image(manifest.classes[1].split("test")[0])
        fp = extract_fingerprint(img, model)
        assert fp.shape == (3, 16, 16)
        assert fp.dtype == torch.float32
        assert not fp.requires_grad

    def test_extraction_does_not_mutate_the_model(self, micro_checkpoint, model):
        manifest, _ = micro_checkpoint
        img = load_image(manifest.classes[1].split("test")[0])
        before = state_hash(model.state.generator)
        extract_fingerprint(img, model)
        assert state_hash(model.state.generator) == before


class TestEvaluate:
    def test_closed_world_report_shape(self, micro_checkpoint, model):
        manifest, _ = micro_checkpoint
        report = evaluate(manifest, model, mode="closed")
        assert report.mode == "closed"
        assert report.sample_count == sum(len(c.split("test")) for c in manifest.classes)
        k = len(model.labels)
        assert len(report.confusion) == k and all(len(row) == k for row in report.confusion)
        # trace / total equals overall accuracy
        trace = sum(report.confusion[i][i] for i in range(k))
        assert report.overall_accuracy == pytest.approx(trace / report.sample_count)
        assert set(report.per_class_accuracy) == {c.label.name for c in manifest.classes}

    def test_unknown_mode_rejected(self, micro_checkpoint, model):
        manifest, _ = micro_checkpoint
        with pytest.raises(ConfigError):
            evaluate(manifest, model, mode="transfer")

    def test_taxonomy_mismatch_rejected(self, micro_checkpoint, model):
        manifest, _ = micro_checkpoint
        # rename a class: attribution checkpoints must refuse unknown labels
        doc = json.loads(manifest.path.read_text())
        for entry in doc["classes"]:
            if not entry.get("is_real"):
                entry["name"] = entry["name"] + "_v2"
        alt = manifest.path.parent / "renamed.json"
        alt.write_text(json.dumps(doc))
        with pytest.raises(ConfigError, match="label taxonomy mismatch"):
            evaluate(load_manifest(alt), model)

    def test_report_serializes(self, micro_checkpoint, model, tmp_path):
        manifest, _ = micro_checkpoint
        report = evaluate(manifest, model)
        out = tmp_path / "report.json"
        report.save(out)
        again = json.loads(out.read_text())
        assert again["overall_accuracy"] == report.overall_accuracy
        assert again["sample_count"] == report.sample_count
