import json
import math

import numpy as np
import pytest

import mdmf

SMALL = {
    "encoder.dim": 16,
    "encoder.raw_dim": 16,
    "mmfe.heads": 2,
    "synth.d_raw": 16,
    "synth.signal_dims": 4,
    "synth.frames": 12,
    "synth.motif_len": 4,
    "synth.per_class": 6,
    "optim.lr": 1e-2,
    "optim.accumulation_steps": 4,
    "train.episodes": 8,
    "eval.part": "train",
    "metrics.timing": "false",
    "seed": 3,
}


def test_default_config():
    cfg = mdmf.default_config()
    assert cfg["episode.way"] == "5"
    assert cfg["optim.accumulation_steps"] == "16"


def test_train_eval_roundtrip(tmp_path):
    tr = mdmf.Trainer(SMALL)
    metrics = tr.train()
    assert len(metrics) == 8
    assert tr.optimizer_steps == 2
    assert {"loss_main", "loss_total", "accuracy"} <= metrics[0].keys()
    assert all(math.isfinite(m["loss_total"]) for m in metrics)

    res = tr.evaluate(10)
    assert res["episodes"] == 10
    assert 0.0 <= res["mean_accuracy"] <= 1.0

    out = tr.forward(0)
    assert out["probs"].shape == (5, 5)
    np.testing.assert_allclose(out["probs"].sum(axis=1), 1.0)

    path = tmp_path / "run.ckpt"
    tr.save(path)
    back = mdmf.Trainer.load(path)
    assert back.episodes_done == 8
    np.testing.assert_array_equal(back.forward(0)["probs"], out["probs"])


def test_determinism():
    a = mdmf.Trainer(SMALL).train(4)
    b = mdmf.Trainer(SMALL).train(4)
    assert a == b


def test_export(tmp_path):
    tr = mdmf.Trainer(SMALL)
    n = tr.export_embeddings(1, tmp_path / "emb.csv")
    lines = (tmp_path / "emb.csv").read_text().splitlines()
    assert lines[0].startswith("episode,id,label,view,role,d0")
    assert len(lines) == n + 1


def test_synth_manifest(tmp_path):
    n = mdmf.synth(tmp_path, classes=5, per_class=3, d_raw=8, frames=10, motif_len=4)
    assert n == 15
    records = [json.loads(l) for l in (tmp_path / "manifest.jsonl").read_text().splitlines()]
    assert len(records) == 15
    assert {"id", "label", "split", "feature_file"} <= records[0].keys()


def test_ops():
    c = np.zeros((3, 3))
    assert mdmf.otam(c, 1e-9) == pytest.approx(0.0, abs=1e-7)
    p = mdmf.prompt_distribution([1.0, 0.0], 1.0)
    assert p[0] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)))
    assert mdmf.sample_frame_indices(16, 8) == [1, 3, 5, 7, 9, 11, 13, 15]


def test_ablate():
    rows = mdmf.ablate(dict(SMALL, **{"train.episodes": 2, "eval.episodes": 2}), [{"name": "g", "views.enabled": "global"}])
    assert rows[0]["name"] == "g"
    assert len(mdmf.preset_grid("fusion")) == 4


def test_errors():
    with pytest.raises(ValueError):
        mdmf.Trainer({"episode.wya": 5})
    with pytest.raises(OSError):
        mdmf.Trainer.load("/nonexistent.ckpt")
