import csv

import numpy as np
import pytest
import torch
from PIL import Image
from torch import nn

from conftest import desk_config
from dad.errors import ConfigError, LoadError
from dad.evaluation import evaluate, evaluate_model, predict, stage_logits, write_report
from dad.training import load_checkpoint, lr_at_epoch, read_checkpoint, save_checkpoint, train


def test_lr_schedule():
    assert lr_at_epoch(0) == 1e-4
    assert lr_at_epoch(49) == 1e-4
    assert lr_at_epoch(50) == pytest.approx(1e-5, rel=1e-12)
    assert lr_at_epoch(99) == pytest.approx(1e-5, rel=1e-12)
    assert lr_at_epoch(100) == pytest.approx(1e-6, rel=1e-12)
    assert lr_at_epoch(150) == pytest.approx(1e-7, rel=1e-12)
    assert lr_at_epoch(199) == pytest.approx(1e-7, rel=1e-12)
    values = [lr_at_epoch(e) for e in range(200)]
    changes = [e for e in range(1, 200) if values[e] != values[e - 1]]
    assert changes == [50, 100, 150]


def short_config(tmp_path, name, **kw):
    kw.setdefault("optim.epochs", 2)
    return desk_config(tmp_path / name, **kw)


def test_determinism(tmp_path, synthetic_samples):
    losses = []
    for name in ("a", "b"):
        cfg = short_config(tmp_path, name, **{"optim.deterministic": True, "optim.epochs": 1})
        losses.append(train(cfg, synthetic_samples, make_figure=False).epoch_losses[0])
    assert abs(losses[0] - losses[1]) <= 1e-6


def test_outputs_and_round_trip(tmp_path, synthetic_samples):
    cfg = short_config(tmp_path, "run", **{"optim.checkpoint_every": 1})
    result = train(cfg, synthetic_samples)
    out = tmp_path / "run"
    assert (out / "checkpoint_epoch0001.pt").is_file() and (out / "checkpoint_epoch0002.pt").is_file()
    assert result.figure.is_file() and result.figure.stat().st_size > 0
    rows = list(csv.DictReader(open(result.loss_curve)))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert float(rows[0]["mean_total_loss"]) == pytest.approx(result.epoch_losses[0], abs=1e-6)
    assert len(result.step_losses) == 4

    payload = read_checkpoint(result.checkpoint)
    assert payload["format_version"] == 1 and payload["epoch"] == 2
    model, loaded_cfg = load_checkpoint(result.checkpoint)
    assert loaded_cfg == cfg
    again = tmp_path / "again.pt"
    save_checkpoint(again, model, loaded_cfg, 2)
    model2, _ = load_checkpoint(again)
    a = evaluate_model(model, synthetic_samples[:4]).aggregate
    b = evaluate_model(model2, synthetic_samples[:4]).aggregate
    assert all(abs(a[k] - b[k]) <= 1e-6 for k in a)


def test_resume(tmp_path, synthetic_samples):
    first = train(short_config(tmp_path, "r1", **{"optim.epochs": 1}), synthetic_samples, make_figure=False)
    resumed = train(short_config(tmp_path, "r2", **{"optim.epochs": 2}), synthetic_samples,
                    resume=first.checkpoint, make_figure=False)
    assert len(resumed.epoch_losses) == 1
    assert read_checkpoint(resumed.checkpoint)["epoch"] == 2
    wider = short_config(tmp_path, "r3", **{"model.channels": 48})
    with pytest.raises(ConfigError, match="cannot resume"):
        train(wider, synthetic_samples, resume=first.checkpoint, make_figure=False)


def test_max_steps_and_missing_data(tmp_path, synthetic_samples):
    result = train(short_config(tmp_path, "cap", **{"optim.max_steps": 3, "optim.epochs": 10}),
                   synthetic_samples, make_figure=False)
    assert len(result.step_losses) == 3
    with pytest.raises(ConfigError, match="train_dir"):
        train(short_config(tmp_path, "nodata"))


def test_checkpoint_errors(tmp_path, synthetic_dir):
    with pytest.raises(LoadError):
        load_checkpoint(tmp_path / "missing.pt")
    junk = tmp_path / "junk.pt"
    torch.save({"format_version": 99}, junk)
    with pytest.raises(LoadError, match="version"):
        load_checkpoint(junk)
    from dad.decoder import DAD
    cfg = short_config(tmp_path, "x")
    model = DAD(cfg.model)
    payload = {"format_version": 1, "config": cfg.to_flat(), "epoch": 0,
               "state_dict": {k: v for k, v in model.state_dict().items() if "daes" not in k}}
    torch.save(payload, tmp_path / "partial.pt")
    with pytest.raises(LoadError, match="does not match"):
        evaluate(tmp_path / "partial.pt", synthetic_dir)


class ModeRecorder(nn.Module):
    """Stub model: returns fixed logits and records the batch-norm mode it ran in."""

    def __init__(self, logits_fn, n_maps=3):
        super().__init__()
        self.bn = nn.BatchNorm2d(3)
        self.modes = []
        self.logits_fn = logits_fn
        self.n_maps = n_maps

    def forward(self, x):
        self.modes.append(self.bn.training)
        self.bn(x)
        return [self.logits_fn(x)] * self.n_maps


def oracle_stub(samples):
    def logits(x):
        out = []
        for img in x:
            match = next(s for s in samples if torch.equal(s.image, img))
            out.append(40 * (2 * match.mask - 1))
        return torch.stack(out)
    return ModeRecorder(logits)


def test_perfect_and_constant_stubs(synthetic_samples):
    stub = oracle_stub(synthetic_samples)
    agg = evaluate_model(stub, synthetic_samples).aggregate
    assert agg["mae"] < 1e-12
    for k in ("s_alpha", "e_phi", "f_w_beta", "dice", "iou", "f1", "acc"):
        assert agg[k] == pytest.approx(1.0, abs=1e-6)
    assert stub.modes and not any(stub.modes)

    half = ModeRecorder(lambda x: torch.zeros(x.shape[0], 1, *x.shape[-2:]))
    half.train()
    assert evaluate_model(half, synthetic_samples).aggregate["mae"] == 0.5
    assert not any(half.modes)


def test_report_files(tmp_path, synthetic_samples):
    report = evaluate_model(oracle_stub(synthetic_samples), synthetic_samples)
    path = write_report(report, tmp_path, "synthetic")
    lines = path.read_text().splitlines()
    assert len(lines) == 10 and lines[-1].startswith("AGGREGATE")
    assert (tmp_path / "synthetic.png").stat().st_size > 0
    assert "images: 8" in (tmp_path / "synthetic_summary.txt").read_text()


@pytest.fixture
def rect_image(tmp_path):
    path = tmp_path / "photo.jpg"
    rng = np.random.default_rng(0)
    Image.fromarray(rng.integers(0, 255, (45, 70, 3), dtype=np.uint8)).save(path)
    return path


def ramp_stub():
    return ModeRecorder(lambda x: torch.linspace(-6, 6, x.shape[-1]).expand(x.shape[0], 1, *x.shape[-2:]))


def test_predict_files(tmp_path, rect_image):
    stub = ramp_stub()
    stub.train()
    files = predict(None, rect_image, tmp_path / "out", model=stub, image_size=64)
    assert [f.name for f in files] == ["photo.png", "photo_overlay.png"]
    for f in files:
        assert Image.open(f).size == (70, 45)
    assert Image.open(files[0]).mode == "L" and Image.open(files[1]).mode == "RGB"
    assert not any(stub.modes)

    staged = predict(None, rect_image, tmp_path / "stages", all_stages=True, model=stub, image_size=64)
    assert [f.name for f in staged] == ["photo_C0.png", "photo_C1.png", "photo_C2.png", "photo_overlay.png"]


def test_predict_gray_values_bit_exact(tmp_path, rect_image):
    stub = ramp_stub()
    files = predict(None, rect_image, tmp_path, model=stub, image_size=64)
    logits = stage_logits(stub, Image.open(rect_image).convert("RGB"), 64)[-1].double().numpy()
    expected = np.round(255 / (1 + np.exp(-logits))).astype(np.uint8)
    assert np.array_equal(np.asarray(Image.open(files[0])), expected)


def test_predict_unreadable(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_text("not an image")
    with pytest.raises(LoadError):
        predict(None, bad, tmp_path, model=ramp_stub(), image_size=64)
    with pytest.raises(LoadError):
        predict(None, tmp_path / "missing.png", tmp_path, model=ramp_stub(), image_size=64)


@pytest.mark.slow
def test_overfit_run(overfit_run, synthetic_samples, synthetic_dir, tmp_path):
    result, seconds = overfit_run
    assert len(result.step_losses) <= 200
    assert result.epoch_losses[-1] < 0.2 * result.step_losses[0]
    report = evaluate(result.checkpoint, synthetic_dir, tmp_path)
    assert report.aggregate["mae"] < 0.05
    assert (tmp_path / f"{synthetic_dir.name}.csv").is_file()
