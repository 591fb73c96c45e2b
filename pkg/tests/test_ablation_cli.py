import csv
import logging

import pytest
import yaml

from dad.ablation import PRESETS, TABLE4_PARTITIONS, expand_grid, load_grid, run_ablation
from dad.cli import main
from dad.errors import ConfigError


def test_preset_sizes():
    assert {k: len(v) for k, v in PRESETS.items()} == {
        "table3": 3, "table4": 11, "table5": 3, "table6": 2, "table7": 3, "table8": 3}
    assert len(set(TABLE4_PARTITIONS)) == 11


def test_dedup_merges_equal_configs(caplog):
    grid = {"base": {"model.backbone": "tiny"}, "presets": ["table3", "table5", "table6", "table7", "table8", "table4"],
            "variants": [{"name": "again", "overrides": {"model.fusion": "middle"}}]}
    with caplog.at_level(logging.WARNING):
        variants = expand_grid(grid)
    # the default configuration appears in every table and in the explicit variant
    assert len(variants) == 25 - 5
    default = next(v for v in variants if v["variant"] == "fem=fem")
    assert default["tables"] == ["table3", "table5", "table6", "table7", "table8", "table4", "custom"]
    assert "duplicate variant" in caplog.text
    names = [v["variant"] for v in variants]
    assert "partition=1+5" not in names  # "1+5" is the default split
    assert "partition=5" in names


def test_unknown_preset():
    with pytest.raises(ConfigError):
        expand_grid({"presets": ["table99"]})


def read_rows(path):
    return list(csv.DictReader(open(path)))


def test_small_grid_with_a_failure(tmp_path, synthetic_dir):
    grid = {"base": {"model.backbone": "tiny", "data.train_dir": str(synthetic_dir), "optim.epochs": 1,
                     "optim.checkpoint_every": 0},
            "presets": ["table8"],
            "variants": [{"name": "bad_fusion", "overrides": {"model.fusion": "sideways"}},
                         {"name": "bad_key", "overrides": {"model.colour": 1}}]}
    path = run_ablation(grid, tmp_path)
    rows = read_rows(path)
    assert [r["variant"] for r in rows] == ["repeats=1", "repeats=3", "repeats=2", "bad_fusion", "bad_key"]
    assert [r["status"] for r in rows] == ["ok"] * 3 + ["FAILED"] * 2
    assert "fusion" in rows[3]["reason"] and "colour" in rows[4]["reason"]
    assert all(0 <= float(r["train_e_phi"]) <= 1 for r in rows[:3])
    assert (tmp_path / "ablation.png").stat().st_size > 0


def test_load_grid(tmp_path):
    with pytest.raises(ConfigError):
        load_grid(tmp_path / "none.yaml")
    p = tmp_path / "g.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_grid(p)


def test_cli_end_to_end(tmp_path, synthetic_dir, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"model.backbone": "tiny", "data.train_dir": str(synthetic_dir),
                                   "output_dir": str(tmp_path / "run"), "optim.epochs": 1}))
    assert main(["train", "--config", str(cfg), "--profile", "desk", "--set", "optim.checkpoint_every=0"]) == 0
    out = capsys.readouterr().out
    assert "checkpoint:" in out
    ckpt = tmp_path / "run" / "checkpoint_final.pt"

    assert main(["eval", "--ckpt", str(ckpt), "--data", str(synthetic_dir), "--out", str(tmp_path / "ev")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("image_id,s_alpha,e_phi,f_w_beta,mae,dice,iou,f1,acc")
    assert "AGGREGATE" in out

    image = synthetic_dir / "images" / "sample_000.png"
    assert main(["predict", "--ckpt", str(ckpt), "--image", str(image), "--out", str(tmp_path / "pr"),
                 "--all-stages"]) == 0
    assert len(capsys.readouterr().out.split()) == 4
    assert len(list((tmp_path / "pr").glob("*.png"))) == 4


def test_cli_rf_and_synth(tmp_path, capsys):
    assert main(["rf-analyze", "--out", str(tmp_path / "rf")]) == 0
    out = capsys.readouterr().out
    assert "fem,path1,4-8-16-32,121" in out and "fem,path3,2-4-8-16,61" in out
    assert (tmp_path / "rf" / "receptive_fields.png").stat().st_size > 0
    assert main(["synth", "--out", str(tmp_path / "s"), "--n", "2", "--size", "32"]) == 0
    assert len(list((tmp_path / "s" / "masks").glob("*.png"))) == 2


def test_cli_ablate(tmp_path, synthetic_dir, capsys):
    grid = tmp_path / "grid.yaml"
    grid.write_text(yaml.safe_dump({"base": {"model.backbone": "tiny", "data.train_dir": str(synthetic_dir),
                                             "optim.epochs": 1, "optim.checkpoint_every": 0},
                                    "presets": ["table6"]}))
    assert main(["ablate", "--grid", str(grid), "--out", str(tmp_path / "ab")]) == 0
    out = capsys.readouterr().out
    assert "use_dgm=False" in out and "use_dgm=True" in out


def test_cli_errors(tmp_path, capsys):
    assert main(["eval", "--ckpt", str(tmp_path / "none.pt"), "--data", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "none.yaml")]) == 2
