import json
import os

import pytest
import torch
from conftest import TINY_DATA, tiny_config

from patchda.data import DatasetManifest
from patchda.errors import CheckpointError, DataError, InvalidConfigError, TrainingAbort
from patchda.harness import cli
from patchda.harness.checkpoint import load_checkpoint, save_checkpoint, state_hash
from patchda.harness.config import TrainConfig, config_from_json, load_config
from patchda.harness.train import LOG_NAME, evaluate, load_batch, predict, train_adapt, train_local
from patchda.harness.visualize import (
    localisation_iou,
    random_center_iou,
    read_ppm,
    selected_windows,
    visualize_patches,
)
from patchda.sampler import PatchSpec, clamp_center


def read_log(path):
    with open(os.path.join(path, LOG_NAME)) as fh:
        return [json.loads(line) for line in fh]


@pytest.fixture(scope="module")
def phase1(tiny_data, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("ck1"))
    return train_local(tiny_data, tiny_config(), out=out), out


@pytest.fixture(scope="module")
def phase2(tiny_data, phase1, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("ck2"))
    cfg = tiny_config(train={"epochs_adapt": 22, "lr_adapt": 1e-3})
    return train_adapt(tiny_data, phase1[0], cfg, out=out), out


def test_one_epoch_writes_checkpoint_and_one_log_line(phase1):
    _, out = phase1
    assert os.path.exists(os.path.join(out, "manifest.json"))
    assert os.path.exists(os.path.join(out, "params.bin"))
    lines = read_log(out)
    assert len(lines) == 1
    assert lines[0]["epoch"] == 1 and lines[0]["phase"] == "local"
    assert lines[0]["lr"] == {"glancer": 0.005, "policy": 1e-4, "focuser": 0.01, "global": 0.01, "aux": 0.01}


def test_zero_learning_rates_leave_parameters_unchanged(tiny_data):
    rates = {k: 0.0 for k in ("lr_glancer", "lr_focuser", "lr_policy", "lr_global", "lr_aux")}
    cfg = tiny_config(train=rates)
    trained = train_local(tiny_data, cfg)
    from patchda.model import VideoModel

    fresh = VideoModel(cfg, phase="local")
    # batch-norm running statistics are buffers and still track the data
    for (name, a), (_, b) in zip(trained.model.named_parameters(), fresh.named_parameters()):
        assert torch.allclose(a, b, atol=1e-7), name


def test_divergence_aborts_with_epoch_and_component(tiny_data):
    huge = {k: 1e6 for k in ("lr_glancer", "lr_focuser", "lr_global", "lr_aux")}
    with pytest.raises(TrainingAbort) as info:
        train_local(tiny_data, tiny_config(train={**huge, "epochs_local": 5}))
    assert info.value.epoch >= 1
    assert info.value.component
    assert str(info.value.epoch) in str(info.value)


def test_target_clips_cannot_feed_phase_one(tiny_data):
    from patchda.errors import LabelAccessError

    with pytest.raises(LabelAccessError):
        train_local(tiny_data, tiny_config(), clip_ids=tiny_data.ids("target", "train")[:2])


def test_freeze_contract_and_schedule(phase1, phase2):
    ckpt1, _ = phase1
    ckpt2, out = phase2
    assert state_hash(ckpt2.model.extractor_state()) == state_hash(ckpt1.model.extractor_state())
    assert ckpt2.extra["extractor_sha256"] == state_hash(ckpt1.model.extractor_state())
    lines = read_log(out)
    assert len(lines) == 22
    tc = ckpt2.config.train
    for rec in lines:
        assert rec["lr"] == pytest.approx(tc.adapt_lr(rec["epoch"]), rel=1e-12)
    # base rate 1e-3 here; the decay milestones are the defaults
    assert lines[10]["lr"] == pytest.approx(1e-4) and lines[20]["lr"] == pytest.approx(1e-5)


def test_default_schedule_values():
    tc = TrainConfig()
    assert tc.adapt_lr(1) == pytest.approx(3e-3) and tc.adapt_lr(10) == pytest.approx(3e-3)
    assert tc.adapt_lr(11) == pytest.approx(3e-4)
    assert tc.adapt_lr(21) == pytest.approx(3e-5)


def test_adapt_log_has_loss_terms(phase2):
    rec = read_log(phase2[1])[0]
    for key in ("L_y_verb", "L_y_noun", "L_sd", "L_td", "total", "lr", "grl_coeff"):
        assert key in rec


def test_incompatible_phase_one_checkpoint_rejected(tiny_data, phase1):
    cfg = tiny_config(model={"patch_size": 16})
    with pytest.raises(CheckpointError):
        train_adapt(tiny_data, phase1[0], cfg)
    with pytest.raises(CheckpointError):
        train_adapt(tiny_data, phase1[0], tiny_config(model={"use_local": False}))


def test_checkpoint_round_trip(tiny_data, phase2, tmp_path):
    ckpt, _ = phase2
    ids = tiny_data.ids("target", "val")[:4] + tiny_data.ids("source", "val")[:1]
    before = predict(ckpt, tiny_data, ids)
    save_checkpoint(ckpt, str(tmp_path))
    back = load_checkpoint(str(tmp_path), expected_config=ckpt.config)
    after = predict(back, tiny_data, ids)
    assert back.phase == "adapt" and back.epoch == ckpt.epoch and back.seed == ckpt.seed
    for a, b in zip(before, after):
        assert (a - b).abs().max() < 1e-6


def test_wrong_feat_dim_rejected(phase1):
    _, path = phase1
    with pytest.raises(CheckpointError, match="feat_dim"):
        load_checkpoint(path, expected_config=tiny_config(model={"feat_dim": 64}))


def test_flipped_byte_rejected(phase1, tmp_path):
    ckpt, _ = phase1
    path = save_checkpoint(ckpt, str(tmp_path / "ck"))
    blob = os.path.join(path, "params.bin")
    with open(blob, "r+b") as fh:
        fh.seek(100)
        byte = fh.read(1)
        fh.seek(100)
        fh.write(bytes([byte[0] ^ 0x01]))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_missing_checkpoint_files(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path))


def test_evaluate_report(tiny_data, phase2):
    report = evaluate(phase2[0], tiny_data, "target/val")
    assert report.counts == {"target/val": TINY_DATA["val_clips"]}
    values = [report.verb_top1, report.verb_top5, report.noun_top1, report.noun_top5, report.action_top1, report.action_top5]
    assert all(0 <= v <= 100 for v in values)
    assert report.action_top1 <= min(report.verb_top1, report.noun_top1)
    with pytest.raises(Exception):
        evaluate(phase2[0], tiny_data, "target")


def test_visualize_twelve_files_and_rectangles(tiny_data, phase2, tmp_path):
    ckpt, _ = phase2
    cid = tiny_data.ids("target", "val")[0]
    records = visualize_patches(ckpt, tiny_data, [cid], str(tmp_path))
    assert len(os.listdir(tmp_path)) == 12
    assert sorted(r["frame"] for r in records) == list(range(6))

    b = load_batch(tiny_data, [cid], labels=None)
    _, spec, _ = ckpt.model.extractor.local_branch(b["rgb"], "spatial")
    clamped = clamp_center(PatchSpec(spec.cx.double(), spec.cy.double(), spec.size_px), 64, 64)
    for r in records:
        x0 = float(clamped.cx[0, r["frame"]]) * 64 - 12
        y0 = float(clamped.cy[0, r["frame"]]) * 64 - 12
        assert r["x0"] == pytest.approx(x0, abs=1e-4) and r["y0"] == pytest.approx(y0, abs=1e-4)
        overlay = read_ppm(r["overlay"])
        left, top = int(round(r["x0"])), int(round(r["y0"]))
        # the outline is pure red along the top edge of the window
        assert overlay[:, top, left] == pytest.approx([1.0, 0.0, 0.0])
        assert read_ppm(r["crop"]).shape == (3, 24, 24)
    assert os.path.exists(os.path.join(tmp_path, f"{cid}_f0.ppm"))


def test_visualize_unwritable_dir(tiny_data, phase2, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(DataError):
        visualize_patches(phase2[0], tiny_data, tiny_data.ids("target", "val")[:1], str(blocker / "sub"))


def test_localisation_scores_in_range(tiny_data, phase2):
    ids = tiny_data.ids("target", "val")
    iou = localisation_iou(phase2[0], tiny_data, ids)
    base = random_center_iou(tiny_data, ids, 24, 6)
    assert 0 <= iou <= 1 and 0 < base < 1
    assert len(selected_windows(phase2[0], tiny_data, ids)[ids[0]]) == 6


def test_random_center_baseline_matches_area_bound(tiny_data):
    # a 16 px sprite can cover at most 256/576 of a 24 px window
    base = random_center_iou(tiny_data, tiny_data.ids("source", "val"), 24, 6, draws=64)
    assert base < 256 / 576


# --- configuration --------------------------------------------------------------------------


def test_config_unknown_keys_rejected():
    with pytest.raises(InvalidConfigError):
        config_from_json({"train": {"lr_glancr": 0.1}})
    with pytest.raises(InvalidConfigError):
        config_from_json({"model": {"bogus": 1}})
    with pytest.raises(InvalidConfigError):
        config_from_json({"extra": {}})


@pytest.mark.parametrize(
    "train",
    [{"lr_adapt": -1.0}, {"lr_decay_epochs": [20, 10]}, {"batch_size": 0}, {"gamma": -0.1}],
)
def test_invalid_train_configs(train):
    with pytest.raises(InvalidConfigError):
        config_from_json({"train": train})


def test_config_file_round_trip(tmp_path):
    cfg = tiny_config(train={"seed": 4})
    path = str(tmp_path / "c.json")
    cfg.save(path)
    assert load_config(path) == cfg
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(InvalidConfigError):
        load_config(str(tmp_path / "bad.json"))


def test_model_must_agree_with_data():
    with pytest.raises(InvalidConfigError):
        config_from_json({"data": {"frame_size": 64}, "model": {"frame_size": 32}})


# --- determinism ----------------------------------------------------------------------------


def test_identical_seeds_give_identical_reports(tiny_data):
    cfg = tiny_config(train={"epochs_adapt": 2})
    reports = []
    for _ in range(2):
        ck1 = train_local(tiny_data, cfg)
        ck2 = train_adapt(tiny_data, ck1, cfg)
        reports.append(json.dumps(evaluate(ck2, tiny_data).to_dict(), sort_keys=True))
    assert reports[0] == reports[1]


# --- command line ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = str(root / "c.json")
    tiny_config().save(cfg_path)
    data, ck1, ck2 = str(root / "data"), str(root / "ck1"), str(root / "ck2")
    codes = [
        cli.main(["gen-data", "--config", cfg_path, "--out", data]),
        cli.main(["train-local", "--data", data, "--config", cfg_path, "--out", ck1]),
        cli.main(["train-adapt", "--data", data, "--init", ck1, "--config", cfg_path, "--out", ck2]),
    ]
    return root, cfg_path, data, ck1, ck2, codes


def test_cli_pipeline(cli_run, capsys):
    root, cfg_path, data, ck1, ck2, codes = cli_run
    assert codes == [0, 0, 0]
    report_path = str(root / "report.json")
    assert cli.main(["eval", "--data", data, "--ckpt", ck2, "--split", "target/val", "--json", report_path]) == 0
    with open(report_path) as fh:
        report = json.load(fh)
    assert report["counts"] == {"target/val": TINY_DATA["val_clips"]}
    ids = DatasetManifest.load(data).ids("source", "val")[:2]
    vis = str(root / "vis")
    assert cli.main(["visualize-patches", "--data", data, "--ckpt", ck2, "--clips", ",".join(ids), "--out", vis]) == 0
    assert len(os.listdir(vis)) == 24


def test_cli_usage_errors(cli_run, capsys):
    root, cfg_path, data, *_ = cli_run
    with pytest.raises(SystemExit) as info:
        cli.main(["train-local", "--data", data])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 1
    bad = root / "bad.json"
    bad.write_text(json.dumps({"train": {"unknown_knob": 1}}))
    assert cli.main(["gen-data", "--config", str(bad), "--out", str(root / "x")]) == 1


def test_cli_data_errors(cli_run, tmp_path):
    root, cfg_path, data, ck1, ck2, _ = cli_run
    assert cli.main(["eval", "--data", str(tmp_path / "nowhere"), "--ckpt", ck2]) == 2
    assert cli.main(["eval", "--data", data, "--ckpt", str(tmp_path / "nockpt")]) == 2
    assert cli.main(["train-adapt", "--data", data, "--init", ck2, "--config", cfg_path, "--out", str(tmp_path / "o")]) == 2


def test_cli_training_abort(cli_run, tmp_path):
    root, _, data, *_ = cli_run
    cfg = tiny_config(train={k: 1e6 for k in ("lr_glancer", "lr_focuser", "lr_global", "lr_aux")} | {"epochs_local": 5})
    path = str(tmp_path / "huge.json")
    cfg.save(path)
    assert cli.main(["train-local", "--data", data, "--config", path, "--out", str(tmp_path / "ck")]) == 3


def test_module_entry_point_runs():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "patchda", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "train-local" in res.stdout
