import json
import pytest

from polarbev.cli import EXIT_INVALID, EXIT_IO, EXIT_NONFINITE, content_hash, main
from polarbev.pipeline import OptimizerSpec, PipelineConfig, RunConfig
from polarbev import tensorcore as tc

MINI = PipelineConfig(d_rad=6, d_ang=8, r_max=14.0, C=4, n_iters=2, theta_spec=(4, 4, 1),
                      head_spec=(4, 4, 4), encoder_channels=(4, 4, 4, 4))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen", "--scenes", "2", "--seed", "7", "--rig", "ring6", "--width", "48", "--height", "32",
                 "--out", str(out)]) == 0
    return out


def mini_config_file(tmp_path, steps=2, lr=2e-3):
    run = RunConfig(MINI, OptimizerSpec(lr=lr, steps=steps, eval_every=1), seed=3)
    path = tmp_path / "cfg.json"
    path.write_text(run.to_json())
    return path


def test_gen_layout_and_determinism(dataset, tmp_path):
    names = json.loads((dataset / "scenes.json").read_text())["scenes"]
    assert len(names) == 2
    views = sorted((dataset / names[0]).glob("view_*.tensor"))
    assert len(views) == 6
    assert tc.load_tensor(views[0]).shape == (2, 32, 48)
    assert (dataset / names[0] / "gt_seg.pgm").exists()
    again = tmp_path / "again"
    assert main(["gen", "--scenes", "2", "--seed", "7", "--rig", "ring6", "--width", "48", "--height", "32",
                 "--out", str(again)]) == 0
    assert content_hash([dataset]) == content_hash([again])


def test_gen_external_rig(dataset, tmp_path):
    out = tmp_path / "ext"
    assert main(["gen", "--scenes", "1", "--rig", f"file:{dataset / 'rig.json'}", "--out", str(out)]) == 0
    assert (out / "rig.json").read_text() == (dataset / "rig.json").read_text()


def test_gen_unwritable_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen", "--scenes", "1", "--out", str(blocker / "sub")]) == EXIT_IO


def test_train_eval_forward(dataset, tmp_path):
    cfg = mini_config_file(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(out)]) == 0
    trace = json.loads((out / "trace.json").read_text())
    assert trace["schema"] == "polarbev.trace/1" and len(trace["evals"]) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["schema"] == "polarbev.manifest/1" and manifest["seed"] == 3

    report = tmp_path / "report.json"
    assert main(["eval", "--ckpt", str(out / "ckpt"), "--data", str(dataset), "--setting", "2",
                 "--out", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["schema"] == "polarbev.metrics/1"
    assert rep["setting"]["shape"] == [200, 200]
    # the final training eval and the standalone eval agree (f64, same weights)
    assert rep["aggregate"]["iou"] == trace["evals"][-1]["iou"]

    fwd = tmp_path / "fwd"
    assert main(["forward", "--ckpt", str(out / "ckpt"), "--data", str(dataset), "--out", str(fwd),
                 "--dump-heights"]) == 0
    name = json.loads((dataset / "scenes.json").read_text())["scenes"][0]
    assert tc.load_tensor(fwd / name / "seg_logits.tensor").shape == (2, 6, 8)
    assert len(list((fwd / name).glob("height_z_*.tensor"))) == 3


def test_train_is_reproducible(dataset, tmp_path):
    cfg = mini_config_file(tmp_path)
    for tag in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(tmp_path / tag)]) == 0
    a = json.loads((tmp_path / "a" / "trace.json").read_text())
    b = json.loads((tmp_path / "b" / "trace.json").read_text())
    strip = lambda evals: [{k: v for k, v in e.items() if k != "seconds"} for e in evals]  # noqa: E731
    assert strip(a["evals"]) == strip(b["evals"])
    assert a["losses"] == b["losses"]


def test_invalid_config_exit_code(dataset, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"d_rad": -1}}))
    assert main(["train", "--config", str(bad), "--data", str(dataset), "--out", str(tmp_path / "x")]) == EXIT_INVALID
    bad.write_text(json.dumps({"model": {}, "surprise": 1}))
    assert main(["train", "--config", str(bad), "--data", str(dataset), "--out", str(tmp_path / "x")]) == EXIT_INVALID


def test_checkpoint_mismatch_exit_code(dataset, tmp_path, capsys):
    cfg = mini_config_file(tmp_path, steps=1)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(out)]) == 0
    manifest = out / "ckpt" / "checkpoint.json"
    d = json.loads(manifest.read_text())
    d["config"]["C"] = 5
    d["config"]["theta_spec"] = [5, 4, 1]
    manifest.write_text(json.dumps(d))
    assert main(["eval", "--ckpt", str(out / "ckpt"), "--data", str(dataset)]) == EXIT_INVALID
    assert "params." in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_exit_code(dataset, tmp_path):
    cfg = mini_config_file(tmp_path, steps=3, lr=1e300)
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(tmp_path / "r")]) == EXIT_NONFINITE


def test_threads_env_fallback(dataset, tmp_path, monkeypatch):
    monkeypatch.setenv("POLARBEV_THREADS", "1")
    assert main(["eval", "--ckpt", str(tmp_path / "missing"), "--data", str(dataset)]) == EXIT_IO
