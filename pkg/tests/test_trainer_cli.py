import os

import numpy as np
import pytest

from ctdf import checkpoint as ckptmod
from ctdf import config as cfgmod
from ctdf.arch import HrnetConfig, build_hrnet
from ctdf.cli import main
from ctdf.errors import ConfigError, DataIOError
from ctdf.fileio import read_pair, read_pgm, read_slice, write_slice
from ctdf.metrics import MetricsReport
from ctdf.noise import read_noise_csv
from ctdf.trainer import (LAST, RUNLOG, TrainingDiverged, cmd_denoise, cmd_eval, cmd_gen_data,
                          cmd_noise_analyze, cmd_train, spectrum_window)

TINY = """
[run]
seed = 5
iterations = 4
checkpoint_every = 2
log_every = 2

[model]
branches = 2
channels = 4, 8
stages = 2

[sim]
size = 32
n_angles = 32
n_det = 48

[data]
n_train = 4
n_val = 2

[optim]
schedule = 0:1e-4, 2:1e-5
"""


def write_cfg(root, text=TINY):
    path = os.path.join(root, "run.cfg")
    with open(path, "w") as fh:
        fh.write(text)
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("run"))
    cfg = cfgmod.loads(TINY)
    cmd_gen_data(cfg, root)
    res = cmd_train(cfg, root)
    return root, cfg, res


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


def test_gen_data_layout_and_determinism(tmp_path):
    cfg = cfgmod.loads(TINY.replace("n_train = 4", "n_train = 8"))
    m = cmd_gen_data(cfg, str(tmp_path / "a"))
    assert (len(m.train), len(m.val)) == (8, 2)
    files = tree_bytes(str(tmp_path / "a"))
    stems = {f.split(".")[0] for f in files if f.startswith("data/pair_")}
    assert len(stems) == 10 and len(files) == 10 * 5 + 1
    cmd_gen_data(cfg, str(tmp_path / "b"))
    assert tree_bytes(str(tmp_path / "b")) == files


def test_gen_data_needs_training_pairs():
    with pytest.raises(ConfigError):
        cfgmod.loads(TINY.replace("n_train = 4", "n_train = 0"))
    cfg = cfgmod.loads(TINY)
    cfg.n_train = 0
    with pytest.raises(ConfigError):
        cmd_gen_data(cfg, ".")


def test_lesion_fraction_one_changes_phantoms(tmp_path):
    cfg = cfgmod.loads(TINY.replace("n_det = 48", "n_det = 48\nlesion_fraction = 1"))
    cmd_gen_data(cfg, str(tmp_path))
    plain = cfgmod.loads(TINY)
    cmd_gen_data(plain, str(tmp_path / "p"))
    a = read_pair(str(tmp_path / "data" / "pair_00000"))
    b = read_pair(str(tmp_path / "p" / "data" / "pair_00000"))
    assert not np.array_equal(a.clean, b.clean)


def test_train_outputs(trained):
    root, cfg, res = trained
    lines = open(res.runlog).read().splitlines()
    assert lines[0] == "iteration,lr,loss"
    assert [ln.split(",")[:2] for ln in lines[1:]] == [["0", "0.0001"], ["1", "0.0001"],
                                                       ["2", "1e-05"], ["3", "1e-05"]]
    ck = ckptmod.load(res.checkpoint, expect_hash=cfg.hash())
    assert ck.iteration == 4 and ck.state.t == 4
    names = sorted(os.listdir(os.path.join(root, "checkpoints")))
    assert names == sorted([LAST, "iter_000002.ctdn", "iter_000004.ctdn", RUNLOG])
    assert os.path.getsize(os.path.join(root, "reports", "train_loss_hrnet.png")) > 0


def test_train_deterministic(trained, tmp_path):
    root, cfg, res = trained
    cmd_gen_data(cfg, str(tmp_path))
    again = cmd_train(cfg, str(tmp_path))
    assert again.losses == res.losses
    assert open(again.runlog, "rb").read() == open(res.runlog, "rb").read()
    assert open(again.checkpoint, "rb").read() == open(res.checkpoint, "rb").read()


def test_training_target_is_ndct(tmp_path):
    cfg = cfgmod.loads(TINY.replace("iterations = 4", "iterations = 2"))
    cmd_gen_data(cfg, str(tmp_path))
    seen = []

    def spy(it, x, y, pair):
        seen.append(it)
        np.testing.assert_array_equal(y.data[0, 0], (pair.ndct / 2000).astype(np.float32))
        np.testing.assert_array_equal(x.data[0, 0], (pair.ldct / 2000).astype(np.float32))
        assert not np.array_equal(y.data[0, 0], (pair.clean / 2000).astype(np.float32))
    cmd_train(cfg, str(tmp_path), on_sample=spy)
    assert seen == [0, 1]


def test_resume_matches_uninterrupted(trained, tmp_path):
    root, cfg, res = trained
    cmd_gen_data(cfg, str(tmp_path))
    short = cfgmod.loads(TINY.replace("iterations = 4", "iterations = 2"))
    cmd_train(short, str(tmp_path))
    resumed = cmd_train(cfg, str(tmp_path), resume=True)
    assert resumed.losses == res.losses[2:]
    assert open(resumed.runlog, "rb").read() == open(res.runlog, "rb").read()
    assert open(resumed.checkpoint, "rb").read() == open(res.checkpoint, "rb").read()


def test_resume_with_changed_config_fails(trained, tmp_path):
    root, cfg, _ = trained
    other = cfgmod.loads(TINY.replace("seed = 5", "seed = 6"))
    with pytest.raises(ConfigError, match="hash"):
        cmd_train(other, root, resume=True)


def test_train_without_data(tmp_path):
    with pytest.raises(DataIOError, match="gen-data"):
        cmd_train(cfgmod.loads(TINY), str(tmp_path))


def test_divergence_reports_lr(tmp_path):
    cfg = cfgmod.loads(TINY.replace("iterations = 4", "iterations = 1"))
    cmd_gen_data(cfg, str(tmp_path))

    def poison(it, x, y, pair):
        y.data[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="lr=0.0001"):
        cmd_train(cfg, str(tmp_path), on_sample=poison)


def identity_checkpoint(path):
    g = build_hrnet(HrnetConfig(branches=2, channels=[4, 8], stages=2), seed=0, dtype=np.float64)
    w = g.params["predictor.weight"]
    w[:] = 0
    w[0, -1, 1, 1] = 1
    g.params["predictor.bias"][:] = 0
    ckptmod.save(path, ckptmod.Checkpoint(g))


def test_denoise_identity_model(tmp_path):
    ck = str(tmp_path / "id.ctdn")
    identity_checkpoint(ck)
    img = np.random.default_rng(0).uniform(-300, 2000, (16, 24))
    src = str(tmp_path / "s.ldct")
    write_slice(src, img)
    (dest,) = cmd_denoise(ck, [src], str(tmp_path / "out"))
    assert dest == str(tmp_path / "out" / "s.denoised")
    np.testing.assert_allclose(read_slice(dest), np.maximum(img, 0), rtol=1e-15, atol=0)
    (again,) = cmd_denoise(ck, [src])
    assert open(again, "rb").read() == open(dest, "rb").read()


def test_denoise_indivisible_input(tmp_path):
    ck = str(tmp_path / "id.ctdn")
    identity_checkpoint(ck)
    src = str(tmp_path / "odd.ldct")
    write_slice(src, np.ones((15, 16)))
    with pytest.raises(ConfigError, match="pad"):
        cmd_denoise(ck, [src])


def test_eval_reports(trained):
    root, cfg, res = trained
    rep = cmd_eval(cfg, root)
    reports = os.path.join(root, "reports")
    back, mean = MetricsReport.read_csv(os.path.join(reports, "metrics_hrnet.csv"))
    assert back.rows == rep.rows and len(rep.rows) == cfg.n_val
    curves = open(os.path.join(reports, "curves_hrnet.csv")).read().splitlines()
    assert len(curves) == cfg.n_val + 1
    assert os.path.getsize(os.path.join(reports, "curves_hrnet.png")) > 0


def test_eval_empty_validation(trained, tmp_path):
    root, cfg, res = trained
    os.makedirs(tmp_path / "data")
    (tmp_path / "data" / "manifest.txt").write_text("[train]\npair_00000\n[val]\n")
    with pytest.raises(ConfigError, match="empty"):
        cmd_eval(cfg, str(tmp_path), res.checkpoint)


def test_noise_analyze_oracle(trained):
    root, cfg, _ = trained
    reports, mean = cmd_noise_analyze(cfg, root, oracle=True, n_previews=1)
    assert abs(mean.cos_ra - 1) < 1e-9 and abs(mean.proj_added_pct - 100) < 1e-9
    out = os.path.join(root, "reports")
    rows = read_noise_csv(os.path.join(out, "noise_oracle.csv"))
    assert len(rows) == cfg.n_val + 1 and rows[-1].pair_id == "MEAN"
    pgms = sorted(os.listdir(os.path.join(out, "noise_oracle")))
    assert len(pgms) == 4
    gray, maxval = read_pgm(os.path.join(out, "noise_oracle", pgms[0]))
    assert gray.shape == (32, 32) and maxval == 255
    assert os.path.getsize(os.path.join(out, "noise_oracle.png")) > 0


def test_noise_analyze_model(trained):
    root, cfg, _ = trained
    reports, mean = cmd_noise_analyze(cfg, root, n_previews=0)
    assert len(reports) == cfg.n_val and -1 <= mean.cos_ra <= 1


def test_spectrum_window_scales_with_size():
    assert spectrum_window(512, 512) == (1e4, 1e5)
    assert spectrum_window(64, 64) == (1250.0, 12500.0)


def test_cli_exit_codes(trained, tmp_path, capsys):
    root, _, res = trained
    cfg = write_cfg(root)
    assert main(["eval", "--config", cfg]) == 0
    assert "val RMSE" in capsys.readouterr().out
    assert main(["noise-analyze", "--config", cfg, "--oracle", "--previews", "0"]) == 0
    assert main(["bogus"]) == 1
    assert capsys.readouterr().err.startswith("error: usage:")
    bad = write_cfg(str(tmp_path), TINY + "\n[extra]\nx = 1\n")
    assert main(["train", "--config", bad]) == 1
    assert capsys.readouterr().err.startswith("error: config:")
    os.makedirs(tmp_path / "e")
    empty = write_cfg(str(tmp_path / "e"))
    assert main(["train", "--config", empty]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error: DataIOError:") and err.count("\n") == 1
    assert main(["gen-data", "--config", cfg, "--seed", "-1"]) == 1


def test_cli_full_pipeline(tmp_path, capsys):
    cfg = write_cfg(str(tmp_path))
    assert main(["gen-data", "--config", cfg, "-q"]) == 0
    assert main(["train", "--config", cfg, "-q"]) == 0
    assert main(["train", "--config", cfg, "-q", "--resume"]) == 0
    src = str(tmp_path / "data" / "pair_00000.ldct")
    assert main(["denoise", "--config", cfg, "--dest", str(tmp_path / "den"), src]) == 0
    assert read_slice(str(tmp_path / "den" / "pair_00000.denoised")).shape == (32, 32)
    assert main(["noise-analyze", "--config", cfg, "--previews", "1"]) == 0
    assert os.path.exists(tmp_path / "reports" / "noise_hrnet.csv")
