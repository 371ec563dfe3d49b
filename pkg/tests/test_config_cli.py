import numpy as np
import pytest

from privnav import pipeline
from privnav.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, main
from privnav.config import DESK_SCALE, RunConfig, parse_config_text, resolve
from privnav.errors import ConfigError

TINY = dict(n_train=24, n_test=10, epochs=2, batch=8, stage2_epochs=2, stage2_batch=8, lr=0.1, stage2_lr=0.1,
            attack_worlds=60, bench_batch=4, bench_repeats=1)


def _write_cfg(path, **values):
    path.write_text("# tiny run\n" + "".join(f"{k} = {v}\n" for k, v in values.items()))
    return str(path)


def test_parse_and_resolve_order(tmp_path):
    assert parse_config_text("# c\nseed = 3\n\nlr = 0.5  # step\nmpc_train = yes\n") == {
        "seed": 3, "lr": 0.5, "mpc_train": True}
    path = _write_cfg(tmp_path / "c.cfg", seed=4, epochs=7)
    cfg = resolve(path, desk_scale=True, seed=9, parties=None)
    assert cfg.seed == 9 and cfg.epochs == 7 and cfg.n_train == DESK_SCALE["n_train"]
    assert resolve().n_train == 15000
    assert RunConfig().text().splitlines()[0] == "seed = 0"


@pytest.mark.parametrize("text", ["nope = 1\n", "seed = 1\nseed = 2\n", "seed = x\n", "seed 1\n",
                                  "mpc_train = maybe\n", "parties = 1\n", "lr = -1\n", "baseline = gpu\n",
                                  "dtype = float16\n", "epochs = -1\n", "lr_drop = 0\n"])
def test_bad_config_rejected(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        resolve(str(path))
    assert main(["gen-data", "--config", str(path), "--out-dir", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_unreadable_config(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_missing_artifacts(tmp_path, capsys):
    out = str(tmp_path / "empty")
    assert main(["train", "--out-dir", out, "--baseline", "map_only"]) == EXIT_MISSING
    assert "gen-data" in capsys.readouterr().err
    assert main(["eval", "--out-dir", out, "--baseline", "random"]) == EXIT_MISSING
    assert main(["bench", "--out-dir", out]) == EXIT_MISSING


def test_gen_data_is_byte_identical(tmp_path):
    cfg = _write_cfg(tmp_path / "c.cfg", n_train=30, n_test=12)
    for name in ("a", "b"):
        assert main(["gen-data", "--config", cfg, "--out-dir", str(tmp_path / name), "--all-baselines"]) == EXIT_OK
    for f in ("train.jsonl", "test.jsonl", "train_det.jsonl", "test_det.jsonl"):
        assert (tmp_path / "a" / "data" / f).read_bytes() == (tmp_path / "b" / "data" / f).read_bytes()


def test_lr_drop_schedule():
    from privnav.model import TrainConfig

    cfg = TrainConfig(lr=0.3, lr_drop_epoch=2, lr_drop=0.5)
    assert [cfg.lr_at(e) for e in range(4)] == [0.3, 0.3, 0.15, 0.15]
    assert TrainConfig(lr=0.3).lr_at(100) == 0.3
    with pytest.raises(ConfigError):
        TrainConfig(lr_drop=0)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg = resolve(out_dir=str(root), **TINY)
    pipeline.gen_data(cfg)
    models = {name: pipeline.train_model(cfg, name)[0] for name in ("multiview", "map_only")}
    return cfg, models


def test_pipeline_smoke(tiny_run, capsys):
    cfg, _ = tiny_run
    reports = {b: pipeline.evaluate_baseline(cfg, b)[0] for b in ("random", "map_only", "plaintext_cam", "mpc2")}
    assert all(r.trials == 10 for r in reports.values())
    assert float(reports["mpc2"].extra["agreement_fixed"]) >= 0.99
    rep = cfg.out_dir + "/reports"
    for name in ("eval_mpc2.txt", "hist_mpc2.csv", "trace_mpc2.txt", "train_multiview.txt"):
        assert (pipeline.Path(rep) / name).stat().st_size > 0
    attack = pipeline.run_attack(cfg)
    assert attack["samples"] > 0 and 0 <= attack["share_accuracy"] <= 1
    assert main(["eval", "--config", _cfg_file(cfg), "--baseline", "random"]) == EXIT_OK
    assert "random" in capsys.readouterr().out


def _cfg_file(cfg):
    path = pipeline.Path(cfg.out_dir) / "run.cfg"
    path.write_text(cfg.text())
    return str(path)


def test_checkpoints_reload(tiny_run):
    cfg, models = tiny_run
    feats = np.random.default_rng(0).uniform(-1, 1, (6, 288))
    for name, model in models.items():
        np.testing.assert_array_equal(pipeline.load_model(cfg, name).logits(feats), model.logits(feats))


def test_untrained_model_near_chance(tiny_run):
    cfg, _ = tiny_run
    from privnav.model import NavModel

    rep, _ = pipeline.evaluate_baseline(cfg, "plaintext_cam", model=NavModel.init(3), write=False)
    assert rep.success_rate <= 0.3
