"""Configuration, CLI, checkpoints, and metrics plumbing."""

import numpy as np
import pytest

from metareward import checkpoint, cli, metrics
from metareward.config import (ConfigError, config_echo, load_config,
                               effective_episode_params)

TINY_NET = dict(conv_filters=4, fc_width=4, lstm_width=4, precision="float64")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_presets_populate_per_domain_values():
    cfg = load_config(domain="nonstationary_abc")
    assert cfg.entropy_coef == pytest.approx(0.05)
    assert effective_episode_params(cfg) == (10, 1000)
    cfg = load_config(domain="empty_rooms")
    assert cfg.unroll_length == 8
    assert effective_episode_params(cfg) == (100, 200)
    cfg = load_config(domain="key_box")
    assert effective_episode_params(cfg) == (50, 200)
    assert cfg.key_box_variant == "primary"


def test_defaults_match_published_hyperparameters():
    cfg = load_config(domain="fixed_abc")
    assert cfg.alpha == pytest.approx(0.1)
    assert cfg.gamma_bar == pytest.approx(0.9)
    assert cfg.outer_unroll == 5
    assert cfg.gamma == pytest.approx(0.99)
    assert cfg.eta_lr == pytest.approx(0.001)
    assert cfg.value_lr == pytest.approx(0.001)


def test_unknown_config_key_is_rejected_by_name(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[inner]\nalpha = 0.1\nbanana = 2\n")
    with pytest.raises(ConfigError, match="banana"):
        load_config(path=str(path))
    with pytest.raises(ConfigError, match="nonsense"):
        load_config(domain="fixed_abc", overrides={"nonsense": 1})


def test_file_values_override_preset(tmp_path):
    path = tmp_path / "ok.cfg"
    path.write_text("[experiment]\ndomain = random_abc\n"
                    "[inner]\nunroll_length = 9\n")
    cfg = load_config(path=str(path))
    assert cfg.domain_preset == "random_abc"
    assert cfg.unroll_length == 9  # file wins over the preset's 4


def test_config_echo_omits_output_dir():
    echo = config_echo(load_config(domain="fixed_abc",
                                   overrides={"output_dir": "/somewhere"}))
    assert "output_dir" not in echo
    assert "alpha = 0.1" in echo


def test_invalid_enum_values_rejected():
    for key, value in [("objective", "both"), ("precision", "float16"),
                       ("action_mode", "inverted"), ("clock", "cpu")]:
        with pytest.raises(ConfigError):
            load_config(domain="fixed_abc", overrides={key: value})


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _params(rng):
    return {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=3),
            "s": np.asarray(rng.normal())}


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    path1, path2 = tmp_path / "a.irf", tmp_path / "b.irf"
    checkpoint.save(path1, {"reward": _params(rng)}, "cfg echo", "rng summary")
    sections, echo, summary = checkpoint.load(path1)
    checkpoint.save(path2, sections, echo, summary)
    assert path1.read_bytes() == path2.read_bytes()
    assert echo == "cfg echo" and summary == "rng summary"


def test_checkpoint_preserves_values_exactly(tmp_path):
    rng = np.random.default_rng(1)
    original = _params(rng)
    path = tmp_path / "c.irf"
    checkpoint.save(path, {"reward": original})
    loaded = checkpoint.load(path)[0]["reward"]
    for name in original:
        np.testing.assert_array_equal(loaded[name], np.asarray(original[name]))


def test_checkpoint_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.irf"
    path.write_bytes(b"NOTIT" + b"\0" * 20)
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.load(path)
    good = tmp_path / "good.irf"
    checkpoint.save(good, {"reward": _params(np.random.default_rng(2))})
    good.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.load(good)


def test_checkpoint_shape_validation(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "d.irf"
    checkpoint.save(path, {"reward": _params(rng)})
    tensors = checkpoint.load(path)[0]["reward"]
    checkpoint.validate_shapes(tensors, _params(rng))  # matching: fine
    with pytest.raises(checkpoint.CheckpointError, match="shape mismatch"):
        checkpoint.validate_shapes(tensors, {**_params(rng), "w": np.zeros((2, 2))})
    with pytest.raises(checkpoint.CheckpointError, match="names mismatch"):
        checkpoint.validate_shapes(tensors, {"w": np.zeros((3, 4))})


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _row(**overrides):
    row = dict(phase="train", step=1, lifetime=2, seed=3, episode_return=0.5,
               lifetime_return=7.0, intrinsic_reward=0.1, entropy=1.3, wall_ms=12)
    row.update(overrides)
    return row


def test_metrics_round_trip(tmp_path):
    path = tmp_path / "m.csv"
    with metrics.MetricsWriter(path) as writer:
        writer.write(_row())
        writer.write(_row(phase="eval", step=2))
    rows = metrics.read_rows(path)
    assert len(rows) == 2
    assert rows[0]["episode_return"] == pytest.approx(0.5)
    assert rows[1]["phase"] == "eval"


def test_metrics_rejects_nan_and_bad_schema(tmp_path):
    with metrics.MetricsWriter(tmp_path / "m.csv") as writer:
        with pytest.raises(metrics.MetricsError, match="non-finite"):
            writer.write(_row(entropy=float("nan")))
        with pytest.raises(metrics.MetricsError, match="phase"):
            writer.write(_row(phase="test"))
        bad = _row()
        del bad["entropy"]
        with pytest.raises(metrics.MetricsError, match="schema"):
            writer.write(bad)


def test_heatmap_emission(tmp_path):
    path = tmp_path / "h.csv"
    metrics.emit_heatmap(path, np.zeros((2, 3), dtype=np.int64))
    assert path.read_text() == "0,0,0\n0,0,0\n"
    metrics.emit_heatmap(path, np.array([[1, 0], [2, 3]]))
    assert path.read_text() == "1,0\n2,3\n"
    with pytest.raises(metrics.MetricsError):
        metrics.emit_heatmap(path, np.zeros((2, 2)))  # floats rejected


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _train_args(tmp_path, seed=5, updates=4, out="run"):
    return ["train", "--domain", "fixed_abc", "--seed", str(seed),
            "--out", str(tmp_path / out), "--clock", "none",
            "--meta-updates", str(updates), "--config", str(tmp_path / "tiny.cfg")]


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(
        "[env]\nroom_size = 3\nepisode_time_limit = 5\nepisodes_per_lifetime = 2\n"
        "[networks]\nconv_filters = 4\nfc_width = 4\nlstm_width = 4\n"
        "precision = float64\n"
        "[meta]\nbatch_lifetimes = 1\n"
        "[experiment]\nlog_interval = 2\ncheckpoint_interval = 100\n")
    return path


def test_cli_train_writes_expected_files(tmp_path, tiny_cfg):
    assert cli.main(_train_args(tmp_path)) == 0
    out = tmp_path / "run"
    metrics_file = out / "metrics_train_seed5.csv"
    ckpt = out / "checkpoint_seed5_final.irf"
    assert metrics_file.exists() and ckpt.exists()
    rows = metrics.read_rows(metrics_file)
    assert len(rows) == 4 // 2  # meta_updates / log_interval


def test_cli_train_is_bit_deterministic(tmp_path, tiny_cfg):
    assert cli.main(_train_args(tmp_path, out="r1")) == 0
    assert cli.main(_train_args(tmp_path, out="r2")) == 0
    for name in ("metrics_train_seed5.csv", "checkpoint_seed5_final.irf"):
        a = (tmp_path / "r1" / name).read_bytes()
        b = (tmp_path / "r2" / name).read_bytes()
        assert a == b, name


def test_cli_eval_runs_from_checkpoint(tmp_path, tiny_cfg):
    assert cli.main(_train_args(tmp_path)) == 0
    ckpt = tmp_path / "run" / "checkpoint_seed5_final.irf"
    code = cli.main(["eval", "--checkpoint", str(ckpt), "--domain", "fixed_abc",
                     "--config", str(tiny_cfg), "--lifetimes", "2",
                     "--out", str(tmp_path / "ev"), "--seed", "5"])
    assert code == 0
    assert (tmp_path / "ev" / "metrics_eval_intrinsic_seed5.csv").exists()
    assert (tmp_path / "ev" / "heatmap_eval_intrinsic_seed5.csv").exists()


def test_cli_eval_never_mutates_the_reward(tmp_path, tiny_cfg):
    assert cli.main(_train_args(tmp_path)) == 0
    ckpt = tmp_path / "run" / "checkpoint_seed5_final.irf"
    before = ckpt.read_bytes()
    cli.main(["eval", "--checkpoint", str(ckpt), "--domain", "fixed_abc",
              "--config", str(tiny_cfg), "--lifetimes", "1",
              "--out", str(tmp_path / "ev2"), "--seed", "5"])
    assert ckpt.read_bytes() == before


def test_cli_unknown_config_key_names_it(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[inner]\nwidget = 1\n")
    code = cli.main(["train", "--domain", "fixed_abc", "--config", str(bad)])
    assert code != 0
    assert "widget" in capsys.readouterr().err


def test_cli_heuristic_rejected_off_domain(tmp_path, capsys):
    code = cli.main(["baseline", "--method", "heuristic", "--domain", "fixed_abc",
                     "--out", str(tmp_path)])
    assert code != 0


def test_cli_baseline_heuristic(tmp_path):
    code = cli.main(["baseline", "--method", "heuristic", "--domain", "random_abc",
                     "--lifetimes", "3", "--out", str(tmp_path / "b"), "--seed", "1"])
    assert code == 0
    rows = metrics.read_rows(tmp_path / "b" / "metrics_baseline_heuristic_seed1.csv")
    assert rows and all(r["phase"] == "eval" for r in rows)


def test_cli_missing_checkpoint_fails_cleanly(tmp_path, capsys):
    code = cli.main(["eval", "--checkpoint", str(tmp_path / "nope.irf"),
                     "--domain", "fixed_abc"])
    assert code != 0


# ---------------------------------------------------------------------------
# gradcheck subcommand
# ---------------------------------------------------------------------------


def test_cli_gradcheck_exit_codes(monkeypatch):
    from metareward import gradcheck as gc
    monkeypatch.setattr(gc, "run_all", lambda scale, corrupt: True)
    assert cli.main(["gradcheck"]) == 0
    monkeypatch.setattr(gc, "run_all", lambda scale, corrupt: False)
    assert cli.main(["gradcheck"]) == 1


def test_corrupted_meta_gradient_is_detected():
    """Negative control: a wrong gradient must breach the threshold."""
    from metareward import gradcheck as gc
    assert gc.check_meta_gradient(seed=0, corrupt=True) > gc.META_TOL
