"""Config parsing and the command line pipeline end to end (tiny settings)."""

import numpy as np
import pytest

from tokenroll.cli import main
from tokenroll.config import config_help, model_config_from, run_config, train_config_from
from tokenroll.errors import ConfigError

TINY = [
    "--set", "frames=2",
    "--set", "height=16",
    "--set", "width=16",
    "--set", "max_text=8",
    "--set", "dim=16",
    "--set", "layers=2",
    "--set", "heads=2",
    "--set", "steps=2",
    "--set", "batch_size=4",
    "--set", "log_every=1",
    "--set", "eval_holdout=4",
    "--set", "finetune_pairs=8",
]


# ------------------------------------------------------------------- config


def test_run_config_defaults_and_types():
    cfg = run_config()
    assert cfg["dim"] == 64 and cfg["steps"] == 2000
    assert isinstance(cfg["lr"], float) and isinstance(cfg["use_pos_embed"], bool)
    cfg = run_config("dim = 128\nuse_pos_embed = false\nlr = 3e-4\n")
    assert cfg["dim"] == 128 and cfg["use_pos_embed"] is False and cfg["lr"] == 3e-4


def test_run_config_comments_and_overrides():
    text = "# a comment\ndim = 32  # trailing\n\nsteps = 10\n"
    cfg = run_config(text, overrides=["steps=20", "heads=2"])
    assert cfg["dim"] == 32 and cfg["steps"] == 20 and cfg["heads"] == 2


def test_run_config_rejects_unknown_keys_listing_them():
    with pytest.raises(ConfigError) as err:
        run_config("dim = 32\nlayrs = 2\nwidht = 16\n")
    msg = str(err.value)
    assert "layrs" in msg and "widht" in msg


def test_run_config_rejects_bad_lines_and_values():
    with pytest.raises(ConfigError, match="key = value"):
        run_config("dim 32\n")
    with pytest.raises(ConfigError, match="duplicate"):
        run_config("dim = 32\ndim = 64\n")
    with pytest.raises(ConfigError, match="integer"):
        run_config("dim = small\n")
    with pytest.raises(ConfigError, match="true/false"):
        run_config("use_pos_embed = yes\n")
    with pytest.raises(ConfigError, match="key=value"):
        run_config(None, overrides=["dim"])


def test_config_builders():
    cfg = run_config("dim = 16\nheads = 2\nroll_ratio = 0.5\nsteps = 7\ndtype = float32\n")
    model = model_config_from(cfg, vocab_size=19)
    assert model.dim == 16 and model.rolling.ratio == 0.5 and model.vocab_size == 19
    train = train_config_from(cfg)
    assert train.steps == 7 and train.dtype == "float32"


def test_config_help_lists_every_key():
    text = config_help()
    for key in ("dim", "roll_ratio", "eval_holdout", "p_neg"):
        assert key in text


# ----------------------------------------------------------------- pipeline


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus") / "clips"
    rc = main(
        [
            "gen-corpus",
            "--out", str(out),
            "--count", "12",
            "--seed", "3",
            "--frames", "2",
            "--height", "16",
            "--width", "16",
        ]
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(corpus_dir, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("run") / "model.ckpt"
    rc = main(
        ["pretrain", "--corpus", str(corpus_dir), "--out", str(ckpt), "--seed", "1", *TINY]
    )
    assert rc == 0
    assert ckpt.exists()
    assert ckpt.with_suffix(".ckpt.log").exists()
    return ckpt


def test_gen_corpus_layout(corpus_dir):
    names = {p.name for p in corpus_dir.iterdir()}
    assert names == {"manifest", "vocab.txt", "clips.bin", "captions.jsonl"}


def test_eval_mc_runs_and_is_deterministic(checkpoint, corpus_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        rc = main(
            [
                "eval-mc",
                "--corpus", str(corpus_dir),
                "--checkpoint", str(checkpoint),
                "--out", str(out),
                *TINY,
            ]
        )
        assert rc == 0
    assert (a / "report.txt").read_text() == (b / "report.txt").read_text()
    assert (a / "timing.txt").exists()


def test_eval_cloze_slot_flag(checkpoint, corpus_dir, tmp_path):
    rc = main(
        [
            "eval-cloze",
            "--corpus", str(corpus_dir),
            "--checkpoint", str(checkpoint),
            "--out", str(tmp_path / "cz"),
            "--slot", "color",
            *TINY,
        ]
    )
    assert rc == 0
    text = (tmp_path / "cz" / "report.txt").read_text()
    assert "kind = cloze_color" in text


def test_eval_retrieval_and_attn_dist(checkpoint, corpus_dir, tmp_path):
    rc = main(
        [
            "eval-retrieval",
            "--corpus", str(corpus_dir),
            "--checkpoint", str(checkpoint),
            "--out", str(tmp_path / "ret"),
            *TINY,
        ]
    )
    assert rc == 0
    lines = (tmp_path / "ret" / "report.txt").read_text().splitlines()
    assert "forwards = 8" in lines  # 2 * eval_holdout
    rc = main(
        [
            "attn-dist",
            "--corpus", str(corpus_dir),
            "--checkpoint", str(checkpoint),
            "--out", str(tmp_path / "ad"),
            *TINY,
        ]
    )
    assert rc == 0
    assert "kind = attention_distribution" in (tmp_path / "ad" / "report.txt").read_text()


def test_finetune_then_eval(checkpoint, corpus_dir, tmp_path):
    tuned = tmp_path / "tuned.ckpt"
    rc = main(
        [
            "finetune-retrieval",
            "--corpus", str(corpus_dir),
            "--checkpoint", str(checkpoint),
            "--out", str(tuned),
            "--seed", "2",
            *TINY,
        ]
    )
    assert rc == 0
    assert tuned.exists()
    rc = main(
        [
            "eval-retrieval",
            "--corpus", str(corpus_dir),
            "--checkpoint", str(tuned),
            "--out", str(tmp_path / "ret2"),
            *TINY,
        ]
    )
    assert rc == 0


def test_bench_flops_csv(tmp_path):
    out = tmp_path / "bench.csv"
    rc = main(["bench-flops", "--out", str(out), "--reps", "1", "--frames", "2"])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("mode,")
    assert len(lines) == 4  # header + three modes


def test_cli_reports_domain_errors(tmp_path, capsys):
    rc = main(
        [
            "eval-mc",
            "--corpus", str(tmp_path / "missing"),
            "--checkpoint", str(tmp_path / "nope.ckpt"),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_cli_rejects_bad_config_key(corpus_dir, tmp_path, capsys):
    rc = main(
        [
            "pretrain",
            "--corpus", str(corpus_dir),
            "--out", str(tmp_path / "x.ckpt"),
            "--set", "dimension=64",
        ]
    )
    assert rc == 2
    assert "dimension" in capsys.readouterr().err


def test_config_help_command(capsys):
    rc = main(["config-help"])
    assert rc == 0
    assert "roll_ratio" in capsys.readouterr().out


def test_pretrain_float32_pipeline(corpus_dir, tmp_path):
    ckpt = tmp_path / "f32.ckpt"
    rc = main(
        [
            "pretrain",
            "--corpus", str(corpus_dir),
            "--out", str(ckpt),
            "--seed", "5",
            *TINY,
            "--set", "dtype=float32",
        ]
    )
    assert rc == 0
    from tokenroll.model import load_checkpoint

    params, _ = load_checkpoint(ckpt, dtype=np.float32)
    assert params["word_embed"].values.dtype == np.float32
