import dataclasses

import pytest

from fracpg import cli
from fracpg.config import (
    ConfigError,
    RunManifest,
    config_from_header,
    config_to_text,
    header_for,
    load_config,
    load_manifest,
    parse_config_text,
)
from fracpg.frac_td import EtaVariant, MuVariant
from fracpg.trainer import Algo, TrainConfig, ValueSign, default_config

FULL = """
# comment
[run]
env = pendulum
algo = a2c
seed = 17
max_episodes = 12
horizon = 50

[optim]
beta_theta = 0.02
value_sign = literal

[fractional]
alpha = 0.6
mu_variant = derivation
eta_variant = gl_consistent

[ablation]
clipping_off = yes
"""


def test_parse_full():
    c = parse_config_text(FULL)
    assert (c.env, c.algo, c.seed, c.max_episodes, c.horizon) == ("pendulum", Algo.A2C, 17, 12, 50)
    assert c.gamma == 0.95  # filled in from the environment
    assert c.beta_theta == 0.02 and c.value_sign is ValueSign.LITERAL
    assert c.mu_variant is MuVariant.DERIVATION and c.eta_variant is EtaVariant.GL_CONSISTENT
    assert c.clipping_off and not c.recursion_off


def test_empty_config_is_default():
    assert parse_config_text("") == default_config("cartpole")


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("[run]\nenv = cartpole\nbogus = 1\n", 3, "unknown key 'bogus'"),
        ("[run]\nalpha = 0.5\n", 2, "belongs in [fractional]"),
        ("[extras]\nx = 1\n", 1, "unknown section"),
        ("seed = 1\n", 1, "outside any [section]"),
        ("[run]\nseed = one\n", 2, "bad value for 'seed'"),
        ("[ablation]\nclipping_off = maybe\n", 2, "expected a boolean"),
        ("[fractional]\nmu_variant = fast\n", 2, "expected one of"),
        ("[run]\nseed = 1\nseed = 2\n", 3, "duplicate key"),
        ("[run]\njust text\n", 2, "malformed line"),
    ],
)
def test_errors_name_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text, "x.cfg")
    assert exc.value.line == line
    assert fragment in str(exc.value)
    assert str(exc.value).startswith(f"x.cfg:{line}: ")


def test_semantic_errors():
    with pytest.raises(ConfigError, match="alpha"):
        parse_config_text("[fractional]\nalpha = 1.2\n")
    with pytest.raises(ConfigError):
        parse_config_text("[run]\nenv = hopper\n")


def test_manifest_section_only_in_files():
    with pytest.raises(ConfigError):
        parse_config_text("[manifest]\ntool_version = 1\n")
    assert parse_config_text("[manifest]\ntool_version = 1\n", allow_manifest=True) == default_config()
    with pytest.raises(ConfigError, match="unknown manifest key"):
        parse_config_text("[manifest]\nnope = 1\n", allow_manifest=True)


def test_text_roundtrip_every_field():
    c = dataclasses.replace(parse_config_text(FULL), gamma=0.1 + 0.2, eps_tol=1e-11, horizon=None, wall_clock=True)
    assert parse_config_text(config_to_text(c)) == c
    assert config_from_header(header_for(c)) == c


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


def test_manifest_roundtrip(tmp_path):
    m = RunManifest(default_config(seed=4), {"metrics": "metrics.csv"}, created="2026-01-01T00:00:00+00:00", config_source="a.cfg")
    m.write(tmp_path / "manifest.cfg")
    back = load_manifest(tmp_path / "manifest.cfg")
    assert back.config == m.config and back.artifacts == m.artifacts
    assert back.created == m.created and back.config_source == "a.cfg" and back.seed == 4


# ---------------------------------------------------------------- CLI


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("[run]\nenv = cartpole\nmax_episodes = 4\n")
    return p


def test_train_writes_outputs_and_replays_from_manifest(cfg_file, tmp_path, capsys):
    out = tmp_path / "r1"
    assert cli.main(["train", "--config", str(cfg_file), "--seed", "42", "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"metrics.csv", "checkpoint.txt", "manifest.cfg"}
    assert "# seed=42" in (out / "metrics.csv").read_text()
    out2 = tmp_path / "r2"
    assert cli.main(["train", "--config", str(out / "manifest.cfg"), "--out", str(out2)]) == 0
    assert (out / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()


def test_out_root_from_environment(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV_VAR, str(tmp_path / "envroot"))
    assert cli.main(["train", "--config", str(cfg_file)]) == 0
    assert (tmp_path / "envroot" / "metrics.csv").exists()


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nenv = cartpole\nbogus = 1\n")
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "bad.cfg:3: unknown key 'bogus' in [run]" in capsys.readouterr().err


def test_numerical_abort_exit_code(tmp_path):
    cfg = tmp_path / "hot.cfg"
    cfg.write_text(
        "[run]\nmax_episodes = 30\n[optim]\nbeta_theta = 1e300\nbeta_v = 1e300\n"
        "[fractional]\neta_variant = gl_consistent\n[ablation]\nclipping_off = true\n"
    )
    with pytest.warns(RuntimeWarning):
        code = cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert (tmp_path / "o" / "checkpoint.txt").exists()


@pytest.mark.parametrize("argv", [["kernel-check", "--alpha", "1.5"], ["kernel-check", "--alpha", "0"], ["frobnicate"], ["train"]])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_kernel_check_short_horizon_warns(capsys):
    assert cli.main(["kernel-check", "--alpha", "0.5", "--steps", "10"]) == 0
    assert "warning" in capsys.readouterr().err


def test_kernel_check_writes_report(tmp_path, capsys):
    out = tmp_path / "report.csv"
    code = cli.main(["kernel-check", "--alpha", "0.5", "--steps", "200", "--seeds", "2", "--out", str(out)])
    assert code in (0, 3)
    assert out.exists() and "clipping bound violations 0" in capsys.readouterr().out


def test_alpha_grid():
    assert cli.parse_alpha_grid("0.5:0.9:0.05") == pytest.approx([0.5 + 0.05 * i for i in range(9)])
    assert cli.parse_alpha_grid("0.5,0.65") == [0.5, 0.65]


def test_bench_and_sweep(tmp_path, capsys):
    out = tmp_path / "b"
    argv = ["bench", "--env", "cartpole", "--algos", "fpg,a2c", "--seeds", "2", "--episodes", "3", "--out", str(out)]
    assert cli.main(argv) == 0
    assert (out / "summary.csv").exists() and (out / "plot_data.csv").exists()
    assert sorted(p.name for p in (out / "runs" / "fpg").iterdir()) == ["seed0.csv", "seed1.csv"]
    assert cli.main(["bench", "--env", "cartpole", "--seeds", "1", "--out", str(out)]) == 1
    assert cli.main(["bench", "--env", "cartpole", "--algos", "trpo", "--out", str(out)]) == 1
    s = tmp_path / "s"
    assert cli.main(["sweep", "--env", "cartpole", "--alpha", "0.6,0.7", "--seeds", "2", "--episodes", "2", "--out", str(s)]) == 0
    lines = (s / "sweep.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[1].startswith("alpha,")


def test_config_fields_are_all_documented():
    from pathlib import Path

    doc = (Path(__file__).resolve().parents[1] / "docs" / "config.md").read_text()
    for f in dataclasses.fields(TrainConfig):
        assert f"`{f.name}`" in doc
