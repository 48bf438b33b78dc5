import re
from pathlib import Path

import pytest

from mtkd_rl import config as cfgmod
from mtkd_rl.cli import ablation_grid, main
from mtkd_rl.errors import ConfigError
from mtkd_rl.state import PRESETS

TINY = """\
seed = 1
# small enough to run in well under a second
[data]
samples_per_class = 20
shard_samples_per_class = 30
test_fraction = 0.5
[teachers]
hidden = 16, 16, 12, 12
epochs = 2
[train]
epochs = 3
batch_size = 16
student_hidden = 8
agent_hidden = 8
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "tiny.ini").write_text(TINY)
    return tmp_path


def run(workdir, *argv):
    return main(["--config", str(workdir / "tiny.ini"), "--out", str(workdir), *argv])


class TestConfigParsing:
    def test_defaults_without_file(self):
        cfg = cfgmod.load_config(None)
        assert cfg.train.kd.alpha == 1.0 and cfg.train.kd.beta == 5.0 and cfg.train.epochs == 60

    def test_values_land_in_sections(self):
        cfg = cfgmod.parse_config_text(TINY + "[kd]\nalpha = 0.5\ntemperature = 2\n")
        assert cfg.seed == 1 and cfg.teachers.seed == 1 and cfg.train.seed == 1
        assert cfg.teachers.hidden == [[16], [16], [12], [12]]
        assert cfg.train.kd.alpha == 0.5 and cfg.train.kd.temperature == 2.0
        assert cfg.data.samples_per_class == 20

    def test_state_mask_and_tuples(self):
        cfg = cfgmod.parse_config_text("[train]\nstate_mask = gaps\n[data]\nnoise_rates = 0, 0.2, 0.3, 0.5\n")
        assert cfg.train.state_mask == PRESETS["gaps"]
        assert cfg.data.noise_rates == (0.0, 0.2, 0.3, 0.5)

    @pytest.mark.parametrize("text,key,line", [
        ("seed = 1\n[train]\nepochs = 3\nwarp = 9\n", "train.warp", 4),
        ("[nosuch]\n", "nosuch", 1),
        ("colour = red\n", "colour", 1),
        ("[train]\nepochs = many\n", "train.epochs", 2),
        ("[kd]\nalpha = 1\nalpha = 2\n", "kd.alpha", 3),
    ])
    def test_errors_name_key_and_line(self, text, key, line):
        with pytest.raises(ConfigError) as info:
            cfgmod.parse_config_text(text)
        assert info.value.key == key and info.value.line == line
        assert f"line {line}" in str(info.value)

    def test_invalid_value_reports_line(self):
        with pytest.raises(ConfigError) as info:
            cfgmod.parse_config_text("\n[train]\nbatch_size = 0\n")
        assert info.value.line == 3

    def test_noise_rates_must_match_teachers(self):
        with pytest.raises(ConfigError):
            cfgmod.parse_config_text("[data]\nnoise_rates = 0, 0.1\n")

    def test_round_trip(self):
        cfg = cfgmod.parse_config_text(TINY + "[kd]\nbeta = 2.5\n")
        again = cfgmod.parse_config_text(cfgmod.to_text(cfg))
        assert again == cfg

    def test_train_seed_override(self):
        cfg = cfgmod.parse_config_text("seed = 4\n[train]\nseed = 9\n")
        assert cfg.teachers.seed == 4 and cfg.train.seed == 9

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            cfgmod.load_config(tmp_path / "missing.ini")


class TestCli:
    def test_train_teachers_writes_checkpoint(self, workdir, capsys):
        assert run(workdir, "train-teachers") == 0
        out = capsys.readouterr().out
        assert (workdir / "teachers.mtkd").is_file()
        assert len([ln for ln in out.splitlines() if re.match(r"^[1-4]\s", ln)]) == 4

    def test_train_teachers_is_byte_stable(self, workdir):
        assert run(workdir, "train-teachers") == 0
        first = (workdir / "teachers.mtkd").read_bytes()
        assert run(workdir, "train-teachers") == 0
        assert (workdir / "teachers.mtkd").read_bytes() == first

    def test_distill_three_seeds(self, workdir, capsys):
        run(workdir, "train-teachers")
        capsys.readouterr()
        assert run(workdir, "distill", "--strategy", "aver", "--seeds", "3") == 0
        out = capsys.readouterr().out
        csvs = sorted((workdir / "aver").glob("seed*/metrics.csv"))
        assert [p.parent.name for p in csvs] == ["seed1", "seed2", "seed3"]
        assert re.search(r"aver: \d\.\d{4} ± \d\.\d{4} over 3 seed", out)

    def test_config_echo_reloads(self, workdir):
        run(workdir, "train-teachers")
        assert run(workdir, "distill", "--strategy", "rl", "--seed", "5") == 0
        echoed = cfgmod.load_config(workdir / "rl" / "seed5" / "config.ini")
        assert echoed.train.seed == 5 and echoed.teachers.hidden == [[16], [16], [12], [12]]

    def test_baseline_needs_no_checkpoint(self, workdir):
        assert run(workdir, "distill", "--strategy", "baseline") == 0

    def test_missing_checkpoint_names_path(self, workdir, capsys):
        assert run(workdir, "distill", "--strategy", "rl") == 1
        assert str(workdir / "teachers.mtkd") in capsys.readouterr().err

    def test_missing_out_dir(self, workdir):
        assert main(["--config", str(workdir / "tiny.ini"), "--out", str(workdir / "nope"), "train-teachers"]) != 0

    @pytest.mark.parametrize("argv", [
        ["distill", "--strategy", "best"],
        ["distill", "--seeds", "0"],
        ["ablate", "--axis", "colour"],
        ["frobnicate"],
        [],
    ])
    def test_usage_errors_exit_2(self, workdir, argv):
        assert run(workdir, *argv) == 2

    def test_bad_config_exit_2(self, workdir, capsys):
        (workdir / "bad.ini").write_text("[train]\nwarp = 1\n")
        assert main(["--config", str(workdir / "bad.ini"), "--out", str(workdir), "train-teachers"]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_flags_after_verb(self, workdir):
        assert main(["train-teachers", "--config", str(workdir / "tiny.ini"), "--out", str(workdir)]) == 0

    def test_ablate_state_axis(self, workdir, capsys):
        assert run(workdir, "ablate", "--axis", "state") == 0
        out = capsys.readouterr().out
        for label in ("state-performance", "state-gaps", "state-all"):
            assert label in out
        assert (workdir / "ablate-state" / "table.csv").is_file()

    def test_report_verb(self, workdir, capsys):
        run(workdir, "train-teachers")
        for s in ("baseline", "aver"):
            run(workdir, "distill", "--strategy", s)
        out = workdir / "rep"
        assert main(["--out", str(out), "report", str(workdir)]) == 0
        assert (out / "table.txt").is_file() and (out / "accuracy.svg").is_file()

    def test_report_without_metrics(self, workdir):
        assert main(["--out", str(workdir / "rep"), "report", str(workdir)]) == 1


class TestAblationGrid:
    def test_axes(self):
        cfg = cfgmod.ExperimentConfig()
        assert [c[0] for c in ablation_grid("strategy", cfg, 4)] == ["baseline", "aver", "conf", "div", "rl"]
        assert len(ablation_grid("alpha-beta", cfg, 4)) == 9
        assert [c[3] for c in ablation_grid("teachers", cfg, 3)] == [(0,), (0, 1), (0, 1, 2)]
        modes = [c[2].train.gamma_mode for c in ablation_grid("gamma", cfg, 4)]
        assert modes == ["constant", "learnable", "constant"]

    def test_alpha_beta_cells_apply(self):
        cells = ablation_grid("alpha-beta", cfgmod.ExperimentConfig(), 4)
        pairs = {(c[2].train.kd.alpha, c[2].train.kd.beta) for c in cells}
        assert pairs == {(a, b) for a in (0.5, 1.0, 2.0) for b in (1.0, 5.0, 10.0)}


def test_entry_point_declared():
    text = (Path(__file__).resolve().parents[1] / "pyproject.toml").read_text()
    assert "mtkd-rl" in text
