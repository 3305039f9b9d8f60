import os

import numpy as np
import pytest

from weightflow.cli import main
from weightflow.config import parse_config
from weightflow.errors import ConfigError
from weightflow.pipeline import read_manifest

QUICK = """\
[run]
task = blobs
out_dir = {out}
seed = 1

[arch]
layer_dims = 4,8,3

[population]
size = 3
base_seed = 10
epochs = 10

[flow]
hidden_dim = 16
iterations = 100
integration_steps = 10

[generate]
count = 2
"""


@pytest.fixture
def quick_cfg(tmp_path):
    out = tmp_path / "run"
    cfg_path = tmp_path / "cfg.ini"
    cfg_path.write_text(QUICK.format(out=out))
    return str(cfg_path), str(out)


class TestConfig:
    def test_parse_defaults(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[run]\ntask = iris\n")
        cfg = parse_config(p)
        assert cfg.task == "iris"
        assert cfg.population_size == 50
        assert cfg.flow["hidden_dim"] == 256

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[run]\ntask = iris\nbogus = 1\n")
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config(p)

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[nope]\nx = 1\n")
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config(p)

    def test_bad_value(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[population]\nsize = many\n")
        with pytest.raises(ConfigError):
            parse_config(p)

    def test_mnist_requires_paths(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[run]\ntask = mnist\n")
        with pytest.raises(ConfigError, match="mnist"):
            parse_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.ini")


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path, capsys):
        p = tmp_path / "c.ini"
        p.write_text("[run]\nbogus = 1\n")
        assert main(["run", "--config", str(p)]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_upstream_is_3(self, quick_cfg, capsys):
        cfg_path, _ = quick_cfg
        assert main(["train-flow", "--config", cfg_path]) == 3
        err = capsys.readouterr().err
        assert "missing upstream artifact" in err and "train-flow" in err

    def test_success_is_0(self, quick_cfg):
        cfg_path, _ = quick_cfg
        assert main(["make-population", "--config", cfg_path]) == 0


class TestStages:
    def test_make_population_manifest(self, quick_cfg):
        cfg_path, out = quick_cfg
        assert main(["make-population", "--config", cfg_path]) == 0
        m = read_manifest(os.path.join(out, "population.manifest"))
        assert m["count"] == "3"
        assert m["seed_0000"] == "10"
        for i in range(3):
            f = m[f"file_{i:04d}"]
            assert os.path.exists(os.path.join(out, f))
            assert 0.0 <= float(m[f"accuracy_{i:04d}"]) <= 1.0

    def test_canonicalize_preserves_accuracy(self, quick_cfg):
        cfg_path, out = quick_cfg
        assert main(["make-population", "--config", cfg_path]) == 0
        assert main(["canonicalize", "--config", cfg_path]) == 0
        m = read_manifest(os.path.join(out, "canonicalize.manifest"))
        for i in range(3):
            before = float(m[f"accuracy_before_{i:04d}"])
            after = float(m[f"accuracy_after_{i:04d}"])
            assert abs(before - after) <= 1e-6

    def test_full_run_writes_report(self, quick_cfg):
        cfg_path, out = quick_cfg
        assert main(["run", "--config", cfg_path]) == 0
        assert os.path.exists(os.path.join(out, "report.txt"))
        assert os.path.exists(os.path.join(out, "diversity.csv"))
        report = open(os.path.join(out, "report.txt")).read()
        assert "original" in report and "generated" in report

    def test_generate_count_zero_noted(self, tmp_path):
        out = tmp_path / "run0"
        cfg_path = tmp_path / "c0.ini"
        cfg_path.write_text(QUICK.format(out=out).replace("count = 2",
                                                          "count = 0"))
        assert main(["run", "--config", str(cfg_path)]) == 0
        report = (out / "report.txt").read_text()
        assert "none" in report

    def test_manifest_chains_hashes(self, quick_cfg):
        cfg_path, out = quick_cfg
        assert main(["run", "--config", cfg_path]) == 0
        m = read_manifest(os.path.join(out, "flow.manifest"))
        assert len(m["input.population"]) == 64  # sha256 hex

    def test_rerun_stage_is_byte_identical(self, quick_cfg):
        cfg_path, out = quick_cfg
        assert main(["make-population", "--config", cfg_path]) == 0
        blob1 = open(os.path.join(out, "population", "ckpt_0000.dwfc"), "rb").read()
        assert main(["make-population", "--config", cfg_path]) == 0
        blob2 = open(os.path.join(out, "population", "ckpt_0000.dwfc"), "rb").read()
        assert blob1 == blob2

    def test_seed_override_changes_samples(self, quick_cfg):
        cfg_path, out = quick_cfg
        for cmd in ("make-population", "canonicalize", "fit-pca", "train-flow"):
            assert main([cmd, "--config", cfg_path]) == 0
        assert main(["generate", "--config", cfg_path]) == 0
        a = open(os.path.join(out, "generated", "gen_0000.dwfc"), "rb").read()
        assert main(["generate", "--config", cfg_path, "--seed", "99"]) == 0
        b = open(os.path.join(out, "generated", "gen_0000.dwfc"), "rb").read()
        assert a != b

    def test_out_flag_overrides(self, quick_cfg, tmp_path):
        cfg_path, _ = quick_cfg
        other = tmp_path / "elsewhere"
        assert main(["make-population", "--config", cfg_path,
                     "--out", str(other)]) == 0
        assert (other / "population.manifest").exists()
