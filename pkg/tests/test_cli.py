import json

import numpy as np
import pytest

from mambaicl.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main
from mambaicl.config import from_dict, load_config
from mambaicl.errors import ValidationError
from mambaicl.plot import render_svg
from mambaicl.pretraining import load_checkpoint
from mambaicl.results import ResultRow, parse_rows, read_report, read_rows

ZERO_ERR_HE3 = 0.6164602258814763

TINY = """seed = 7
[task]
d = 4
r = 2
[train]
t1 = 50
t2 = 50
n_pt = 100
m = 64
[eval]
n_test = [1, 5, 10]
tasks = 4
prompts_per_task = 16
models = ["mamba_mlp", "zero"]
[diagnose]
n = 100
prompts = 50
mc_samples = 100000
oracle_samples = 2000
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def run(*args):
    return main([str(a) for a in args])


class TestConfig:
    def test_defaults(self):
        cfg = from_dict({})
        assert cfg.task.link == "he3" and cfg.gating.rho == 0.75 and cfg.train.eta == "auto"

    def test_seed_override(self, tiny):
        assert load_config(tiny).seed == 7
        assert load_config(tiny, seed=3).seed == 3

    def test_all_problems_reported(self):
        with pytest.raises(ValidationError) as exc:
            from_dict({"task": {"d": 2, "r": 5, "tau": -1.0}, "eval": {"metric": "huber"}, "bogus": {}})
        text = "\n".join(exc.value.problems)
        for field in ("task.r", "task.tau", "eval.metric", "bogus"):
            assert field in text

    def test_out_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv("MAMBAICL_OUT", str(tmp_path / "env"))
        assert from_dict({}).out_dir() == tmp_path / "env"
        assert from_dict({}).out_dir(tmp_path / "cli") == tmp_path / "cli"


class TestPipeline:
    def test_end_to_end(self, tiny, tmp_path):
        out = tmp_path / "run"
        assert run("pretrain", "--config", tiny, "--out", out) == EXIT_OK
        ck = load_checkpoint(out / "checkpoint.json")
        assert ck.d_tilde == 15
        assert run("sweep", "--config", tiny, "--out", out) == EXIT_OK
        rows = read_rows(out / "sweep.csv")
        assert len(rows) == 6
        assert {(r.model, r.n_context) for r in rows} == {(m, n) for m in ("mamba_mlp", "zero") for n in (1, 5, 10)}
        assert run("diagnose", "--config", tiny, "--out", out) == EXIT_OK
        rep = read_report(out / "diagnostics.csv")
        assert set(rep) == {"oracle", "feature_fit", "alignment", "exponent_reduction"}
        assert isinstance(rep["alignment"]["pass"], bool)
        manifest = json.loads((out / "pretrain_manifest.json").read_text())
        assert manifest["config"]["seed"] == 7
        assert run("plot", out / "sweep.csv") == EXIT_OK
        svg = (out / "sweep.svg").read_text()
        assert svg.count("<polyline") == 2

    def test_checkpoint_is_reproducible(self, tiny, tmp_path):
        assert run("pretrain", "--config", tiny, "--out", tmp_path / "a") == EXIT_OK
        assert run("pretrain", "--config", tiny, "--out", tmp_path / "b", "--workers", 3) == EXIT_OK
        assert (tmp_path / "a/checkpoint.json").read_bytes() == (tmp_path / "b/checkpoint.json").read_bytes()

    def test_zero_row_matches_oracle(self, tmp_path):
        cfg = tmp_path / "z.toml"
        cfg.write_text('[task]\nd = 4\nr = 2\ntau = 0.0\n[eval]\nn_test = [3]\ntasks = 64\nprompts_per_task = 256\nmodels = ["zero"]\n')
        assert run("sweep", "--config", cfg, "--out", tmp_path) == EXIT_OK
        (row,) = read_rows(tmp_path / "sweep.csv")
        assert abs(row.mean_err - ZERO_ERR_HE3) < 3 * row.std_err / np.sqrt(64)

    def test_invalid_config_exit(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[task]\nd = 2\nr = 5\n[train]\nm = 0\n")
        assert run("pretrain", "--config", cfg, "--out", tmp_path) == EXIT_VALIDATION
        err = capsys.readouterr().err
        assert "task.r" in err and "train.m" in err

    def test_dimension_mismatch(self, tiny, tmp_path):
        assert run("pretrain", "--config", tiny, "--out", tmp_path) == EXIT_OK
        other = tmp_path / "d6.toml"
        other.write_text(TINY.replace("d = 4", "d = 6"))
        assert run("sweep", "--config", other, "--out", tmp_path, "--checkpoint", tmp_path / "checkpoint.json") == EXIT_VALIDATION

    def test_missing_checkpoint(self, tiny, tmp_path):
        assert run("sweep", "--config", tiny, "--out", tmp_path / "none") == EXIT_VALIDATION

    def test_bad_workers(self, tiny, tmp_path):
        assert run("pretrain", "--config", tiny, "--out", tmp_path, "--workers", 0) == EXIT_VALIDATION

    def test_selftest(self, capsys):
        assert run("selftest") == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 6 and all(l.startswith("PASS") for l in lines)
        assert EXIT_NUMERICAL == 3


class TestPlotAndCsv:
    ROWS = [
        ResultRow("b", 1, 4, 2, 0, 0.5, 0.1, "abs"),
        ResultRow("a", 1, 4, 2, 0, 0.9, 0.2, "abs"),
        ResultRow("a", 5, 4, 2, 0, 0.4, 0.1, "abs"),
        ResultRow("b", 5, 4, 2, 0, 0.3, 0.0, "abs"),
    ]

    def test_deterministic(self):
        assert render_svg(self.ROWS) == render_svg(self.ROWS[::-1])
        assert render_svg(self.ROWS).count("<polyline") == 2

    def test_empty(self, tmp_path):
        with pytest.raises(ValidationError):
            render_svg([])
        p = tmp_path / "empty.csv"
        p.write_text("")
        assert run("plot", p) == EXIT_VALIDATION

    def test_malformed_line_number(self):
        text = "model,n_context,d,r,seed,mean_err,std_err,metric\nzero,1,4,2,0,0.5,0.1,abs\nzero,x,4,2,0,0.5,0.1,abs\n"
        with pytest.raises(ValidationError, match=":3:"):
            parse_rows(text)

    def test_bad_header(self):
        with pytest.raises(ValidationError, match=":1:"):
            parse_rows("a,b\n")
