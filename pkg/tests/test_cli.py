"""End-to-end tests of the command-line surface."""

import json
import os

import numpy as np
import pytest

from core.linalg import make_rng
from main import EXIT_DATA, EXIT_OK, EXIT_PIPELINE, EXIT_USAGE, cli_dispatch
from storage.archive import TensorArchive, read_archive, write_archive
from tests.conftest import TINY_CONFIG

BERT_TABLE_CONFIG = {
    "model": {"vocab_size": 8, "seq_len": 128, "d_model": 768, "n_heads": 12, "d_ff": 3072,
              "n_layers": 12, "n_classes": 2},
    "adapter": {"rank": 8, "n_keep": 0, "targets": ["q", "k", "v", "o"]},
}


def write_json(path, data):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f)
    return path


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


class TestUsage:
    """Usage errors exit with 1."""

    def test_unknown_flag(self, tiny_config_path, temp_dir, capsys):
        """Test an unrecognised option."""
        code = cli_dispatch(["plan", "--config", tiny_config_path, "--out", "x.json", "--bogus"])
        assert code == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_missing_command(self):
        """Test that a subcommand is required."""
        assert cli_dispatch([]) == EXIT_USAGE

    def test_missing_required(self):
        """Test a missing required option."""
        assert cli_dispatch(["plan", "--out", "x.json"]) == EXIT_USAGE

    def test_bad_levels(self, tiny_config_path, temp_dir):
        """Test malformed sweep levels."""
        code = cli_dispatch(["sweep", "--config", tiny_config_path, "--pretrained", "absent.dsee",
                             "--levels", "0.5,abc", "--out", os.path.join(temp_dir, "s.json")])
        assert code == EXIT_USAGE

    def test_bad_seed_env(self, tiny_config_path, temp_dir, monkeypatch):
        """Test that a malformed DSEE_SEED is a data error."""
        monkeypatch.setattr("config.DSEE_SEED", "abc")
        code = cli_dispatch(["plan", "--config", tiny_config_path, "--out", os.path.join(temp_dir, "b.json")])
        assert code == EXIT_DATA


class TestPlan:
    """Tests for the plan command."""

    def test_all_projections_rank8(self, temp_dir):
        """Test the 589,824-parameter budget."""
        cfg = write_json(os.path.join(temp_dir, "cfg.json"), BERT_TABLE_CONFIG)
        out = os.path.join(temp_dir, "budget.json")
        assert cli_dispatch(["plan", "--config", cfg, "--out", out]) == EXIT_OK
        with open(out, encoding="utf-8") as f:
            assert json.load(f)["trainable_params"] == 589824

    def test_sites_table(self, temp_dir):
        """Test the per-site breakdown written next to the budget."""
        cfg = write_json(os.path.join(temp_dir, "cfg.json"), BERT_TABLE_CONFIG)
        table = os.path.join(temp_dir, "sites.dat")
        assert cli_dispatch(["plan", "--config", cfg, "--out", os.path.join(temp_dir, "b.json"),
                             "--sites", table]) == EXIT_OK
        with open(table, encoding="utf-8") as f:
            lines = f.read().splitlines()
        assert lines[0] == "# name m n r card masked_fraction"
        assert len(lines) == 1 + 48
        assert lines[1].split()[:5] == ["layers.0.attn.q", "768", "768", "8", "0"]

    def test_bad_config(self, temp_dir):
        """Test that unknown config keys exit with 2."""
        cfg = write_json(os.path.join(temp_dir, "cfg.json"), {"adapter": {"rnak": 2}})
        assert cli_dispatch(["plan", "--config", cfg, "--out", os.path.join(temp_dir, "b.json")]) == EXIT_DATA

    def test_missing_config(self, temp_dir):
        """Test that a missing config file exits with 2."""
        code = cli_dispatch(["plan", "--config", os.path.join(temp_dir, "absent.json"),
                             "--out", os.path.join(temp_dir, "b.json")])
        assert code == EXIT_DATA


class TestDecompose:
    """Tests for the decompose command."""

    @pytest.fixture
    def weights(self, temp_dir):
        """An archive with one planted 16x16 matrix and one integer tensor."""
        rng = make_rng(0)
        w = rng.standard_normal((16, 1)) @ rng.standard_normal((1, 16))
        w[2, 3] += 50.0
        w[9, 0] -= 50.0
        path = os.path.join(temp_dir, "w.dsee")
        write_archive(path, TensorArchive({"w": w.astype(np.float32), "ids": np.arange(3, dtype=np.int64)}))
        return path

    def test_supports(self, weights, temp_dir):
        """Test that each float matrix gets a support with zeroed values."""
        out = os.path.join(temp_dir, "s.dsee")
        code = cli_dispatch(["decompose", "--input", weights, "--rank", "1", "--card", "2", "--out", out])
        assert code == EXIT_OK
        archive = read_archive(out)
        assert set(archive.tensors) == {"w.support", "w.s2_values"}
        assert archive.tensors["w.support"].tolist() == [[2, 3], [9, 0]]
        assert archive.tensors["w.s2_values"].dtype == np.float32
        assert not archive.tensors["w.s2_values"].any()
        assert archive.meta["method"] == "decompose"

    def test_magnitude(self, weights, temp_dir):
        """Test the magnitude method."""
        out = os.path.join(temp_dir, "s.dsee")
        code = cli_dispatch(["decompose", "--input", weights, "--rank", "1", "--card", "2",
                             "--method", "magnitude", "--out", out])
        assert code == EXIT_OK
        archive = read_archive(out)
        assert archive.tensors["w.support"].tolist() == [[2, 3], [9, 0]]
        assert archive.tensors["w.s2_values"].tolist() == [0.0, 0.0]

    def test_no_match(self, weights, temp_dir):
        """Test that a pattern matching nothing exits with 2."""
        code = cli_dispatch(["decompose", "--input", weights, "--rank", "1", "--card", "2",
                             "--pattern", "layers.*", "--out", os.path.join(temp_dir, "s.dsee")])
        assert code == EXIT_DATA

    def test_corrupt_input(self, temp_dir):
        """Test that a corrupt archive exits with 2."""
        path = os.path.join(temp_dir, "bad.dsee")
        with open(path, "wb") as f:
            f.write(b"NOPE" + b"\x00" * 60)
        code = cli_dispatch(["decompose", "--input", path, "--rank", "1", "--card", "2",
                             "--out", os.path.join(temp_dir, "s.dsee")])
        assert code == EXIT_DATA


class TestReport:
    """Tests for the report command."""

    @pytest.fixture
    def pair(self, temp_dir):
        """Two archives differing by +-0.5 on the diagonal."""
        before = np.eye(2, dtype=np.float32)
        after = before + np.array([[0.5, 0.0], [0.0, -0.5]], dtype=np.float32)
        a = os.path.join(temp_dir, "a.dsee")
        b = os.path.join(temp_dir, "b.dsee")
        write_archive(a, TensorArchive({"m": before}))
        write_archive(b, TensorArchive({"m": after}))
        return a, b

    def test_histogram(self, pair, temp_dir):
        """Test counts with a fixed range and the gnuplot file."""
        out = os.path.join(temp_dir, "h.json")
        dat = os.path.join(temp_dir, "h.dat")
        code = cli_dispatch(["report", "--before", pair[0], "--after", pair[1], "--bins", "2",
                             "--range=-1,1", "--out", out, "--gnuplot", dat])
        assert code == EXIT_OK
        with open(out, encoding="utf-8") as f:
            data = json.load(f)
        assert data["counts"] == [1, 3]
        assert data["sites"] == ["m"]
        assert os.path.exists(dat)

    def test_bad_bins(self, pair, temp_dir):
        """Test that zero bins is a usage error."""
        code = cli_dispatch(["report", "--before", pair[0], "--after", pair[1], "--bins", "0",
                             "--out", os.path.join(temp_dir, "h.json")])
        assert code == EXIT_USAGE

    def test_no_common_sites(self, pair, temp_dir):
        """Test that disjoint archives exit with 2."""
        code = cli_dispatch(["report", "--before", pair[0], "--after", pair[1], "--bins", "2",
                             "--pattern", "layers.*", "--out", os.path.join(temp_dir, "h.json")])
        assert code == EXIT_DATA


class TestTrainingCommands:
    """Tests for pretrain, dsee and plan --model."""

    def test_end_to_end(self, tiny_config_path, temp_dir):
        """Test that repeated dsee runs are byte-identical and plan --model matches their budget."""
        pre = os.path.join(temp_dir, "pre.dsee")
        assert cli_dispatch(["pretrain", "--config", tiny_config_path, "--out", pre,
                             "--report", os.path.join(temp_dir, "pre.json")]) == EXIT_OK
        runs = [os.path.join(temp_dir, "run1"), os.path.join(temp_dir, "run2")]
        for run in runs:
            assert cli_dispatch(["dsee", "--config", tiny_config_path, "--pretrained", pre,
                                 "--out-dir", run]) == EXIT_OK
        names = sorted(os.listdir(runs[0]))
        assert names == sorted([
            "final.dsee", "merged.dsee", "masks.dsee", "stage_I.json", "stage_II.json",
            "stage_III.json", "budget.json", "config.json",
        ])
        for name in names:
            assert read_bytes(os.path.join(runs[0], name)) == read_bytes(os.path.join(runs[1], name))

        planned = os.path.join(temp_dir, "planned.json")
        assert cli_dispatch(["plan", "--config", tiny_config_path, "--model",
                             os.path.join(runs[0], "final.dsee"), "--out", planned]) == EXIT_OK
        assert read_bytes(planned) == read_bytes(os.path.join(runs[0], "budget.json"))

        hist = os.path.join(temp_dir, "hist.json")
        assert cli_dispatch(["report", "--before", pre, "--after", os.path.join(runs[0], "merged.dsee"),
                             "--bins", "5", "--out", hist]) == EXIT_OK

    def test_pretrain_failure(self, temp_dir):
        """Test that an unreachable pretraining target exits with 3."""
        data = json.loads(json.dumps(TINY_CONFIG))
        data["pretrain"]["min_accuracy"] = 1.01
        cfg = write_json(os.path.join(temp_dir, "cfg.json"), data)
        code = cli_dispatch(["pretrain", "--config", cfg, "--out", os.path.join(temp_dir, "pre.dsee")])
        assert code == EXIT_PIPELINE

    def test_dsee_missing_pretrained(self, tiny_config_path, temp_dir):
        """Test that a missing pretrained archive exits with 2."""
        code = cli_dispatch(["dsee", "--config", tiny_config_path, "--pretrained",
                             os.path.join(temp_dir, "absent.dsee"), "--out-dir", temp_dir])
        assert code == EXIT_DATA
