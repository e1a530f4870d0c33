"""Config parsing and the command-line entry points."""

import os

import numpy as np
import pytest

import ddsmc.cli as cli
from ddsmc.cli import main
from ddsmc.config import parse_config
from ddsmc.core import ConfigError, DegeneracyError


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SMALL_RUN = """
proposal = reverse
reward = gmm_top
grid_size = 8
particles = 50
steps = 6
"""


class TestParseConfig:
    def test_defaults_match_benchmark_protocol(self, tmp_path):
        cfg = parse_config(
            write_config(tmp_path, "proposal = reverse\nreward = gmm_top\n")
        )
        assert cfg.particles == 2000
        assert cfg.steps == 100
        assert cfg.alpha == 1.0
        assert cfg.ess_min == 1000.0  # defaults to half the particle count
        assert cfg.temper == "linear"
        assert cfg.noise == "linear"
        assert cfg.family == "masked"
        assert cfg.resample == "full_systematic"
        assert cfg.grid_size == 64
        assert cfg.workers == 1
        assert cfg.proposals == (
            "reverse",
            "locally_optimal",
            "taylor",
            "approx_guidance",
        )

    def test_missing_required_keys_are_listed(self, tmp_path):
        with pytest.raises(ConfigError, match="proposal, reward"):
            parse_config(write_config(tmp_path, "# empty\n"))

    def test_bad_alpha_names_its_line(self, tmp_path):
        text = "proposal = reverse\nreward = gmm_top\nalpha = -1\n"
        with pytest.raises(ConfigError, match="line 3: alpha must be > 0"):
            parse_config(write_config(tmp_path, text))

    def test_unknown_key_rejected_with_line(self, tmp_path):
        text = "proposal = reverse\nreward = gmm_top\npartciles = 10\n"
        with pytest.raises(ConfigError, match="line 3: unknown key 'partciles'"):
            parse_config(write_config(tmp_path, text))

    def test_duplicate_key_cites_both_lines(self, tmp_path):
        text = "proposal = reverse\nreward = gmm_top\nproposal = taylor\n"
        with pytest.raises(ConfigError, match="line 3.*first set on line 1"):
            parse_config(write_config(tmp_path, text))

    def test_comments_and_blanks_ignored(self, tmp_path):
        text = "\n# lead\nproposal = reverse  # trail\n\nreward = zero\n"
        cfg = parse_config(write_config(tmp_path, text))
        assert cfg.proposal == "reverse"
        assert cfg.reward == "zero"

    def test_gmm_components_parse(self, tmp_path):
        text = (
            "proposal = reverse\nreward = gmm_top\n"
            "gmm_components = 4, 4, 1.5, 0.5 ; 11, 11, 1.5, 0.5\n"
        )
        cfg = parse_config(write_config(tmp_path, text))
        assert cfg.gmm_components == ((4.0, 4.0, 1.5, 0.5), (11.0, 11.0, 1.5, 0.5))

    def test_gmm_components_need_four_fields(self, tmp_path):
        text = "proposal = reverse\nreward = gmm_top\ngmm_components = 1, 2, 3\n"
        with pytest.raises(ConfigError, match="4 numbers"):
            parse_config(write_config(tmp_path, text))

    def test_model_file_excludes_components(self, tmp_path):
        text = (
            "proposal = reverse\nreward = gmm_top\n"
            "model_file = m.txt\ngmm_components = 1, 1, 1, 1\n"
        )
        with pytest.raises(ConfigError, match="mutually exclusive"):
            parse_config(write_config(tmp_path, text))

    def test_ess_min_range_check(self, tmp_path):
        text = "proposal = reverse\nreward = gmm_top\nparticles = 10\ness_min = 20\n"
        with pytest.raises(ConfigError, match="ess_min"):
            parse_config(write_config(tmp_path, text))

    def test_unknown_proposal_in_list(self, tmp_path):
        text = "proposal = reverse\nreward = gmm_top\nproposals = reverse, magic\n"
        with pytest.raises(ConfigError, match="unknown proposal 'magic'"):
            parse_config(write_config(tmp_path, text))


class TestRunCommand:
    def test_writes_all_artifacts(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL_RUN + f"out = {tmp_path}/out\n")
        assert main(["run", "--config", cfg]) == 0
        out = tmp_path / "out"
        for name in (
            "samples.csv",
            "trace.csv",
            "metrics.csv",
            "density.pgm",
            "target.pgm",
        ):
            assert (out / name).exists(), name
        summary = capsys.readouterr().out
        assert "proposal=reverse" in summary
        assert "log_z=" in summary
        samples = (out / "samples.csv").read_text().splitlines()
        assert samples[0] == "# ddsmc samples v1"
        assert samples[1] == "weight,tok0,tok1"
        assert len(samples) == 2 + 50

    def test_identical_runs_are_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_RUN)
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
        for name in ("samples.csv", "trace.csv", "metrics.csv", "density.pgm"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes(), name

    def test_worker_count_does_not_change_outputs(self, tmp_path):
        cfg1 = write_config(tmp_path, SMALL_RUN + "workers = 1\n", "w1.cfg")
        cfg4 = write_config(tmp_path, SMALL_RUN + "workers = 4\n", "w4.cfg")
        assert main(["run", "--config", cfg1, "--out", str(tmp_path / "w1")]) == 0
        assert main(["run", "--config", cfg4, "--out", str(tmp_path / "w4")]) == 0
        for name in ("samples.csv", "trace.csv", "metrics.csv"):
            assert (tmp_path / "w1" / name).read_bytes() == (
                tmp_path / "w4" / name
            ).read_bytes(), name

    def test_seed_flag_changes_samples(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_RUN)
        main(["run", "--config", cfg, "--out", str(tmp_path / "s0")])
        main(["run", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "s1")])
        assert (tmp_path / "s0" / "samples.csv").read_text() != (
            tmp_path / "s1" / "samples.csv"
        ).read_text()

    def test_overwrites_previous_outputs_atomically(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_RUN)
        out = str(tmp_path / "out")
        main(["run", "--config", cfg, "--out", out])
        first = (tmp_path / "out" / "samples.csv").read_bytes()
        main(["run", "--config", cfg, "--out", out])
        assert (tmp_path / "out" / "samples.csv").read_bytes() == first
        assert not os.path.exists(os.path.join(out, "samples.csv.tmp"))

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "proposal = reverse\n")
        assert main(["run", "--config", cfg]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_missing_config_file_exit_code(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_guard_refusal_exit_code(self, tmp_path, capsys):
        # 1025^2 candidate successors per particle trip the joint guard
        text = (
            "proposal = locally_optimal\nreward = gmm_top\n"
            "grid_size = 1024\nparticles = 2\nsteps = 2\n"
            f"out = {tmp_path}/out\n"
        )
        cfg = write_config(tmp_path, text)
        assert main(["run", "--config", cfg]) == 4
        assert "guard refusal" in capsys.readouterr().err

    def test_degeneracy_exit_code(self, tmp_path, capsys, monkeypatch):
        cfg = write_config(tmp_path, SMALL_RUN)

        def explode(config):
            raise DegeneracyError("all weights collapsed")

        monkeypatch.setattr(cli, "run_experiment", explode)
        assert main(["run", "--config", cfg]) == 3
        assert "numeric error" in capsys.readouterr().err

    def test_help_documents_config_keys(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        assert "proposal, reward" in text
        assert "particles=2000" in text
        assert "ess_min=particles/2" in text


class TestCompareCommand:
    def test_rows_and_trace_files(self, tmp_path, capsys):
        text = SMALL_RUN + (
            f"out = {tmp_path}/cmp\n"
            "proposals = reverse, locally_optimal, taylor, approx_guidance\n"
        )
        cfg = write_config(tmp_path, text)
        assert main(["compare", "--config", cfg]) == 0
        out = tmp_path / "cmp"
        lines = (out / "comparison.csv").read_text().splitlines()
        assert lines[0] == "# ddsmc comparison v1"
        assert lines[1] == "proposal,mean_reward,emd,diversity,sample_count"
        assert [row.split(",")[0] for row in lines[2:]] == [
            "reverse",
            "locally_optimal",
            "taylor",
            "approx_guidance",
        ]
        for proposal in ("reverse", "locally_optimal", "taylor"):
            assert (out / f"trace_{proposal}.csv").exists()
        # the guidance baseline has no weight recursion to trace
        assert not (out / "trace_approx_guidance.csv").exists()
        printed = capsys.readouterr().out
        assert printed.count("proposal=") == 4

    def test_subset_of_proposals(self, tmp_path):
        text = SMALL_RUN + f"out = {tmp_path}/cmp2\nproposals = reverse\n"
        cfg = write_config(tmp_path, text)
        assert main(["compare", "--config", cfg]) == 0
        lines = (tmp_path / "cmp2" / "comparison.csv").read_text().splitlines()
        assert len(lines) == 3


class TestEnumerateTargetCommand:
    def test_writes_table_and_raster(self, tmp_path, capsys):
        text = (
            "proposal = reverse\nreward = gmm_bottom\ngrid_size = 16\n"
            f"out = {tmp_path}/tgt\n"
        )
        cfg = write_config(tmp_path, text)
        assert main(["enumerate-target", "--config", cfg]) == 0
        out = tmp_path / "tgt"
        table = np.array(
            [
                [float(v) for v in line.split()]
                for line in (out / "target.txt").read_text().splitlines()
            ]
        )
        assert table.shape == (16, 16)
        assert abs(table.sum() - 1.0) <= 1e-9
        assert (out / "target.pgm").read_bytes().startswith(b"P5\n16 16\n255\n")
        head = capsys.readouterr().out
        assert "reward=gmm_bottom" in head
        assert "bins=256" in head

    def test_zero_reward_target_is_the_data_table(self, tmp_path):
        text = (
            "proposal = reverse\nreward = zero\ngrid_size = 8\n"
            f"out = {tmp_path}/tgt0\n"
        )
        cfg = write_config(tmp_path, text)
        assert main(["enumerate-target", "--config", cfg]) == 0
        from ddsmc.dataset import build_gmm_table, default_gmm_spec

        table = np.array(
            [
                [float(v) for v in line.split()]
                for line in (tmp_path / "tgt0" / "target.txt")
                .read_text()
                .splitlines()
            ]
        )
        want = build_gmm_table(default_gmm_spec(8)).data_dist
        assert np.max(np.abs(table - want)) <= 1e-12
