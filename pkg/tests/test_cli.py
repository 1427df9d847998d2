import filecmp
import os

import numpy as np
import pytest

import cml_lab as cl
from cml_lab.cli import main, validate_config


def write_cfg(tmp_path, text, name="exp.cfg"):
    path = os.path.join(tmp_path, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


MINIMAL = """
[map]
kind = perturbed_doubling
a = 0.05

[coupling]
kind = diffusive
epsilon = 0.05
"""

EIGEN_ONLY = """
[map]
kind = doubling

[coupling]
epsilon = 0.0

[potential]
kind = zero

[operator]
k = 0
n_bins = 64

[run]
experiments = eigen
output_dir = {out}
"""


class TestParsing:
    def test_minimal_config_parses_with_defaults(self, tmp_path):
        cfg = cl.parse_config(write_cfg(tmp_path, MINIMAL))
        assert cfg.map_kind == "perturbed_doubling"
        assert cfg.epsilon == 0.05
        assert cfg.n_bins == 16  # untouched default

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        cfg = cl.parse_config(
            write_cfg(tmp_path, "# header\n\n[map]\nkind = doubling  # inline\n")
        )
        assert cfg.map_kind == "doubling"

    def test_unknown_key_rejected_with_line_number(self, tmp_path):
        path = write_cfg(tmp_path, "[map]\nflavor = strange\n")
        with pytest.raises(cl.ConfigError) as err:
            cl.parse_config(path)
        assert "line 2" in str(err.value)
        assert "flavor" in str(err.value)

    def test_unknown_section_rejected(self, tmp_path):
        path = write_cfg(tmp_path, "[engine]\nkind = doubling\n")
        with pytest.raises(cl.ConfigError) as err:
            cl.parse_config(path)
        assert "[engine]" in str(err.value)

    def test_violations_are_aggregated(self, tmp_path):
        path = write_cfg(
            tmp_path,
            "[coupling]\nepsilon = 0.6\n\n[metric]\ntheta = 1.0\nbeta = 7\n",
        )
        with pytest.raises(cl.ConfigError) as err:
            cl.parse_config(path)
        msg = str(err.value)
        assert "epsilon" in msg and "theta" in msg and "beta" in msg

    def test_type_errors_reported(self, tmp_path):
        path = write_cfg(tmp_path, "[operator]\nn_bins = many\n")
        with pytest.raises(cl.ConfigError) as err:
            cl.parse_config(path)
        assert "n_bins" in str(err.value)


class TestValidation:
    def test_default_config_is_valid(self):
        assert validate_config(cl.ExperimentConfig()) == []

    def test_each_semantic_violation_caught(self):
        bad = [
            dict(epsilon=0.5),
            dict(theta=0.0),
            dict(beta=1.5),
            dict(alpha=0.9, theta=0.95),
            dict(a=0.2),
            dict(map_kind="tent"),
            dict(potential_kind="mystery"),
            dict(n_bins=1),
            dict(burn_in=10_000),
            dict(experiments=("eigen", "alchemy")),
            dict(epsilon=0.26),  # contraction pre-flight: C_E bound * eta >= 1
        ]
        for kw in bad:
            assert validate_config(cl.ExperimentConfig(**kw)), kw

    def test_fingerprint_tracks_config(self):
        a = cl.ExperimentConfig()
        b = cl.ExperimentConfig(seed=43)
        assert a.fingerprint() == cl.ExperimentConfig().fingerprint()
        assert a.fingerprint() != b.fingerprint()

    def test_canonical_text_roundtrip(self, tmp_path):
        cfg = cl.ExperimentConfig(a=0.03, n_bins=32)
        back = cl.parse_config(write_cfg(tmp_path, cfg.canonical_text()))
        assert back == cfg
        assert back.fingerprint() == cfg.fingerprint()


class TestRunner:
    def test_eigen_only_doubling_run(self, tmp_path):
        out = os.path.join(tmp_path, "rep")
        cfg = cl.parse_config(
            write_cfg(tmp_path, EIGEN_ONLY.format(out=out))
        )
        report = cl.run_experiment(cfg)
        assert report.errors == {}
        assert report.results["eigen"]["lambda"]["value"] == pytest.approx(
            1.0, abs=1e-10
        )

    def test_failures_are_recorded_not_raised(self, tmp_path):
        # the doubling map is barred from forward simulation and backward
        # branch sampling does not support a nonzero coupling, so the clt
        # step must record an error without crashing the run
        text = EIGEN_ONLY.replace("experiments = eigen", "experiments = clt")
        text = text.replace("epsilon = 0.0", "epsilon = 0.05")
        text += "n_steps = 300\nn_replicas = 10\nburn_in = 100\n"
        cfg = cl.parse_config(
            write_cfg(tmp_path, text.format(out=os.path.join(tmp_path, "r")))
        )
        report = cl.run_experiment(cfg)
        assert "clt" in report.errors

    def test_reports_are_byte_identical(self, tmp_path):
        out = os.path.join(tmp_path, "rep")
        cfg = cl.parse_config(write_cfg(tmp_path, EIGEN_ONLY.format(out=out)))
        d1, d2 = os.path.join(tmp_path, "a"), os.path.join(tmp_path, "b")
        cl.emit_report(cl.run_experiment(cfg), d1)
        cl.emit_report(cl.run_experiment(cfg), d2)
        names = [n for n in os.listdir(d1) if n != "timing.txt"]
        assert "summary.txt" in names and "report.json" in names
        match, mismatch, errors = filecmp.cmpfiles(d1, d2, names, shallow=False)
        assert mismatch == [] and errors == []

    def test_summary_contains_fingerprint(self, tmp_path):
        out = os.path.join(tmp_path, "rep")
        cfg = cl.parse_config(write_cfg(tmp_path, EIGEN_ONLY.format(out=out)))
        report = cl.run_experiment(cfg)
        cl.emit_report(report, out)
        text = open(os.path.join(out, "summary.txt")).read()
        assert cfg.fingerprint() in text


class TestMain:
    def test_validate_ok(self, tmp_path, capsys):
        path = write_cfg(tmp_path, MINIMAL)
        assert main(["validate", path]) == 0
        assert "fingerprint" in capsys.readouterr().out

    def test_validate_bad_exit_code(self, tmp_path, capsys):
        path = write_cfg(tmp_path, "[coupling]\nepsilon = 0.7\n")
        assert main(["validate", path]) == 2
        assert "epsilon" in capsys.readouterr().err

    def test_run_writes_reports(self, tmp_path, capsys):
        out = os.path.join(tmp_path, "rep")
        path = write_cfg(tmp_path, EIGEN_ONLY.format(out=out))
        assert main(["run", path]) == 0
        assert os.path.exists(os.path.join(out, "summary.txt"))
        assert os.path.exists(os.path.join(out, "report.json"))

    def test_output_dir_env_override(self, tmp_path, monkeypatch):
        out = os.path.join(tmp_path, "ignored")
        override = os.path.join(tmp_path, "override")
        monkeypatch.setenv("CML_LAB_OUTPUT_DIR", override)
        path = write_cfg(tmp_path, EIGEN_ONLY.format(out=out))
        assert main(["run", path]) == 0
        assert os.path.exists(os.path.join(override, "summary.txt"))
        assert not os.path.exists(out)

    def test_export_operator_roundtrip(self, tmp_path, capsys):
        out = os.path.join(tmp_path, "rep")
        dest = os.path.join(tmp_path, "op.txt")
        path = write_cfg(tmp_path, EIGEN_ONLY.format(out=out))
        assert main(["export-operator", path, "-o", dest]) == 0
        op = cl.load_operator(dest)
        sums = np.asarray(op.matrix.sum(axis=1)).ravel()
        support = sums > 0.0
        assert np.max(np.abs(sums[support] - 1.0)) < 1e-12
