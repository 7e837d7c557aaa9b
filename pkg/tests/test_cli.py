import json

import numpy as np
import pytest

from fracglap import GridFunction, Lattice
from fracglap.cli import (EXIT_CONFIG, EXIT_ESTIMATE, EXIT_OK, EXIT_SOLVER,
                          SCHEMA, build_problem, generate_corpus, main, run,
                          validate_config)


def base_config(**overrides):
    cfg = {
        "problem": {
            "dim": 1,
            "h": 0.0625,
            "omega": {"lo": [-0.5], "hi": [0.5]},
            "s": 0.5,
            "nfunction": {"family": "power", "p": 2.0},
            "kernel": {"form": "pure"},
            "datum": {"family": "sin", "frequency": 2.0, "amplitude": 1.0},
            "exterior": {"kind": "constant", "value": 0.3},
            "truncation_radius": 1.5,
        },
        "pipeline": ["solve"],
        "seed": 11,
        "tolerances": {"solve": 1e-9},
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_reports(out_dir):
    """All JSON artifacts with timestamps stripped, plus raw CSV bytes."""
    docs = {}
    for path in sorted(out_dir.iterdir()):
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            doc.pop("timestamp", None)
            docs[path.name] = json.dumps(doc, sort_keys=True)
        elif path.suffix == ".csv":
            docs[path.name] = path.read_bytes()
    return docs


class TestConfigValidation:
    def test_schema_subcommand_prints_schema(self, capsys):
        assert main(["schema"]) == EXIT_OK
        out = capsys.readouterr().out
        assert json.loads(out)["required"] == SCHEMA["required"]

    def test_valid_config_passes(self):
        validate_config(base_config())

    def test_unknown_estimate_rejected(self, tmp_path):
        cfg = base_config(pipeline=["solve", "verify:does_not_exist"])
        assert run(write_config(tmp_path, cfg),
                   out_override=str(tmp_path / "out")) == EXIT_CONFIG

    def test_unknown_stage_kind_rejected(self):
        with pytest.raises(Exception):
            validate_config(base_config(pipeline=["frobnicate:x"]))

    def test_missing_seed_for_random_stage(self, tmp_path):
        cfg = base_config(pipeline=["solve", "verify:gradient_fd"])
        del cfg["seed"]
        assert run(write_config(tmp_path, cfg),
                   out_override=str(tmp_path / "out")) == EXIT_CONFIG

    def test_schema_violation_exit_code(self, tmp_path):
        cfg = base_config()
        del cfg["problem"]["s"]
        assert run(write_config(tmp_path, cfg),
                   out_override=str(tmp_path / "out")) == EXIT_CONFIG

    def test_unreadable_config_is_io_error(self, tmp_path):
        from fracglap.cli import EXIT_IO
        assert run(str(tmp_path / "missing.json")) == EXIT_IO


class TestRun:
    def test_constant_data_solve(self, tmp_path):
        cfg = base_config()
        cfg["problem"]["datum"] = {"family": "constant", "value": 0.3}
        out = tmp_path / "out"
        assert run(write_config(tmp_path, cfg),
                   out_override=str(out)) == EXIT_OK
        report = json.loads((out / "SolveReport.json").read_text())
        assert report["converged"] and report["iterations"] == 0
        prob = build_problem(cfg)
        mini = GridFunction.from_csv(out / "minimizer.csv", prob.lattice)
        np.testing.assert_allclose(mini.values, 0.3)

    def test_linear_oracle_stage(self, tmp_path):
        cfg = base_config(pipeline=["solve", "verify:linear_oracle"])
        cfg["tolerances"]["solve"] = 1e-10
        out = tmp_path / "out"
        assert run(write_config(tmp_path, cfg),
                   out_override=str(out)) == EXIT_OK
        rep = json.loads((out / "estimate_linear_oracle.json").read_text())
        assert rep["details"]["sup_error"] <= 1e-8

    def test_solver_non_convergence_exit(self, tmp_path):
        cfg = base_config(solver={"max_iter": 1, "tol": 1e-14})
        cfg["tolerances"] = {}
        assert run(write_config(tmp_path, cfg),
                   out_override=str(tmp_path / "out")) == EXIT_SOLVER

    def test_estimate_failure_exit(self, tmp_path):
        cfg = base_config(pipeline=["solve", "verify:boundedness"],
                          tolerances={"solve": 1e-9, "boundedness": 1e-9})
        assert run(write_config(tmp_path, cfg),
                   out_override=str(tmp_path / "out")) == EXIT_ESTIMATE

    def test_full_verify_and_sweep_pipeline(self, tmp_path):
        cfg = base_config(pipeline=["solve", "verify:minimality",
                                    "verify:nfunction", "sweep:boundedness"])
        out = tmp_path / "out"
        assert run(write_config(tmp_path, cfg),
                   out_override=str(out)) == EXIT_OK
        assert (out / "estimate_minimality.json").exists()
        assert (out / "sweep_boundedness.csv").exists()
        header = (out / "sweep_boundedness.csv").read_text().splitlines()[0]
        assert header.split(",")[:2] == ["center", "radius"]

    def test_jobs_flag_deterministic(self, tmp_path):
        cfg = base_config(pipeline=["solve", "sweep:boundedness"])
        p = write_config(tmp_path, cfg)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert run(p, out_override=str(out1), jobs=1) == EXIT_OK
        assert run(p, out_override=str(out2), jobs=4) == EXIT_OK
        assert read_reports(out1) == read_reports(out2)


class TestDeterminism:
    def test_byte_identical_reports_modulo_timestamp(self, tmp_path):
        cfg = base_config(pipeline=["solve", "verify:gradient_fd",
                                    "verify:nfunction", "verify:minimality",
                                    "sweep:boundedness"])
        path = write_config(tmp_path, cfg)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert run(path, out_override=str(out1)) == EXIT_OK
        assert run(path, out_override=str(out2)) == EXIT_OK
        r1, r2 = read_reports(out1), read_reports(out2)
        assert r1.keys() == r2.keys()
        assert r1 == r2

    def test_seed_override_changes_samples(self, tmp_path):
        cfg = base_config(pipeline=["solve", "verify:gradient_fd"])
        path = write_config(tmp_path, cfg)
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert run(path, out_override=str(out1)) == EXIT_OK
        assert run(path, out_override=str(out2), seed_override=99) == EXIT_OK
        d1 = json.loads((out1 / "estimate_gradient_fd.json").read_text())
        d2 = json.loads((out2 / "estimate_gradient_fd.json").read_text())
        assert d1["details"]["max_rel_error"] != d2["details"]["max_rel_error"]


class TestCorpus:
    lattice_spec = {"lo": [-1.0], "hi": [1.0], "h": 0.0625}

    def test_two_level_takes_two_values(self):
        out = generate_corpus({"family": "two-level", "low": -1.0,
                               "high": 2.0, "count": 3,
                               "lattice": self.lattice_spec}, seed=5)
        for f in out:
            assert set(np.unique(f.values)) == {-1.0, 2.0}

    def test_power_cusp_oscillation_closed_form(self):
        out = generate_corpus({"family": "power-cusp", "gamma": 0.5,
                               "center": [0.0],
                               "lattice": self.lattice_spec}, seed=0)
        (f,) = out
        # node-aligned radius: osc over the ball of radius r is r^gamma
        r = 0.5
        sel = np.abs(f.lattice.coords[:, 0]) <= r + 1e-12
        osc = f.values[sel].max() - f.values[sel].min()
        assert osc == pytest.approx(r ** 0.5, rel=1e-12)

    def test_same_seed_reproduces(self):
        spec = {"family": "random-smooth", "count": 4,
                "lattice": self.lattice_spec}
        a = generate_corpus(spec, seed=123)
        b = generate_corpus(spec, seed=123)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa.values, fb.values)

    def test_unknown_family(self):
        with pytest.raises(Exception):
            generate_corpus({"family": "nope",
                             "lattice": self.lattice_spec}, seed=1)


class TestSubcommands:
    def test_solve_subcommand_filters_stages(self, tmp_path):
        cfg = base_config(pipeline=["solve", "verify:nfunction"])
        path = write_config(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["solve", path, "--out", str(out)]) == EXIT_OK
        assert (out / "SolveReport.json").exists()
        assert not (out / "estimate_nfunction.json").exists()

    def test_verify_subcommand_runs_verifies(self, tmp_path):
        cfg = base_config(pipeline=["solve", "verify:nfunction",
                                    "sweep:boundedness"])
        path = write_config(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["verify", path, "--out", str(out)]) == EXIT_OK
        assert (out / "estimate_nfunction.json").exists()
        assert not (out / "sweep_boundedness.csv").exists()

    def test_output_dir_env_fallback(self, tmp_path, monkeypatch):
        from fracglap.cli import OUTPUT_DIR_ENV
        cfg = base_config()
        cfg["problem"]["datum"] = {"family": "constant", "value": 1.0}
        path = write_config(tmp_path, cfg)
        env_out = tmp_path / "envout"
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(env_out))
        assert main(["run", path]) == EXIT_OK
        assert (env_out / "SolveReport.json").exists()
