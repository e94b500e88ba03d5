"""Benchmark harness: configuration, reports, file formats, CLI."""

import numpy as np
import pytest
import yaml

import helmtraces as ht
from helmtraces.bench import REPORT_COLUMNS, STUDY_COLUMNS, build_problem, fit_loglog_slope
from helmtraces.cli import main as cli_main
from helmtraces.io import load_field_array, save_field_array, save_pgm

from conftest import rel_err


def base_config(**over):
    cfg = ht.RunConfig(nx=64, ny=64, h=20.0, f_hz=1500.0 / (8 * 20.0),
                       model_kind="constant", model_params={"c": 1500.0},
                       L=2, L_c=2, sources=[(32, 32, 1.0)], out_dir=None)
    for k, v in over.items():
        setattr(cfg, k, v)
    return cfg


def write_yaml(path, doc):
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh)
    return path


def yaml_doc(**over):
    doc = {
        "grid": {"nx": 64, "ny": 64, "h": 20.0, "npml": "auto"},
        "frequency_hz": 9.375,
        "model": {"kind": "constant", "c": 1500.0},
        "decomposition": {"layers": 2, "cells": 2, "inner_strategy": "compressed-lu"},
        "tolerances": {"outer": 1.0e-5, "maxit": 40},
        "sources": [{"x": 32, "y": 32}],
        "output": {"dir": "out", "pgm": True},
        "seed": 0,
    }
    doc.update(over)
    return doc


class TestConfig:
    def test_yaml_round_trip(self, tmp_path):
        path = write_yaml(tmp_path / "cfg.yaml", yaml_doc())
        cfg = ht.RunConfig.from_yaml(path)
        cfg.validate()
        assert (cfg.nx, cfg.ny, cfg.L, cfg.L_c) == (64, 64, 2, 2)
        assert cfg.omega == pytest.approx(np.pi * 15.0)

    def test_npml_policy(self):
        assert ht.npml_policy(64, 64) == 12
        assert ht.npml_policy(4, 4) == 8

    def test_missing_model_file(self):
        cfg = base_config(model_kind="file", model_params={"path": "/nope/missing.helm-m"})
        with pytest.raises(ht.ConfigError):
            cfg.validate()

    def test_source_outside_interior(self):
        with pytest.raises(ht.ConfigError):
            base_config(sources=[(99, 2, 1.0)]).validate()

    def test_bad_strategy_and_tol(self):
        with pytest.raises(ht.ConfigError):
            base_config(inner_strategy="direct-solve").validate()
        with pytest.raises(ht.ConfigError):
            base_config(tol=2.0).validate()

    def test_low_resolution_warns(self):
        cfg = base_config(f_hz=60.0)
        with pytest.warns(UserWarning):
            build_problem(cfg)


class TestRunSolve:
    def test_baseline_homogeneous(self):
        rep = ht.run_solve(base_config(), write=False)
        assert rep.converged
        assert rep.iterations <= 5
        assert rep.volume_residual <= 1e-4
        for key in ("lu_factorizations_s", "greens_functions_s", "local_solves_s",
                    "sweeps_s", "recombination_s"):
            assert rep.stage_seconds[key] >= 0.0
        assert sum(rep.stage_seconds.values()) <= rep.total_s

    def test_deterministic_across_runs(self):
        cfg = base_config(model_kind="rough-layered", model_params={}, seed=7)
        r1 = ht.run_solve(cfg, write=False)
        r2 = ht.run_solve(cfg, write=False)
        assert np.array_equal(r1.field.values, r2.field.values)
        row1, row2 = r1.row(), r2.row()
        for k in REPORT_COLUMNS:
            if not k.endswith("_s"):
                assert row1[k] == row2[k], k

    def test_artifacts_written(self, tmp_path):
        cfg = base_config(out_dir=str(tmp_path / "run"))
        rep = ht.run_solve(cfg)
        out = tmp_path / "run"
        assert (out / "report.csv").exists()
        assert (out / "field.helm-u").exists()
        assert (out / "field.pgm").exists()
        header = (out / "report.csv").read_text().splitlines()[0]
        assert header == ",".join(REPORT_COLUMNS)
        back = load_field_array(out / "field.helm-u")
        assert np.array_equal(back, rep.field.values)


class TestFieldDump:
    def test_zero_field_mid_gray(self, tmp_path):
        save_pgm(np.zeros((8, 8), dtype=complex), tmp_path / "z.pgm")
        data = (tmp_path / "z.pgm").read_bytes()
        pix = data.split(b"255\n", 1)[1]
        assert pix == bytes([128]) * 64

    def test_round_trip_bits(self, tmp_path, rng):
        u = rng.standard_normal((16, 12)) + 1j * rng.standard_normal((16, 12))
        save_field_array(u, tmp_path / "f.helm-u")
        back = load_field_array(tmp_path / "f.helm-u")
        assert np.array_equal(back, u)

    def test_payload_size(self, tmp_path):
        u = np.zeros((64, 64), dtype=complex)
        save_field_array(u, tmp_path / "f.helm-u")
        raw = (tmp_path / "f.helm-u").read_bytes()
        header, payload = raw.split(b"\n", 1)
        assert header == b"HELM-U v1 64 64"
        assert len(payload) == 64 * 64 * 16


class TestSnapshots:
    def test_snapshot_sequence(self, tmp_path):
        cfg = base_config(out_dir=None)
        snaps = ht.snapshot_iterations(cfg)
        rep = ht.run_solve(cfg, write=False)
        assert len(snaps) == rep.iterations + 1
        # snapshot 0 is the zero-interface-data reconstruction
        grid, model, f, options = build_problem(cfg)
        layers = ht.setup_layers(options, model)
        u0 = ht.reconstruct_volume(layers, ht.TraceSet.zeros(cfg.L - 1, grid.nxt), f)
        assert rel_err(snaps[0].values, u0.values) < 1e-12
        # final snapshot is the converged field
        assert rel_err(snaps[-1].values, rep.field.values) < 1e-12
        # distance to the converged field never grows
        dists = [np.linalg.norm(s.values - rep.field.values) for s in snaps]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(dists, dists[1:]))

    def test_snapshot_files(self, tmp_path):
        cfg = base_config(out_dir=None, write_pgm=False)
        snaps = ht.snapshot_iterations(cfg, out_dir=tmp_path)
        files = sorted(tmp_path.glob("snapshot_*.helm-u"))
        assert len(files) == len(snaps)


class TestStudy:
    def test_empty_sizes_header_only(self, tmp_path):
        out = tmp_path / "study.csv"
        rows = ht.run_scaling_study(base_config(), [], [(2, 2)], out_path=out)
        assert rows == []
        assert out.read_text().strip() == ",".join(STUDY_COLUMNS)

    def test_small_study_iteration_stability(self, tmp_path):
        rows = ht.run_scaling_study(base_config(), [32, 64], [(2, 2)], repeats=1,
                                    out_path=tmp_path / "study.csv")
        ok = [r for r in rows if r["status"] == "ok"]
        assert len(ok) == 2
        its = [r["iterations"] for r in ok]
        assert max(its) - min(its) <= 2
        slopes = [r for r in rows if r["status"] == "fit"]
        assert len(slopes) == 1

    def test_failures_recorded_not_raised(self, tmp_path):
        rows = ht.run_scaling_study(base_config(), [16], [(5, 2)], repeats=1)
        assert len(rows) == 1
        assert rows[0]["status"].startswith("error")

    def test_slope_fit(self):
        x = [1e2, 1e3, 1e4]
        y = [2e-3 * (xi ** 0.75) for xi in x]
        assert fit_loglog_slope(x, y) == pytest.approx(0.75, abs=1e-6)


class TestCli:
    def test_solve_roundtrip(self, tmp_path):
        cfg_path = write_yaml(tmp_path / "cfg.yaml",
                              yaml_doc(output={"dir": str(tmp_path / "out"), "pgm": False}))
        rc = cli_main(["solve", "--config", str(cfg_path)])
        assert rc == 0
        assert (tmp_path / "out" / "report.csv").exists()

    def test_missing_model_file_exit_2(self, tmp_path):
        doc = yaml_doc(model={"kind": "file", "path": str(tmp_path / "none.helm-m")})
        cfg_path = write_yaml(tmp_path / "cfg.yaml", doc)
        assert cli_main(["solve", "--config", str(cfg_path)]) == 2

    def test_malformed_config_exit_2(self, tmp_path):
        cfg_path = write_yaml(tmp_path / "bad.yaml", {"grid": {"nx": 64}})
        assert cli_main(["solve", "--config", str(cfg_path)]) == 2

    def test_threads_flag_does_not_change_bits(self, tmp_path):
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        doc = yaml_doc(model={"kind": "rough-layered"}, seed=7)
        cfg_path = write_yaml(tmp_path / "cfg.yaml", doc)
        assert cli_main(["solve", "--config", str(cfg_path), "--out", str(out1),
                         "--threads", "1"]) == 0
        assert cli_main(["solve", "--config", str(cfg_path), "--out", str(out2),
                         "--threads", "4"]) == 0
        f1 = (out1 / "field.helm-u").read_bytes()
        f2 = (out2 / "field.helm-u").read_bytes()
        assert f1 == f2

    def test_study_subcommand(self, tmp_path):
        doc = yaml_doc(study={"sizes": [32], "P_grid": [[2, 2]]},
                       output={"dir": str(tmp_path / "s"), "pgm": False})
        cfg_path = write_yaml(tmp_path / "cfg.yaml", doc)
        assert cli_main(["study", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "s" / "study.csv").exists()

    def test_snapshots_subcommand(self, tmp_path):
        doc = yaml_doc(output={"dir": str(tmp_path / "snaps"), "pgm": False})
        cfg_path = write_yaml(tmp_path / "cfg.yaml", doc)
        assert cli_main(["snapshots", "--config", str(cfg_path)]) == 0
        assert list((tmp_path / "snaps").glob("snapshot_*.helm-u"))
