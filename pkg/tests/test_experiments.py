"""Tests for experiment configs, orchestration, and persisted artifacts."""

import json

import numpy as np
import pytest

from cascade import __version__
from cascade.experiments import (
    ANOMALY_HEADER,
    CONTROL_HEADER,
    SHELLS_HEADER,
    SPECTRUM_HEADER,
    ConfigError,
    ExperimentConfig,
    SpanCertificateError,
    load_config,
    parse_config,
    resolve_seed,
    run,
    run_ensemble,
)
from cascade.integrator import BlowUpError
from cascade.stats import InsufficientSamplesError


def tiny_document(**overrides):
    document = {
        "kind": "simulate",
        "model": {"nu": 0.01, "c": 1.0, "sigma": 1.0, "n_shells": 4},
        "run": {
            "dt": 1e-3,
            "horizon": 1.0,
            "burn_in": 0.0,
            "sample_stride": 4,
            "n_trajectories": 2,
            "seed": 1,
            "batch_length": 50,
        },
    }
    document.update(overrides)
    return document


def write_config(tmp_path, document, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


def read_csv(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    return lines[0], [line.split(",") for line in lines[1:]]


class TestParseConfig:
    def test_minimal_config_fills_defaults(self):
        config = parse_config({"kind": "simulate"})
        assert config.model.nu == 1e-4
        assert config.model.n_shells == 19
        assert config.run.dt == 1e-6
        assert config.run.seed == 0
        assert config.options == {"initial": None}

    def test_canonical_echo_is_deterministic(self):
        first = parse_config({"kind": "simulate"}).canonical()
        second = parse_config({"kind": "simulate", "model": {}}).canonical()
        assert first == second
        assert first["simulate"] == {"initial": None}
        assert first["run"]["burn_in"] is None

    def test_c_out_of_range_names_key_and_bounds(self):
        with pytest.raises(ConfigError, match=r"c.*must lie in \[1, 3\].*4"):
            parse_config(tiny_document(model={"c": 4.0}))

    def test_negative_dt_rejected(self):
        with pytest.raises(ConfigError, match="run.dt"):
            parse_config(tiny_document(run={"dt": -1e-3}))

    def test_unknown_keys_rejected_at_every_level(self):
        with pytest.raises(ConfigError, match="mystery: unknown key"):
            parse_config({"kind": "simulate", "mystery": 1})
        with pytest.raises(ConfigError, match="model.extra: unknown key"):
            parse_config({"kind": "simulate", "model": {"extra": 1}})
        with pytest.raises(ConfigError, match="run.dtt: unknown key"):
            parse_config({"kind": "simulate", "run": {"dtt": 1e-3}})
        with pytest.raises(ConfigError, match="simulate.foo: unknown key"):
            parse_config({"kind": "simulate", "simulate": {"foo": 1}})

    def test_kind_block_must_match_kind(self):
        with pytest.raises(ConfigError, match="sweep_nu: unknown key"):
            parse_config({"kind": "simulate", "sweep_nu": {"nu_values": [0.1]}})

    def test_missing_or_unknown_kind(self):
        with pytest.raises(ConfigError, match="kind: missing"):
            parse_config({})
        with pytest.raises(ConfigError, match="kind: must be one of"):
            parse_config({"kind": "warp"})

    def test_burn_in_must_precede_horizon(self):
        with pytest.raises(ConfigError, match="burn_in.*horizon"):
            parse_config(tiny_document(run={"horizon": 1.0, "burn_in": 2.0}))

    def test_default_burn_in_follows_viscosity(self):
        config = parse_config(
            {"kind": "simulate", "model": {"nu": 0.5}, "run": {"horizon": 8.0}}
        )
        assert config.run.burn_in is None
        assert config.run.resolved_burn_in(0.5) == pytest.approx(4.0)
        assert config.run.resolved_burn_in(5.0) == pytest.approx(2.0)

    def test_seed_bounds(self):
        with pytest.raises(ConfigError, match="run.seed"):
            parse_config(tiny_document(run={"seed": -1}))
        with pytest.raises(ConfigError, match="run.seed"):
            parse_config(tiny_document(run={"seed": 2**64}))

    def test_boolean_is_not_a_number(self):
        with pytest.raises(ConfigError, match="model.nu: must be a number"):
            parse_config({"kind": "simulate", "model": {"nu": True}})

    def test_initial_vector_validation(self):
        with pytest.raises(ConfigError, match="simulate.initial: must have length 4"):
            parse_config(tiny_document(simulate={"initial": [1.0, 2.0]}))
        with pytest.raises(ConfigError, match=r"simulate.initial\[1\]"):
            parse_config(tiny_document(simulate={"initial": [1.0, "x", 0.0, 0.0]}))

    def test_sweep_options_validation(self):
        with pytest.raises(ConfigError, match="nu_values: missing"):
            parse_config(tiny_document(kind="sweep_nu"))
        with pytest.raises(ConfigError, match="nu_values: must be a nonempty"):
            parse_config(tiny_document(kind="sweep_nu", sweep_nu={"nu_values": []}))
        with pytest.raises(ConfigError, match=r"nu_values\[0\]"):
            parse_config(
                tiny_document(kind="sweep_nu", sweep_nu={"nu_values": [-0.1]})
            )
        with pytest.raises(ConfigError, match="trajectories_per_nu"):
            parse_config(
                tiny_document(
                    kind="sweep_nu",
                    sweep_nu={"nu_values": [0.1, 0.2], "trajectories_per_nu": [1]},
                )
            )

    def test_hormander_options_validation(self):
        with pytest.raises(ConfigError, match="n_target: missing"):
            parse_config(tiny_document(kind="hormander"))
        with pytest.raises(ConfigError, match="n_target: must be <= 3"):
            parse_config(tiny_document(kind="hormander", hormander={"n_target": 4}))
        with pytest.raises(ConfigError, match="tol"):
            parse_config(
                tiny_document(
                    kind="hormander", hormander={"n_target": 1, "tol": 0.0}
                )
            )

    def test_malliavin_options_validation(self):
        with pytest.raises(ConfigError, match="alpha: must be < 1.0"):
            parse_config(
                tiny_document(kind="malliavin", malliavin={"n_low": 2, "alpha": 1.0})
            )
        with pytest.raises(ConfigError, match="gram_time"):
            parse_config(
                tiny_document(
                    kind="malliavin", malliavin={"n_low": 2, "gram_time": 0.0}
                )
            )
        with pytest.raises(ConfigError, match="n_low: must be <= 3"):
            parse_config(tiny_document(kind="malliavin"))

    def test_control_options_validation(self):
        with pytest.raises(ConfigError, match="beta: missing"):
            parse_config(tiny_document(kind="control_demo"))
        with pytest.raises(ConfigError, match="control_demo.xi"):
            parse_config(
                tiny_document(
                    kind="control_demo", control_demo={"beta": 1.0, "xi": [1.0]}
                )
            )

    def test_config_hash_tracks_content(self):
        base = parse_config(tiny_document())
        same = parse_config(tiny_document())
        assert base.config_hash() == same.config_hash()
        assert base.with_seed(2).config_hash() != base.config_hash()

    def test_with_seed_validation(self):
        config = parse_config(tiny_document())
        assert config.with_seed(9).run.seed == 9
        with pytest.raises(ConfigError, match="seed"):
            config.with_seed(-1)


class TestLoadConfig:
    def test_round_trip(self, tmp_path):
        path = write_config(tmp_path, tiny_document())
        config = load_config(path)
        assert isinstance(config, ExperimentConfig)
        assert config.run.seed == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.json")

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "kind": "simulate",\n  oops\n}\n', encoding="utf-8")
        with pytest.raises(ConfigError, match="line 3"):
            load_config(path)


class TestResolveSeed:
    def test_precedence(self):
        assert resolve_seed(5, override=None, env={}) == 5
        assert resolve_seed(5, override=None, env={"CASCADE_SEED": "11"}) == 11
        assert resolve_seed(5, override=7, env={"CASCADE_SEED": "11"}) == 7

    def test_env_validation(self):
        with pytest.raises(ConfigError, match="decimal"):
            resolve_seed(0, env={"CASCADE_SEED": "0x10"})
        with pytest.raises(ConfigError, match=r"\[0, 2\^64\)"):
            resolve_seed(0, env={"CASCADE_SEED": str(2**64)})

    def test_override_validation(self):
        with pytest.raises(ConfigError, match="seed"):
            resolve_seed(0, override=-3, env={})


class TestRunArtifacts:
    def test_simulate_outputs(self, tmp_path):
        config = parse_config(tiny_document())
        out = run(config, tmp_path / "out", threads=1)
        header, rows = read_csv(out / "shells.csv")
        assert header == SHELLS_HEADER
        assert len(rows) == config.model.n_shells
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["version"] == __version__
        assert manifest["kind"] == "simulate"
        assert manifest["config_sha256"] == config.config_hash()
        assert manifest["outputs"]["shells.csv"]["rows"] == len(rows)
        assert manifest["n_samples"] > 0
        assert len(list(out.glob("manifest.json"))) == 1

    def test_csv_cells_round_trip_through_repr(self, tmp_path):
        out = run(parse_config(tiny_document()), tmp_path / "out", threads=1)
        _, rows = read_csv(out / "shells.csv")
        for row in rows:
            for cell in row[1:]:
                assert repr(float(cell)) == cell

    def test_identical_runs_are_byte_identical(self, tmp_path):
        config = parse_config(tiny_document())
        out1 = run(config, tmp_path / "a", threads=1)
        out2 = run(config, tmp_path / "b", threads=2)
        assert (out1 / "shells.csv").read_bytes() == (out2 / "shells.csv").read_bytes()
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m1["outputs"] == m2["outputs"]
        assert m1["config_sha256"] == m2["config_sha256"]

    def test_seed_changes_payload(self, tmp_path):
        config = parse_config(tiny_document())
        out1 = run(config, tmp_path / "a", threads=1)
        out2 = run(config.with_seed(2), tmp_path / "b", threads=1)
        assert (out1 / "shells.csv").read_bytes() != (out2 / "shells.csv").read_bytes()

    def test_parallel_merge_matches_sequential(self):
        document = tiny_document()
        document["run"]["n_trajectories"] = 4
        config = parse_config(document)
        initial = np.zeros(config.model.n_shells)
        seq = run_ensemble(config.model, config.run, initial, threads=1)
        par = run_ensemble(config.model, config.run, initial, threads=3)
        assert seq.count == par.count
        np.testing.assert_allclose(seq.mean_u2, par.mean_u2, rtol=1e-10)
        np.testing.assert_allclose(
            seq._batch_matrix(), par._batch_matrix(), rtol=1e-10
        )

    def test_sweep_outputs(self, tmp_path):
        document = tiny_document(
            kind="sweep_nu",
            sweep_nu={"nu_values": [0.1, 0.01], "trajectories_per_nu": [1, 2]},
        )
        out = run(parse_config(document), tmp_path / "out", threads=1)
        header, rows = read_csv(out / "anomaly.csv")
        assert header == ANOMALY_HEADER
        assert len(rows) == 2
        assert [float(r[0]) for r in rows] == [0.1, 0.01]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["n_samples"] == sum(int(r[3]) for r in rows)

    def test_spectrum_outputs(self, tmp_path):
        out = run(parse_config(tiny_document(kind="spectrum")), tmp_path / "o")
        header, rows = read_csv(out / "spectrum.csv")
        assert header == SPECTRUM_HEADER
        assert len(rows) == 4

    def test_hormander_pass_writes_certificate(self, tmp_path):
        document = tiny_document(kind="hormander", hormander={"n_target": 2})
        out = run(parse_config(document), tmp_path / "out")
        certificate = json.loads((out / "certificate.json").read_text())
        assert certificate["passed"] is True
        assert certificate["achieved_rank"] == 3
        assert (out / "manifest.json").exists()

    def test_hormander_failure_still_writes_artifacts(self, tmp_path):
        document = tiny_document(
            kind="hormander", hormander={"n_target": 3, "max_m": 2}
        )
        with pytest.raises(SpanCertificateError, match="achieved rank"):
            run(parse_config(document), tmp_path / "out")
        certificate = json.loads((tmp_path / "out" / "certificate.json").read_text())
        assert certificate["passed"] is False
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_malliavin_outputs(self, tmp_path):
        document = tiny_document(
            kind="malliavin",
            malliavin={"n_paths": 3, "n_low": 2, "gram_time": 0.02, "n_quad": 8},
        )
        document["run"]["burn_in"] = 0.2
        out = run(parse_config(document), tmp_path / "out", threads=2)
        header, rows = read_csv(out / "malliavin.csv")
        assert header == "path,probe_value,m00"
        assert [int(r[0]) for r in rows] == [0, 1, 2]
        assert all(float(r[2]) > 0.0 for r in rows)

    def test_control_outputs(self, tmp_path):
        document = tiny_document(
            kind="control_demo",
            control_demo={"beta": 1e-4, "n_cycles": 3, "spin_up": 0.5, "n_quad": 16},
        )
        out = run(parse_config(document), tmp_path / "out")
        header, rows = read_csv(out / "control.csv")
        assert header == CONTROL_HEADER
        assert len(rows) == 4
        assert rows[0][2] == "0.0"
        energies = [float(r[2]) for r in rows]
        assert energies == sorted(energies)

    def test_blow_up_propagates(self, tmp_path):
        document = tiny_document(
            model={"nu": 0.0, "c": 3.0, "sigma": 1.0, "n_shells": 6},
            run={"dt": 0.5, "horizon": 10.0, "burn_in": 0.0, "batch_length": 5},
            simulate={"initial": [1e200, 1e200, 0.0, 0.0, 0.0, 0.0]},
        )
        with pytest.raises(BlowUpError):
            run(parse_config(document), tmp_path / "out")

    def test_insufficient_samples_propagates(self, tmp_path):
        document = tiny_document(run={"horizon": 0.1, "batch_length": 100000})
        with pytest.raises(InsufficientSamplesError):
            run(parse_config(document), tmp_path / "out")

    def test_row_counts_match_manifest(self, tmp_path):
        document = tiny_document(
            kind="sweep_nu", sweep_nu={"nu_values": [0.05, 0.01]}
        )
        out = run(parse_config(document), tmp_path / "out")
        manifest = json.loads((out / "manifest.json").read_text())
        for name, meta in manifest["outputs"].items():
            if name.endswith(".csv"):
                _, rows = read_csv(out / name)
                assert meta["rows"] == len(rows)

    def test_threads_validation(self, tmp_path):
        from cascade.model import ParameterError

        with pytest.raises(ParameterError, match="threads"):
            run(parse_config(tiny_document()), tmp_path / "out", threads=0)
