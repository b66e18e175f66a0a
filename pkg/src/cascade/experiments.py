"""Experiment configuration, orchestration, and persistence.

This is the only module that touches the filesystem.  A run loads a JSON
config, validates it against the model invariants, fans independent
trajectories across a thread pool, merges their accumulators in
trajectory order, and writes CSV outputs plus a ``manifest.json`` that
records the config hash, the package version, and a checksum with a row
count for every output.  Identical ``(config, seed, version)`` triples
produce byte-identical CSV payloads; only the manifest's wall-clock
block varies between repeats.

Failure categories map onto process exit codes: integrator blow-up is
``2``, too few samples for error bars is ``3``, a failed span
certificate is ``4``, and any other error is ``1``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
from numpy.typing import NDArray

from cascade import __version__
from cascade.hormander import verify_span
from cascade.integrator import NoiseStream, StepScheme, simulate
from cascade.linearize import control_experiment, malliavin_gram, spectral_probe
from cascade.model import CascadeError, ParameterError, ShellParams, ShellState
from cascade.stats import (
    MomentAccumulator,
    balance_residuals,
    default_burn_in,
    dissipation_rate,
    flux_moments,
    spectrum_table,
)

EXPERIMENT_KINDS = (
    "simulate",
    "sweep_nu",
    "spectrum",
    "hormander",
    "malliavin",
    "control_demo",
)

SHELLS_HEADER = "j,mean_u,mean_u2,mean_u3,flux_mean,flux_se,balance_r1"
ANOMALY_HEADER = "nu,epsilon,epsilon_se,n_samples"
SPECTRUM_HEADER = "j,log2_mean_u2,se"
CONTROL_HEADER = "cycle,rho_norm,control_energy"

EXIT_SUCCESS = 0
EXIT_FAILURE = 1
EXIT_BLOW_UP = 2
EXIT_INSUFFICIENT_SAMPLES = 3
EXIT_CERTIFICATE_FAILED = 4

ENV_SEED = "CASCADE_SEED"

_REQUIRED = object()


class ConfigError(CascadeError, ValueError):
    """A config file is missing, malformed, or violates a constraint."""


class SpanCertificateError(CascadeError):
    """A span certificate run completed but the certificate failed."""


def _require_mapping(raw: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: must be a mapping (got {type(raw).__name__})")
    return raw

def _reject_unknown(block: Mapping[str, Any], prefix: str, allowed) -> None:
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}: unknown key")


def _get_number(
    block: Mapping[str, Any],
    prefix: str,
    key: str,
    default: Any,
    minimum: float | None = None,
    maximum: float | None = None,
    exclusive_min: float | None = None,
    exclusive_max: float | None = None,
) -> float:
    raw = block.get(key, default)
    if raw is _REQUIRED:
        raise ConfigError(f"{prefix}{key}: missing required key")
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{prefix}{key}: must be a number (got {raw!r})")
    value = float(raw)
    if not math.isfinite(value):
        raise ConfigError(f"{prefix}{key}: must be finite (got {raw!r})")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{prefix}{key}: must be >= {minimum} (got {raw!r})")
    if maximum is not None and value > maximum:
        raise ConfigError(f"{prefix}{key}: must be <= {maximum} (got {raw!r})")
    if exclusive_min is not None and value <= exclusive_min:
        raise ConfigError(f"{prefix}{key}: must be > {exclusive_min} (got {raw!r})")
    if exclusive_max is not None and value >= exclusive_max:
        raise ConfigError(f"{prefix}{key}: must be < {exclusive_max} (got {raw!r})")
    return value


def _get_int(
    block: Mapping[str, Any],
    prefix: str,
    key: str,
    default: Any,
    minimum: int | None = None,
    maximum: int | None = None,
) -> int:
    raw = block.get(key, default)
    if raw is _REQUIRED:
        raise ConfigError(f"{prefix}{key}: missing required key")
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConfigError(f"{prefix}{key}: must be an integer (got {raw!r})")
    if minimum is not None and raw < minimum:
        raise ConfigError(f"{prefix}{key}: must be >= {minimum} (got {raw})")
    if maximum is not None and raw > maximum:
        raise ConfigError(f"{prefix}{key}: must be <= {maximum} (got {raw})")
    return int(raw)


def _get_vector(
    block: Mapping[str, Any],
    prefix: str,
    key: str,
    length: int,
) -> list[float] | None:
    raw = block.get(key)
    if raw is None:
        return None
    if not isinstance(raw, list):
        raise ConfigError(f"{prefix}{key}: must be a list of numbers or null")
    if len(raw) != length:
        raise ConfigError(
            f"{prefix}{key}: must have length {length} (got {len(raw)})"
        )
    out = []
    for i, entry in enumerate(raw):
        if isinstance(entry, bool) or not isinstance(entry, (int, float)):
            raise ConfigError(f"{prefix}{key}[{i}]: must be a number (got {entry!r})")
        if not math.isfinite(float(entry)):
            raise ConfigError(f"{prefix}{key}[{i}]: must be finite (got {entry!r})")
        out.append(float(entry))
    return out


@dataclass(frozen=True)
class RunSettings:
    """Shared trajectory-ensemble settings.

    ``burn_in = None`` selects the rule ``min(10 / nu, horizon / 2)``
    evaluated at each run's viscosity, which is what a viscosity sweep
    needs; an explicit value applies verbatim to every run.
    """

    dt: float
    horizon: float
    burn_in: float | None
    sample_stride: int
    n_trajectories: int
    seed: int
    batch_length: int

    def resolved_burn_in(self, nu: float) -> float:
        if self.burn_in is not None:
            return self.burn_in
        return default_burn_in(nu, self.horizon)


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description.

    ``options`` holds the kind-specific block with every default filled
    in, using plain JSON-compatible values only.
    """

    kind: str
    model: ShellParams
    run: RunSettings
    options: Mapping[str, Any]

    def canonical(self) -> dict[str, Any]:
        """Plain-dict echo of the config with all defaults filled."""
        return {
            "kind": self.kind,
            "model": {
                "nu": self.model.nu,
                "c": self.model.c,
                "sigma": self.model.sigma,
                "n_shells": self.model.n_shells,
            },
            "run": {
                "dt": self.run.dt,
                "horizon": self.run.horizon,
                "burn_in": self.run.burn_in,
                "sample_stride": self.run.sample_stride,
                "n_trajectories": self.run.n_trajectories,
                "seed": self.run.seed,
                "batch_length": self.run.batch_length,
            },
            self.kind: {key: self.options[key] for key in sorted(self.options)},
        }

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
            raise ConfigError(f"seed: must be an integer (got {seed!r})")
        if not 0 <= int(seed) < 2**64:
            raise ConfigError(f"seed: must lie in [0, 2^64) (got {seed})")
        return dataclasses.replace(
            self, run=dataclasses.replace(self.run, seed=int(seed))
        )


def _parse_model(raw: Any) -> ShellParams:
    block = _require_mapping(raw, "model")
    _reject_unknown(block, "model.", ("nu", "c", "sigma", "n_shells"))
    nu = _get_number(block, "model.", "nu", 1e-4)
    c = _get_number(block, "model.", "c", 1.0)
    sigma = _get_number(block, "model.", "sigma", 1.0)
    n_shells = _get_int(block, "model.", "n_shells", 19)
    try:
        return ShellParams(nu=nu, c=c, sigma=sigma, n_shells=n_shells)
    except ParameterError as exc:
        raise ConfigError(f"model.{exc}") from exc


def _parse_run(raw: Any, nu: float) -> RunSettings:
    block = _require_mapping(raw, "run")
    allowed = (
        "dt",
        "horizon",
        "burn_in",
        "sample_stride",
        "n_trajectories",
        "seed",
        "batch_length",
    )
    _reject_unknown(block, "run.", allowed)
    dt = _get_number(block, "run.", "dt", 1e-6, exclusive_min=0.0)
    horizon = _get_number(block, "run.", "horizon", 10.0, exclusive_min=0.0)
    burn_in: float | None
    if block.get("burn_in") is None:
        burn_in = None
    else:
        burn_in = _get_number(block, "run.", "burn_in", _REQUIRED, minimum=0.0)
        if burn_in >= horizon:
            raise ConfigError(
                f"run.burn_in: must be < horizon = {horizon} (got {burn_in})"
            )
    sample_stride = _get_int(block, "run.", "sample_stride", 256, minimum=1)
    n_trajectories = _get_int(block, "run.", "n_trajectories", 2, minimum=1)
    seed = _get_int(block, "run.", "seed", 0, minimum=0, maximum=2**64 - 1)
    batch_length = _get_int(block, "run.", "batch_length", 1000, minimum=1)
    return RunSettings(
        dt=dt,
        horizon=horizon,
        burn_in=burn_in,
        sample_stride=sample_stride,
        n_trajectories=n_trajectories,
        seed=seed,
        batch_length=batch_length,
    )


def _parse_simulate_options(
    block: Mapping[str, Any], prefix: str, params: ShellParams
) -> dict[str, Any]:
    _reject_unknown(block, prefix, ("initial",))
    return {"initial": _get_vector(block, prefix, "initial", params.n_shells)}


def _parse_sweep_options(
    block: Mapping[str, Any], prefix: str, params: ShellParams
) -> dict[str, Any]:
    _reject_unknown(block, prefix, ("nu_values", "trajectories_per_nu"))
    raw_values = block.get("nu_values", _REQUIRED)
    if raw_values is _REQUIRED:
        raise ConfigError(f"{prefix}nu_values: missing required key")
    if not isinstance(raw_values, list) or not raw_values:
        raise ConfigError(f"{prefix}nu_values: must be a nonempty list of numbers")
    nu_values = []
    for i, entry in enumerate(raw_values):
        if isinstance(entry, bool) or not isinstance(entry, (int, float)):
            raise ConfigError(
                f"{prefix}nu_values[{i}]: must be a number (got {entry!r})"
            )
        value = float(entry)
        if not math.isfinite(value) or value < 0.0:
            raise ConfigError(
                f"{prefix}nu_values[{i}]: must be finite and >= 0 (got {entry!r})"
            )
        nu_values.append(value)
    raw_traj = block.get("trajectories_per_nu")
    per_nu: list[int] | None
    if raw_traj is None:
        per_nu = None
    else:
        if not isinstance(raw_traj, list) or len(raw_traj) != len(nu_values):
            raise ConfigError(
                f"{prefix}trajectories_per_nu: must be a list matching "
                f"nu_values in length ({len(nu_values)})"
            )
        per_nu = []
        for i, entry in enumerate(raw_traj):
            if isinstance(entry, bool) or not isinstance(entry, int) or entry < 1:
                raise ConfigError(
                    f"{prefix}trajectories_per_nu[{i}]: must be an integer >= 1 "
                    f"(got {entry!r})"
                )
            per_nu.append(int(entry))
    return {"nu_values": nu_values, "trajectories_per_nu": per_nu}


def _parse_hormander_options(
    block: Mapping[str, Any], prefix: str, params: ShellParams
) -> dict[str, Any]:
    _reject_unknown(block, prefix, ("n_target", "max_m", "tol"))
    n_target = _get_int(
        block, prefix, "n_target", _REQUIRED, minimum=0, maximum=params.top_shell
    )
    max_m = None
    if block.get("max_m") is not None:
        max_m = _get_int(block, prefix, "max_m", _REQUIRED, minimum=0)
    tol = _get_number(block, prefix, "tol", 1e-9, exclusive_min=0.0)
    return {"n_target": n_target, "max_m": max_m, "tol": tol}


def _parse_malliavin_options(
    block: Mapping[str, Any], prefix: str, params: ShellParams
) -> dict[str, Any]:
    _reject_unknown(
        block, prefix, ("n_paths", "n_low", "alpha", "gram_time", "n_quad")
    )
    return {
        "n_paths": _get_int(block, prefix, "n_paths", 100, minimum=1),
        "n_low": _get_int(
            block, prefix, "n_low", 4, minimum=0, maximum=params.top_shell
        ),
        "alpha": _get_number(
            block, prefix, "alpha", 0.5, minimum=0.0, exclusive_max=1.0
        ),
        "gram_time": _get_number(
            block, prefix, "gram_time", 0.05, exclusive_min=0.0
        ),
        "n_quad": _get_int(block, prefix, "n_quad", 64, minimum=0),
    }


def _parse_control_options(
    block: Mapping[str, Any], prefix: str, params: ShellParams
) -> dict[str, Any]:
    _reject_unknown(block, prefix, ("beta", "n_cycles", "xi", "n_quad", "spin_up"))
    return {
        "beta": _get_number(block, prefix, "beta", _REQUIRED, exclusive_min=0.0),
        "n_cycles": _get_int(block, prefix, "n_cycles", 10, minimum=1),
        "xi": _get_vector(block, prefix, "xi", params.n_shells),
        "n_quad": _get_int(block, prefix, "n_quad", 64, minimum=0),
        "spin_up": _get_number(block, prefix, "spin_up", 10.0, minimum=0.0),
    }


_OPTION_PARSERS: dict[str, Callable[..., dict[str, Any]]] = {
    "simulate": _parse_simulate_options,
    "sweep_nu": _parse_sweep_options,
    "spectrum": _parse_simulate_options,
    "hormander": _parse_hormander_options,
    "malliavin": _parse_malliavin_options,
    "control_demo": _parse_control_options,
}


def parse_config(data: Any) -> ExperimentConfig:
    """Validate an already-parsed JSON document into a config.

    Every key is checked; unknown keys at any level are rejected with a
    diagnostic naming the key, and constraint violations name the key
    and the constraint.
    """
    document = _require_mapping(data, "config")
    kind = document.get("kind", _REQUIRED)
    if kind is _REQUIRED:
        raise ConfigError("kind: missing required key")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(
            f"kind: must be one of {list(EXPERIMENT_KINDS)} (got {kind!r})"
        )
    _reject_unknown(document, "", ("kind", "model", "run", kind))
    model = _parse_model(document.get("model", {}))
    run = _parse_run(document.get("run", {}), model.nu)
    block = _require_mapping(document.get(kind, {}), kind)
    options = _OPTION_PARSERS[kind](block, f"{kind}.", model)
    return ExperimentConfig(kind=kind, model=model, run=run, options=options)


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a JSON experiment config from ``path``.

    Raises
    ------
    ConfigError
        If the file is missing, fails to parse (the diagnostic carries
        the line number), or violates a constraint.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config file is not UTF-8: {path}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return parse_config(data)


def resolve_seed(
    config_seed: int,
    override: int | None = None,
    env: Mapping[str, str] | None = None,
) -> int:
    """Apply the seed precedence: explicit override, then the
    ``CASCADE_SEED`` environment variable, then the config value."""
    if override is not None:
        if isinstance(override, bool) or not isinstance(override, (int, np.integer)):
            raise ConfigError(f"seed: must be an integer (got {override!r})")
        if not 0 <= int(override) < 2**64:
            raise ConfigError(f"seed: must lie in [0, 2^64) (got {override})")
        return int(override)
    environment = os.environ if env is None else env
    raw = environment.get(ENV_SEED)
    if raw is not None:
        try:
            value = int(raw, 10)
        except ValueError as exc:
            raise ConfigError(
                f"{ENV_SEED}: must be a decimal integer (got {raw!r})"
            ) from exc
        if not 0 <= value < 2**64:
            raise ConfigError(f"{ENV_SEED}: must lie in [0, 2^64) (got {value})")
        return value
    return int(config_seed)


def _format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        raise ParameterError(f"cannot format a boolean CSV cell ({value!r})")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    raise ParameterError(f"cannot format CSV cell of type {type(value).__name__}")


def _csv_bytes(header: str, rows) -> bytes:
    lines = [header]
    for row in rows:
        lines.append(",".join(_format_cell(cell) for cell in row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def _initial_vector(
    initial: list[float] | None, params: ShellParams
) -> NDArray[np.float64]:
    if initial is None:
        return np.zeros(params.n_shells)
    return np.asarray(initial, dtype=np.float64)


def _accumulator_kappa(params: ShellParams) -> float:
    if params.sigma > 0.0:
        return params.nu / (16.0 * params.sigma**2)
    return 0.0


def _one_trajectory(
    params: ShellParams,
    run: RunSettings,
    initial: NDArray[np.float64],
    stream_id: int,
) -> MomentAccumulator:
    acc = MomentAccumulator(
        params.n_shells,
        burn_in=run.resolved_burn_in(params.nu),
        kappa=_accumulator_kappa(params),
        batch_length=run.batch_length,
    )
    noise = NoiseStream(run.seed, stream_id, run.dt)
    record = simulate(
        params,
        StepScheme(),
        ShellState(u=initial.copy(), t=0.0),
        run.horizon,
        noise,
        stride=run.sample_stride,
    )
    acc.record_block(record.times, record.states)
    return acc


def _thread_map(fn: Callable[[int], Any], args: list[int], threads: int) -> list[Any]:
    if threads <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, args))


def run_ensemble(
    params: ShellParams,
    run: RunSettings,
    initial: NDArray[np.float64],
    threads: int = 1,
    stream_offset: int = 0,
) -> MomentAccumulator:
    """Simulate ``run.n_trajectories`` independent trajectories and merge
    their accumulators in trajectory order.

    The merged result is a pure function of ``(params, run,
    stream_offset)``: the thread count only changes the schedule, never
    the merge order, so parallel and sequential runs agree bitwise.
    """
    ids = [stream_offset + i for i in range(run.n_trajectories)]
    accs = _thread_map(
        lambda sid: _one_trajectory(params, run, initial, sid), ids, threads
    )
    merged = accs[0]
    for acc in accs[1:]:
        merged.merge(acc)
    return merged


def _handle_simulate(config: ExperimentConfig, threads: int):
    params = config.model
    initial = _initial_vector(config.options["initial"], params)
    acc = run_ensemble(params, config.run, initial, threads)
    frag = balance_residuals(acc, params)
    flux_mean, flux_se = flux_moments(acc, params)
    mean_u = acc.mean_u
    mean_u2 = acc.mean_u2
    mean_u3 = acc.mean_u3
    rows = [
        (
            j,
            float(mean_u[j]),
            float(mean_u2[j]),
            float(mean_u3[j]),
            float(flux_mean[j]),
            float(flux_se[j]),
            float(frag.r1[j]),
        )
        for j in range(params.n_shells)
    ]
    files = {"shells.csv": _csv_bytes(SHELLS_HEADER, rows)}
    return files, {"shells.csv": len(rows)}, acc.count, None


def _handle_spectrum(config: ExperimentConfig, threads: int):
    params = config.model
    initial = _initial_vector(config.options["initial"], params)
    acc = run_ensemble(params, config.run, initial, threads)
    log2_u2, se = spectrum_table(acc)
    rows = [
        (j, float(log2_u2[j]), float(se[j])) for j in range(params.n_shells)
    ]
    files = {"spectrum.csv": _csv_bytes(SPECTRUM_HEADER, rows)}
    return files, {"spectrum.csv": len(rows)}, acc.count, None


def _handle_sweep_nu(config: ExperimentConfig, threads: int):
    nu_values = config.options["nu_values"]
    per_nu = config.options["trajectories_per_nu"]
    rows = []
    total = 0
    offset = 0
    for k, nu in enumerate(nu_values):
        params = dataclasses.replace(config.model, nu=nu)
        run = config.run
        if per_nu is not None:
            run = dataclasses.replace(run, n_trajectories=per_nu[k])
        initial = np.zeros(params.n_shells)
        acc = run_ensemble(params, run, initial, threads, stream_offset=offset)
        offset += run.n_trajectories
        epsilon, epsilon_se = dissipation_rate(acc, params)
        rows.append((float(nu), float(epsilon), float(epsilon_se), acc.count))
        total += acc.count
    files = {"anomaly.csv": _csv_bytes(ANOMALY_HEADER, rows)}
    return files, {"anomaly.csv": len(rows)}, total, None


def _handle_hormander(config: ExperimentConfig, threads: int):
    cert = verify_span(
        config.model,
        config.options["n_target"],
        max_m=config.options["max_m"],
        tol=config.options["tol"],
    )
    payload = json.dumps(cert.to_dict(), indent=2, sort_keys=True) + "\n"
    files = {"certificate.json": payload.encode("utf-8")}
    deferred = None
    if not cert.passed:
        deferred = SpanCertificateError(
            f"span certificate failed: achieved rank {cert.achieved_rank} "
            f"of {cert.N + 1} within depth budget m = {cert.m}"
        )
    return files, {}, 0, deferred


def _handle_malliavin(config: ExperimentConfig, threads: int):
    params = config.model
    run = config.run
    opts = config.options
    spin_up = run.resolved_burn_in(params.nu)
    gram_time = opts["gram_time"]

    def one_path(path_index: int):
        state = ShellState(u=np.zeros(params.n_shells), t=0.0)
        if spin_up > 0.0:
            warm = simulate(
                params,
                StepScheme(),
                state,
                spin_up,
                NoiseStream(run.seed, 2 * path_index, run.dt),
                stride=max(1, int(round(spin_up / run.dt))),
            )
            state = ShellState(u=warm.final.u, t=0.0)
        base = simulate(
            params,
            StepScheme(),
            state,
            gram_time,
            NoiseStream(run.seed, 2 * path_index + 1, run.dt),
            stride=1,
        )
        gram = malliavin_gram(base, 0.0, gram_time, n_quad=opts["n_quad"])
        probe = spectral_probe(gram, opts["n_low"], opts["alpha"])
        return path_index, float(probe), float(gram.matrix[0, 0])

    rows = _thread_map(one_path, list(range(opts["n_paths"])), threads)
    files = {"malliavin.csv": _csv_bytes("path,probe_value,m00", rows)}
    return files, {"malliavin.csv": len(rows)}, len(rows), None


def _handle_control(config: ExperimentConfig, threads: int):
    params = config.model
    opts = config.options
    xi = opts["xi"]
    xi_vec = (
        np.eye(params.n_shells)[0] if xi is None else np.asarray(xi, dtype=np.float64)
    )
    record = control_experiment(
        params,
        opts["beta"],
        opts["n_cycles"],
        xi_vec,
        config.run.dt,
        seed=config.run.seed,
        spin_up=opts["spin_up"],
        n_quad=opts["n_quad"],
    )
    rows = [(0, float(record.rho_norms[0]), 0.0)]
    for k in range(opts["n_cycles"]):
        rows.append(
            (
                k + 1,
                float(record.rho_norms[k + 1]),
                float(record.cumulative_energy[k]),
            )
        )
    files = {"control.csv": _csv_bytes(CONTROL_HEADER, rows)}
    return files, {"control.csv": len(rows)}, opts["n_cycles"], None


_HANDLERS = {
    "simulate": _handle_simulate,
    "sweep_nu": _handle_sweep_nu,
    "spectrum": _handle_spectrum,
    "hormander": _handle_hormander,
    "malliavin": _handle_malliavin,
    "control_demo": _handle_control,
}


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        return os.cpu_count() or 1
    if isinstance(threads, bool) or not isinstance(threads, (int, np.integer)):
        raise ParameterError(f"threads: must be an integer >= 1 (got {threads!r})")
    if threads < 1:
        raise ParameterError(f"threads: must be an integer >= 1 (got {threads})")
    return int(threads)


def run(
    config: ExperimentConfig,
    out_dir: str | Path,
    threads: int | None = None,
) -> Path:
    """Execute ``config`` and persist its outputs under ``out_dir``.

    The directory is created if needed.  Every output is written before
    ``manifest.json``, so a directory containing a manifest is a
    completed run.  CSV payloads are a pure function of ``(config,
    seed, version)``; the manifest additionally carries wall-clock
    metadata.

    Raises
    ------
    BlowUpError, InsufficientSamplesError, SpanCertificateError
        Mapped by the CLI onto exit codes 2, 3, and 4.  A failed span
        certificate still writes its outputs and manifest first.
    """
    threads = _resolve_threads(threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    files, row_counts, n_samples, deferred = _HANDLERS[config.kind](config, threads)
    outputs_meta = {}
    for name in sorted(files):
        payload = files[name]
        (out / name).write_bytes(payload)
        meta: dict[str, Any] = {
            "sha256": hashlib.sha256(payload).hexdigest(),
            "bytes": len(payload),
        }
        if name in row_counts:
            meta["rows"] = row_counts[name]
        outputs_meta[name] = meta
    manifest = {
        "version": __version__,
        "kind": config.kind,
        "config_sha256": config.config_hash(),
        "config": config.canonical(),
        "n_samples": n_samples,
        "outputs": outputs_meta,
        "wall_clock": {
            "started_at_unix": started,
            "elapsed_seconds": time.time() - started,
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if deferred is not None:
        raise deferred
    return out
