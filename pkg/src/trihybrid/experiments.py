"""Configuration-driven experiment runner.

Reads a flat key-value config (INI sections: scenario, solver, sweep), runs
every sweep point x method x scenario seed, and appends one row per run to a
results CSV.  Runs are deterministic for a fixed config: scenario seeds are
taken from the config, solver seeds are fixed, and rows are written in sweep
order regardless of worker count.  Wall-clock timings go to a sidecar file
so the results CSV is byte-reproducible.
"""

from __future__ import annotations

import configparser
import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import bd_zero_forcing, fixed_pattern_wmmse, interference_leakage
from .channel import (
    ScenarioConfig,
    compose,
    generate_scenario,
    selection_effective_channel,
    selection_matrix,
    synthesis_effective_channel,
)
from .decomp import decompose_precoder
from .exceptions import ConfigurationError
from .metrics import audit_constraints
from .patterns import gaussian_beam_grid, most_square_factors
from .units import dbm_to_milliwatts
from .wmmse import SolverConfig, run_selection, run_synthesis, split_precoder, weighted_sum_rate

WORKER_ENV = "TRIHYBRID_WORKERS"

METHODS = ("model1", "model2", "wmmse_fixed", "zf")

RESULT_COLUMNS = (
    "axis",
    "sweep_value",
    "method",
    "scenario_seed",
    "n_antennas",
    "rf_chains",
    "sum_rate_digital",
    "sum_rate_hybrid",
    "objective",
    "outer_iterations",
    "converged",
    "warnings",
    "max_power_violation",
    "modulus_deviation",
    "antenna_deviation",
    "min_pattern_gain",
    "decomp_residual",
)

_SCENARIO_KEYS = {
    "carrier_hz",
    "bs_rows",
    "bs_cols",
    "bs_spacing_wl",
    "ue_rows",
    "ue_cols",
    "ue_spacing_wl",
    "users",
    "paths_per_user",
    "user_positions",
    "user_box",
    "scatterer_box",
    "pathloss_exponent",
}

_SOLVER_KEYS = {
    "max_outer_iterations",
    "objective_tol",
    "rf_chains_offset",
    "candidates",
    "beamwidth_deg",
    "sh_degree",
    "rho",
    "noise_dbm",
    "power_dbm",
    "streams_per_user",
    "decomp_iterations",
    "manifold_max_iterations",
    "manifold_tol",
    "manifold_restarts",
    "seed",
    "warm_start",
}

_SWEEP_KEYS = {"axis", "values", "methods", "seeds", "output", "traces_dir"}

_AXES = ("power", "rfchains", "antennas")


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    streams_per_user: int
    candidates: int
    beamwidth_deg: float
    sh_degree: int
    rho: float
    power_dbm: float
    noise_dbm: float
    rf_chains_offset: int
    max_outer_iterations: int
    objective_tol: float
    decomp_iterations: int
    manifold_max_iterations: int
    manifold_tol: float
    manifold_restarts: int
    solver_seed: int
    warm_start: bool
    axis: str
    values: tuple[float, ...]
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    output: str
    traces_dir: str | None = None


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split())


def _parse_box(text: str) -> tuple[float, ...]:
    values = _parse_floats(text)
    if len(values) != 6:
        raise ConfigurationError(
            f"boxes need 6 values (xmin xmax ymin ymax zmin zmax), got {len(values)}"
        )
    return values


def _check_keys(section: str, parser: configparser.ConfigParser, allowed) -> None:
    if not parser.has_section(section):
        return
    unknown = set(parser.options(section)) - allowed
    if unknown:
        raise ConfigurationError(
            f"[{section}] has unknown keys: {', '.join(sorted(unknown))}"
        )


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"cannot read config file {path}")
    for section, allowed in (
        ("scenario", _SCENARIO_KEYS),
        ("solver", _SOLVER_KEYS),
        ("sweep", _SWEEP_KEYS),
    ):
        _check_keys(section, parser, allowed)
    for section in parser.sections():
        if section not in ("scenario", "solver", "sweep"):
            raise ConfigurationError(f"unknown config section [{section}]")

    sc = parser["scenario"] if parser.has_section("scenario") else {}
    so = parser["solver"] if parser.has_section("solver") else {}
    sw = parser["sweep"] if parser.has_section("sweep") else {}

    def get(section, key, cast, default):
        if key in section:
            try:
                return cast(section[key])
            except (ValueError, ConfigurationError) as exc:
                raise ConfigurationError(f"bad value for {key}: {exc}") from exc
        return default

    user_positions = None
    if "user_positions" in sc:
        rows = [r.strip() for r in sc["user_positions"].split(";") if r.strip()]
        user_positions = np.array([_parse_floats(r) for r in rows])

    paths_raw = get(sc, "paths_per_user", str, "4").split()
    paths = int(paths_raw[0]) if len(paths_raw) == 1 else tuple(int(p) for p in paths_raw)

    scenario = ScenarioConfig(
        carrier_hz=get(sc, "carrier_hz", float, 30e9),
        bs_shape=(get(sc, "bs_rows", int, 4), get(sc, "bs_cols", int, 4)),
        bs_spacing_wavelengths=get(sc, "bs_spacing_wl", float, 0.5),
        ue_shape=(get(sc, "ue_rows", int, 2), get(sc, "ue_cols", int, 1)),
        ue_spacing_wavelengths=get(sc, "ue_spacing_wl", float, 0.5),
        n_users=get(sc, "users", int, 2),
        paths_per_user=paths,
        user_positions=user_positions,
        user_box=get(sc, "user_box", _parse_box, ScenarioConfig.user_box),
        scatterer_box=get(sc, "scatterer_box", _parse_box, ScenarioConfig.scatterer_box),
        pathloss_exponent=get(sc, "pathloss_exponent", float, 2.0),
    )

    axis = get(sw, "axis", str, "power").strip()
    if axis not in _AXES:
        raise ConfigurationError(f"sweep axis must be one of {_AXES}, got {axis!r}")
    methods = tuple(get(sw, "methods", str, " ".join(METHODS)).split())
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(f"unknown method {m!r}; choose from {METHODS}")
    values = get(sw, "values", _parse_floats, None)
    if values is None:
        values = (get(so, "power_dbm", float, 0.0),) if axis == "power" else (0.0,)
    seeds = tuple(int(s) for s in get(sw, "seeds", str, "1").split())

    config = ExperimentConfig(
        scenario=scenario,
        streams_per_user=get(so, "streams_per_user", int, 2),
        candidates=get(so, "candidates", int, 8),
        beamwidth_deg=get(so, "beamwidth_deg", float, 85.0),
        sh_degree=get(so, "sh_degree", int, 2),
        rho=get(so, "rho", float, 0.7),
        power_dbm=get(so, "power_dbm", float, 0.0),
        noise_dbm=get(so, "noise_dbm", float, -90.0),
        rf_chains_offset=get(so, "rf_chains_offset", int, 3),
        max_outer_iterations=get(so, "max_outer_iterations", int, 50),
        objective_tol=get(so, "objective_tol", float, 1e-6),
        decomp_iterations=get(so, "decomp_iterations", int, 30),
        manifold_max_iterations=get(so, "manifold_max_iterations", int, 150),
        manifold_tol=get(so, "manifold_tol", float, 1e-6),
        manifold_restarts=get(so, "manifold_restarts", int, 1),
        solver_seed=get(so, "seed", int, 0),
        warm_start=get(so, "warm_start", lambda v: v.lower() in ("1", "true", "yes"), False),
        axis=axis,
        values=values,
        methods=methods,
        seeds=seeds,
        output=get(sw, "output", str, "results.csv"),
        traces_dir=get(sw, "traces_dir", str, None),
    )
    _validate(config)
    return config


def _validate(config: ExperimentConfig) -> None:
    streams = config.streams_per_user * config.scenario.n_users
    if config.candidates < 1:
        raise ConfigurationError("need at least one pattern candidate")
    if config.sh_degree < 0:
        raise ConfigurationError("sh_degree must be nonnegative")
    if not 0.0 < config.rho <= 1.0:
        raise ConfigurationError(f"rho must lie in (0, 1], got {config.rho}")
    if config.axis == "antennas":
        sizes = [int(v) for v in config.values]
        if any(s < 1 for s in sizes):
            raise ConfigurationError("antenna counts must be positive")
    n_antennas = math.prod(config.scenario.bs_shape)
    if config.axis != "rfchains" and streams + config.rf_chains_offset > n_antennas:
        raise ConfigurationError(
            f"{streams + config.rf_chains_offset} chains exceed {n_antennas} antennas"
        )


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    row: dict
    trace_rows: list = field(default_factory=list)
    seconds: float = 0.0


def _float_repr(value) -> str:
    return repr(float(value))


def _scenario_for(config: ExperimentConfig, value: float, seed: int) -> ScenarioConfig:
    scenario = config.scenario
    if config.axis == "antennas":
        scenario = replace(scenario, bs_shape=most_square_factors(int(value)))
    return scenario


def _solver_for(config: ExperimentConfig, value: float, n_antennas: int) -> SolverConfig:
    from .sphere_opt import SolverOptions

    streams = config.streams_per_user * config.scenario.n_users
    power_dbm = config.power_dbm
    offset = config.rf_chains_offset
    if config.axis == "power":
        power_dbm = value
    elif config.axis == "rfchains":
        offset = int(value)
    rf_chains = streams + offset
    if rf_chains > n_antennas:
        raise ConfigurationError(
            f"{rf_chains} chains exceed {n_antennas} antennas at sweep value {value}"
        )
    return SolverConfig(
        power=float(dbm_to_milliwatts(power_dbm)),
        noise=float(dbm_to_milliwatts(config.noise_dbm)),
        weights=None,
        rf_chains=rf_chains,
        max_outer_iterations=config.max_outer_iterations,
        objective_tol=config.objective_tol,
        rho=config.rho,
        seed=config.solver_seed,
        decomp_iterations=config.decomp_iterations,
        manifold=SolverOptions(
            max_iterations=config.manifold_max_iterations,
            gradient_tol=config.manifold_tol,
            restarts=config.manifold_restarts,
        ),
    )


def run_point(config: ExperimentConfig, value: float, method: str, seed: int) -> RunResult:
    """Run one (sweep value, method, scenario seed) cell."""
    import time

    started = time.perf_counter()
    scenario_cfg = _scenario_for(config, value, seed)
    scenario = generate_scenario(scenario_cfg, seed)
    n_antennas = scenario.bs_layout.size
    solver = _solver_for(config, value, n_antennas)
    streams = (config.streams_per_user,) * scenario_cfg.n_users
    candidates = gaussian_beam_grid(
        config.candidates,
        beamwidth=np.deg2rad(config.beamwidth_deg),
        baseline_first=True,
    )
    fixed = candidates.baseline

    warm_f_d = None
    if config.warm_start and method in ("model1", "model2"):
        warm_state, _ = fixed_pattern_wmmse(scenario, fixed, streams, solver)
        warm_f_d = warm_state.f_d

    state = None
    trace = None
    audit_set = candidates
    if method == "model1":
        effs = [
            selection_effective_channel(g, candidates) for g in scenario.geometries
        ]
        state, trace = run_selection(effs, streams, solver, init_f_d=warm_f_d)
        channels = [compose(e, selection_matrix(state.selection, candidates.size)) for e in effs]
    elif method == "model2":
        effs = [
            synthesis_effective_channel(g, config.sh_degree)
            for g in scenario.geometries
        ]
        state, trace = run_synthesis(effs, streams, solver, init_f_d=warm_f_d)
        channels = [compose(e, state.coefficients) for e in effs]
        audit_set = None
    elif method == "wmmse_fixed":
        from .channel import assemble_channel
        from .patterns import CandidateSet

        state, trace = fixed_pattern_wmmse(scenario, fixed, streams, solver)
        channels = [assemble_channel(g, fixed) for g in scenario.geometries]
        audit_set = CandidateSet((fixed,))
    elif method == "zf":
        from .channel import assemble_channel
        from .sphharm import default_grid

        channels = [assemble_channel(g, fixed) for g in scenario.geometries]
        f_d = bd_zero_forcing(channels, streams, solver.power)
        decomp = decompose_precoder(
            f_d, solver.rf_chains, solver.power, solver.decomp_iterations, seed=solver.seed
        )
        digital, _ = weighted_sum_rate(channels, split_precoder(f_d, streams), solver.noise)
        hybrid, _ = weighted_sum_rate(
            channels, split_precoder(decomp.f_rf @ decomp.f_bb, streams), solver.noise
        )
        per_antenna = np.sum(np.abs(f_d) ** 2, axis=1)
        tg, pg = default_grid().mesh()
        row = {
            "axis": config.axis,
            "sweep_value": _float_repr(value),
            "method": method,
            "scenario_seed": seed,
            "n_antennas": n_antennas,
            "rf_chains": solver.rf_chains,
            "sum_rate_digital": _float_repr(digital),
            "sum_rate_hybrid": _float_repr(hybrid),
            "objective": "",
            "outer_iterations": 0,
            "converged": 1,
            "warnings": 0,
            "max_power_violation": _float_repr(max(np.max(per_antenna / solver.power - 1.0), 0.0)),
            "modulus_deviation": _float_repr(
                np.max(np.abs(np.abs(decomp.f_rf) ** 2 * n_antennas - 1.0))
            ),
            "antenna_deviation": _float_repr(0.0),
            "min_pattern_gain": _float_repr(float(np.min(fixed.gain(tg, pg)))),
            "decomp_residual": _float_repr(decomp.residual),
        }
        leakage = interference_leakage(channels, f_d, streams)
        row["zf_leakage"] = _float_repr(leakage)
        return RunResult(row=row, seconds=time.perf_counter() - started)
    else:
        raise ConfigurationError(f"unknown method {method!r}")

    digital, _ = weighted_sum_rate(
        channels, split_precoder(state.f_d, streams), solver.noise
    )
    hybrid, _ = weighted_sum_rate(
        channels, split_precoder(state.f_rf @ state.f_bb, streams), solver.noise
    )
    report = audit_constraints(state, audit_set)
    row = {
        "axis": config.axis,
        "sweep_value": _float_repr(value),
        "method": method,
        "scenario_seed": seed,
        "n_antennas": n_antennas,
        "rf_chains": solver.rf_chains,
        "sum_rate_digital": _float_repr(digital),
        "sum_rate_hybrid": _float_repr(hybrid),
        "objective": _float_repr(trace.objective[-1]),
        "outer_iterations": trace.n_iterations,
        "converged": int(trace.converged),
        "warnings": trace.warnings,
        "max_power_violation": _float_repr(report.max_power_violation()),
        "modulus_deviation": _float_repr(
            -report.modulus_margin if report.modulus_margin is not None else 0.0
        ),
        "antenna_deviation": _float_repr(
            -report.antenna_margin if report.antenna_margin is not None else 0.0
        ),
        "min_pattern_gain": _float_repr(
            report.positivity_min if report.positivity_min is not None else 0.0
        ),
        "decomp_residual": _float_repr(state.decomp_residual),
    }
    trace_rows = [
        (i, _float_repr(o), _float_repr(r), _float_repr(v))
        for (i, o, r, v) in trace.rows()
    ]
    return RunResult(row=row, trace_rows=trace_rows, seconds=time.perf_counter() - started)


def _run_job(args):
    config, value, method, seed = args
    return run_point(config, value, method, seed)


# ---------------------------------------------------------------------------
# Full experiments
# ---------------------------------------------------------------------------

def run_experiment(config_path, worker_count: int | None = None) -> str:
    """Run every sweep cell and write the results CSV.

    Returns the path of the results file.  Worker count comes from the
    TRIHYBRID_WORKERS environment variable unless given; results are merged
    in sweep order so the output does not depend on parallelism.
    """
    config = load_config(config_path)
    base_dir = os.path.dirname(os.path.abspath(config_path))
    out_path = os.path.join(base_dir, config.output)

    jobs = [
        (config, value, method, seed)
        for value in config.values
        for method in config.methods
        for seed in config.seeds
    ]
    if worker_count is None:
        worker_count = int(os.environ.get(WORKER_ENV, "1"))
    if worker_count > 1:
        with ProcessPoolExecutor(max_workers=worker_count) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]

    columns = list(RESULT_COLUMNS)
    if any("zf_leakage" in r.row for r in results):
        columns.append("zf_leakage")
    with open(out_path, "w", newline="", encoding="ascii") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, restval="")
        writer.writeheader()
        for result in results:
            writer.writerow({k: result.row.get(k, "") for k in columns})

    timing_path = os.path.splitext(out_path)[0] + "_timing.csv"
    with open(timing_path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep_value", "method", "scenario_seed", "seconds"])
        for (cfg, value, method, seed), result in zip(jobs, results):
            writer.writerow([value, method, seed, f"{result.seconds:.6f}"])

    if config.traces_dir:
        traces_dir = os.path.join(base_dir, config.traces_dir)
        os.makedirs(traces_dir, exist_ok=True)
        for index, ((cfg, value, method, seed), result) in enumerate(zip(jobs, results)):
            if not result.trace_rows:
                continue
            name = f"trace_v{config.values.index(value)}_{method}_s{seed}.csv"
            with open(os.path.join(traces_dir, name), "w", newline="", encoding="ascii") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iter", "objective", "sum_rate_bps_hz", "max_power_violation"])
                writer.writerows(result.trace_rows)
    return out_path


# ---------------------------------------------------------------------------
# Aggregation and audits
# ---------------------------------------------------------------------------

_FIGURES = {"power": "power", "rfchains": "rfchains", "antennas": "antennas"}


def emit_plotdata(results_path, figure: str, out_path=None) -> str:
    """Aggregate a results CSV to mean and standard error per sweep point.

    Emits one row per (sweep value, method) with digital and hybrid columns;
    for the rfchains figure the sweep value is labeled as an offset from the
    total stream count D.
    """
    if figure not in _FIGURES:
        raise ConfigurationError(f"figure must be one of {sorted(_FIGURES)}")
    with open(results_path, "r", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        required = {"axis", "sweep_value", "method", "sum_rate_digital", "sum_rate_hybrid"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ConfigurationError(
                f"{results_path}: missing columns {sorted(required - set(reader.fieldnames or []))}"
            )
        rows = list(reader)
    if rows and rows[0]["axis"] != figure:
        raise ConfigurationError(
            f"results were swept over {rows[0]['axis']!r}, not {figure!r}"
        )

    groups: dict[tuple[float, str], list[tuple[float, float]]] = {}
    order: list[tuple[float, str]] = []
    for row in rows:
        key = (float(row["sweep_value"]), row["method"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(
            (float(row["sum_rate_digital"]), float(row["sum_rate_hybrid"]))
        )

    def stats(samples):
        arr = np.asarray(samples)
        mean = float(arr.mean())
        stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        return mean, stderr

    if out_path is None:
        out_path = os.path.splitext(results_path)[0] + f"_plot_{figure}.csv"
    with open(out_path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "sweep_value",
                "label",
                "method",
                "n_runs",
                "digital_mean",
                "digital_stderr",
                "hybrid_mean",
                "hybrid_stderr",
            ]
        )
        for value, method in sorted(order, key=lambda k: (k[0], order.index(k))):
            samples = groups[(value, method)]
            d_mean, d_err = stats([s[0] for s in samples])
            h_mean, h_err = stats([s[1] for s in samples])
            if figure == "rfchains":
                offset = int(value)
                label = "D" if offset == 0 else f"D+{offset}"
            else:
                label = repr(value)
            writer.writerow(
                [
                    repr(value),
                    label,
                    method,
                    len(samples),
                    repr(d_mean),
                    repr(d_err),
                    repr(h_mean),
                    repr(h_err),
                ]
            )
    return out_path


def audit_results(results_path, power_tol: float = 1e-9) -> tuple[list[str], list[str]]:
    """Check recorded constraint columns.

    Returns (failures, warnings): power, modulus and pattern-constraint
    deviations are failures; a non-positive synthesized pattern gain is
    reported as a warning only, since the solvers bound the constant
    component but do not enforce pointwise positivity.
    """
    failures = []
    warnings = []
    with open(results_path, "r", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        for i, row in enumerate(reader):
            where = f"row {i + 1} ({row['method']}, value {row['sweep_value']}, seed {row['scenario_seed']})"
            if float(row["max_power_violation"]) > power_tol:
                failures.append(f"{where}: per-antenna power violated")
            if float(row["modulus_deviation"]) > 1e-9:
                failures.append(f"{where}: analog stage modulus deviates")
            if float(row["antenna_deviation"]) > 1e-8:
                failures.append(f"{where}: pattern constraint deviates")
            if float(row["min_pattern_gain"]) <= 0.0:
                warnings.append(f"{where}: synthesized pattern dips non-positive")
    return failures, warnings
