"""Experiment orchestration: configuration, resolution, CSV logging, reports.

A run is fully described by an ExperimentConfig; resolving it builds the
graph, mixing matrix, problem data, smoothness constants, stepsize and the
initial swarm, all from seeded substreams, so the same config and seed always
reproduce the same log byte for byte.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .algorithms import (
    ALGORITHMS,
    RunResult,
    StepsizeSchedule,
    drgta_max_stepsize,
    drgta_theoretical_stepsize,
    drsgd_constant_schedule,
    drsgd_diminishing_schedule,
    run,
)
from .errors import ConfigError, ParameterError
from .manifold import (
    ConsensusRegionParams,
    StiefelPoint,
    SwarmState,
    perturbed_swarm,
    random_stiefel,
)
from .network import (
    MixingMatrix,
    complete_graph,
    consensus_rate_params,
    erdos_renyi,
    matrix_power,
    metropolis_weights,
    min_communication_rounds,
    ring_graph,
    spectral_dump,
)
from .problems import (
    centralized_oracle,
    estimate_xi,
    load_dsv_partition,
    quadratic_constants,
    synthesize_eigengap_data,
)

CSV_HEADER = "k,consensus_err_sq,linf_err,grad_norm_sq,f_bar,ds_oracle,beta_k,elapsed_ms"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGESTION = 3
EXIT_NUMERICAL = 4
EXIT_NO_CONVERGENCE = 5

_GRAPHS = ("ring", "complete", "er")
_SCHEDULES = ("diminishing", "constant", "user")
_PROBLEMS = ("synthetic", "dsv")
_BETA_SCALES = ("default", "speedup", "raw")
_INITS = ("shared", "independent")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; 0 means "resolve automatically" for t and alpha."""

    algorithm: str = "drgta"
    graph: str = "ring"
    er_p: float = 0.3
    n: int = 8
    t: int = 0
    alpha: float = 1.0
    schedule: str = "user"
    beta_hat: float = 0.05
    beta_scale: str = "default"
    problem: str = "synthetic"
    d: int = 30
    r: int = 5
    m: int = 100
    gap: float = 0.8
    data_path: str | None = None
    divisor: float = 1.0
    max_iters: int = 10000
    max_epochs: int = 200
    batch_size: int = 1
    tol_ds: float | None = None
    tol_grad: float | None = None
    tol_consensus: float = 1e-12
    seed: int = 0
    init: str = "shared"
    perturb: float = 0.0
    delta2: float = 1.0 / 6.0
    delta1: float = 0.0
    gossip_rounds: bool = False
    timing: bool = False
    out: str | None = None


_FIELD_NAMES = {f for f in ExperimentConfig.__dataclass_fields__}


def parse_config(file=None, flags: dict | None = None) -> ExperimentConfig:
    """Build a config from a JSON file and/or a flat dict of overrides.

    Flag values override file values. Unknown keys, bad ranges and
    inconsistent combinations raise ConfigError with the field name.
    """
    merged = {}
    if file is not None:
        try:
            text = Path(file).read_text(encoding="utf-8") if not hasattr(file, "read") else file.read()
            loaded = json.loads(text)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        merged.update(loaded)
    if flags:
        merged.update(flags)
    unknown = set(merged) - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "graph" in merged:
        merged.update(_parse_graph_choice(merged["graph"], merged.get("er_p")))
    try:
        cfg = ExperimentConfig(**merged)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    validate_config(cfg)
    return cfg


def _parse_graph_choice(value, er_p) -> dict:
    """Accept 'ring', 'complete', 'er' or the compact 'er(0.3)' form."""
    text = str(value).strip().lower()
    if text.startswith("er(") and text.endswith(")"):
        try:
            p = float(text[3:-1])
        except ValueError:
            raise ConfigError(f"graph: cannot parse probability in {value!r}") from None
        return {"graph": "er", "er_p": p}
    out = {"graph": text}
    if er_p is not None:
        out["er_p"] = er_p
    return out


def validate_config(cfg: ExperimentConfig):
    def bad(field, msg):
        raise ConfigError(f"{field}: {msg}")

    if cfg.algorithm not in ALGORITHMS:
        bad("algorithm", f"must be one of {ALGORITHMS}, got {cfg.algorithm!r}")
    if cfg.graph not in _GRAPHS:
        bad("graph", f"must be one of {_GRAPHS}, got {cfg.graph!r}")
    if cfg.graph == "er" and not (0.0 < cfg.er_p <= 1.0):
        bad("er_p", f"must be in (0, 1], got {cfg.er_p}")
    if cfg.n < 2:
        bad("n", f"need at least 2 agents, got {cfg.n}")
    if cfg.t < 0:
        bad("t", f"must be >= 0 (0 = auto), got {cfg.t}")
    if cfg.alpha < 0.0:
        bad("alpha", f"must be >= 0 (0 = auto), got {cfg.alpha}")
    if cfg.schedule not in _SCHEDULES:
        bad("schedule", f"must be one of {_SCHEDULES}, got {cfg.schedule!r}")
    if cfg.schedule == "user" and cfg.beta_hat <= 0.0:
        bad("beta_hat", f"must be positive, got {cfg.beta_hat}")
    if cfg.beta_scale not in _BETA_SCALES:
        bad("beta_scale", f"must be one of {_BETA_SCALES}, got {cfg.beta_scale!r}")
    if cfg.problem not in _PROBLEMS:
        bad("problem", f"must be one of {_PROBLEMS}, got {cfg.problem!r}")
    if cfg.problem == "dsv" and not cfg.data_path:
        bad("data_path", "required for the dsv problem")
    if cfg.problem == "synthetic":
        if not (1 <= cfg.r <= cfg.d):
            bad("r", f"need 1 <= r <= d, got r={cfg.r}, d={cfg.d}")
        if cfg.m < 1:
            bad("m", f"must be positive, got {cfg.m}")
        if not (0.0 < cfg.gap < 1.0):
            bad("gap", f"must be in (0, 1), got {cfg.gap}")
    elif cfg.r < 1:
        bad("r", f"must be positive, got {cfg.r}")
    if cfg.divisor == 0.0:
        bad("divisor", "must be nonzero")
    if cfg.max_iters < 0 or cfg.max_epochs < 0:
        bad("max_iters", "iteration and epoch caps must be >= 0")
    if cfg.batch_size < 1:
        bad("batch_size", f"must be positive, got {cfg.batch_size}")
    for name in ("tol_ds", "tol_grad", "tol_consensus"):
        v = getattr(cfg, name)
        if v is not None and v < 0.0:
            bad(name, f"must be >= 0, got {v}")
    if cfg.init not in _INITS:
        bad("init", f"must be one of {_INITS}, got {cfg.init!r}")
    if cfg.perturb < 0.0:
        bad("perturb", f"must be >= 0, got {cfg.perturb}")
    if not (0.0 < cfg.delta2 <= 1.0 / 6.0 + 1e-15):
        bad("delta2", f"must be in (0, 1/6], got {cfg.delta2}")
    if cfg.delta1 < 0.0:
        bad("delta1", f"must be >= 0 (0 = auto), got {cfg.delta1}")
    if cfg.algorithm == "drgta" and cfg.schedule == "diminishing":
        warnings.warn(
            "gradient tracking is designed for a constant stepsize; "
            "a diminishing schedule defeats its purpose",
            RuntimeWarning,
            stacklevel=2,
        )


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


@dataclass(frozen=True)
class ResolvedExperiment:
    """A config turned into concrete objects, plus the constants for the log header."""

    cfg: ExperimentConfig
    graph: object
    w: MixingMatrix
    t: int
    mix_matrix: MixingMatrix
    mix_rounds: int
    region: ConsensusRegionParams
    alpha: float
    locals_: list | None
    oracle: StiefelPoint | None
    constants: object | None
    schedule: StepsizeSchedule | None
    swarm0: SwarmState
    max_rounds: int
    tol_ds: float | None
    tol_grad: float | None
    tol_consensus: float | None
    header: dict


def resolve(cfg: ExperimentConfig) -> ResolvedExperiment:
    validate_config(cfg)
    seed = cfg.seed
    g = _build_graph(cfg)
    w = metropolis_weights(g)
    t_min = min_communication_rounds(w)
    t = cfg.t if cfg.t > 0 else t_min
    r_cols = cfg.r
    delta1 = cfg.delta1 if cfg.delta1 > 0.0 else cfg.delta2 / (5.0 * math.sqrt(r_cols))
    region = ConsensusRegionParams(delta1=delta1, delta2=cfg.delta2, r=r_cols)
    base_rate = consensus_rate_params(w, t, region)
    alpha = cfg.alpha if cfg.alpha > 0.0 else base_rate.alpha_bar
    if alpha > base_rate.alpha_bar:
        warnings.warn(
            f"alpha = {alpha:.6g} exceeds the theoretical cap "
            f"alpha_bar = {base_rate.alpha_bar:.6g} (common in practice)",
            RuntimeWarning,
            stacklevel=2,
        )
    rate = consensus_rate_params(w, t, region, alpha=min(alpha, base_rate.alpha_bar))
    if cfg.gossip_rounds:
        mix_matrix, mix_rounds = w, t
    else:
        mix_matrix, mix_rounds = (matrix_power(w, t) if t > 1 else w), 1

    header = {
        "sigma2": w.sigma2,
        "t": t,
        "t_min": t_min,
        "alpha": alpha,
        "alpha_bar": base_rate.alpha_bar,
        "rho_t": rate.rho_t,
        "gamma_t": rate.gamma_t,
        "l_t": rate.l_t,
        "mu_t": rate.mu_t,
        "delta1": region.delta1,
        "delta2": region.delta2,
    }

    locals_ = oracle = constants = schedule = None
    if cfg.algorithm == "drcs":
        max_rounds = cfg.max_iters
        tol_ds = tol_grad = None
        tol_consensus = cfg.tol_consensus
    else:
        locals_, oracle = _build_problem(cfg)
        constants = quadratic_constants(locals_, r_cols)
        mean_m = sum(o.sample_count for o in locals_) / len(locals_)
        header.update(
            {
                "l_g": constants.l_g,
                "l_big": constants.l_big,
                "d_bound": constants.d_bound,
                "mean_m": mean_m,
            }
        )
        stochastic = cfg.algorithm == "drsgd"
        max_rounds = cfg.max_epochs if stochastic else cfg.max_iters
        schedule, constants = _build_schedule(
            cfg, constants, rate, region, alpha, mean_m, locals_
        )
        header["beta"] = schedule.base
        header["schedule"] = schedule.kind
        if constants.xi_is_estimate and constants.xi > 0.0:
            header["xi_estimate"] = constants.xi
        if cfg.algorithm == "drgta":
            beta_bar = drgta_max_stepsize(constants, rate.rho_t, rate.alpha, region.delta1)
            header["beta_bar"] = beta_bar
            header["beta_theory_heuristic"] = drgta_theoretical_stepsize(
                constants,
                rate.rho_t,
                w.sigma2**t,
                rate.alpha,
                region.delta1,
                r_cols,
            )
            if schedule.base > beta_bar:
                warnings.warn(
                    f"beta = {schedule.base:.6g} exceeds the stay-in-region cap "
                    f"beta_bar = {beta_bar:.6g} (practical values usually do)",
                    RuntimeWarning,
                    stacklevel=2,
                )
        tol_ds = _default_tol(cfg.tol_ds, 1e-5 if stochastic else 1e-8)
        tol_grad = None if stochastic else _default_tol(cfg.tol_grad, 1e-8)
        tol_consensus = None

    d_cols = locals_[0].dim if locals_ else cfg.d
    swarm0 = _build_swarm(cfg, d_cols, r_cols, region)
    return ResolvedExperiment(
        cfg=cfg,
        graph=g,
        w=w,
        t=t,
        mix_matrix=mix_matrix,
        mix_rounds=mix_rounds,
        region=region,
        alpha=alpha,
        locals_=locals_,
        oracle=oracle,
        constants=constants,
        schedule=schedule,
        swarm0=swarm0,
        max_rounds=max_rounds,
        tol_ds=tol_ds,
        tol_grad=tol_grad,
        tol_consensus=tol_consensus,
        header=header,
    )


def _default_tol(value, default):
    if value is None:
        return default
    return value if value > 0.0 else None


def _build_graph(cfg: ExperimentConfig):
    if cfg.graph == "ring":
        return ring_graph(cfg.n)
    if cfg.graph == "complete":
        return complete_graph(cfg.n)
    return erdos_renyi(cfg.n, cfg.er_p, np.random.default_rng([cfg.seed, 4]))


def _build_problem(cfg: ExperimentConfig):
    if cfg.problem == "synthetic":
        locals_, oracle = synthesize_eigengap_data(
            cfg.n, cfg.m, cfg.d, cfg.r, cfg.gap, seed=[cfg.seed, 0]
        )
        return list(locals_), oracle
    locals_ = load_dsv_partition(cfg.data_path, cfg.n, cfg.divisor)
    if cfg.r > locals_[0].dim:
        raise ConfigError(f"r: data has d={locals_[0].dim} < r={cfg.r}")
    return locals_, centralized_oracle(locals_, cfg.r)


def _build_schedule(cfg, constants, rate, region, alpha, mean_m, locals_):
    if cfg.schedule == "user":
        if cfg.beta_scale == "raw":
            beta = cfg.beta_hat
        elif cfg.beta_scale == "speedup":
            beta = cfg.beta_hat * math.sqrt(cfg.n) / (10000.0 * math.sqrt(300.0) * mean_m)
        elif cfg.algorithm == "drsgd":
            # Stochastic gradients here carry the m_i sample scaling, so the
            # per-epoch-horizon rule is divided by the mean sample count too.
            beta = cfg.beta_hat / (math.sqrt(cfg.max_epochs) * mean_m)
        else:
            beta = cfg.beta_hat / mean_m
        return StepsizeSchedule(kind="user", base=beta), constants
    if cfg.schedule == "diminishing":
        return (
            drsgd_diminishing_schedule(constants, rate.rho_t, rate.alpha, region.delta1),
            constants,
        )
    # Constant rule: needs the stochastic deviation bound, estimated at the
    # shared starting point from single-sample draws.
    x0 = random_stiefel(locals_[0].dim, cfg.r, np.random.default_rng([cfg.seed, 1]))
    xi = estimate_xi(locals_, x0, np.random.default_rng([cfg.seed, 3]))
    constants = constants.with_xi(xi, estimate=True)
    if cfg.algorithm == "drsgd":
        inner = max(math.ceil(o.sample_count / cfg.batch_size) for o in locals_)
        k_total = cfg.max_epochs * inner
    else:
        k_total = cfg.max_iters
    schedule = drsgd_constant_schedule(
        k_total, cfg.n, constants, alpha=rate.alpha, delta1=region.delta1, rho_t=rate.rho_t
    )
    return schedule, constants


def _build_swarm(cfg, d, r, region) -> SwarmState:
    if cfg.init == "independent":
        pts = tuple(
            random_stiefel(d, r, np.random.default_rng([cfg.seed, 1, i]))
            for i in range(cfg.n)
        )
        return SwarmState(pts)
    x0 = random_stiefel(d, r, np.random.default_rng([cfg.seed, 1]))
    noise = cfg.perturb
    if noise == 0.0 and cfg.algorithm == "drcs":
        # Pure consensus from an exactly shared point is a no-op; nudge each
        # agent inside the contraction region instead.
        noise = region.delta1 / 2.0
    if noise > 0.0:
        return perturbed_swarm(x0, cfg.n, noise, np.random.default_rng([cfg.seed, 5]))
    return SwarmState((x0,) * cfg.n)


@dataclass(frozen=True)
class ExperimentOutcome:
    code: int
    summary: str
    result: RunResult
    csv_path: str | None
    resolved: ResolvedExperiment


def run_experiment(cfg: ExperimentConfig) -> ExperimentOutcome:
    """Resolve, run, write the CSV log, and report a one-line summary."""
    res = resolve(cfg)
    result = run(
        cfg.algorithm,
        res.swarm0,
        res.mix_matrix,
        alpha=res.alpha,
        locals_=res.locals_,
        schedule=res.schedule,
        oracle=res.oracle,
        max_rounds=res.max_rounds,
        batch_size=cfg.batch_size,
        tol_ds=res.tol_ds,
        tol_grad=res.tol_grad,
        tol_consensus=res.tol_consensus,
        seed=cfg.seed,
        rounds=res.mix_rounds,
        timing=cfg.timing,
    )
    csv_path = None
    if cfg.out:
        write_csv(cfg.out, cfg, res.header, result.records)
        csv_path = cfg.out
    last = result.records[-1]
    parts = [f"{cfg.algorithm}: {last.k} rounds, stop={result.stop}"]
    if last.ds_oracle is not None:
        parts.append(f"ds={last.ds_oracle:.3e}")
    if last.grad_norm_sq is not None:
        parts.append(f"|grad|={math.sqrt(last.grad_norm_sq):.3e}")
    parts.append(f"consensus_err_sq={last.consensus_err_sq:.3e}")
    if csv_path:
        parts.append(f"log={csv_path}")
    code = EXIT_OK if result.converged else EXIT_NO_CONVERGENCE
    return ExperimentOutcome(
        code=code,
        summary="  ".join(parts),
        result=result,
        csv_path=csv_path,
        resolved=res,
    )


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)  # shortest round-trip decimal
    return str(v)


def write_csv(path, cfg: ExperimentConfig, header: dict, records):
    lines = [
        f"# stiefel-dec {__version__}",
        f"# config: {json.dumps(config_dict(cfg), sort_keys=True)}",
        f"# constants: {json.dumps(header, sort_keys=True)}",
        CSV_HEADER,
    ]
    for rec in records:
        lines.append(
            ",".join(
                _cell(v)
                for v in (
                    rec.k,
                    rec.consensus_err_sq,
                    rec.linf_err,
                    rec.grad_norm_sq,
                    rec.f_bar,
                    rec.ds_oracle,
                    rec.beta_k,
                    rec.elapsed_ms,
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_config_echo(path) -> dict:
    """Recover the resolved config from a log's '# config:' header line."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# config: "):
                return json.loads(line[len("# config: ") :])
    raise ParameterError(f"no config echo found in {path}")


def spectral_report(cfg: ExperimentConfig) -> str:
    """Graph and mixing diagnostics: the base dump plus the resolved-t constants."""
    validate_config(cfg)
    g = _build_graph(cfg)
    w = metropolis_weights(g)
    delta1 = cfg.delta1 if cfg.delta1 > 0.0 else cfg.delta2 / (5.0 * math.sqrt(cfg.r))
    region = ConsensusRegionParams(delta1=delta1, delta2=cfg.delta2, r=cfg.r)
    t = cfg.t if cfg.t > 0 else min_communication_rounds(w)
    base = consensus_rate_params(w, t, region)
    alpha = min(cfg.alpha, base.alpha_bar) if cfg.alpha > 0.0 else base.alpha_bar
    rate = consensus_rate_params(w, t, region, alpha=alpha)
    lines = [
        spectral_dump(g, w, region),
        f"t {t}",
        f"L_t {rate.l_t:.12g}",
        f"mu_t {rate.mu_t:.12g}",
        f"alpha_bar {rate.alpha_bar:.12g}",
        f"gamma_t {rate.gamma_t:.12g}",
        f"rho_t {rate.rho_t:.12g}",
    ]
    return "\n".join(lines)


def oracle_report(cfg: ExperimentConfig) -> tuple:
    """Centralized solution of the configured problem and a printable dump."""
    validate_config(cfg)
    locals_, oracle = _build_problem(cfg)
    total = sum(o.value(oracle) for o in locals_) / len(locals_)
    rows = ["# centralized leading-eigenvector solution", f"# f(x*) = {total!r}"]
    for row in oracle.data:
        rows.append(" ".join(f"{v:.17g}" for v in row))
    return oracle, "\n".join(rows)
