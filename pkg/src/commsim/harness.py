"""Experiment configuration, orchestration and CSV output.

Config files are JSON. The full schema (unknown keys are rejected, error
messages carry the offending field path):

    {
      "name": "run-name",                  # output file prefix
      "problem": {
        "family": "quadratic" | "matfac" | "chain",
        "n": 10, "d": 300,                 # workers, dimension
        "seed": 7,                         # generator seed
        "x0": "zeros" | "normal",          # start point (default per family)
        "generator": {                     # quadratic family
          "v": 1.0, "sigma": 0.1, "v0": 0.5,
          "base": "tridiag" | "identity",
          "b_scale": 1.0
        },
        "matfac": {"d1": 8, "d2": 2, "m": 40, "lam": 0.001},
        "chain": {"length": 50, "lam": 1.0, "l_target": 152.0}
      },
      "algorithm": "gd" | "marina" | "marina_p" | "m3" | "ef21p",
      "algo": {
        "gamma": 0.1 | "theory",           # "theory" derives it from constants
        "gamma_multiplier": 1.0,
        "p": null,                         # shared coin (default k/d)
        "p_primal": null, "p_dual": null,  # m3 coins (default 1/n)
        "beta": null,                      # m3 momentum (default theory)
        "mu": null,                        # linear-rate constant ("theory" PL)
        "regime": "nonconvex" | "pl",
        "primal_compressor": {"kind": ..., "k": ...},
        "dual_compressor": {"kind": ..., "k": ...},
        "collection": "same" | "independent" | "correlated",
        "ef21p_mode": "downlink_only" | "bidirectional",
        "lean_memory": false
      },
      "stop": {"eps": 1e-4, "max_iters": 100000},
      "repeats": 5,                        # seeds base_seed .. base_seed+r-1
      "seed": 1,                           # base seed
      "cost_model": {"unit": "coordinates" | "bits", "natural_weight": 0.28125},
      "output_dir": "out",
      "sweep": {
        "axis": "gamma_multiplier" | "n" | "algorithm",
        "gamma_exponents": [-6, ..., 6],
        "n_values": [10, 100],
        "algorithms": [ {"algorithm": ..., "algo": {...}}, ... ]
      }
    }

Compressor specs: {"kind": "rand_k"|"same_rand_k"|"perm_k"|"top_k"|
"natural", "k": int} or {"kind": "compose", "outer": {...}, "inner":
{...}}. For perm_k the sparsity is fixed to d/n; for the others k
defaults to d/n as well.

Outputs per run: one trace CSV per seed, one seed-averaged trace CSV,
and a summary.csv with coordinates-to-target per run. Identical configs
produce byte-identical files. The environment variable COMMSIM_THREADS
(default 1) sets how many runs execute concurrently.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import compressors as comp
from . import problems, tuning
from .algorithms import (
    ALGORITHM_IDS,
    AlgoConfig,
    DivergenceError,
    run_experiment,
)
from .telemetry import (
    CostModel,
    average_traces,
    coords_to_target,
    write_trace,
)

DEFAULT_GAMMA_EXPONENTS = list(range(-6, 7))

SUMMARY_FIELDS = ("name", "algorithm", "n", "d", "gamma", "multiplier", "seed",
                  "status", "iters", "t_target", "s2w_target", "w2s_target",
                  "total_target", "final_grad_norm_sq")


class ConfigError(ValueError):
    """Schema violation; the message names the offending field path."""


# Config validation -------------------------------------------------------

def _reject_unknown(mapping, allowed, path):
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")


def _require(mapping, key, path, kind=None):
    if key not in mapping:
        raise ConfigError(f"{path}.{key}: missing required key")
    value = mapping[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}: expected {kind}, got {type(value).__name__}")
    return value


def _positive_int(mapping, key, path, default=None):
    value = mapping.get(key, default)
    if value is None:
        raise ConfigError(f"{path}.{key}: missing required key")
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{path}.{key}: must be a positive integer")
    return value


@dataclass
class ProblemConfig:
    family: str
    n: int
    d: int
    seed: int
    x0: Optional[str]
    params: dict


@dataclass
class ExperimentConfig:
    name: str
    problem: ProblemConfig
    algorithm: str
    algo: dict
    stop: dict
    repeats: int
    seed: int
    cost_model: CostModel
    output_dir: str
    sweep: Optional[dict] = None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment config."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    _reject_unknown(raw, {"name", "problem", "algorithm", "algo", "stop",
                          "repeats", "seed", "cost_model", "output_dir",
                          "sweep"}, "config")

    name = raw.get("name", "experiment")
    if not isinstance(name, str) or not name:
        raise ConfigError("config.name: must be a nonempty string")

    problem_cfg = _parse_problem(_require(raw, "problem", "config", dict))
    algorithm = _require(raw, "algorithm", "config", str)
    if algorithm not in ALGORITHM_IDS:
        raise ConfigError(f"config.algorithm: unknown algorithm {algorithm!r}")
    algo = _parse_algo(raw.get("algo", {}), algorithm, problem_cfg)
    stop = _parse_stop(raw.get("stop", {}))
    repeats = _positive_int(raw, "repeats", "config", default=1)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("config.seed: must be a nonnegative integer")
    cost_model = _parse_cost_model(raw.get("cost_model", {}))
    output_dir = raw.get("output_dir", "out")
    if not isinstance(output_dir, str):
        raise ConfigError("config.output_dir: must be a string")
    sweep = _parse_sweep(raw.get("sweep"))
    cfg = ExperimentConfig(name=name, problem=problem_cfg, algorithm=algorithm,
                           algo=algo, stop=stop, repeats=repeats, seed=seed,
                           cost_model=cost_model, output_dir=output_dir,
                           sweep=sweep)
    # Building the pieces validates cross-field constraints eagerly.
    problem = build_problem(cfg.problem)
    build_algo_config(cfg, problem)
    return cfg


def _parse_problem(section) -> ProblemConfig:
    path = "config.problem"
    _reject_unknown(section, {"family", "n", "d", "seed", "x0", "generator",
                              "matfac", "chain"}, path)
    family = _require(section, "family", path, str)
    if family not in ("quadratic", "matfac", "chain"):
        raise ConfigError(f"{path}.family: unknown family {family!r}")
    n = _positive_int(section, "n", path, default=1)
    seed = section.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"{path}.seed: must be a nonnegative integer")
    x0 = section.get("x0")
    if x0 is not None and x0 not in ("zeros", "normal"):
        raise ConfigError(f"{path}.x0: must be 'zeros' or 'normal'")

    if family == "quadratic":
        d = _positive_int(section, "d", path)
        gen = dict(section.get("generator", {}))
        _reject_unknown(gen, {"v", "sigma", "v0", "base", "b_scale"},
                        f"{path}.generator")
        params = {
            "v": float(gen.get("v", 1.0)),
            "sigma": float(gen.get("sigma", 0.0)),
            "v0": float(gen.get("v0", 0.5)),
            "base": gen.get("base", "tridiag"),
            "b_scale": float(gen.get("b_scale", 1.0)),
        }
        if params["base"] not in ("tridiag", "identity"):
            raise ConfigError(f"{path}.generator.base: must be 'tridiag' or 'identity'")
        if params["sigma"] < 0 or params["v0"] < 0:
            raise ConfigError(f"{path}.generator: sigma and v0 must be nonnegative")
    elif family == "matfac":
        sub = dict(section.get("matfac", {}))
        _reject_unknown(sub, {"d1", "d2", "m", "lam"}, f"{path}.matfac")
        d1 = _positive_int(sub, "d1", f"{path}.matfac")
        d2 = _positive_int(sub, "d2", f"{path}.matfac")
        m = _positive_int(sub, "m", f"{path}.matfac")
        lam = float(sub.get("lam", 0.0))
        if lam < 0:
            raise ConfigError(f"{path}.matfac.lam: must be nonnegative")
        if m % n != 0:
            raise ConfigError(f"{path}.matfac.m: workers must divide the sample count")
        d = 2 * d1 * d2
        params = {"d1": d1, "d2": d2, "m": m, "lam": lam}
        if "d" in section and section["d"] != d:
            raise ConfigError(f"{path}.d: inconsistent with matfac dimensions ({d})")
    else:
        sub = dict(section.get("chain", {}))
        _reject_unknown(sub, {"length", "lam", "l_target"}, f"{path}.chain")
        length = _positive_int(sub, "length", f"{path}.chain",
                               default=section.get("d"))
        lam = float(sub.get("lam", 1.0))
        l_target = float(sub.get("l_target", problems.CHAIN_SMOOTHNESS))
        if lam <= 0 or l_target <= 0:
            raise ConfigError(f"{path}.chain: lam and l_target must be positive")
        d = length
        params = {"length": length, "lam": lam, "l_target": l_target}
    return ProblemConfig(family=family, n=n, d=d, seed=seed, x0=x0, params=params)


def _parse_compressor(section, d, n, path) -> comp.CompressorSpec:
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: must be an object")
    _reject_unknown(section, {"kind", "k", "outer", "inner"}, path)
    kind = _require(section, "kind", path, str)
    try:
        if kind == "compose":
            outer = _parse_compressor(_require(section, "outer", path, dict),
                                      d, n, f"{path}.outer")
            inner = _parse_compressor(_require(section, "inner", path, dict),
                                      d, n, f"{path}.inner")
            return comp.compose_spec(outer, inner)
        if kind == "perm_k":
            return comp.perm_k_spec(d, n)
        if kind == "natural":
            return comp.natural_spec(d)
        k = section.get("k", max(1, d // n))
        if not isinstance(k, int) or isinstance(k, bool):
            raise ConfigError(f"{path}.k: must be an integer")
        if kind == "rand_k":
            return comp.rand_k_spec(d, k)
        if kind == "same_rand_k":
            return comp.same_rand_k_spec(d, k)
        if kind == "top_k":
            return comp.top_k_spec(d, k)
    except comp.CompressorError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.kind: unknown kind {kind!r}")


_ALGO_KEYS = {"gamma", "gamma_multiplier", "p", "p_primal", "p_dual", "beta",
              "mu", "regime", "primal_compressor", "dual_compressor",
              "collection", "ef21p_mode", "lean_memory"}


def _parse_algo(section, algorithm, problem_cfg) -> dict:
    path = "config.algo"
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: must be an object")
    _reject_unknown(section, _ALGO_KEYS, path)
    out = dict(section)
    gamma = out.get("gamma", "theory")
    if gamma != "theory" and not (isinstance(gamma, (int, float))
                                  and not isinstance(gamma, bool) and gamma > 0):
        raise ConfigError(f"{path}.gamma: must be a positive number or 'theory'")
    out["gamma"] = gamma
    mult = out.get("gamma_multiplier", 1.0)
    if not isinstance(mult, (int, float)) or isinstance(mult, bool) or mult <= 0:
        raise ConfigError(f"{path}.gamma_multiplier: must be positive")
    out["gamma_multiplier"] = float(mult)
    regime = out.get("regime", "nonconvex")
    if regime not in ("nonconvex", "pl"):
        raise ConfigError(f"{path}.regime: must be 'nonconvex' or 'pl'")
    out["regime"] = regime
    if regime == "pl":
        mu = out.get("mu")
        if not isinstance(mu, (int, float)) or isinstance(mu, bool) or mu <= 0:
            raise ConfigError(f"{path}.mu: must be positive in the 'pl' regime")
    collection = out.get("collection")
    if collection is not None and collection not in comp.COLLECTION_MODES:
        raise ConfigError(f"{path}.collection: unknown mode {collection!r}")
    mode = out.get("ef21p_mode", "downlink_only")
    if mode not in ("downlink_only", "bidirectional"):
        raise ConfigError(f"{path}.ef21p_mode: unknown mode {mode!r}")
    out["ef21p_mode"] = mode
    for key in ("p", "p_primal", "p_dual", "beta"):
        value = out.get(key)
        if value is not None and (not isinstance(value, (int, float))
                                  or isinstance(value, bool)
                                  or not 0 < value <= 1):
            raise ConfigError(f"{path}.{key}: must be in (0, 1]")
    if not isinstance(out.get("lean_memory", False), bool):
        raise ConfigError(f"{path}.lean_memory: must be a boolean")
    out["lean_memory"] = out.get("lean_memory", False)
    d, n = problem_cfg.d, problem_cfg.n
    default_primal = {"kind": "top_k"} if algorithm == "ef21p" else {"kind": "perm_k"}
    out["primal_compressor"] = _parse_compressor(
        out.get("primal_compressor", default_primal), d, n,
        f"{path}.primal_compressor")
    out["dual_compressor"] = _parse_compressor(
        out.get("dual_compressor", {"kind": "rand_k"}), d, n,
        f"{path}.dual_compressor")
    return out


def _parse_stop(section) -> dict:
    path = "config.stop"
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: must be an object")
    _reject_unknown(section, {"eps", "max_iters"}, path)
    eps = section.get("eps", 0.0)
    if not isinstance(eps, (int, float)) or isinstance(eps, bool) or eps < 0:
        raise ConfigError(f"{path}.eps: must be nonnegative")
    max_iters = _positive_int(section, "max_iters", path, default=10_000)
    return {"eps": float(eps), "max_iters": max_iters}


def _parse_cost_model(section) -> CostModel:
    path = "config.cost_model"
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: must be an object")
    _reject_unknown(section, {"unit", "natural_weight", "full_float_bits"}, path)
    try:
        return CostModel(unit=section.get("unit", "coordinates"),
                         natural_weight=float(section.get("natural_weight", 9 / 32)),
                         full_float_bits=float(section.get("full_float_bits", 32)))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_sweep(section) -> Optional[dict]:
    if section is None:
        return None
    path = "config.sweep"
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: must be an object")
    _reject_unknown(section, {"axis", "gamma_exponents", "n_values",
                              "algorithms"}, path)
    axis = section.get("axis")
    if axis not in ("gamma_multiplier", "n", "algorithm"):
        raise ConfigError(f"{path}.axis: must be one of gamma_multiplier, n, algorithm")
    out = {"axis": axis}
    exps = section.get("gamma_exponents", DEFAULT_GAMMA_EXPONENTS)
    if (not isinstance(exps, list) or not exps
            or not all(isinstance(e, int) and not isinstance(e, bool) for e in exps)):
        raise ConfigError(f"{path}.gamma_exponents: must be a nonempty list of integers")
    out["gamma_exponents"] = exps
    if axis == "n":
        values = section.get("n_values")
        if (not isinstance(values, list) or not values
                or not all(isinstance(v, int) and v >= 1 for v in values)):
            raise ConfigError(f"{path}.n_values: must be a nonempty list of positive ints")
        out["n_values"] = values
    if axis == "algorithm":
        algos = section.get("algorithms")
        if not isinstance(algos, list) or not algos:
            raise ConfigError(f"{path}.algorithms: must be a nonempty list")
        out["algorithms"] = algos
    return out


# Construction ------------------------------------------------------------

def build_problem(pc: ProblemConfig):
    rng = np.random.default_rng(np.random.SeedSequence([pc.seed, 0x917]))
    if pc.family == "quadratic":
        p = pc.params
        return problems.generate_het_quadratic(
            pc.n, pc.d, p["v"], p["sigma"], p["v0"], rng,
            base=p["base"], b_scale=p["b_scale"])
    if pc.family == "matfac":
        p = pc.params
        return problems.synthetic_matfac(p["d1"], p["d2"], p["m"], p["lam"],
                                         rng, workers=pc.n)
    p = pc.params
    return problems.ChainProblem(p["length"], lam=p["lam"],
                                 l_target=p["l_target"], workers=pc.n)


def initial_point(cfg: ExperimentConfig, problem) -> np.ndarray:
    choice = cfg.problem.x0
    if choice == "zeros":
        return np.zeros(problem.dim)
    if choice == "normal":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.problem.seed, 0x0]))
        return rng.standard_normal(problem.dim)
    if cfg.problem.family == "matfac":
        return problem.default_x0(cfg.problem.seed)
    return problem.default_x0()


def _problem_constants(cfg: ExperimentConfig, problem):
    if cfg.problem.family == "quadratic":
        return problems.quad_constants(problem)
    if cfg.problem.family == "chain":
        l_target = cfg.problem.params["l_target"]
        return problems.ProblemConstants(
            l_smooth=l_target, l_workers=np.full(problem.n, l_target),
            l_max=l_target, l_rms=l_target, l_hetero=0.0, l_avg=l_target,
            hessian_spread=np.zeros(problem.n))
    raise ConfigError(
        "config.algo.gamma: 'theory' needs analytic constants; "
        f"set an explicit gamma for the {cfg.problem.family} family")


def _collection_mode(cfg: ExperimentConfig) -> str:
    spec = cfg.algo["primal_compressor"]
    base = spec.inner if spec.kind == "compose" else spec
    if base.kind == "perm_k":
        return "correlated"
    if base.kind == "same_rand_k":
        return "same"
    return cfg.algo.get("collection") or "independent"


def build_algo_config(cfg: ExperimentConfig, problem) -> AlgoConfig:
    """Resolve defaults and theory-derived parameters into an AlgoConfig."""
    algo = cfg.algo
    primal = algo["primal_compressor"]
    dual = algo["dual_compressor"]
    n = problem.n
    mode = _collection_mode(cfg)
    prob = algo.get("p") or primal.message_coords() / problem.dim
    prob_primal = algo.get("p_primal") or 1.0 / n
    prob_dual = algo.get("p_dual") or 1.0 / n
    beta = algo.get("beta")
    gamma = algo["gamma"]
    regime = algo["regime"]

    if cfg.algorithm == "m3" and beta is None:
        if primal.unbiased and dual.unbiased:
            beta = tuning.m3_beta_general(n, dual.omega, primal.omega)
        else:
            beta = float(n) ** (-2.0 / 3.0)

    if gamma == "theory":
        consts = _problem_constants(cfg, problem)
        if cfg.algorithm == "marina_p":
            theta = comp.collection_theta(primal, mode, n)
            if regime == "pl":
                gamma = tuning.step_marinap_pl(
                    consts.l_smooth, consts.l_hetero, consts.l_avg,
                    primal.omega, theta, prob, algo["mu"])
            else:
                gamma = tuning.step_marinap_general(
                    consts.l_smooth, consts.l_hetero, consts.l_avg,
                    primal.omega, theta, prob)
        elif cfg.algorithm == "m3":
            theta = comp.collection_theta(primal, mode, n)
            if regime == "pl":
                params = tuning.step_m3_pl(
                    consts.l_smooth, consts.l_hetero, consts.l_avg,
                    consts.l_max, n, primal.omega, dual.omega, theta,
                    prob_primal, prob_dual, beta, algo["mu"])
            else:
                params = tuning.step_m3_general(
                    consts.l_smooth, consts.l_hetero, consts.l_avg,
                    consts.l_max, n, primal.omega, dual.omega, theta,
                    prob_primal, prob_dual, beta)
            gamma = params.gamma
        else:
            # gd and the baselines sweep multiples of the plain smooth step.
            gamma = 1.0 / consts.l_smooth
    gamma = float(gamma) * algo["gamma_multiplier"]
    return AlgoConfig(gamma=gamma, prob=prob, prob_primal=prob_primal,
                      prob_dual=prob_dual,
                      beta=beta if beta is not None else 1.0,
                      primal=primal, dual=dual, collection=mode,
                      downlink_only=(algo["ef21p_mode"] == "downlink_only"),
                      lean_memory=algo["lean_memory"])


# Execution ---------------------------------------------------------------

@dataclass
class RunOutcome:
    """One seeded run: its trace (None when diverged) and summary row."""

    label: str
    seed: int
    trace: Optional[list]
    row: dict


def _thread_count() -> int:
    raw = os.environ.get("COMMSIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_map(jobs):
    """Run callables, preserving order; threads when COMMSIM_THREADS > 1."""
    workers = _thread_count()
    if workers == 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def _single_run(cfg: ExperimentConfig, label: str, seed: int) -> RunOutcome:
    problem = build_problem(cfg.problem)
    algo_cfg = build_algo_config(cfg, problem)
    x0 = initial_point(cfg, problem)
    row = {
        "name": label, "algorithm": cfg.algorithm, "n": cfg.problem.n,
        "d": cfg.problem.d, "gamma": algo_cfg.gamma,
        "multiplier": cfg.algo["gamma_multiplier"], "seed": seed,
    }
    try:
        trace = run_experiment(cfg.algorithm, problem, algo_cfg, cfg.stop,
                               seed, cost_model=cfg.cost_model, x0=x0)
    except DivergenceError as exc:
        row.update(status="diverged", iters=len(exc.trace) - 1, t_target="",
                   s2w_target="", w2s_target="", total_target="",
                   final_grad_norm_sq=exc.trace[-1].grad_norm_sq)
        return RunOutcome(label=label, seed=seed, trace=None, row=row)
    target = coords_to_target(trace, cfg.stop["eps"]) if cfg.stop["eps"] > 0 else None
    row.update(
        status="reached" if target else "not_reached",
        iters=trace[-1].t,
        t_target=target["t"] if target else "",
        s2w_target=target["s2w"] if target else "",
        w2s_target=target["w2s"] if target else "",
        total_target=target["total"] if target else "",
        final_grad_norm_sq=trace[-1].grad_norm_sq,
    )
    return RunOutcome(label=label, seed=seed, trace=trace, row=row)


def _write_summary(rows, path) -> None:
    lines = [",".join(SUMMARY_FIELDS)]
    for row in rows:
        rendered = []
        for key in SUMMARY_FIELDS:
            value = row[key]
            if isinstance(value, float):
                rendered.append(format(value, ".17g"))
            else:
                rendered.append(str(value))
        lines.append(",".join(rendered))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_run(cfg: ExperimentConfig):
    """Run the configured experiment over its repeat seeds and write CSVs.

    Returns (summary rows, output paths). Raises if any seed diverged.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed + r for r in range(cfg.repeats)]
    outcomes = _run_map([
        (lambda s=s: _single_run(cfg, cfg.name, s)) for s in seeds])
    rows, paths, traces = [], [], []
    for outcome in outcomes:
        rows.append(outcome.row)
        if outcome.trace is not None:
            path = out_dir / f"{cfg.name}__seed{outcome.seed}.csv"
            write_trace(outcome.trace, path)
            paths.append(path)
            traces.append(outcome.trace)
    if traces:
        mean_path = out_dir / f"{cfg.name}__mean.csv"
        write_trace(average_traces(traces), mean_path)
        paths.append(mean_path)
    summary_path = out_dir / f"{cfg.name}__summary.csv"
    _write_summary(rows, summary_path)
    # Stable alias so tooling can pick up the latest run of a directory.
    _write_summary(rows, out_dir / "summary.csv")
    paths.append(summary_path)
    failed = [r for r in rows if r["status"] == "diverged"]
    if failed:
        raise DivergenceError(
            f"{len(failed)} of {len(rows)} runs diverged (see {summary_path})",
            [])
    return rows, paths


def _sweep_points(cfg: ExperimentConfig):
    sweep = cfg.sweep or {"axis": "gamma_multiplier",
                          "gamma_exponents": DEFAULT_GAMMA_EXPONENTS}
    axis = sweep["axis"]
    points = []
    if axis == "gamma_multiplier":
        for exp in sweep.get("gamma_exponents", DEFAULT_GAMMA_EXPONENTS):
            mult = 2.0 ** exp
            algo = dict(cfg.algo)
            algo["gamma_multiplier"] = cfg.algo["gamma_multiplier"] * mult
            label = f"{cfg.name}__x2e{exp:+d}"
            points.append((label, {"mult": mult},
                           replace(cfg, name=label, algo=algo, sweep=None)))
    elif axis == "n":
        for n in sweep["n_values"]:
            pc = replace(cfg.problem, n=n)
            label = f"{cfg.name}__n{n}"
            points.append((label, {"n": n},
                           replace(cfg, name=label, problem=pc, sweep=None)))
    else:
        for entry in sweep["algorithms"]:
            if not isinstance(entry, dict) or "algorithm" not in entry:
                raise ConfigError("config.sweep.algorithms: entries need an 'algorithm'")
            algorithm = entry["algorithm"]
            if algorithm not in ALGORITHM_IDS:
                raise ConfigError(
                    f"config.sweep.algorithms: unknown algorithm {algorithm!r}")
            algo = _parse_algo(entry.get("algo", {}), algorithm, cfg.problem)
            suffix = entry.get("label", algorithm)
            label = f"{cfg.name}__{suffix}"
            points.append((label, {"algorithm": suffix},
                           replace(cfg, name=label, algorithm=algorithm,
                                   algo=algo, sweep=None)))
    return axis, points


def cmd_sweep(cfg: ExperimentConfig):
    """Run every sweep point, write per-point outputs plus a matrix summary.

    For gamma sweeps the point with the least median total cost to target
    wins (ties go to the smaller multiplier); diverged or non-reaching
    points stay in the summary but cannot win.
    """
    axis, points = _sweep_points(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_rows = []
    scores = []
    for label, meta, point_cfg in points:
        try:
            rows, _ = cmd_run(point_cfg)
        except DivergenceError:
            rows = _read_rows(out_dir / f"{label}__summary.csv")
        all_rows.extend(rows)
        reached = [r for r in rows if r["status"] == "reached"]
        if reached and len(reached) == len(rows):
            totals = sorted(float(r["total_target"]) for r in reached)
            median = totals[len(totals) // 2]
            scores.append((median, meta.get("mult", 0.0), label, meta))
    _write_summary(all_rows, out_dir / f"{cfg.name}__sweep_summary.csv")
    _write_summary(all_rows, out_dir / "summary.csv")
    best = None
    if scores and axis == "gamma_multiplier":
        scores.sort(key=lambda item: (item[0], item[1]))
        best = scores[0][2]
        (out_dir / f"{cfg.name}__best.txt").write_text(best + "\n",
                                                       encoding="utf-8")
    return all_rows, best


def _read_rows(path):
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = text[0].split(",")
    return [dict(zip(header, line.split(","))) for line in text[1:]]


def cmd_estimate(spec_json: str, samples: int = 20_000, seed: int = 0) -> dict:
    """Monte-Carlo report of the variance factors of a compressor spec.

    Input JSON: a compressor object plus optional "d", "n", "mode",
    "samples". Returns stated and estimated factors.
    """
    try:
        raw = json.loads(spec_json)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"estimate spec is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("estimate spec: top level must be an object")
    d = raw.pop("d", 100)
    n = raw.pop("n", 10)
    mode = raw.pop("mode", None)
    samples = int(raw.pop("samples", samples))
    spec = _parse_compressor(raw, d, n, "spec")
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(d)
    report = {"kind": spec.kind, "d": d, "n": n,
              "stated_omega": spec.omega, "stated_alpha": spec.alpha}
    if spec.kind == "top_k":
        msg = comp.apply_top_k(probe, spec.k)
        diff = msg.densify() - probe
        report["contraction_ratio"] = float(diff @ diff) / float(probe @ probe)
        return report
    report["estimated_omega"] = comp.estimate_omega(spec, probe, samples, rng)
    mode = mode or _default_mode(spec)
    report["mode"] = mode
    report["stated_theta"] = comp.collection_theta(spec, mode, n)
    report["estimated_theta"] = comp.estimate_theta(spec, mode, n, probe,
                                                    samples, rng)
    return report


def _default_mode(spec) -> str:
    base = spec.inner if spec.kind == "compose" else spec
    if base.kind == "perm_k":
        return "correlated"
    if base.kind == "same_rand_k":
        return "same"
    return "independent"
