"""Config-driven experiment runner.

Usage::

    grouploss groupopt --config run.yaml --seed 0 --out results/

Each run writes ``result.json`` (sorted keys, deterministic), ``trace.csv``
and ``timing.json`` (wall time, kept apart so results stay byte-identical).
Exit codes: 0 success, 2 oracle contract violation, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import convex, groupopt, learning, objectives, oracle, problems
from .core import ContractViolation, Mixture, mixture_loss

METHODS = ("groupopt", "convex", "classify", "regress", "oracle")
CONFIG_VERSION = 1

TRACE_COLUMNS = {
    "groupopt": ("rank", "t", "distance"),
    "classify": ("rank", "t", "distance"),
    "regress": ("rank", "t", "distance"),
    "convex": ("step", "value", "gap"),
    "oracle": ("resolution", "value"),
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class ObjectiveConfig(_Strict):
    name: str
    params: dict = Field(default_factory=dict)


class ConstraintConfig(_Strict):
    name: Literal["linear", "gini"]
    params: dict = Field(default_factory=dict)


class OracleConfig(_Strict):
    resolution: float = Field(0.01, gt=0, le=1)


class ExperimentConfig(_Strict):
    """Schema of a run configuration (YAML or JSON)."""

    version: Literal[1]
    method: Optional[Literal["groupopt", "convex", "classify", "regress", "oracle"]] = None
    problem: Union[str, dict]
    objective: ObjectiveConfig
    epsilon: float = Field(gt=0, le=1)
    delta: float = Field(0.1, gt=0, lt=1)
    B: float = Field(1.0, gt=0)
    exact: bool = True
    mode: Literal["general", "nonnegative"] = "general"
    lipschitz: Optional[float] = Field(None, gt=0)
    inner_epsilon: Optional[float] = Field(None, gt=0, lt=1)
    max_iter: Optional[int] = Field(None, gt=0)
    constraint: Optional[ConstraintConfig] = None
    compare_oracle: Optional[OracleConfig] = None


class ConfigError(ValueError):
    pass


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cli.load_config: cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cli.load_config: {path} is not valid YAML/JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"cli.load_config: {path} does not hold a mapping")
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        msgs = ["{}: {}".format(".".join(str(p) for p in e["loc"]) or "<root>", e["msg"])
                for e in exc.errors()]
        raise ConfigError(f"cli.load_config: invalid config {path}: " + "; ".join(msgs)) from exc


def _load_problem(cfg: ExperimentConfig, base: Path):
    if isinstance(cfg.problem, str):
        p = Path(cfg.problem)
        return problems.load_problem(p if p.is_absolute() else base / p)
    return problems.problem_from_dict(cfg.problem)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, learning.LinearCombinationPredictor):
        return [{"alpha": float(a), "classifier": _jsonable(c)} for a, c in x.atoms]
    return x


def _support(mix: Mixture) -> list:
    return [{"weight": float(w), "choice": _jsonable(c)} for w, c in mix.atoms]


def _finite_rows(prob):
    if isinstance(prob, problems.FiniteClassificationTestbed):
        return prob.as_problem(), prob.stats
    if isinstance(prob, (problems.FiniteChoiceProblem, problems.FlopInstance)):
        return prob, None
    raise ConfigError(f"cli: method needs a finite problem, got {type(prob).__name__}")


def _objective(cfg: ExperimentConfig, K: int, stats=None) -> objectives.ObjectiveSpec:
    return objectives.build_objective(cfg.objective.name, K, cfg.objective.params, stats)


def _grid_trace(rows):
    def trace(rank, r, f_r, distances):
        rows.extend((rank, t + 1, d) for t, d in enumerate(distances))

    return trace


def _run_groupopt(cfg, prob, rng):
    P, stats = _finite_rows(prob)
    pts = P.loss_points()
    K = pts.shape[1]
    f = _objective(cfg, K, stats)
    rows: list = []
    run = groupopt.solve_group_opt(cfg.epsilon, f, P.assessor(), P.linear_optimizer(cfg.mode), K,
                                   reachable=pts, trace=_grid_trace(rows))
    loss = mixture_loss(run.mixture, P.assessor())
    res = _run_record(run)
    res.update(value=float(f(loss)), loss=loss, mixture=_support(run.mixture))
    return res, rows, (f, pts)


def _run_record(run: groupopt.GroupOptRun) -> dict:
    return {"schedule": run.schedule.as_dict(), "optimizer_calls": run.optimizer_calls,
            "assessor_calls": run.assessor_calls, "visited": run.visited,
            "screened": run.screened, "grid_point": run.point, "grid_value": run.point_value,
            "grid_rank": run.rank, "monotone": run.N,
            "call_budget": run.schedule.grid_size * (run.schedule.T + 1)}


def _run_convex(cfg, prob, rng):
    P, stats = _finite_rows(prob)
    pts = P.loss_points()
    K = pts.shape[1]
    f = _objective(cfg, K, stats)
    if f.subgradient is None:
        raise ConfigError(f"cli: objective {cfg.objective.name!r} has no subgradient")
    rows: list = []

    def trace(step, value, gap):
        rows.append((step, value, gap))

    M, assess = P.linear_optimizer(cfg.mode), P.assessor()
    if cfg.constraint is None:
        out = convex.solve_frank_wolfe(f, f.subgradient, M, assess, cfg.epsilon, K,
                                       max_iter=cfg.max_iter, trace=trace)
        res = {}
    else:
        c = cfg.constraint
        if c.name == "gini":
            g = objectives.gini_constraint(float(c.params["theta"]), K)
        else:
            g = objectives.linear_constraints(c.params["U"], c.params["b"])
        cres = convex.solve_constrained(f, f.subgradient, g, g.subgradient, M, assess,
                                        cfg.epsilon, K, max_iter=cfg.max_iter, trace=trace)
        out = cres.inner
        res = {"lambda": cres.lam, "tau": cres.tau}
    loss = mixture_loss(out.mixture, assess)
    res.update(value=float(f(loss)), loss=loss, mixture=_support(out.mixture),
               lower_bound=out.lower_bound, iterations=out.iterations, converged=out.converged,
               optimizer_calls=out.optimizer_calls,
               iteration_cap=convex.default_iterations(cfg.epsilon, K))
    if cfg.constraint is not None:
        res["constraint_value"] = float(g(loss))
    return res, rows, (f, pts)


def _run_classify(cfg, prob, rng):
    if not isinstance(prob, problems.FiniteClassificationTestbed):
        raise ConfigError("cli: classify needs a testbed or loan_example problem")
    st = prob.stats
    f = _objective(cfg, 2 * prob.K, st)
    L = cfg.lipschitz if cfg.lipschitz is not None else f.lipschitz
    legal = prob.rate_matrix[prob.legal_indices]
    rows: list = []
    run = learning.group_fair_classify(f, L, cfg.epsilon, cfg.delta, prob.erm_learner(), prob, st,
                                       rng, exact=cfg.exact, reachable=legal if cfg.exact else None,
                                       trace=_grid_trace(rows))
    loss = sum(w * prob.rate_matrix[c] for w, c in run.mixture.atoms)
    res = _run_record(run)
    res.update(value=float(f(loss)), loss=loss, mixture=_support(run.mixture), lipschitz=L)
    return res, rows, (f, legal)


def _run_regress(cfg, prob, rng):
    if not isinstance(prob, problems.RegressionTestbed):
        raise ConfigError("cli: regress needs a regression problem")
    data = prob.distribution()
    f = _objective(cfg, prob.K)
    L = cfg.lipschitz if cfg.lipschitz is not None else f.lipschitz
    rows: list = []
    run = learning.group_fair_regress(f, L, cfg.epsilon, cfg.delta, cfg.B, prob.learner(), data,
                                      rng, inner_epsilon=cfg.inner_epsilon,
                                      trace=_grid_trace(rows))
    loss = sum(w * learning.group_squared_errors(h, data) for w, h in run.mixture.atoms)
    res = _run_record(run)
    res.update(value=float(f(loss)), loss=loss, mixture=_support(run.mixture), lipschitz=L)
    return res, rows, None


def _run_oracle(cfg, prob, rng):
    res_ = (cfg.compare_oracle or OracleConfig()).resolution
    if isinstance(prob, problems.FiniteClassificationTestbed):
        f = _objective(cfg, 2 * prob.K, prob.stats)
        pts = prob.rate_matrix[prob.legal_indices]
    else:
        P, stats = _finite_rows(prob)
        pts = P.loss_points()
        f = _objective(cfg, pts.shape[1], stats)
    value, mix = oracle.brute_force_min(f, pts, res_)
    return ({"value": value, "mixture": _support(mix), "resolution": res_},
            [(res_, value)], None)


RUNNERS = {"groupopt": _run_groupopt, "convex": _run_convex, "classify": _run_classify,
           "regress": _run_regress, "oracle": _run_oracle}


def run_experiment(method: str, config_path, seed: int, out_dir) -> int:
    """Run one configured experiment and write its outputs; returns the exit code."""
    out_dir = Path(out_dir)
    try:
        cfg = load_config(config_path)
        if cfg.method is not None and method != "validate" and cfg.method != method:
            raise ConfigError(f"cli.run_experiment: config is for {cfg.method!r}, not {method!r}")
        prob = _load_problem(cfg, Path(config_path).parent)
        if method == "validate":
            return 0
        rng = np.random.default_rng(seed)
        start = time.perf_counter()
        result, rows, ref = RUNNERS[method](cfg, prob, rng)
        wall = time.perf_counter() - start
        if cfg.compare_oracle is not None and ref is not None and method != "oracle":
            f, pts = ref
            result["oracle_value"] = oracle.brute_force_min(f, pts, cfg.compare_oracle.resolution)[0]
            result["oracle_resolution"] = cfg.compare_oracle.resolution
        result.update(method=method, seed=seed, epsilon=cfg.epsilon)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "result.json").write_text(
            json.dumps(_jsonable(result), sort_keys=True, indent=2) + "\n")
        with open(out_dir / "trace.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS[method])
            w.writerows([repr(v) if isinstance(v, float) else v for v in row] for row in rows)
        (out_dir / "timing.json").write_text(json.dumps({"wall_seconds": wall}) + "\n")
        return 0
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # I/O, validation, budgets
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _parse_seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="grouploss", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=METHODS + ("validate",))
    ap.add_argument("--config", action="append", required=True,
                    help="run configuration; repeat to run several")
    ap.add_argument("--seed", type=_parse_seed, default=0)
    ap.add_argument("--out", default="results")
    ap.add_argument("--jobs", type=int, default=1)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configs = args.config
    if len(configs) == 1:
        outs = [Path(args.out)]
    else:
        outs = [Path(args.out) / Path(c).stem for c in configs]
    jobs = [(args.command, c, args.seed, o) for c, o in zip(configs, outs)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            codes = list(ex.map(run_experiment, *zip(*jobs)))
    else:
        codes = [run_experiment(*j) for j in jobs]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
