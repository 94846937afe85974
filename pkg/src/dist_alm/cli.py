"""Command-line front end: solve a builtin instance, run the benchmark,
or run the self-check suite.

Every flag has a config-file equivalent (a flat JSON object keyed by the
flag name with dashes replaced by underscores); explicit flags override
file values.  Outputs are bit-stable for a fixed seed in sequential mode.
Worker parallelism is capped by the DIST_ALM_THREADS environment variable
(0 = sequential, the default).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bench import ToyParams, generate_toy, run_statistics, toy_initial_guess, \
    write_stats_csv
from .errors import ConfigurationError, RefusalError
from .inner_bcd import FixedScaled, InnerConfig
from .model import (AgentSpec, BlockVector, MultiplierEstimate, NlpProblem,
                    Polytope)
from .outer_mm import OuterConfig, run_outer
from .subqp import ProxQp, solve_prox_qp
from .verify import brute_force_min, fd_gradient_check

# solve defaults to a small solvable demonstration instance; at scale 2 a
# one-dimensional block cannot reach its sphere inside the box, so the
# default scale is 4 (bench keeps the experiment value 2).
_SOLVE_DEFAULTS = {
    "n": 2, "d": 1, "r": 4.0, "seed": 0, "rho0": 1.0, "beta": 10.0,
    "eps0": 1e-1, "eta": 1e-6, "max_outer": 25, "tau": 1e-12,
    "max_sweeps": 4000, "b_scale": 30.0, "out": None, "toy": True,
}
_BENCH_DEFAULTS = {
    "n": 20, "d": 3, "r": 2.0, "seed": 0, "rho0": 0.1, "beta": 100.0,
    "instances": 50, "outer_iters": 5,
    "budgets": "10,25,50,100,200", "tolerances": "1e-3,1e-4,1e-6",
    "out": "stats.csv", "trace": None, "b_scale": 30.0,
}
_VERIFY_DEFAULTS = {"seed": 0}


def _threads() -> int:
    raw = os.environ.get("DIST_ALM_THREADS", "0")
    try:
        return max(0, int(raw))
    except ValueError:
        raise ConfigurationError(
            f"DIST_ALM_THREADS must be an integer, got {raw!r}"
        ) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dist-alm",
        description="Two-level augmented-Lagrangian solver for block-structured "
                    "nonconvex programs.",
    )
    sub = parser.add_subparsers(dest="mode", required=True)

    solve = sub.add_parser("solve", help="solve one builtin chain instance")
    solve.add_argument("--config", type=str, default=None,
                       help="JSON file with flag defaults")
    solve.add_argument("--toy", action="store_true", default=None,
                       help="use the builtin random chain family (default)")
    solve.add_argument("--n", type=int, default=None, help="number of agents")
    solve.add_argument("--d", type=int, default=None, help="block dimension")
    solve.add_argument("--r", type=float, default=None, help="instance scale R")
    solve.add_argument("--seed", type=int, default=None)
    solve.add_argument("--rho0", type=float, default=None)
    solve.add_argument("--beta", type=float, default=None)
    solve.add_argument("--eps0", type=float, default=None)
    solve.add_argument("--eta", type=float, default=None)
    solve.add_argument("--max-outer", type=int, default=None, dest="max_outer")
    solve.add_argument("--tau", type=float, default=None)
    solve.add_argument("--max-sweeps", type=int, default=None, dest="max_sweeps")
    solve.add_argument("--b-scale", type=float, default=None, dest="b_scale")
    solve.add_argument("--out", type=str, default=None,
                       help="write the outer-iteration trace as JSON lines")

    bench = sub.add_parser("bench", help="run the feasibility statistics")
    bench.add_argument("--config", type=str, default=None)
    bench.add_argument("--n", type=int, default=None)
    bench.add_argument("--d", type=int, default=None)
    bench.add_argument("--r", type=float, default=None)
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--rho0", type=float, default=None)
    bench.add_argument("--beta", type=float, default=None)
    bench.add_argument("--instances", type=int, default=None)
    bench.add_argument("--outer-iters", type=int, default=None, dest="outer_iters")
    bench.add_argument("--budgets", type=str, default=None,
                       help="comma-separated total sweep budgets")
    bench.add_argument("--tolerances", type=str, default=None,
                       help="comma-separated feasibility tolerances")
    bench.add_argument("--b-scale", type=float, default=None, dest="b_scale")
    bench.add_argument("--out", type=str, default=None, help="CSV output path")
    bench.add_argument("--trace", type=str, default=None,
                       help="per-run trace JSON-lines path")

    verify = sub.add_parser("verify", help="run the oracle self-checks")
    verify.add_argument("--config", type=str, default=None)
    verify.add_argument("--seed", type=int, default=None)
    return parser


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"config file {path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return data


def _resolve(args, config, defaults):
    """Flag > config file > default, with key validation."""
    unknown = set(config) - set(defaults) - {"mode"}
    if unknown:
        raise ConfigurationError(
            f"unknown config keys: {', '.join(sorted(unknown))}"
        )
    merged = {}
    for key, fallback in defaults.items():
        flag = getattr(args, key, None)
        merged[key] = flag if flag is not None else config.get(key, fallback)
    return merged

def _parse_float_list(text, key):
    try:
        values = [float(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"{key} must be a comma-separated list: {exc}") \
            from exc
    if not values:
        raise ConfigurationError(f"{key} must not be empty")
    return values


def _one_agent_problem():
    """x^2 objective with x^2 = 1 on the box [-2, 2]; KKT at (x, mu) = (1, -1)."""
    return NlpProblem(agents=(
        AgentSpec(
            cost=lambda x: float(x[0] ** 2),
            cost_grad=lambda x: np.array([2.0 * x[0]]),
            feasible_set=Polytope.box([-2.0], [2.0]),
            constraint=lambda x: np.array([x[0] ** 2 - 1.0]),
            constraint_jac=lambda x: np.array([[2.0 * x[0]]]),
            constraint_dim=1,
        ),
    ))


def _cmd_solve(opts) -> int:
    params = ToyParams(n_agents=opts["n"], block_dim=opts["d"],
                       scale=opts["r"], seed=opts["seed"])
    problem = generate_toy(params)
    z0, mu0 = toy_initial_guess(params, problem)
    outer_cfg = OuterConfig(rho0=opts["rho0"], beta=opts["beta"],
                            eps0=opts["eps0"], eta=opts["eta"],
                            max_outer=opts["max_outer"])
    inner_cfg = InnerConfig(tau=opts["tau"], max_sweeps=opts["max_sweeps"],
                            b_strategy=FixedScaled(opts["b_scale"]))
    state, status = run_outer(problem, outer_cfg, inner_cfg, z0, mu0,
                              with_certificates=False, threads=_threads())
    last = state.trace[-1]
    print(f"status={status} outer_iterations={state.k} "
          f"total_sweeps={last.cum_sweeps}")
    print(f"feasibility_inf={last.h_inf:.6e} feasibility_two={last.h_two:.6e} "
          f"criticality_residual={last.residual:.6e}")
    if opts["out"]:
        with open(opts["out"], "w", encoding="utf-8") as fh:
            for t in state.trace:
                fh.write(json.dumps(t.as_dict(), sort_keys=True) + "\n")
        print(f"trace written to {opts['out']}")
    return 0 if status == "converged" else 1


def _cmd_bench(opts) -> int:
    params = ToyParams(n_agents=opts["n"], block_dim=opts["d"],
                       scale=opts["r"], seed=opts["seed"])
    budgets = [int(b) for b in _parse_float_list(opts["budgets"], "budgets")]
    tolerances = _parse_float_list(opts["tolerances"], "tolerances")
    outer_iters = int(opts["outer_iters"])
    outer_cfg = OuterConfig(rho0=opts["rho0"], beta=opts["beta"], eps0=1e-2,
                            eta=0.0, max_outer=outer_iters)
    inner_cfg = InnerConfig(tau=1e-12, max_sweeps=10 ** 9,
                            b_strategy=FixedScaled(opts["b_scale"]))
    stats = run_statistics(params, int(opts["instances"]), budgets, tolerances,
                           outer_cfg=outer_cfg, inner_cfg=inner_cfg,
                           outer_iters=outer_iters, trace_path=opts["trace"],
                           threads=_threads())
    write_stats_csv(stats, opts["out"])
    print(f"stats written to {opts['out']} "
          f"({stats.instances} instances, {len(budgets)} budgets)")
    return 0


def _cmd_verify(opts) -> int:
    failures = 0

    def report(name, ok, detail=""):
        nonlocal failures
        line = f"[{'PASS' if ok else 'FAIL'}] {name}"
        if detail:
            line += f" ({detail})"
        print(line)
        failures += 0 if ok else 1

    # finite-difference agreement of the block gradients
    params = ToyParams(n_agents=5, block_dim=3, scale=2.0, seed=opts["seed"])
    problem = generate_toy(params)
    rng = np.random.default_rng(opts["seed"] + 1)
    worst = 0.0
    b = params.box_bound
    for _ in range(20):
        z = BlockVector([rng.uniform(-0.9 * b, 0.9 * b, 3) for _ in range(5)])
        mu = MultiplierEstimate.from_flat(problem, rng.uniform(-1, 1, problem.r))
        worst = max(worst, fd_gradient_check(problem, z, mu, rho=3.0))
    report("gradient finite differences", worst <= 1e-5, f"worst {worst:.2e}")

    # one-agent analytic KKT point
    one = _one_agent_problem()
    state, status = run_outer(
        one,
        OuterConfig(rho0=1.0, beta=10.0, eps0=1e-1, eta=1e-8, max_outer=30),
        InnerConfig(tau=1e-12, max_sweeps=5000),
        BlockVector([np.array([2.0])]), MultiplierEstimate.zeros(one),
        with_certificates=False,
    )
    x = float(state.z.block(0)[0])
    mu = float(state.mu.part(0)[0])
    ok = status == "converged" and abs(abs(x) - 1.0) <= 1e-6 and abs(mu + 1.0) <= 1e-4
    report("one-agent KKT point", ok, f"x={x:.8f} mu={mu:.6f}")

    # proximal QP against a brute-force grid
    qp_problem = NlpProblem(agents=(
        AgentSpec(
            cost=lambda x: float(1.5 * x[0] ** 2 + 0.5 * x[1] ** 2 + 0.3 * x[0]),
            cost_grad=lambda x: np.array([3.0 * x[0] + 0.3, x[1]]),
            feasible_set=Polytope.box([-0.3, -0.3], [0.3, 0.3]),
        ),
    ))
    _, grid_val = brute_force_min(qp_problem, grid_step=1e-3)
    qp = ProxQp(g=np.array([0.3, 0.0]),
                m_mat=np.array([[3.0, 0.0], [0.0, 1.0]]),
                center=np.zeros(2),
                feasible_set=Polytope.box([-0.3, -0.3], [0.3, 0.3]))
    x_qp, _, _ = solve_prox_qp(qp)
    report("QP vs grid oracle", abs(qp.objective(x_qp) - grid_val) <= 1e-3,
           f"qp {qp.objective(x_qp):.6f} grid {grid_val:.6f}")

    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        config = _load_config(getattr(args, "config", None))
        if args.mode == "solve":
            return _cmd_solve(_resolve(args, config, _SOLVE_DEFAULTS))
        if args.mode == "bench":
            return _cmd_bench(_resolve(args, config, _BENCH_DEFAULTS))
        return _cmd_verify(_resolve(args, config, _VERIFY_DEFAULTS))
    except (ConfigurationError, RefusalError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver failures
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


def app() -> None:
    raise SystemExit(main(sys.argv[1:]))


if __name__ == "__main__":
    sys.exit(main())
