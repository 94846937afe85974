"""Outer loop: method of multipliers with partial constraint penalisation.

Each outer iteration drives the criticality residual of the inner problem
below the current tolerance ``eps`` (warm-started at the previous point),
then applies the first-order dual update ``mu <- mu + rho H(z)``, divides
the tolerance by the pre-growth penalty and multiplies the penalty by
``beta``.  The loop stops once the chosen norm of ``H(z)`` reaches ``eta``.

The penalty / tolerance schedule is maintained in closed form,

    rho_k = rho0 * beta**k,
    eps_k = min(eps0, eps0 / (rho0**k * beta**(k (k - 1) / 2))),

which telescopes the listed updates exactly (the ``min`` guards the
transient growth of ``eps`` when ``rho0 < 1``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, PreconditionError, StructureError
from .inner_bcd import InnerConfig, run_inner
from .model import (BlockVector, MultiplierEstimate, NlpProblem,
                    eval_aug_lagrangian, eval_constraints)

__all__ = [
    "IterTrace",
    "OuterConfig",
    "OuterState",
    "default_start",
    "dual_update",
    "run_outer",
]

STATUS_CONVERGED = "converged"
STATUS_ITERATION_CAP = "iteration_cap"
STATUS_INNER_FAILURE = "inner_failure"


@dataclass(frozen=True)
class OuterConfig:
    """Outer-loop settings.

    ``eta`` is the final tolerance on the equality constraints, measured
    in ``constraint_norm`` (sup norm by default; both norms are recorded
    in the trace regardless).  Setting ``eta = 0`` disables the
    feasibility stop, which the benchmark harness uses to run a fixed
    number of outer iterations.
    """

    rho0: float
    beta: float
    eps0: float
    eta: float
    max_outer: int = 30
    constraint_norm: str = "inf"

    def __post_init__(self):
        if self.rho0 <= 0:
            raise ConfigurationError(f"rho0 must be positive, got {self.rho0}")
        if self.beta <= 1:
            raise ConfigurationError(f"beta must exceed 1, got {self.beta}")
        if self.eps0 <= 0:
            raise ConfigurationError(f"eps0 must be positive, got {self.eps0}")
        if self.eta < 0:
            raise ConfigurationError(f"eta must be nonnegative, got {self.eta}")
        if self.max_outer < 1:
            raise ConfigurationError("max_outer must be at least 1")
        if self.constraint_norm not in ("inf", "two"):
            raise ConfigurationError(
                f"constraint_norm must be 'inf' or 'two', got {self.constraint_norm!r}"
            )

    def schedule(self, k: int):
        """Closed-form ``(rho_k, eps_k)`` after ``k`` completed iterations."""
        try:
            rho = self.rho0 * self.beta ** k
        except OverflowError:
            rho = math.inf
        try:
            denom = self.rho0 ** k * self.beta ** (k * (k - 1) // 2)
        except OverflowError:
            denom = math.inf
        if denom == 0.0 or not math.isfinite(denom):
            # float range exhausted; decide on the sign of log(denom)
            log_d = k * math.log(self.rho0) \
                + (k * (k - 1) // 2) * math.log(self.beta)
            eps = 0.0 if log_d > 0 else self.eps0
        else:
            eps = self.eps0 / denom
        return rho, min(self.eps0, eps)


@dataclass
class IterTrace:
    """Per-outer-iteration record feeding traces and the benchmark."""

    k: int
    rho: float
    eps: float
    h_inf: float
    h_two: float
    lagrangian: float
    residual: float
    sweeps: int
    cum_sweeps: int
    certificates_ok: bool
    inner_achieved: bool

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "rho": self.rho,
            "eps": self.eps,
            "h_inf": self.h_inf,
            "h_two": self.h_two,
            "lagrangian": self.lagrangian,
            "residual": self.residual,
            "sweeps": self.sweeps,
            "cum_sweeps": self.cum_sweeps,
            "certificates_ok": self.certificates_ok,
            "inner_achieved": self.inner_achieved,
        }


@dataclass
class OuterState:
    """Mutable loop state: primal/dual point, schedule position, trace."""

    z: BlockVector
    mu: MultiplierEstimate
    rho: float
    eps: float
    k: int
    trace: list = field(default_factory=list)


def dual_update(mu: MultiplierEstimate, rho: float, h_val) -> MultiplierEstimate:
    """First-order multiplier step ``mu + rho * H``; partition preserved."""
    h_val = np.asarray(h_val, dtype=float).reshape(-1)
    if h_val.shape[0] != mu.total_dim:
        raise StructureError(
            f"constraint value has length {h_val.shape[0]}, "
            f"multiplier expects {mu.total_dim}"
        )
    parts = []
    ofs = 0
    for part in mu.parts:
        d = part.shape[0]
        parts.append(part + rho * h_val[ofs:ofs + d])
        ofs += d
    coupling = mu.coupling_part + rho * h_val[ofs:]
    return MultiplierEstimate(parts, coupling)


def default_start(problem: NlpProblem) -> BlockVector:
    """Deterministic primal start: per-block Chebyshev / box centers."""
    return BlockVector([a.feasible_set.chebyshev_center() for a in problem.agents])


def run_outer(problem: NlpProblem, cfg: OuterConfig, inner_cfg: InnerConfig,
              z0: Optional[BlockVector] = None,
              mu0: Optional[MultiplierEstimate] = None,
              with_certificates: bool = True, threads: int = 0,
              sweep_budgets=None, inner_eps_stop: bool = True):
    """Run the two-level method until feasibility or the iteration cap.

    Parameters
    ----------
    problem, cfg, inner_cfg
        Problem and the two loop configurations.
    z0, mu0
        Start point (default: polytope centers) and multiplier estimate
        (default: zero).  ``z0`` must be feasible for the polytopes.
    with_certificates, threads
        Passed through to the inner loop.
    sweep_budgets
        Optional per-outer-iteration sweep caps (benchmark mode).
    inner_eps_stop
        When ``False``, the inner loop ignores the ``eps`` target and runs
        to its own stopping rule or budget (benchmark mode).

    Returns
    -------
    (OuterState, str)
        Final state (with per-iteration trace) and a status string:
        ``"converged"``, ``"iteration_cap"`` or ``"inner_failure"``.

    Notes
    -----
    An inner call that exhausts its sweep budget is a soft failure: the
    dual update still uses the best available point and the loop goes on.
    Hard evaluator errors propagate.
    """
    z = default_start(problem) if z0 is None else z0
    mu = MultiplierEstimate.zeros(problem) if mu0 is None else mu0
    problem.check_block_structure(z)
    if mu.total_dim != problem.r:
        raise StructureError(
            f"mu0 has dimension {mu.total_dim}, expected r={problem.r}"
        )
    if not problem.feasible(z, slack=1e-9):
        raise PreconditionError("z0 violates the polytopic constraints")
    if sweep_budgets is not None and len(sweep_budgets) < cfg.max_outer:
        raise ConfigurationError(
            f"need {cfg.max_outer} sweep budgets, got {len(sweep_budgets)}"
        )

    state = OuterState(z=z, mu=mu, rho=cfg.rho0, eps=cfg.eps0, k=0)
    cum_sweeps = 0
    last_achieved = True
    while state.k < cfg.max_outer:
        rho, eps = cfg.schedule(state.k)
        state.rho, state.eps = rho, eps
        budget = None if sweep_budgets is None else int(sweep_budgets[state.k])
        inner = run_inner(
            problem, state.z, state.mu, rho, inner_cfg,
            eps_target=eps if inner_eps_stop else None,
            sweep_cap=budget, with_certificates=with_certificates,
            threads=threads,
        )
        last_achieved = inner.achieved_target
        state.z = inner.z
        cum_sweeps += inner.sweeps
        h_val = eval_constraints(problem, state.z)
        h_inf = float(np.max(np.abs(h_val), initial=0.0))
        h_two = float(np.linalg.norm(h_val))
        certs_ok = all(c.passed for c in inner.certificates)
        state.trace.append(IterTrace(
            k=state.k, rho=rho, eps=eps, h_inf=h_inf, h_two=h_two,
            lagrangian=eval_aug_lagrangian(problem, state.z, state.mu, rho),
            residual=inner.final_residual, sweeps=inner.sweeps,
            cum_sweeps=cum_sweeps, certificates_ok=certs_ok,
            inner_achieved=inner.achieved_target,
        ))
        state.mu = dual_update(state.mu, rho, h_val)
        state.k += 1
        state.rho, state.eps = cfg.schedule(state.k)
        h_norm = h_inf if cfg.constraint_norm == "inf" else h_two
        if cfg.eta > 0.0 and h_norm <= cfg.eta:
            return state, STATUS_CONVERGED
    return state, (STATUS_ITERATION_CAP if last_achieved else STATUS_INNER_FAILURE)
