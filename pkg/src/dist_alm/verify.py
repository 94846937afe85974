"""Independent checks: criticality residual, derivative tests, brute force.

The criticality residual measures the distance of the augmented-Lagrangian
gradient to the negative normal cone of the feasible polytope,

    d(0, grad L_rho(z, mu) + N_Z(z)),

which is the inexactness the inner loop must drive below the outer loop's
tolerance.  Boxes use the per-coordinate closed form; general polytopes
reconstruct inequality multipliers by nonnegative least squares on the
active rows.  The remaining routines are deliberately simple, derivative-
free or exhaustive, so they can serve as oracles for the solver itself.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, PreconditionError, RefusalError
from .model import (BlockVector, MultiplierEstimate, NlpProblem,
                    _aug_lagrangian, _block_gradient, _constraints, _objective)

__all__ = [
    "KktReport",
    "brute_force_min",
    "criticality_residual",
    "fd_gradient_check",
    "kkt_report",
    "regularity_check",
]

log = logging.getLogger(__name__)

#: Relative slack for detecting active inequality rows.
ACTIVE_TOL_SCALE = 1e-8


@dataclass
class KktReport:
    """Snapshot of the approximate KKT conditions at a point.

    ``multipliers`` holds the reconstructed inequality multipliers for all
    polytope rows in stacked agent order (zero on inactive rows).
    """

    stationarity: float
    feasibility_inf: float
    active_rows: np.ndarray
    multipliers: np.ndarray
    regular: bool


def _active_box_state(poly, x):
    """Per-coordinate activity: -1 lower, +1 upper, 2 both, 0 inactive."""
    tol_hi = ACTIVE_TOL_SCALE * (1.0 + np.abs(poly.upper))
    tol_lo = ACTIVE_TOL_SCALE * (1.0 + np.abs(poly.lower))
    at_hi = x >= poly.upper - tol_hi
    at_lo = x <= poly.lower + tol_lo
    state = np.zeros(x.shape[0], dtype=int)
    state[at_hi] = 1
    state[at_lo] = -1
    state[at_hi & at_lo] = 2
    return state


def _box_residual_vector(poly, x, grad):
    """Componentwise normal-cone distance on a box.

    Inactive coordinates contribute the raw gradient; at an upper bound the
    admissible normals are nonnegative, so only a positive gradient remains;
    at a lower bound only a negative one.
    """
    state = _active_box_state(poly, x)
    res = np.array(grad, dtype=float)
    res[(state == 1) & (grad <= 0)] = 0.0
    res[(state == -1) & (grad >= 0)] = 0.0
    res[state == 2] = 0.0
    return res


def _block_cone_distance_sq(poly, x, grad):
    """Squared normal-cone distance for one block, plus multipliers."""
    q = poly.n_rows
    lam = np.zeros(q)
    if poly.is_box:
        res = _box_residual_vector(poly, x, grad)
        state = _active_box_state(poly, x)
        n = poly.dim
        # multipliers: absorbed gradient mass on the active rows
        for j in range(n):
            if state[j] == 1 and grad[j] < 0:
                lam[j] = -grad[j]
            elif state[j] == -1 and grad[j] > 0:
                lam[n + j] = grad[j]
        active = np.flatnonzero(state != 0)
        rows = []
        for j in active:
            if state[j] in (1, 2):
                rows.append(j)
            if state[j] in (-1, 2):
                rows.append(n + j)
        return float(res @ res), lam, np.array(sorted(rows), dtype=int)
    from scipy.optimize import nnls

    slack = poly.b_vec - poly.a_mat @ x
    active = np.flatnonzero(slack <= ACTIVE_TOL_SCALE * (1.0 + np.abs(poly.b_vec)))
    if active.size == 0:
        return float(grad @ grad), lam, active
    lam_act, rnorm = nnls(poly.a_mat[active].T, -grad)
    lam[active] = lam_act
    return float(rnorm) ** 2, lam, active


def criticality_residual(problem: NlpProblem, z: BlockVector,
                         mu: MultiplierEstimate, rho: float) -> float:
    """Distance of the augmented-Lagrangian gradient to -N_Z(z).

    Parameters
    ----------
    problem, z, mu, rho
        Point and dual data; ``z`` must lie in the polytope up to 1e-10.

    Returns
    -------
    float
        ``min_{v in N_Z(z)} || grad L_rho(z, mu) + v ||_2``.
    """
    problem.check_block_structure(z)
    blocks = list(z.blocks)
    total = 0.0
    for i, agent in enumerate(problem.agents):
        poly = agent.feasible_set
        if poly.violation(blocks[i]) > 1e-10:
            raise PreconditionError(
                f"block {i} violates its polytope by {poly.violation(blocks[i]):.3e}"
            )
        grad = _block_gradient(problem, blocks, mu, rho, i)
        dist_sq, _, _ = _block_cone_distance_sq(poly, blocks[i], grad)
        total += dist_sq
    return float(np.sqrt(total))


def kkt_report(problem: NlpProblem, z: BlockVector, mu: MultiplierEstimate,
               rho: float, rank_tol: float = 1e-8) -> KktReport:
    """Assemble stationarity, feasibility, multipliers and regularity."""
    problem.check_block_structure(z)
    blocks = list(z.blocks)
    total = 0.0
    lams, actives = [], []
    offset = 0
    for i, agent in enumerate(problem.agents):
        poly = agent.feasible_set
        grad = _block_gradient(problem, blocks, mu, rho, i)
        dist_sq, lam, active = _block_cone_distance_sq(poly, blocks[i], grad)
        total += dist_sq
        lams.append(lam)
        actives.extend(offset + a for a in active)
        offset += poly.n_rows
    h_val = _constraints(problem, blocks)
    return KktReport(
        stationarity=float(np.sqrt(total)),
        feasibility_inf=float(np.max(np.abs(h_val), initial=0.0)),
        active_rows=np.array(actives, dtype=int),
        multipliers=np.concatenate(lams) if lams else np.zeros(0),
        regular=regularity_check(problem, z, rank_tol),
    )


def fd_gradient_check(problem: NlpProblem, z: BlockVector,
                      mu: MultiplierEstimate, rho: float,
                      h: float = 1e-6) -> float:
    """Worst relative error of the block gradients vs central differences.

    The step is scaled per coordinate as ``h * (1 + |z_j|)``; every
    perturbed point must stay inside the polytope, otherwise the interior
    margin precondition is violated.
    """
    problem.check_block_structure(z)
    if h <= 0:
        raise PreconditionError("step must be positive")
    blocks = list(z.blocks)
    worst = 0.0
    for i, agent in enumerate(problem.agents):
        grad = _block_gradient(problem, blocks, mu, rho, i)
        fd = np.zeros_like(grad)
        for j in range(agent.dim):
            step = h * (1.0 + abs(blocks[i][j]))
            for sign in (1.0, -1.0):
                pt = np.array(blocks[i])
                pt[j] += sign * step
                if not agent.feasible_set.contains(pt, slack=1e-9):
                    raise PreconditionError(
                        f"block {i} is closer than {step:.1e} to its boundary "
                        f"in coordinate {j}"
                    )
            hi = list(blocks)
            lo = list(blocks)
            hi_pt = np.array(blocks[i]); hi_pt[j] += step
            lo_pt = np.array(blocks[i]); lo_pt[j] -= step
            hi[i] = hi_pt
            lo[i] = lo_pt
            fd[j] = (_aug_lagrangian(problem, hi, mu, rho)
                     - _aug_lagrangian(problem, lo, mu, rho)) / (2.0 * step)
        scale = max(1.0, float(np.max(np.abs(grad), initial=0.0)))
        worst = max(worst, float(np.max(np.abs(fd - grad), initial=0.0)) / scale)
    return worst


def regularity_check(problem: NlpProblem, z: BlockVector,
                     rank_tol: float = 1e-8) -> bool:
    """True iff the stacked constraint Jacobian has full row rank at ``z``.

    Returns ``False`` with a logged diagnostic when there are more equality
    constraints than variables.
    """
    problem.check_block_structure(z)
    r, n = problem.r, problem.total_dim
    if r == 0:
        return True
    if r > n:
        log.warning("regularity impossible: r=%d equality rows exceed n=%d", r, n)
        return False
    blocks = list(z.blocks)
    jac = np.zeros((r, n))
    row = 0
    col = 0
    for i, agent in enumerate(problem.agents):
        if agent.constraint is not None:
            j = np.atleast_2d(np.asarray(agent.constraint_jac(blocks[i]), dtype=float))
            jac[row:row + agent.constraint_dim, col:col + agent.dim] = j
            row += agent.constraint_dim
        col += agent.dim
    if problem.coupling.constraint is not None:
        col = 0
        for i, agent in enumerate(problem.agents):
            j = np.atleast_2d(np.asarray(
                problem.coupling.constraint_block_jac(blocks, i), dtype=float))
            jac[row:row + problem.p, col:col + agent.dim] = j
            col += agent.dim
    svals = np.linalg.svd(jac, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return False
    return int(np.sum(svals > rank_tol * svals[0])) == r


def _block_grids(problem: NlpProblem, grid_step: float):
    """Per-block lists of grid points spanning each box."""
    grids = []
    for i, agent in enumerate(problem.agents):
        poly = agent.feasible_set
        if not poly.is_box:
            raise RefusalError(
                f"brute force requires box feasible sets, agent {i} is a polytope"
            )
        axes = []
        for lo, hi in zip(poly.lower, poly.upper):
            count = int(np.floor((hi - lo) / grid_step + 1e-12))
            axes.append(lo + grid_step * np.arange(count + 1))
        pts = np.array(list(itertools.product(*axes)))
        grids.append(pts)
    return grids


def brute_force_min(problem: NlpProblem, grid_step: float,
                    feasibility_band: float = None,
                    mu: MultiplierEstimate = None, rho: float = None,
                    max_points: int = 2_000_000):
    """Exhaustive grid minimisation on tiny problems.

    With ``mu``/``rho`` given, minimises the augmented Lagrangian over the
    full grid.  Otherwise minimises the objective restricted to grid points
    with every equality within ``feasibility_band`` (required whenever the
    problem has equality constraints).

    Returns
    -------
    (BlockVector, float)
        Best grid point and its value.

    Raises
    ------
    RefusalError
        On more than four variables, an empty feasibility band, or a grid
        larger than ``max_points`` combinations.
    """
    if problem.total_dim > 4:
        raise RefusalError(
            f"brute force is limited to 4 variables, problem has {problem.total_dim}"
        )
    if grid_step <= 0:
        raise PreconditionError("grid step must be positive")
    lagrangian_mode = mu is not None or rho is not None
    if lagrangian_mode and (mu is None or rho is None):
        raise ConfigurationError("augmented-Lagrangian mode needs both mu and rho")
    if not lagrangian_mode and problem.r > 0 and feasibility_band is None:
        raise ConfigurationError(
            "a feasibility band is required when equality constraints are present"
        )
    grids = _block_grids(problem, grid_step)

    if not lagrangian_mode and feasibility_band is not None:
        kept = []
        for i, pts in enumerate(grids):
            if problem.agents[i].constraint is None:
                kept.append(pts)
                continue
            mask = np.array([
                np.max(np.abs(np.asarray(problem.agents[i].constraint(p)))) <=
                feasibility_band for p in pts
            ])
            kept.append(pts[mask])
            if kept[-1].shape[0] == 0:
                raise RefusalError(
                    f"no grid point of agent {i} satisfies |F_{i}| <= "
                    f"{feasibility_band:g} at step {grid_step:g}"
                )
        grids = kept

    combos = 1
    for pts in grids:
        combos *= pts.shape[0]
    if combos > max_points:
        raise RefusalError(
            f"grid would enumerate {combos} combinations (cap {max_points})"
        )
    if combos == 0:
        raise RefusalError("empty grid")

    check_coupling_band = (not lagrangian_mode and feasibility_band is not None
                           and problem.coupling.constraint is not None)
    best_val, best_blocks = np.inf, None
    for combo in itertools.product(*grids):
        blocks = [np.array(c) for c in combo]
        if check_coupling_band:
            g_val = np.asarray(problem.coupling.constraint(blocks))
            if g_val.size and np.max(np.abs(g_val)) > feasibility_band:
                continue
        if lagrangian_mode:
            val = _aug_lagrangian(problem, blocks, mu, rho)
        else:
            val = _objective(problem, blocks)
        if val < best_val:
            best_val, best_blocks = val, blocks
    if best_blocks is None:
        raise RefusalError(
            "no grid point satisfies the coupling feasibility band"
        )
    return BlockVector(best_blocks), float(best_val)
