"""Block-structured nonlinear programs with partially penalised equalities.

The decision variable is split into per-agent blocks ``z_1 .. z_N``.  Each
agent carries a smooth cost, an equality-constraint map and a bounded
polytopic feasible set; an optional coupling adds a smooth joint cost and a
joint equality map over all blocks.  The stacked equality map is

    H(z) = (F_1(z_1), ..., F_N(z_N), G(z_1, ..., z_N))

and the augmented Lagrangian with penalty ``rho`` and multiplier estimate
``mu`` is

    L_rho(z, mu) = sum_i J_i(z_i) + Q(z) + mu @ H(z) + (rho / 2) ||H(z)||^2.

Only the equality constraints are penalised; the polytopes stay as hard
constraints on every subproblem.  Agent indices are 0-based throughout.

Evaluators are plain callables returning values and first derivatives; they
must be pure functions of their inputs.  Problem objects are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EvaluationError, PreconditionError, StructureError

__all__ = [
    "AgentSpec",
    "BlockVector",
    "CouplingSpec",
    "MultiplierEstimate",
    "NlpProblem",
    "Polytope",
    "eval_aug_lagrangian",
    "eval_block_gradient",
    "eval_constraints",
]

#: Default slack for polytope membership tests.
FEASIBILITY_SLACK = 1e-12


def _as_float_vector(x, name="vector"):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise StructureError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Polytope:
    """Bounded polyhedron ``{x : A x <= b}`` with an optional box shortcut.

    Boxes are stored with explicit ``lower``/``upper`` vectors and expand to
    the rows ``[I; -I] x <= [upper; -lower]``; both representations agree on
    membership.  Row ``j`` of a box is the upper bound of coordinate ``j``
    and row ``dim + j`` its lower bound.
    """

    a_mat: np.ndarray
    b_vec: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_mat, dtype=float))
        b = _as_float_vector(self.b_vec, "b")
        if a.shape[0] != b.shape[0]:
            raise StructureError(
                f"polytope has {a.shape[0]} rows but {b.shape[0]} offsets"
            )
        object.__setattr__(self, "a_mat", a)
        object.__setattr__(self, "b_vec", b)

    @classmethod
    def box(cls, lower, upper) -> "Polytope":
        lo = _as_float_vector(lower, "lower")
        hi = _as_float_vector(upper, "upper")
        if lo.shape != hi.shape:
            raise StructureError("box bounds must have equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise StructureError("box bounds must be finite (bounded sets only)")
        if np.any(lo > hi):
            raise StructureError("box has lower > upper")
        n = lo.shape[0]
        eye = np.eye(n)
        return cls(
            a_mat=np.vstack([eye, -eye]),
            b_vec=np.concatenate([hi, -lo]),
            lower=lo,
            upper=hi,
        )

    @property
    def dim(self) -> int:
        return self.a_mat.shape[1]

    @property
    def n_rows(self) -> int:
        return self.a_mat.shape[0]

    @property
    def is_box(self) -> bool:
        return self.lower is not None

    def violation(self, x) -> float:
        """Largest constraint violation ``max(A x - b)`` (<= 0 inside)."""
        x = _as_float_vector(x, "point")
        if x.shape[0] != self.dim:
            raise StructureError(
                f"point has dimension {x.shape[0]}, polytope expects {self.dim}"
            )
        if self.is_box:
            return float(
                max(np.max(x - self.upper, initial=-np.inf),
                    np.max(self.lower - x, initial=-np.inf))
            )
        return float(np.max(self.a_mat @ x - self.b_vec, initial=-np.inf))

    def contains(self, x, slack: float = FEASIBILITY_SLACK) -> bool:
        return self.violation(x) <= slack

    def project(self, x) -> np.ndarray:
        """Euclidean projection; exact for boxes only."""
        if not self.is_box:
            raise StructureError("exact projection is only available for boxes")
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def chebyshev_center(self) -> np.ndarray:
        """Center of the largest inscribed ball (box midpoint for boxes)."""
        if self.is_box:
            return 0.5 * (self.lower + self.upper)
        from scipy.optimize import linprog

        norms = np.linalg.norm(self.a_mat, axis=1)
        a_ub = np.hstack([self.a_mat, norms[:, None]])
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=a_ub, b_ub=self.b_vec,
                      bounds=[(None, None)] * self.dim + [(0, None)])
        if not res.success:
            raise StructureError(f"could not locate an interior point: {res.message}")
        return np.asarray(res.x[:-1], dtype=float)

    def is_bounded(self) -> bool:
        """Check boundedness (finite extent along every coordinate)."""
        if self.is_box:
            return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))
        from scipy.optimize import linprog

        for j in range(self.dim):
            for sign in (1.0, -1.0):
                c = np.zeros(self.dim)
                c[j] = sign
                res = linprog(c, A_ub=self.a_mat, b_ub=self.b_vec,
                              bounds=[(None, None)] * self.dim)

                if res.status == 3:  # unbounded
                    return False
        return True


class BlockVector:
    """Decision variable partitioned into agent blocks.

    Blocks are stored as read-only float64 arrays; use :meth:`with_block`
    or :meth:`to_list` + construction to derive modified vectors.
    """

    __slots__ = ("blocks",)

    def __init__(self, blocks: Sequence[np.ndarray]):
        stored = []
        for blk in blocks:
            arr = np.array(blk, dtype=float)
            if arr.ndim != 1:
                raise StructureError(f"blocks must be vectors, got shape {arr.shape}")
            arr.setflags(write=False)
            stored.append(arr)
        self.blocks = tuple(stored)

    @classmethod
    def from_flat(cls, vec, dims: Sequence[int]) -> "BlockVector":
        vec = _as_float_vector(vec, "flattened vector")
        if vec.shape[0] != sum(dims):
            raise StructureError(
                f"flat vector of length {vec.shape[0]} does not match dims {list(dims)}"
            )
        out, ofs = [], 0
        for d in dims:
            out.append(vec[ofs:ofs + d])
            ofs += d
        return cls(out)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def block_dims(self) -> tuple:
        return tuple(b.shape[0] for b in self.blocks)

    @property
    def total_dim(self) -> int:
        return sum(b.shape[0] for b in self.blocks)

    def block(self, i: int) -> np.ndarray:
        return self.blocks[i]

    def flatten(self) -> np.ndarray:
        return np.concatenate(self.blocks) if self.blocks else np.zeros(0)

    def with_block(self, i: int, values) -> "BlockVector":
        new = list(self.blocks)
        new[i] = values
        return BlockVector(new)

    def to_list(self) -> list:
        return [np.array(b) for b in self.blocks]

    def max_block_diff(self, other: "BlockVector") -> float:
        """Sup-norm distance, the inner loop's termination metric."""
        if self.block_dims != other.block_dims:
            raise StructureError("block layouts differ")
        diff = 0.0
        for a, b in zip(self.blocks, other.blocks):
            if a.size:
                diff = max(diff, float(np.max(np.abs(a - b))))
        return diff

    def __repr__(self):
        return f"BlockVector(dims={self.block_dims})"


@dataclass(frozen=True)
class AgentSpec:
    """One agent: smooth cost, equality map and bounded polytopic set.

    ``cost`` maps a block to a scalar and ``cost_grad`` to its gradient.
    ``constraint`` maps a block to a vector of length ``constraint_dim``
    with Jacobian ``constraint_jac`` (rows = constraints); both are ``None``
    for unconstrained agents.  ``hessian_bound_hint`` optionally supplies a
    curvature bound used when the inner loop is configured with the hint
    source.
    """

    cost: Callable[[np.ndarray], float]
    cost_grad: Callable[[np.ndarray], np.ndarray]
    feasible_set: Polytope
    constraint: Optional[Callable[[np.ndarray], np.ndarray]] = None
    constraint_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    constraint_dim: int = 0
    hessian_bound_hint: Optional[float] = None

    def __post_init__(self):
        if self.constraint_dim < 0:
            raise StructureError("constraint_dim must be nonnegative")
        if (self.constraint is None) != (self.constraint_jac is None):
            raise StructureError("constraint and constraint_jac must come together")
        if self.constraint is None and self.constraint_dim != 0:
            raise StructureError("constraint_dim > 0 requires a constraint evaluator")

    @property
    def dim(self) -> int:
        return self.feasible_set.dim


@dataclass(frozen=True)
class CouplingSpec:
    """Joint cost and joint equality map over all blocks.

    ``edges`` lists unordered agent pairs (i, j) whose blocks interact
    through the coupling; the block gradients of non-adjacent agents must
    not depend on each other's values.  Evaluators receive the full list of
    blocks; block derivatives additionally receive the agent index.
    """

    cost: Optional[Callable] = None
    cost_block_grad: Optional[Callable] = None
    constraint: Optional[Callable] = None
    constraint_block_jac: Optional[Callable] = None
    constraint_dim: int = 0
    edges: frozenset = frozenset()

    def __post_init__(self):
        if (self.cost is None) != (self.cost_block_grad is None):
            raise StructureError("coupling cost and its gradient must come together")
        if (self.constraint is None) != (self.constraint_block_jac is None):
            raise StructureError("coupling constraint and Jacobian must come together")
        if self.constraint is None and self.constraint_dim != 0:
            raise StructureError("constraint_dim > 0 requires a constraint evaluator")
        norm = frozenset(tuple(sorted(map(int, e))) for e in self.edges)
        for i, j in norm:
            if i == j:
                raise StructureError(f"self-edge ({i}, {j}) is not allowed")
        object.__setattr__(self, "edges", norm)

    @classmethod
    def none(cls) -> "CouplingSpec":
        return cls()


@dataclass(frozen=True)
class NlpProblem:
    """Agents plus coupling; owns the stacked constraint layout.

    The stacked equality map orders blocks as (F_0, ..., F_{N-1}, G); the
    multiplier layout follows the same order.
    """

    agents: tuple
    coupling: CouplingSpec = field(default_factory=CouplingSpec.none)

    def __post_init__(self):
        agents = tuple(self.agents)
        if not agents:
            raise StructureError("a problem needs at least one agent")
        object.__setattr__(self, "agents", agents)
        n = len(agents)
        for i, j in self.coupling.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise StructureError(f"edge ({i}, {j}) references a missing agent")
        for idx, agent in enumerate(agents):
            if not agent.feasible_set.is_bounded():
                raise StructureError(f"agent {idx} has an unbounded feasible set")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def block_dims(self) -> tuple:
        return tuple(a.dim for a in self.agents)

    @property
    def total_dim(self) -> int:
        return sum(self.block_dims)

    @property
    def constraint_dims(self) -> tuple:
        return tuple(a.constraint_dim for a in self.agents)

    @property
    def m(self) -> int:
        return sum(self.constraint_dims)

    @property
    def p(self) -> int:
        return self.coupling.constraint_dim

    @property
    def r(self) -> int:
        return self.m + self.p

    def check_block_structure(self, z: BlockVector):
        if z.block_dims != self.block_dims:
            raise StructureError(
                f"block dims {z.block_dims} do not match problem dims {self.block_dims}"
            )

    def feasible(self, z: BlockVector, slack: float = FEASIBILITY_SLACK) -> bool:
        self.check_block_structure(z)
        return all(
            a.feasible_set.contains(b, slack) for a, b in zip(self.agents, z.blocks)
        )


class MultiplierEstimate:
    """Multiplier estimate partitioned like the stacked constraints."""

    __slots__ = ("parts", "coupling_part")

    def __init__(self, parts: Sequence[np.ndarray], coupling_part=()):
        stored = []
        for part in parts:
            arr = np.array(part, dtype=float).reshape(-1)
            arr.setflags(write=False)
            stored.append(arr)
        self.parts = tuple(stored)
        cp = np.array(coupling_part, dtype=float).reshape(-1)
        cp.setflags(write=False)
        self.coupling_part = cp

    @classmethod
    def zeros(cls, problem: NlpProblem) -> "MultiplierEstimate":
        return cls([np.zeros(d) for d in problem.constraint_dims], np.zeros(problem.p))

    @classmethod
    def from_flat(cls, problem: NlpProblem, vec) -> "MultiplierEstimate":
        vec = _as_float_vector(vec, "multiplier vector")
        if vec.shape[0] != problem.r:
            raise StructureError(
                f"multiplier vector has length {vec.shape[0]}, expected r={problem.r}"
            )
        parts, ofs = [], 0
        for d in problem.constraint_dims:
            parts.append(vec[ofs:ofs + d])
            ofs += d
        return cls(parts, vec[ofs:])

    @property
    def total_dim(self) -> int:
        return sum(p.shape[0] for p in self.parts) + self.coupling_part.shape[0]

    def flatten(self) -> np.ndarray:
        pieces = list(self.parts) + [self.coupling_part]
        return np.concatenate(pieces) if pieces else np.zeros(0)

    def part(self, i: int) -> np.ndarray:
        return self.parts[i]

    def __repr__(self):
        dims = tuple(p.shape[0] for p in self.parts)
        return f"MultiplierEstimate(agent_dims={dims}, p={self.coupling_part.shape[0]})"


# ---------------------------------------------------------------------------
# Evaluation helpers working on plain block lists (hot path for the sweeps).
# ---------------------------------------------------------------------------

def _check_finite(arr, what, agent):
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"{what} returned a non-finite value", agent=agent)


def _agent_constraint(problem, blocks, i):
    agent = problem.agents[i]
    if agent.constraint is None:
        return np.zeros(0)
    val = np.asarray(agent.constraint(blocks[i]), dtype=float).reshape(-1)
    if val.shape[0] != agent.constraint_dim:
        raise StructureError(
            f"agent {i} constraint returned length {val.shape[0]}, "
            f"declared {agent.constraint_dim}"
        )
    _check_finite(val, f"agent {i} constraint", i)
    return val


def _coupling_constraint(problem, blocks):
    coup = problem.coupling
    if coup.constraint is None:
        return np.zeros(0)
    val = np.asarray(coup.constraint(blocks), dtype=float).reshape(-1)
    if val.shape[0] != coup.constraint_dim:
        raise StructureError(
            f"coupling constraint returned length {val.shape[0]}, "
            f"declared {coup.constraint_dim}"
        )
    _check_finite(val, "coupling constraint", None)
    return val


def _constraints(problem, blocks):
    pieces = [_agent_constraint(problem, blocks, i) for i in range(problem.n_agents)]
    pieces.append(_coupling_constraint(problem, blocks))
    return np.concatenate(pieces)


def _objective(problem, blocks):
    total = 0.0
    for i, agent in enumerate(problem.agents):
        val = float(agent.cost(blocks[i]))
        if not np.isfinite(val):
            raise EvaluationError(f"agent {i} cost returned a non-finite value", agent=i)
        total += val
    if problem.coupling.cost is not None:
        q = float(problem.coupling.cost(blocks))
        if not np.isfinite(q):
            raise EvaluationError("coupling cost returned a non-finite value")
        total += q
    return total


def _agent_local_value(problem, x_i, mu_i, rho, i):
    """J_i + mu_i @ F_i + (rho/2) ||F_i||^2 at one block value."""
    agent = problem.agents[i]
    val = float(agent.cost(x_i))
    if not np.isfinite(val):
        raise EvaluationError(f"agent {i} cost returned a non-finite value", agent=i)
    if agent.constraint is not None:
        f_val = np.asarray(agent.constraint(x_i), dtype=float).reshape(-1)
        _check_finite(f_val, f"agent {i} constraint", i)
        val += float(mu_i @ f_val) + 0.5 * rho * float(f_val @ f_val)
    return val


def _coupling_value(problem, blocks, mu_g, rho):
    """Q + mu_G @ G + (rho/2) ||G||^2 at the given partial point."""
    coup = problem.coupling
    val = 0.0
    if coup.cost is not None:
        q = float(coup.cost(blocks))
        if not np.isfinite(q):
            raise EvaluationError("coupling cost returned a non-finite value")
        val += q
    if coup.constraint is not None:
        g_val = _coupling_constraint(problem, blocks)
        val += float(mu_g @ g_val) + 0.5 * rho * float(g_val @ g_val)
    return val


def _aug_lagrangian(problem, blocks, mu, rho):
    h_val = _constraints(problem, blocks)
    return _objective(problem, blocks) + float(mu.flatten() @ h_val) \
        + 0.5 * rho * float(h_val @ h_val)


def _block_gradient(problem, blocks, mu, rho, i):
    agent = problem.agents[i]
    x_i = blocks[i]
    grad = np.asarray(agent.cost_grad(x_i), dtype=float).reshape(-1)
    if grad.shape[0] != agent.dim:
        raise StructureError(
            f"agent {i} cost gradient has length {grad.shape[0]}, expected {agent.dim}"
        )
    _check_finite(grad, f"agent {i} cost gradient", i)
    grad = grad.copy()
    if agent.constraint is not None:
        f_val = _agent_constraint(problem, blocks, i)
        f_jac = np.atleast_2d(np.asarray(agent.constraint_jac(x_i), dtype=float))
        if f_jac.shape != (agent.constraint_dim, agent.dim):
            raise StructureError(
                f"agent {i} constraint Jacobian has shape {f_jac.shape}, "
                f"expected {(agent.constraint_dim, agent.dim)}"
            )
        _check_finite(f_jac, f"agent {i} constraint Jacobian", i)
        grad += f_jac.T @ (mu.part(i) + rho * f_val)
    coup = problem.coupling
    if coup.cost is not None:
        q_grad = np.asarray(coup.cost_block_grad(blocks, i), dtype=float).reshape(-1)
        if q_grad.shape[0] != agent.dim:
            raise StructureError(
                f"coupling cost gradient for agent {i} has length {q_grad.shape[0]}"
            )
        _check_finite(q_grad, "coupling cost gradient", i)
        grad += q_grad
    if coup.constraint is not None:
        g_val = _coupling_constraint(problem, blocks)
        g_jac = np.atleast_2d(np.asarray(coup.constraint_block_jac(blocks, i), dtype=float))
        if g_jac.shape != (coup.constraint_dim, agent.dim):
            raise StructureError(
                f"coupling Jacobian for agent {i} has shape {g_jac.shape}, "
                f"expected {(coup.constraint_dim, agent.dim)}"
            )
        _check_finite(g_jac, "coupling constraint Jacobian", i)
        grad += g_jac.T @ (mu.coupling_part + rho * g_val)
    return grad


# ---------------------------------------------------------------------------
# Public operations.
# ---------------------------------------------------------------------------

def eval_constraints(problem: NlpProblem, z: BlockVector) -> np.ndarray:
    """Stacked equality constraints (F_0, ..., F_{N-1}, G) at ``z``.

    Parameters
    ----------
    problem : NlpProblem
    z : BlockVector
        Point with the problem's block structure.

    Returns
    -------
    numpy.ndarray, shape (r,)
        Agent constraints in agent order followed by the coupling map.
    """
    problem.check_block_structure(z)
    return _constraints(problem, list(z.blocks))


def eval_aug_lagrangian(problem: NlpProblem, z: BlockVector,
                        mu: MultiplierEstimate, rho: float) -> float:
    """Partially augmented Lagrangian ``J + mu @ H + (rho/2) ||H||^2``.

    Only the equality constraints enter the penalty; the polytopes are not
    part of this value.  ``rho`` must be positive.
    """
    _require_positive_rho(rho)
    problem.check_block_structure(z)
    if mu.total_dim != problem.r:
        raise StructureError(
            f"multiplier has dimension {mu.total_dim}, expected r={problem.r}"
        )
    return _aug_lagrangian(problem, list(z.blocks), mu, rho)


def eval_block_gradient(problem: NlpProblem, z: BlockVector,
                        mu: MultiplierEstimate, rho: float, i: int) -> np.ndarray:
    """Gradient of the augmented Lagrangian in block ``i``, others frozen.

    Equals ``grad J_i + Jac F_i.T (mu_i + rho F_i) + grad_i Q
    + Jac_i G.T (mu_G + rho G)`` evaluated at ``z``.
    """
    _require_positive_rho(rho)
    problem.check_block_structure(z)
    if not (0 <= i < problem.n_agents):
        raise StructureError(f"agent index {i} out of range [0, {problem.n_agents})")
    if mu.total_dim != problem.r:
        raise StructureError(
            f"multiplier has dimension {mu.total_dim}, expected r={problem.r}"
        )
    return _block_gradient(problem, list(z.blocks), mu, rho, i)


def _require_positive_rho(rho):
    if not rho > 0:
        raise PreconditionError(f"penalty parameter must be positive, got {rho}")
