"""Agent-to-region assignment as a linear program over distributed columns.

The one-to-one assignment of N agents to N regions with cost matrix C is the
LP  min sum C_ik Z_ik  s.t.  sum_k Z_ik = 1, sum_i Z_ik = 1, Z >= 0, whose
vertices are exactly the permutation matrices, so the relaxation is tight.
Column (i, k) is owned by agent i; agents share a connected graph and reach a
common optimal basis by repeatedly exchanging basis columns and re-solving
their local column pools.

Determinism and network-wide agreement hinge on every solve returning *the*
unique optimal basis of a symbolically perturbed problem:

* costs are perturbed by -eps^(1+id) with a globally unique id per column,
  which orders cost ties by column id;
* the ratio test is lexicographic on the rows of [b | B^-1], the classic
  right-hand-side perturbation, which removes degenerate ties.

The doubly perturbed LP is nondegenerate, so its optimal basis is unique and
independent of the pivot path; agents holding different column subsets that
both contain that basis compute the identical result. One of the 2N printed
constraints is redundant (rank 2N-1), so the solver works on the reduced
system with the last region row dropped; bases therefore hold 2N-1 columns.
The constraint matrix is totally unimodular: every pivot entry is +-1 and the
tableau stays exactly integral, leaving floating point only in the costs.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .network import Graph, diameter, is_connected, sync_round
from .validation import as_float_array

MAX_PIVOTS = 2000
COST_TOL = 1e-9


@dataclass(frozen=True)
class AssignmentProblem:
    """Square cost matrix; entry (i, k) prices agent i serving region k."""

    n: int
    cost: np.ndarray

    def __post_init__(self):
        cost = as_float_array(self.cost, "cost")
        if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
            raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
        if cost.shape[0] != self.n:
            raise ValueError("cost shape does not match n")
        cost.setflags(write=False)
        object.__setattr__(self, "cost", cost)

    @classmethod
    def from_cost(cls, cost):
        cost = as_float_array(cost, "cost")
        if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
            raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
        return cls(n=cost.shape[0], cost=cost)


@dataclass(frozen=True)
class LPColumn:
    """One standard-form column: cost plus a two-hot 2N incidence vector."""

    owner: int
    region: int
    cost: float
    incidence: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.incidence, dtype=np.int64)
        if (inc.sum() != 2 or inc[self.owner] != 1
                or inc[len(inc) // 2 + self.region] != 1):
            raise ValueError("incidence must be 1 exactly at owner and N+region")
        inc.setflags(write=False)
        object.__setattr__(self, "incidence", inc)

    @classmethod
    def make(cls, n, owner, region, cost):
        inc = np.zeros(2 * n, dtype=np.int64)
        inc[owner] = 1
        inc[n + region] = 1
        return cls(owner=owner, region=region, cost=float(cost), incidence=inc)


@dataclass(frozen=True)
class AssignmentPlan:
    """Region assigned to each agent; always a bijection."""

    assignment: tuple

    def __post_init__(self):
        perm = tuple(int(k) for k in self.assignment)
        n = len(perm)
        if sorted(perm) != list(range(n)):
            raise ValueError(f"assignment {perm} is not a bijection over {n} regions")
        object.__setattr__(self, "assignment", perm)

    def to_dict(self):
        return {str(i): k for i, k in enumerate(self.assignment)}


@dataclass(frozen=True)
class Basis:
    """A simplex basis: sorted global column ids, their costs and levels.

    Real column (i, k) has id i*n + k; artificial row columns have ids from
    n*n upwards and appear only in intermediate distributed states. The id
    tuple doubles as the lexicographic certificate.
    """

    n: int
    ids: tuple
    costs: tuple
    values: tuple

    @property
    def key(self):
        return self.ids

    @property
    def objective(self):
        return float(sum(c * v for c, v in zip(self.costs, self.values)))

    def real_columns(self):
        """(owner, region, cost) triples of the real columns in the basis."""
        nn = self.n * self.n
        return tuple(
            (cid // self.n, cid % self.n, cost)
            for cid, cost in zip(self.ids, self.costs) if cid < nn
        )

    def has_artificial(self):
        return any(cid >= self.n * self.n for cid in self.ids)


def build_problem(costs):
    """Wrap a cost matrix and build the per-agent column pools.

    Returns (AssignmentProblem, pools) where pools[i] lists agent i's columns
    h_ik = [C_ik ; A_ik]; the pools are disjoint and jointly cover all N^2
    columns, and the common right-hand side is the all-ones 2N vector.
    """
    problem = AssignmentProblem.from_cost(costs)
    n = problem.n
    pools = [
        [LPColumn.make(n, i, k, problem.cost[i, k]) for k in range(n)]
        for i in range(n)
    ]
    return problem, pools


def hungarian_oracle(problem: AssignmentProblem):
    """Exact optimal assignment via the Hungarian method (scipy)."""
    rows, cols = linear_sum_assignment(problem.cost)
    plan = AssignmentPlan(assignment=tuple(int(c) for c in cols[np.argsort(rows)]))
    value = float(problem.cost[rows, cols].sum())
    return plan, value


def brute_force_value(problem: AssignmentProblem):
    """Minimum over all permutations; exponential, for verification only."""
    n = problem.n
    return min(
        sum(problem.cost[i, p[i]] for i in range(n))
        for p in itertools.permutations(range(n))
    )


def big_m_for(n, max_abs_cost):
    """Artificial-column cost dominating any feasible objective: 1 + 2N(1 + max|C|)."""
    return 1.0 + 2 * n * (1.0 + float(max_abs_cost))


class _ReducedLP:
    """The assignment LP on the reduced (2N-1)-row system plus artificials."""

    def __init__(self, n, real_columns, big_m):
        # real_columns: iterable of (id, cost), deduplicated, any order.
        self.n = n
        self.m = 2 * n - 1
        seen = {}
        for cid, cost in real_columns:
            seen[cid] = cost
        self.ids = sorted(seen) + [n * n + j for j in range(self.m)]
        self.cost = np.array([seen.get(cid, big_m) for cid in self.ids])
        self.pos = {cid: p for p, cid in enumerate(self.ids)}
        self.art_pos = [self.pos[n * n + j] for j in range(self.m)]
        self.a = np.zeros((self.m, len(self.ids)), dtype=np.int64)
        for p, cid in enumerate(self.ids):
            if cid < n * n:
                i, k = divmod(cid, n)
                self.a[i, p] = 1
                if k < n - 1:
                    self.a[n + k, p] = 1
            else:
                self.a[cid - n * n, p] = 1

    def column_eps_rank(self, pos):
        """Perturbation rank of a column: its global id."""
        return self.ids[pos]


def _lex_negative_eps(eps, tol=1e-7):
    for coef in eps:
        if coef < -tol:
            return True
        if coef > tol:
            return False
    return False


def _solve_reduced(lp: _ReducedLP, start_basis_ids=None):
    """Primal simplex to the unique perturbed optimum; returns (basic_pos, beta).

    The tableau is kept exactly integral (total unimodularity), so the only
    tolerance in play is on the float cost row.
    """
    m, n = lp.m, lp.n
    n_cols = len(lp.ids)
    eps_dim = n * n + m
    tol = COST_TOL * (1.0 + float(np.max(np.abs(lp.cost))))

    basic = list(lp.art_pos)
    tableau = lp.a.astype(float)
    beta = np.ones(m)
    if start_basis_ids is not None:
        pos = [lp.pos.get(cid) for cid in start_basis_ids]
        if all(p is not None for p in pos) and len(pos) == m:
            b_mat = lp.a[:, pos].astype(float)
            if abs(abs(np.linalg.det(b_mat)) - 1.0) < 1e-6:
                binv = np.rint(np.linalg.inv(b_mat))
                cand_beta = binv @ np.ones(m)
                if cand_beta.min() >= 0:
                    basic = list(pos)
                    tableau = np.rint(binv @ lp.a)
                    beta = cand_beta

    def eps_vector(col):
        vec = np.zeros(eps_dim)
        vec[lp.column_eps_rank(col)] -= 1.0
        for row, bpos in enumerate(basic):
            if tableau[row, col]:
                vec[lp.column_eps_rank(bpos)] += tableau[row, col]
        return vec

    binv_cols = lp.art_pos
    for _ in range(MAX_PIVOTS):
        reduced = lp.cost - lp.cost[basic] @ tableau
        in_basis = np.zeros(n_cols, dtype=bool)
        in_basis[basic] = True
        reduced[in_basis] = 0.0

        entering = -1
        strict = np.flatnonzero(~in_basis & (reduced < -tol))
        if strict.size:
            best = strict[np.argmin(reduced[strict])]
            # deterministic tie-break on the scalar part by smallest id
            ties = strict[np.abs(reduced[strict] - reduced[best]) <= tol]
            entering = int(ties.min())
        else:
            near = np.flatnonzero(~in_basis & (np.abs(reduced) <= tol))
            for col in near:
                if _lex_negative_eps(eps_vector(int(col))):
                    entering = int(col)
                    break
        if entering < 0:
            return basic, beta

        col = tableau[:, entering]
        eligible = np.flatnonzero(col > 0.5)
        if eligible.size == 0:
            raise AssertionError("assignment LP cannot be unbounded")
        binv = tableau[:, binv_cols]
        best_row = -1
        best_key = None
        for row in eligible:
            key = np.concatenate(([beta[row]], binv[row])) / col[row]
            if best_key is None or _lex_less(key, best_key):
                best_key = key
                best_row = int(row)

        pivot = tableau[best_row, entering]
        tableau[best_row] /= pivot
        beta[best_row] /= pivot
        for row in range(m):
            if row != best_row and tableau[row, entering]:
                factor = tableau[row, entering]
                tableau[row] -= factor * tableau[best_row]
                beta[row] -= factor * beta[best_row]
        basic[best_row] = entering
    raise AssertionError("simplex failed to terminate within the pivot budget")


def _lex_less(a, b, tol=1e-9):
    for x, y in zip(a, b):
        if x < y - tol:
            return True
        if x > y + tol:
            return False
    return False


def _basis_from_solution(lp: _ReducedLP, basic, beta):
    order = np.argsort([lp.ids[p] for p in basic])
    ids = tuple(lp.ids[basic[j]] for j in order)
    costs = tuple(float(lp.cost[basic[j]]) for j in order)
    values = tuple(float(beta[j]) for j in order)
    return Basis(n=lp.n, ids=ids, costs=costs, values=values)


def lex_simplex(problem: AssignmentProblem):
    """Solve the full assignment LP; returns (Basis, AssignmentPlan).

    The returned basis is the unique optimum of the perturbed problem, so
    repeated runs (and runs seeded with extra columns) reproduce it exactly.
    """
    n = problem.n
    big_m = big_m_for(n, np.max(np.abs(problem.cost)))
    columns = [(i * n + k, float(problem.cost[i, k])) for i in range(n) for k in range(n)]
    lp = _ReducedLP(n, columns, big_m)
    basic, beta = _solve_reduced(lp)
    basis = _basis_from_solution(lp, basic, beta)
    for cid, val in zip(basis.ids, basis.values):
        if cid >= n * n and val > 1e-9:
            raise AssertionError("artificial column basic at positive level: LP infeasible")
    if basis.has_artificial():
        raise AssertionError("artificial column survived in an optimal full basis")
    return basis, extract_assignment(basis)


def extract_assignment(basis: Basis) -> AssignmentPlan:
    """Read the permutation off the level-1 basic columns.

    The basis must be free of artificial columns and exactly integral; both
    are structural properties of an optimal assignment basis, so a violation
    signals an internal error.
    """
    if basis.has_artificial():
        raise ValueError("basis contains an artificial column")
    assignment = [-1] * basis.n
    for (owner, region, _), val in zip(basis.real_columns(), basis.values):
        if abs(val - 1.0) <= 1e-9:
            if assignment[owner] != -1:
                raise ValueError("agent assigned twice: fractional basis")
            assignment[owner] = region
        elif abs(val) > 1e-9:
            raise ValueError(f"fractional basic value {val}: not a permutation vertex")
    if any(k < 0 for k in assignment):
        raise ValueError("incomplete assignment: fractional basis")
    return AssignmentPlan(assignment=tuple(assignment))


def distributed_simplex(g: Graph, local_columns, max_rounds=None):
    """Network-wide assignment over column-partitioned data.

    `local_columns[i]` is the pool of LPColumns initially known only to node
    i; the pools must partition all N^2 columns. Per synchronous round every
    node broadcasts its current basis columns, merges what it receives with
    its permanent pool and its own basis, and re-solves. The run stops once
    every node's basis has been unchanged for graph-diameter-many consecutive
    rounds (stability counters ride along on the messages); at that point all
    nodes hold the identical optimal basis.

    Returns the list of per-node Basis objects.
    """
    if not is_connected(g):
        raise ValueError("distributed simplex requires a connected graph")
    pools = [tuple(cols) for cols in local_columns]
    if len(pools) != g.n:
        raise ValueError(f"expected one column pool per node, got {len(pools)} for {g.n}")
    flat = [col for pool in pools for col in pool]
    if not flat:
        raise ValueError("column pools are empty")
    n = len(flat[0].incidence) // 2
    all_ids = [col.owner * n + col.region for col in flat]
    if sorted(all_ids) != list(range(n * n)):
        raise ValueError("column pools must partition the full column set")
    big_m = big_m_for(n, max(abs(col.cost) for col in flat))

    own = [tuple((col.owner * n + col.region, col.cost) for col in pool) for pool in pools]
    bases = [None] * g.n
    stable = [0] * g.n
    need = max(1, diameter(g))
    if max_rounds is None:
        max_rounds = 50 + 20 * g.n * need

    for _ in range(max_rounds):
        payloads = [
            (bases[i].real_columns() if bases[i] else (), stable[i])
            for i in range(g.n)
        ]
        mailbox = sync_round(g, payloads)
        new_bases = []
        for i in range(g.n):
            merged = dict(own[i])
            if bases[i]:
                for owner, region, cost in bases[i].real_columns():
                    merged[owner * n + region] = cost
            for j in sorted(mailbox[i]):
                for owner, region, cost in mailbox[i][j][0]:
                    merged[owner * n + region] = cost
            lp = _ReducedLP(n, merged.items(), big_m)
            warm = bases[i].ids if bases[i] else None
            basic, beta = _solve_reduced(lp, start_basis_ids=warm)
            new_bases.append(_basis_from_solution(lp, basic, beta))
        for i in range(g.n):
            same = bases[i] is not None and new_bases[i].ids == bases[i].ids
            stable[i] = stable[i] + 1 if same else 0
        bases = new_bases
        if min(stable) >= need:
            break
    else:
        raise AssertionError("distributed simplex failed to stabilise")

    first = bases[0]
    for b in bases[1:]:
        if b.ids != first.ids or b.costs != first.costs:
            raise AssertionError("nodes stabilised on different bases")
    return bases
