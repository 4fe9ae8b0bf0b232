"""Exact finite-event-tree markets: deflator polytopes, hedging duality.

Everything here is small and linear on purpose: node-wise martingale
equations make a polytope whose dimension decides completeness, replication
is backward induction, and the superhedging price of a withdrawal stream is
computed twice — a primal self-financing-domination LP and a dual linear
objective over the polytope closure — so strong duality is an executable
cross-check rather than a theorem taken on faith.  Positivity of deflators
is policed via an interior (max-min) LP; the dual deliberately relaxes to
the closure, where a linear sup is always attained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import (
    IncompleteMarketError,
    NoDeflatorError,
    NotSupermartingaleError,
)
from .simplex import LpSolution, solve_lp

__all__ = [
    "TreeMarket",
    "DeflatorPolytope",
    "SuperhedgeResult",
    "TreeDecomposition",
    "binomial_tree",
    "trinomial_tree",
    "terminal_stream",
    "deflator_polytope",
    "replicate_backward",
    "superhedge_duality",
    "hedge_value_recursion",
    "optional_decomposition_check",
]


@dataclass(frozen=True)
class TreeMarket:
    """Finite event tree with conditional branch probabilities and prices.

    Nodes are topologically ordered (parent index < child index, root at 0
    with parent -1 and probability 1).  ``prob`` holds the conditional
    probability of reaching a node from its parent; siblings sum to one.
    """

    parent: np.ndarray  # (V,) int, -1 at the root
    prob: np.ndarray  # (V,) conditional branch probabilities
    prices: np.ndarray  # (V, n)
    labels: tuple[str, ...]

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=int)
        prob = np.asarray(self.prob, dtype=float)
        prices = np.atleast_2d(np.asarray(self.prices, dtype=float))
        V = parent.size
        if prices.shape[0] != V or prob.shape != (V,):
            raise ValueError("parent, prob, and prices must agree on node count")
        if len(self.labels) != prices.shape[1]:
            raise ValueError("labels must match the asset dimension")
        if V == 0 or parent[0] != -1 or prob[0] != 1.0:
            raise ValueError("node 0 must be the root with parent -1, prob 1")
        if np.any(parent[1:] < 0) or np.any(parent[1:] >= np.arange(1, V)):
            raise ValueError("nodes must be topologically ordered below their parent")
        if np.any(prob <= 0.0):
            raise ValueError("branch probabilities must be strictly positive")
        if not np.all(np.isfinite(prices)):
            raise ValueError("prices must be finite")
        for v, kids in enumerate(_children(parent)):
            if kids and abs(prob[kids].sum() - 1.0) > 1e-12:
                raise ValueError(f"branch probabilities at node {v} do not sum to 1")
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    @property
    def n_assets(self) -> int:
        return self.prices.shape[1]

    def children(self) -> list[list[int]]:
        return _children(self.parent)

    def leaves(self) -> np.ndarray:
        kids = self.children()
        return np.array([v for v in range(self.n_nodes) if not kids[v]], dtype=int)

    def depth(self) -> np.ndarray:
        d = np.zeros(self.n_nodes, dtype=int)
        for v in range(1, self.n_nodes):
            d[v] = d[self.parent[v]] + 1
        return d

    def path_prob(self) -> np.ndarray:
        p = np.ones(self.n_nodes)
        for v in range(1, self.n_nodes):
            p[v] = p[self.parent[v]] * self.prob[v]
        return p

    def price_increment(self, v: int) -> np.ndarray:
        """P_v - P_parent(v) for a non-root node."""
        return self.prices[v] - self.prices[self.parent[v]]


def _children(parent: np.ndarray) -> list[list[int]]:
    kids: list[list[int]] = [[] for _ in range(len(parent))]
    for v in range(1, len(parent)):
        kids[parent[v]].append(v)
    return kids


def binomial_tree(
    periods: int, u: float, d: float, p: float = 0.5, *, initial: float = 1.0, label: str = "p"
) -> TreeMarket:
    """Non-recombining binary tree with multiplicative factors u, d."""
    parent = [-1]
    prob = [1.0]
    price = [initial]
    frontier = [0]
    for _ in range(periods):
        nxt = []
        for v in frontier:
            for factor, branch_p in ((u, p), (d, 1.0 - p)):
                parent.append(v)
                prob.append(branch_p)
                price.append(price[v] * factor)
                nxt.append(len(parent) - 1)
        frontier = nxt
    return TreeMarket(
        np.array(parent), np.array(prob), np.array(price)[:, None], (label,)
    )


def trinomial_tree(
    factors: Sequence[float] = (0.5, 1.0, 2.0),
    probs: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
    *,
    periods: int = 1,
    initial: float = 1.0,
    label: str = "p",
) -> TreeMarket:
    parent = [-1]
    prob = [1.0]
    price = [initial]
    frontier = [0]
    for _ in range(periods):
        nxt = []
        for v in frontier:
            for factor, branch_p in zip(factors, probs):
                parent.append(v)
                prob.append(float(branch_p))
                price.append(price[v] * factor)
                nxt.append(len(parent) - 1)
        frontier = nxt
    return TreeMarket(
        np.array(parent), np.array(prob), np.array(price)[:, None], (label,)
    )


def terminal_stream(tree: TreeMarket, leaf_values: Sequence[float]) -> np.ndarray:
    """Per-node withdrawal stream paying ``leaf_values`` at the leaves only."""
    leaves = tree.leaves()
    values = np.asarray(leaf_values, dtype=float)
    if values.shape != leaves.shape:
        raise ValueError(f"expected {leaves.size} leaf values")
    stream = np.zeros(tree.n_nodes)
    stream[leaves] = values
    return stream


# ---------------------------------------------------------------------------
# deflator polytope
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeflatorPolytope:
    """Solution set of the node-wise deflator equations, with an interior point.

    Unknowns are y_v for v >= 1 (the root is normalized to 1).  ``dimension``
    is the affine dimension of the solution set;  0 means the deflator is
    unique, which is the completeness verdict.  ``vertices`` (full V-vectors)
    are enumerated only when the basis count is small.
    """

    tree: TreeMarket
    A_eq: np.ndarray
    b_eq: np.ndarray
    dimension: int
    interior: np.ndarray  # (V,) strictly positive deflator values
    radius: float  # optimal min-coordinate over the polytope
    vertices: np.ndarray | None  # (n_vertices, V) or None

    @property
    def is_complete(self) -> bool:
        return self.dimension == 0


def _deflator_equations(tree: TreeMarket) -> tuple[np.ndarray, np.ndarray]:
    V, n = tree.n_nodes, tree.n_assets
    rows, rhs = [], []
    for v, kids in enumerate(tree.children()):
        if not kids:
            continue
        for i in range(-1, n):  # -1: plain martingale row, i>=0: asset i row
            row = np.zeros(V - 1)
            target = 1.0 if i < 0 else tree.prices[v, i]
            for w in kids:
                row[w - 1] = tree.prob[w] * (1.0 if i < 0 else tree.prices[w, i])
            if v == 0:
                rhs.append(target)
            else:
                row[v - 1] = -target
                rhs.append(0.0)
            rows.append(row)
    return np.array(rows), np.array(rhs)


def deflator_polytope(
    tree: TreeMarket, *, vertex_cap: int = 5000, positivity_tol: float = 1e-10
) -> DeflatorPolytope:
    """Solve the martingale equality system and certify a strictly positive point.

    Raises NoDeflatorError when the closure is empty or touches zero
    everywhere (no strictly positive deflator — the market is not viable).
    """
    A, b = _deflator_equations(tree)
    V = tree.n_nodes
    m = V - 1
    # interior LP: maximize t subject to the equalities and y_v >= t
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    A_ub = np.hstack([-np.eye(m), np.ones((m, 1))])
    free = np.zeros(m + 1, dtype=bool)
    free[-1] = True
    sol = solve_lp(
        c, A_eq=A_eq, b_eq=b, A_ub=A_ub, b_ub=np.zeros(m), free=free, maximize=True
    )
    if sol.status == "infeasible":
        raise NoDeflatorError(
            "deflator equations have no nonnegative solution: market not viable"
        )
    if not sol.optimal or sol.value <= positivity_tol:
        raise NoDeflatorError(
            "no strictly positive deflator: solution set touches the boundary",
            radius=None if not sol.optimal else sol.value,
        )
    radius = float(sol.value)
    interior = np.concatenate([[1.0], sol.x[:m]])
    rank = int(np.linalg.matrix_rank(A)) if A.size else 0
    dimension = m - rank
    vertices = None
    if dimension == 0:
        vertices = interior[None, :].copy()
    elif math.comb(m, rank) <= vertex_cap:
        vertices = _enumerate_vertices(A, b, rank)
    return DeflatorPolytope(tree, A, b, dimension, interior, radius, vertices)


def _enumerate_vertices(A: np.ndarray, b: np.ndarray, rank: int) -> np.ndarray:
    m = A.shape[1]
    found: list[np.ndarray] = []
    for support in combinations(range(m), rank):
        cols = A[:, support]
        if np.linalg.matrix_rank(cols) < rank:
            continue
        coeffs, *_ = np.linalg.lstsq(cols, b, rcond=None)
        y = np.zeros(m)
        y[list(support)] = coeffs
        if np.any(y < -1e-10):
            continue
        if not np.allclose(A @ y, b, atol=1e-12):
            continue
        y = np.maximum(y, 0.0)
        if not any(np.allclose(y, v, atol=1e-9) for v in found):
            found.append(y)
    return np.array([np.concatenate([[1.0], y]) for y in found])


# ---------------------------------------------------------------------------
# replication (complete markets)
# ---------------------------------------------------------------------------


def replicate_backward(
    tree: TreeMarket, claim: Sequence[float], *, tol: float = 1e-9
) -> tuple[float, dict[int, np.ndarray]]:
    """Backward-induction exact replication of a terminal claim.

    ``claim`` is indexed by the tree's leaves (in leaf order).  Returns the
    initial cost and the per-node hedge vectors; raises IncompleteMarketError
    at the first node where the linear replication system is unsolvable.
    """
    leaves = tree.leaves()
    values = np.full(tree.n_nodes, np.nan)
    values[leaves] = np.asarray(claim, dtype=float)
    strategy: dict[int, np.ndarray] = {}
    kids = tree.children()
    for v in reversed(range(tree.n_nodes)):
        if not kids[v]:
            continue
        # V_v + h.(P_w - P_v) = V_w for every child w
        dP = np.array([tree.price_increment(w) for w in kids[v]])
        target = values[kids[v]]
        system = np.hstack([np.ones((len(kids[v]), 1)), dP])
        coef, *_ = np.linalg.lstsq(system, target, rcond=None)
        residual = system @ coef - target
        scale = 1.0 + float(np.max(np.abs(target)))
        if np.max(np.abs(residual)) > tol * scale:
            raise IncompleteMarketError(
                f"claim is not replicable at node {v}",
                node=v,
                residual=float(np.max(np.abs(residual))),
            )
        values[v] = coef[0]
        strategy[v] = coef[1:]
    return float(values[0]), strategy


# ---------------------------------------------------------------------------
# superhedging duality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuperhedgeResult:
    primal: float
    dual: float
    strategy: dict[int, np.ndarray]
    deflator: np.ndarray  # dual-optimal closure point, full (V,)

    @property
    def gap(self) -> float:
        return self.primal - self.dual


def _path_rows(tree: TreeMarket, stream: np.ndarray):
    """Cumulative withdrawal and ancestor edge lists per node."""
    V = tree.n_nodes
    cum = np.zeros(V)
    edges: list[list[int]] = [[] for _ in range(V)]
    cum[0] = stream[0]
    for v in range(1, V):
        par = tree.parent[v]
        cum[v] = cum[par] + stream[v]
        edges[v] = edges[par] + [v]
    return cum, edges


def superhedge_duality(tree: TreeMarket, stream: Sequence[float]) -> SuperhedgeResult:
    """Minimal superhedging capital of a withdrawal stream, both routes.

    Primal: min x over self-financing strategies keeping wealth nonnegative
    after every withdrawal.  Dual: max E[sum Y dK] over the deflator-polytope
    closure.  The two are solved independently; the gap is the caller's
    strong-duality check.
    """
    stream = np.asarray(stream, dtype=float)
    V, n = tree.n_nodes, tree.n_assets
    if stream.shape != (V,):
        raise ValueError("stream must assign a withdrawal to every node")
    nonleaf = [v for v, kid in enumerate(tree.children()) if kid]
    col_of = {v: 1 + j * n for j, v in enumerate(nonleaf)}
    n_var = 1 + n * len(nonleaf)
    cum, edges = _path_rows(tree, stream)
    A_ub = np.zeros((V, n_var))
    b_ub = np.zeros(V)
    for v in range(V):
        A_ub[v, 0] = -1.0
        for w in edges[v]:
            c0 = col_of[tree.parent[w]]
            A_ub[v, c0 : c0 + n] -= tree.price_increment(w)
        b_ub[v] = -cum[v]
    c = np.zeros(n_var)
    c[0] = 1.0
    primal_sol = solve_lp(
        c, A_ub=A_ub, b_ub=b_ub, free=np.ones(n_var, dtype=bool)
    )
    if not primal_sol.optimal:
        raise NoDeflatorError(
            f"superhedge primal is {primal_sol.status}: market not viable"
        )
    strategy = {v: primal_sol.x[col_of[v] : col_of[v] + n] for v in nonleaf}

    A, b = _deflator_equations(tree)
    weights = tree.path_prob()[1:] * stream[1:]
    dual_sol = solve_lp(weights, A_eq=A, b_eq=b, maximize=True)
    if not dual_sol.optimal:
        raise NoDeflatorError(
            f"superhedge dual is {dual_sol.status}: deflator closure empty"
        )
    dual = float(dual_sol.value) + float(stream[0])
    deflator = np.concatenate([[1.0], dual_sol.x])
    return SuperhedgeResult(float(primal_sol.value), dual, strategy, deflator)


def _local_measure_lp(tree: TreeMarket, v: int, objective: np.ndarray) -> LpSolution:
    """max sum_w q_w objective_w over local martingale measures at node v."""
    kids = tree.children()[v]
    dP = np.array([tree.price_increment(w) for w in kids])
    A_eq = np.vstack([np.ones(len(kids)), dP.T])
    b_eq = np.concatenate([[1.0], np.zeros(tree.n_assets)])
    return solve_lp(objective, A_eq=A_eq, b_eq=b_eq, maximize=True)


def hedge_value_recursion(tree: TreeMarket, stream: Sequence[float]) -> np.ndarray:
    """Backward dynamic program for the remaining-stream hedge values.

    U_v = max over local martingale measures of E_q[dK_child + U_child],
    with U = 0 at the leaves; ``U_root + dK_root`` must equal the primal
    superhedging cost (strong duality, node by node).
    """
    stream = np.asarray(stream, dtype=float)
    U = np.zeros(tree.n_nodes)
    kids = tree.children()
    for v in reversed(range(tree.n_nodes)):
        if not kids[v]:
            continue
        objective = np.array([stream[w] + U[w] for w in kids[v]])
        sol = _local_measure_lp(tree, v, objective)
        if not sol.optimal:
            raise NoDeflatorError(
                f"no local martingale measure at node {v}", node=v
            )
        U[v] = float(sol.value)
    return U


# ---------------------------------------------------------------------------
# optional decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeDecomposition:
    strategy: dict[int, np.ndarray]
    gains: np.ndarray  # (V,) cumulative trading gains
    withdrawal: np.ndarray  # (V,) cumulative nondecreasing K
    residual: float  # worst negative K increment before clipping


def optional_decomposition_check(
    tree: TreeMarket, X: Sequence[float], *, residual_tol: float = 1e-10
) -> TreeDecomposition:
    """Split an adapted process into trading gains minus a withdrawal stream.

    First verifies the deflator-supermartingale hypothesis via per-node local
    LPs (equivalent to checking every polytope vertex); then recovers the
    hedge by interior-measure weighted projection of dX onto the price
    increments, falling back to a feasibility LP at nodes where the
    projection leaves a negative withdrawal increment.
    """
    X = np.asarray(X, dtype=float)
    V = tree.n_nodes
    if X.shape != (V,):
        raise ValueError("X must assign a value to every node")
    kids = tree.children()
    for v in range(V):
        if not kids[v]:
            continue
        dX = X[kids[v]] - X[v]
        sol = _local_measure_lp(tree, v, dX)
        if not sol.optimal:
            raise NoDeflatorError(f"no local martingale measure at node {v}", node=v)
        if sol.value > 1e-9:
            raise NotSupermartingaleError(
                f"deflated process increases at node {v}: "
                f"E_q[dX] = {sol.value:.3g} > 0 for a local measure",
                node=v,
                excess=float(sol.value),
                measure=sol.x.tolist(),
            )
    poly = deflator_polytope(tree)
    y = poly.interior
    strategy: dict[int, np.ndarray] = {}
    dK = np.zeros(V)
    for v in range(V):
        if not kids[v]:
            continue
        dP = np.array([tree.price_increment(w) for w in kids[v]])
        dX = X[kids[v]] - X[v]
        q = tree.prob[kids[v]] * y[kids[v]] / y[v]
        W = np.sqrt(q)
        h, *_ = np.linalg.lstsq(W[:, None] * dP, W * dX, rcond=None)
        slack = dP @ h - dX
        if np.min(slack) < -residual_tol:
            fallback = solve_lp(
                np.zeros(tree.n_assets),
                A_ub=-dP,
                b_ub=-dX,
                free=np.ones(tree.n_assets, dtype=bool),
            )
            if fallback.optimal:
                h = fallback.x
                slack = dP @ h - dX
        strategy[v] = h
        dK[kids[v]] = slack
    residual = max(0.0, -float(np.min(dK)))
    gains = np.zeros(V)
    withdrawal = np.zeros(V)
    for v in range(1, V):
        par = tree.parent[v]
        gains[v] = gains[par] + float(strategy[par] @ tree.price_increment(v))
        withdrawal[v] = withdrawal[par] + max(dK[v], 0.0)
    return TreeDecomposition(strategy, gains, withdrawal, residual)
