"""Scenario trees over joint demand/price prediction errors.

A tree spans stages 0..horizon. The root (index 0) is the present with
zero prediction error; every later node carries an error vector
``eps = (demand part, price part)`` and, once a nominal forecast is
attached, the contingent demand and price values for its stage. Nodes are
numbered breadth-first by stage so per-stage node ranges are contiguous
slices of every flat array.

Trees are immutable after construction; functions that modify return new
instances.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_PROB_TOL = 1e-9


@dataclass
class ScenarioFan:
    """Equally weighted scenario bundle: values[s, j, :] is scenario s at stage j+1."""

    values: np.ndarray  # (n_scenarios, horizon, n_demand + n_price)
    n_demand: int
    n_price: int

    @property
    def n_scenarios(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, float)
        if self.values.ndim != 3:
            raise ValueError("fan values must be a 3-d array (scenario, stage, component)")
        if self.values.shape[2] != self.n_demand + self.n_price:
            raise ValueError(
                f"fan component dimension {self.values.shape[2]} != "
                f"n_demand + n_price = {self.n_demand + self.n_price}"
            )
        if self.values.shape[0] == 0:
            raise ValueError("fan must contain at least one scenario")


@dataclass
class ScenarioTree:
    """Stage-indexed scenario tree in breadth-first node order.

    ``stage``, ``anc`` and ``prob`` are flat arrays over all nodes; the
    root has ``anc = -1`` and probability 1. ``eps`` holds per-node
    prediction errors (root row zero). After :func:`attach_forecast`,
    ``demand`` and ``price`` hold the contingent per-node values.
    """

    horizon: int
    n_demand: int
    n_price: int
    stage: np.ndarray
    anc: np.ndarray
    prob: np.ndarray
    eps: np.ndarray | None = None
    demand: np.ndarray | None = None
    price: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.stage = np.asarray(self.stage, int)
        self.anc = np.asarray(self.anc, int)
        self.prob = np.asarray(self.prob, float)
        if self.eps is not None:
            self.eps = np.asarray(self.eps, float)
        if self.demand is not None:
            self.demand = np.asarray(self.demand, float)
        if self.price is not None:
            self.price = np.asarray(self.price, float)

    @property
    def n_nodes(self) -> int:
        return self.stage.shape[0]

    @property
    def n_nonroot(self) -> int:
        return self.n_nodes - 1

    @property
    def is_attached(self) -> bool:
        return self.demand is not None and self.price is not None

    @property
    def nodes_per_stage(self) -> np.ndarray:
        return np.bincount(self.stage, minlength=self.horizon + 1)

    def stage_nodes(self, j: int) -> np.ndarray:
        """Node indices at stage j (contiguous by construction)."""
        return np.nonzero(self.stage == j)[0]

    def children_of(self, node: int) -> np.ndarray:
        return np.nonzero(self.anc == node)[0]

    def leaves(self) -> np.ndarray:
        return self.stage_nodes(self.horizon)

    @classmethod
    def single_branch(
        cls,
        horizon: int,
        n_demand: int,
        n_price: int,
        eps: np.ndarray | None = None,
    ) -> "ScenarioTree":
        """Degenerate one-scenario chain; eps defaults to zero errors."""
        n = horizon + 1
        if eps is None:
            eps = np.zeros((n, n_demand + n_price))
        else:
            eps = np.asarray(eps, float)
            if eps.shape != (n, n_demand + n_price):
                raise ValueError(f"eps must have shape {(n, n_demand + n_price)}")
        return cls(
            horizon=horizon,
            n_demand=n_demand,
            n_price=n_price,
            stage=np.arange(n),
            anc=np.arange(-1, n - 1),
            prob=np.ones(n),
            eps=eps,
        )


def validate_tree(tree: ScenarioTree) -> list[str]:
    """Return a list of violated invariants (empty means valid).

    Checks link consistency, breadth-first stage ordering, probability
    telescoping and stage normalization to tolerance 1e-9, and value-array
    shapes. Diagnostics, not exceptions.
    """
    out: list[str] = []
    n = tree.n_nodes
    if n == 0:
        return ["tree has no nodes"]
    if tree.anc.shape != (n,) or tree.prob.shape != (n,):
        out.append("stage, anc and prob arrays must have equal length")
        return out
    if tree.stage[0] != 0 or tree.anc[0] != -1:
        out.append("node 0 must be the root (stage 0, no ancestor)")
    if np.count_nonzero(tree.stage == 0) != 1:
        out.append("exactly one node may sit at stage 0")
    if abs(tree.prob[0] - 1.0) > _PROB_TOL:
        out.append(f"root probability {tree.prob[0]} != 1")
    if np.any(np.diff(tree.stage) < 0):
        out.append("nodes must be ordered breadth-first by stage")
    if np.any(tree.stage > tree.horizon) or np.any(tree.stage < 0):
        out.append("node stages must lie in [0, horizon]")
    if np.any((tree.prob <= 0) | (tree.prob > 1 + _PROB_TOL)):
        out.append("node probabilities must lie in (0, 1]")

    for i in range(1, n):
        a = tree.anc[i]
        if not 0 <= a < n:
            out.append(f"node {i}: ancestor {a} out of range")
        elif tree.stage[a] != tree.stage[i] - 1:
            out.append(
                f"node {i}: ancestor stage {tree.stage[a]} != own stage {tree.stage[i]} - 1"
            )

    # Telescoping: every non-leaf node's probability equals its children's sum.
    child_sum = np.zeros(n)
    valid_anc = tree.anc[1:]
    if np.all((valid_anc >= 0) & (valid_anc < n)):
        np.add.at(child_sum, valid_anc, tree.prob[1:])
        for i in range(n):
            has_children = child_sum[i] > 0 or np.any(tree.anc == i)
            if tree.stage[i] < tree.horizon:
                if not has_children:
                    out.append(f"node {i} at stage {tree.stage[i]} has no children")
                elif abs(child_sum[i] - tree.prob[i]) > _PROB_TOL:
                    out.append(
                        f"node {i}: children probabilities sum {child_sum[i]:.12g} "
                        f"!= {tree.prob[i]:.12g}"
                    )
            elif has_children:
                out.append(f"leaf node {i} has children")
        for j in range(tree.horizon + 1):
            s = tree.prob[tree.stage == j].sum()
            if abs(s - 1.0) > _PROB_TOL:
                out.append(f"stage {j} probabilities sum {s:.12g} != 1")

    if tree.eps is not None:
        if tree.eps.shape != (n, tree.n_demand + tree.n_price):
            out.append(
                f"eps shape {tree.eps.shape} != "
                f"{(n, tree.n_demand + tree.n_price)}"
            )
        elif np.any(tree.eps[0] != 0.0):
            out.append("root prediction error must be zero")
    if (tree.demand is None) != (tree.price is None):
        out.append("demand and price values must be attached together")
    if tree.demand is not None and tree.demand.shape != (n, tree.n_demand):
        out.append(f"demand value shape {tree.demand.shape} != {(n, tree.n_demand)}")
    if tree.price is not None and tree.price.shape != (n, tree.n_price):
        out.append(f"price value shape {tree.price.shape} != {(n, tree.n_price)}")
    return out


def attach_forecast(
    tree: ScenarioTree, d_hat: np.ndarray, alpha_hat: np.ndarray
) -> ScenarioTree:
    """Combine nominal forecasts with per-node errors into node values.

    ``d_hat[j-1]`` and ``alpha_hat[j-1]`` are the nominal demand and price
    for stage j; each non-root node adds its error split into demand and
    price parts. Returns a new tree carrying ``demand`` and ``price``.
    """
    if tree.eps is None:
        raise ValueError("tree carries no prediction errors to attach to")
    d_hat = np.atleast_2d(np.asarray(d_hat, float))
    alpha_hat = np.atleast_2d(np.asarray(alpha_hat, float))
    if d_hat.shape != (tree.horizon, tree.n_demand):
        raise ValueError(
            f"demand forecast shape {d_hat.shape} != {(tree.horizon, tree.n_demand)}"
        )
    if alpha_hat.shape != (tree.horizon, tree.n_price):
        raise ValueError(
            f"price forecast shape {alpha_hat.shape} != {(tree.horizon, tree.n_price)}"
        )
    nd = tree.n_demand
    demand = np.zeros((tree.n_nodes, nd))
    price = np.zeros((tree.n_nodes, tree.n_price))
    nonroot = np.arange(1, tree.n_nodes)
    stages = tree.stage[nonroot]
    demand[nonroot] = d_hat[stages - 1] + tree.eps[nonroot, :nd]
    price[nonroot] = alpha_hat[stages - 1] + tree.eps[nonroot, nd:]
    return replace(tree, demand=demand, price=price)


def zero_price_errors(tree: ScenarioTree) -> ScenarioTree:
    """Copy of the tree with the price part of every error zeroed.

    Used for the certainty-equivalent-in-price comparison: the tree keeps
    its structure and demand branches but every branch sees the nominal
    price forecast.
    """
    if tree.eps is None:
        raise ValueError("tree carries no prediction errors")
    eps = tree.eps.copy()
    eps[:, tree.n_demand:] = 0.0
    return replace(tree, eps=eps, demand=None, price=None)


def leaves_to_scenarios(tree: ScenarioTree) -> list[tuple[float, list[int]]]:
    """One (probability, node path) pair per leaf; root excluded from paths."""
    out = []
    for leaf in tree.leaves():
        path = [int(leaf)]
        node = int(leaf)
        while tree.anc[node] > 0:
            node = int(tree.anc[node])
            path.append(node)
        out.append((float(tree.prob[leaf]), path[::-1]))
    return out


def _fast_forward_select(
    values: np.ndarray, weights: np.ndarray, count: int
) -> tuple[list[int], np.ndarray]:
    """Greedy representative selection on one bundle.

    Repeatedly picks the member minimizing the weight-weighted sum of
    distances from all members to their nearest representative; stops
    early once every member coincides with a representative. Ties break
    toward the lowest index. Returns (representative local indices,
    assignment of each member to a representative slot).
    """
    m = values.shape[0]
    # Distance matrix only for modest bundles; larger ones stream per candidate.
    dist = None
    if m * m <= 4_000_000:
        diff = values[:, None, :] - values[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def dist_to(i: int) -> np.ndarray:
        if dist is not None:
            return dist[i]
        return np.linalg.norm(values - values[i], axis=1)

    selected: list[int] = []
    d_min = np.full(m, np.inf)
    for _ in range(count):
        best_obj, best_idx, best_d = np.inf, -1, d_min
        for cand in range(m):
            if cand in selected:
                continue
            d_cand = np.minimum(d_min, dist_to(cand))
            obj = float(weights @ d_cand)
            if best_idx < 0 or obj < best_obj:
                best_obj, best_idx, best_d = obj, cand, d_cand
        selected.append(best_idx)
        d_min = best_d
        if not np.any(d_min > 0.0):
            break

    # Nearest-representative assignment; among equidistant representatives
    # the one with the lowest scenario index wins.
    d_rep = np.stack([dist_to(i) for i in selected], axis=1)
    order = np.argsort(np.array(selected), kind="stable")
    slot_rank = np.empty(len(selected), int)
    slot_rank[order] = np.arange(len(selected))
    is_min = d_rep == d_rep.min(axis=1, keepdims=True)
    masked_rank = np.where(is_min, slot_rank[None, :], len(selected))
    assign = np.argmin(masked_rank, axis=1)
    return selected, assign


def reduce_fan_to_tree(fan: ScenarioFan, branching: list[int]) -> ScenarioTree:
    """Reduce an equally weighted scenario fan to a tree.

    Stage-recursive greedy fast-forward selection: per parent bundle and
    stage, pick the requested number of representative values, assign each
    bundle member to its nearest representative, and spawn one child per
    representative with the assigned probability mass and the mass-weighted
    centroid as its error value. Identical members collapse, so degenerate
    fans yield fewer children than requested.
    """
    branching = [int(b) for b in branching]
    if len(branching) == 0:
        raise ValueError("branching must name at least one stage")
    if len(branching) > fan.horizon:
        raise ValueError(
            f"branching spans {len(branching)} stages but fan horizon is {fan.horizon}"
        )
    if any(b < 1 for b in branching):
        raise ValueError("branch counts must be at least 1")
    branching = branching + [1] * (fan.horizon - len(branching))
    n_leaves = int(np.prod(branching))
    if n_leaves > fan.n_scenarios:
        raise ValueError(
            f"branching exceeds scenario count: {n_leaves} leaves requested "
            f"from {fan.n_scenarios} scenarios"
        )

    s = fan.n_scenarios
    base_w = np.full(s, 1.0 / s)

    stage_list = [0]
    anc_list = [-1]
    prob_list = [1.0]
    eps_list = [np.zeros(fan.values.shape[2])]
    # Bundles at the previous stage: (node index, member indices, member weights).
    bundles: list[tuple[int, np.ndarray, np.ndarray]] = [
        (0, np.arange(s), base_w)
    ]

    for j in range(1, fan.horizon + 1):
        want = branching[j - 1]
        next_bundles: list[tuple[int, np.ndarray, np.ndarray]] = []
        for parent_node, members, weights in bundles:
            if want > members.size:
                raise ValueError(
                    f"branching exceeds scenario count at stage {j}: "
                    f"{want} children requested from a bundle of {members.size}"
                )
            vals = fan.values[members, j - 1, :]
            rel_w = weights / weights.sum()
            reps, assign = _fast_forward_select(vals, rel_w, want)
            for slot in range(len(reps)):
                mask = assign == slot
                if not np.any(mask):
                    continue
                w_slot = weights[mask]
                node = len(stage_list)
                stage_list.append(j)
                anc_list.append(parent_node)
                prob_list.append(float(w_slot.sum()))
                eps_list.append(w_slot @ vals[mask] / w_slot.sum())
                next_bundles.append((node, members[mask], w_slot))
        bundles = next_bundles

    return ScenarioTree(
        horizon=fan.horizon,
        n_demand=fan.n_demand,
        n_price=fan.n_price,
        stage=np.array(stage_list),
        anc=np.array(anc_list),
        prob=np.array(prob_list),
        eps=np.array(eps_list),
    )
