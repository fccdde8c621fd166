"""Part <-> phrase bipartite matching and the structural consensus guidance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFinite
from .garment_world import PartSet, World, decode, decode_adjoint, default_world, segment
from .prompt_parser import APTree
from .similarity import ap_region, embed_ap, embed_part, grad_sim_image, sim, sim_full


@dataclass(frozen=True)
class Assignment:
    """Row -> column permutation of a (padded) square cost matrix.

    Rows are visual parts and columns attribute phrases; ``dummy[i]`` is set
    when row ``i`` or its column is padding.
    """

    perm: tuple[int, ...]
    costs: tuple[float, ...]
    dummy: tuple[bool, ...]

    @property
    def total_cost(self) -> float:
        return float(sum(self.costs))

    @property
    def similarities(self) -> tuple[float, ...]:
        return tuple(-c for c in self.costs)

    def pairs(self):
        """Non-dummy ``(row, col)`` pairs."""
        return [(i, j) for i, j in enumerate(self.perm) if not self.dummy[i]]


def pad_cost(cost: np.ndarray):
    """Zero-pad a rectangular cost matrix to square; returns (square, n_rows, n_cols)."""
    cost = np.asarray(cost, dtype=float)
    r, c = cost.shape
    n = max(r, c)
    out = np.zeros((n, n))
    out[:r, :c] = cost
    return out, r, c


def _solve(cost: np.ndarray):
    """Shortest augmenting path Kuhn-Munkres; returns (row->col, u, v)."""
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=int)
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, INF)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _has_perfect_matching(adj: np.ndarray, rows: list[int], cols_free: np.ndarray) -> bool:
    match_col = {}

    def try_row(r, seen):
        for c in np.flatnonzero(adj[r] & cols_free):
            if c in seen:
                continue
            seen.add(c)
            if c not in match_col or try_row(match_col[c], seen):
                match_col[c] = r
                return True
        return False

    return all(try_row(r, set()) for r in rows)


def _lexicographic_optimum(cost: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Smallest optimal permutation in lexicographic order.

    Optimal assignments are exactly the perfect matchings of the tight
    (zero reduced cost) subgraph, so rows are fixed greedily to their smallest
    tight column that still leaves a perfect matching for the rest.
    """
    n = cost.shape[0]
    tol = 1e-9 * (1.0 + np.abs(cost).max())
    tight = (cost - u[:, None] - v[None, :]) <= tol
    free = np.ones(n, dtype=bool)
    perm = np.empty(n, dtype=int)
    for i in range(n):
        for j in np.flatnonzero(tight[i] & free):
            free[j] = False
            if _has_perfect_matching(tight, list(range(i + 1, n)), free):
                perm[i] = j
                break
            free[j] = True
        else:  # pragma: no cover - the solver's matching is always tight
            raise RuntimeError("tight subgraph lost its perfect matching")
    return perm


def hungarian(cost, n_rows: int | None = None, n_cols: int | None = None) -> Assignment:
    """Minimum-cost perfect matching of a square cost matrix.

    Ties are broken towards the lexicographically smallest permutation.
    ``n_rows``/``n_cols`` mark the real (unpadded) extent for dummy flags.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise NonFinite("cost matrix has NaN or infinite entries")
    n = cost.shape[0]
    n_rows = n if n_rows is None else n_rows
    n_cols = n if n_cols is None else n_cols
    if n == 0:
        return Assignment((), (), ())
    _, u, v = _solve(cost)
    perm = _lexicographic_optimum(cost, u, v)
    costs = tuple(float(cost[i, j]) for i, j in enumerate(perm))
    dummy = tuple(bool(i >= n_rows or j >= n_cols) for i, j in enumerate(perm))
    return Assignment(tuple(int(j) for j in perm), costs, dummy)


def match(v: PartSet, w: APTree, world: World | None = None) -> Assignment:
    """Match the parts of ``v`` to the APs of ``w`` on cost = -similarity."""
    world = world or default_world()
    text = [embed_ap(ap, world.lexicon) for ap in w.aps]
    image = [embed_part(v.full_image, mask, pid) for pid, _, mask in v.parts]
    s = np.array([[sim(ie, te) for te in text] for ie in image]).reshape(len(image), len(text))
    square, r, c = pad_cost(-s)
    return hungarian(square, r, c)


def l_hungarian(v: PartSet, w: APTree, world: World | None = None,
                assignment: Assignment | None = None) -> float:
    """Matched part similarities plus the full-image similarity.

    With ``assignment`` given the permutation is held fixed instead of being
    re-optimised.
    """
    world = world or default_world()
    if assignment is None:
        assignment = match(v, w, world)
    total = 0.0
    for i, j in assignment.pairs():
        pid, _, mask = v.parts[i]
        total += sim(embed_part(v.full_image, mask, pid), embed_ap(w.aps[j], world.lexicon))
    return total + sim_full(v.full_image, w, world)


def l_hungarian_latent(z: np.ndarray, w: APTree, world: World | None = None,
                       assignment: Assignment | None = None) -> float:
    world = world or default_world()
    return l_hungarian(segment(decode(z), w.category, world), w, world, assignment)


def grad_l_hungarian_image(v: PartSet, w: APTree, world: World | None = None,
                           assignment: Assignment | None = None) -> np.ndarray:
    world = world or default_world()
    if assignment is None:
        assignment = match(v, w, world)
    image = v.full_image
    grad = np.zeros_like(image)
    for i, j in assignment.pairs():
        pid, _, mask = v.parts[i]
        grad += grad_sim_image(image, mask, pid, embed_ap(w.aps[j], world.lexicon))
    for ap in w.aps:
        pid, mask = ap_region(ap, w.category, world)
        if mask is None:
            continue
        grad += grad_sim_image(image, mask, pid, embed_ap(ap, world.lexicon)) / w.m
    return grad


def grad_l_hungarian_latent(z: np.ndarray, w: APTree, world: World | None = None,
                            assignment: Assignment | None = None):
    """(value, gradient w.r.t. z, assignment) with the matching fixed at z."""
    world = world or default_world()
    v = segment(decode(z), w.category, world)
    if assignment is None:
        assignment = match(v, w, world)
    value = l_hungarian(v, w, world, assignment)
    grad = decode_adjoint(grad_l_hungarian_image(v, w, world, assignment))
    return value, grad, assignment


def consensus_guidance_step(z: np.ndarray, w: APTree, alpha: float,
                            world: World | None = None) -> np.ndarray:
    """Ascent step ``z + alpha * grad L_Hungarian`` at a fixed matching."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    z = np.asarray(z, dtype=float)
    if alpha == 0:
        return z.copy()
    _, grad, _ = grad_l_hungarian_latent(z, w, world)
    if not np.isfinite(grad).all():
        raise NonFinite("consensus guidance gradient is not finite")
    return z + alpha * grad
