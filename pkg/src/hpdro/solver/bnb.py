"""Best-first branch and bound over binary variables, plus an exhaustive oracle."""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from ..model import MilpInstance, ScheduleSolution, validate_schedule
from .lp import DualSimplex, row_bounds

log = logging.getLogger(__name__)

INT_TOL = 1e-6
HEURISTIC_EVERY = 10  # rounding heuristic on every n-th popped node
LNS_WINDOW = 8  # slots per time-window neighbourhood
LNS_SUB_NODES = 150  # node limit per neighbourhood solve
LNS_PEAK_PAD = 2  # slots added on each side of near-binding peak slots
LNS_PAIR_HOUSES = 6  # house-pair blocks only up to this many houses


@dataclass(frozen=True)
class BnbConfig:
    """Branch-and-bound limits and options.

    ``node_limit`` caps tree nodes. ``heuristics="full"`` adds large
    neighbourhood search on the first and final incumbents, with its own
    budget of ``lns_nodes`` sub-problem nodes per call. The reported node
    count includes those sub-problem nodes. ``"rounding"`` uses LP rounding
    and repair only.
    """

    gap_tol: float = 0.01
    time_limit: float = 600.0
    node_limit: int = 1_000_000
    branching: str = "most-fractional"
    heuristics: str = "full"
    lns_nodes: int = 3000

    def __post_init__(self):
        if self.gap_tol < 0:
            raise ValueError("gap_tol must be nonnegative")
        if self.heuristics not in ("full", "rounding"):
            raise ValueError(f"unknown heuristics setting {self.heuristics!r}")
        if self.branching not in ("most-fractional", "pseudo-cost"):
            raise ValueError(f"unknown branching rule {self.branching!r}")


def _rel_gap(incumbent: float, bound: float) -> float:
    if not np.isfinite(incumbent):
        return np.inf
    if bound >= incumbent:
        return 0.0
    return (incumbent - bound) / max(abs(incumbent), 1e-9)


def _pick_branch(values, binaries):
    frac = values[binaries] - np.floor(values[binaries])
    dist = np.abs(frac - 0.5)
    fractional = np.minimum(frac, 1 - frac) > INT_TOL
    if not fractional.any():
        return None
    # nearest to 0.5; argmin returns the lowest index on ties
    dist = np.where(fractional, dist, np.inf)
    return int(binaries[int(np.argmin(dist))])


def _violation(act, lo, hi, w=None):
    v = np.maximum(lo - act, 0.0) + np.maximum(act - hi, 0.0)
    return v.sum(axis=0) if w is None else w @ v


def _swap_pairs(instance: MilpInstance) -> np.ndarray:
    """Binary index pairs (j, j+1) of neighbouring slots of the same house."""
    nb = instance.binaries.size
    H = instance.H if instance.houses and nb == len(instance.houses) * instance.H else 0
    if H < 2:
        return np.zeros(0, int)
    return np.array([k * H + t for k in range(len(instance.houses)) for t in range(H - 1)])


def _moves(xb: np.ndarray, left: np.ndarray, allowed: np.ndarray | None = None) -> np.ndarray:
    """Move matrix (moves x binaries): single flips, neighbour swaps and neighbour pair flips."""
    nb = xb.size
    flips = np.flatnonzero(allowed) if allowed is not None else np.arange(nb)
    D = np.zeros((flips.size, nb))
    D[np.arange(flips.size), flips] = 1.0 - 2.0 * xb[flips]
    blocks = [D]
    if allowed is not None:
        left = left[allowed[left] | allowed[left + 1]]
    # swaps of unequal neighbours shift a run edge; pair flips of equal
    # neighbours open or fill a two-slot run
    for sel, sign in ((xb[left] != xb[left + 1], -1.0), (xb[left] == xb[left + 1], 1.0)):
        j = left[sel]
        if j.size:
            S = np.zeros((j.size, nb))
            r = np.arange(j.size)
            S[r, j] = 1.0 - 2.0 * xb[j]
            S[r, j + 1] = sign * (1.0 - 2.0 * xb[j])
            blocks.append(S)
    return np.vstack(blocks)


def _repair(instance: MilpInstance, xb: np.ndarray, max_moves: int | None = None):
    """Breakout local search on weighted row violation, from a 0/1 vector.

    Moves are single flips, swaps of neighbouring slots of one house
    (shifting a run edge) and flips of two equal neighbouring slots.
    Continuous variables sit at their upper bound while moves are scored
    (the loosest value for epigraph rows) and are completed afterwards.
    Each step takes the move that lowers the weighted violation most; ties
    go to the cheaper move, then the first generated. When no move
    improves, the weights of the violated rows are doubled instead.
    Returns a full variable vector or None if the step budget runs out.
    """
    binaries = instance.binaries
    cont = np.flatnonzero(~instance.integer)
    if np.any(~np.isfinite(instance.ub[cont])):
        return None
    lo, hi = row_bounds(instance.sense, instance.rhs)
    full = np.zeros(instance.n_vars)
    full[cont] = instance.ub[cont]
    full[binaries] = xb
    Ab = instance.A[:, binaries]
    act = instance.A @ full
    cb = instance.c[binaries]
    left = _swap_pairs(instance)
    max_moves = max_moves or 4 * binaries.size
    tol = 1e-9 * np.maximum(1.0, np.abs(np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))))
    lo_t, hi_t = lo - tol, hi + tol
    w = np.ones(instance.n_rows)
    for _ in range(max_moves):
        viol = np.maximum(lo_t - act, 0.0) + np.maximum(act - hi_t, 0.0)
        if not np.any(viol > 0):
            break
        v = w @ viol
        rows = np.flatnonzero(viol > 0)
        # only binaries touching a violated row can help
        touch = np.any(Ab[rows] != 0, axis=0)
        D = _moves(xb, left, touch)
        trial = act[:, None] + Ab @ D.T
        vn = _violation(trial, lo_t[:, None], hi_t[:, None], w)
        best = vn.min()
        if best >= v - 1e-12 * max(1.0, v):
            w[rows] *= 2.0
            continue
        cand = np.flatnonzero(vn <= best + 1e-12 * max(1.0, best))
        m = int(cand[np.argmin(D[cand] @ cb)])
        xb = xb + D[m]
        act = trial[:, m].copy()
    else:
        return None
    try:
        out = instance.complete(xb)
    except ValueError:
        return None
    if np.any(out < instance.lb - 1e-9) or np.any(out > instance.ub + 1e-9):
        return None
    if validate_schedule(out, instance, tol=1e-9):
        return None
    return out


def _feasible_batch(instance: MilpInstance, full: np.ndarray) -> np.ndarray:
    ok = np.all(full >= instance.lb - 1e-9, axis=1) & np.all(full <= instance.ub + 1e-9, axis=1)
    if instance.n_rows:
        act = full @ instance.A.T
        lo, hi = row_bounds(instance.sense, instance.rhs)
        tol = 1e-9 * np.maximum(1.0, np.abs(instance.rhs))
        ok &= np.all((act >= lo - tol) & (act <= hi + tol), axis=1)
    return ok


def _improve(instance: MilpInstance, full: np.ndarray, max_steps: int = 200) -> np.ndarray:
    """Best-improvement local search from a feasible point, over the same
    flip and neighbour-swap moves as the repair. Continuous variables are
    re-completed for every candidate."""
    binaries = instance.binaries
    xb = full[binaries].copy()
    val = instance.objective(full)
    left = _swap_pairs(instance)
    for _ in range(max_steps):
        X = xb + _moves(xb, left)
        try:
            cand = instance.complete(X)
        except ValueError:
            return full
        obj = cand @ instance.c
        obj[~_feasible_batch(instance, cand)] = np.inf
        k = int(np.argmin(obj))
        if not obj[k] < val - 1e-9 * max(1.0, abs(val)):
            break
        full, val, xb = cand[k], float(obj[k]), X[k].copy()
    return full


def _rounding_heuristic(instance: MilpInstance, values, polish: bool = True):
    """Round the relaxed binaries, then repair by greedy flips.

    Rounding thresholds 0.5, 0.25 and 0.75 are tried in turn; the cheapest
    repaired point is returned (None if every start gets stuck).
    """
    v = np.clip(values[instance.binaries], 0, 1)
    best, best_val = None, np.inf
    for thr in (0.5, 0.25, 0.75):
        cand = _repair(instance, (v >= thr).astype(float))
        if cand is not None:
            val = instance.objective(cand)
            if val < best_val:
                best, best_val = cand, val
    if best is None or not polish:
        return best
    return _improve(instance, best)


def _canonical(instance, values, obj):
    """Reported point and objective as a function of the binaries alone, so
    every search path that ends at the same schedule reports the same bits."""
    try:
        full = instance.complete(values[instance.binaries][None, :])[0]
    except ValueError:
        full = values  # continuous part not of epigraph form; keep the LP values
    val = math.fsum(instance.c * full)
    return (full, val) if val <= obj + 1e-9 * max(1.0, abs(obj)) else (values, obj)


def _solution(instance, status, values, obj, bound, nodes, t0) -> ScheduleSolution:
    sol = ScheduleSolution(status=status, nodes=nodes, bound=bound, elapsed=time.perf_counter() - t0)
    if values is not None:
        values, obj = _canonical(instance, values, obj)
        sol.values = values
        sol.objective_value = obj
        sol.bound = min(bound, obj)
        sol.gap = _rel_gap(obj, bound)
        if instance.houses:
            sol.x = instance.schedule_matrix(values)
            sol.P_max = {z: float(values[instance.pmax_index(i)]) for i, z in enumerate(instance.zones)}
    return sol


def _peak_hood(instance: MilpInstance, full: np.ndarray, H: int) -> np.ndarray:
    """Binaries of every house in slots whose peak row is within one
    heat pump of binding, widened by ``LNS_PEAK_PAD`` slots each side."""
    binaries = instance.binaries
    rows = np.flatnonzero(np.asarray(instance.row_tags) == "peak")
    if rows.size == 0:
        return np.zeros(0, int)
    Ab = instance.A[np.ix_(rows, binaries)]
    near = instance.slacks(full)[rows] <= np.abs(Ab).max(axis=1) + 1e-9
    cols = np.flatnonzero(np.any(Ab[near] != 0, axis=0))
    slots = np.unique(cols % H)
    slots = np.unique(np.clip(slots[:, None] + np.arange(-LNS_PEAK_PAD, LNS_PEAK_PAD + 1), 0, H - 1))
    n_h = binaries.size // H
    return (np.arange(n_h)[:, None] * H + slots).ravel()


def _lns(instance: MilpInstance, lb0, ub0, full, val, config: BnbConfig, t0: float, guide=None):
    """Large-neighbourhood search: free a block of binaries, fix every other
    binary at the incumbent, and solve that sub-problem by branch and bound
    under the incumbent cutoff. Blocks are, in order: the binaries where the
    incumbent and the relaxed solution ``guide`` disagree or the latter is
    fractional, all houses around the near-binding peak slots, each house,
    each pair of houses (small instances), and sliding windows of slots
    across all houses. Sweeps repeat while they improve and the node budget
    lasts.

    Returns ``(full, val, nodes)``.
    """
    binaries = instance.binaries
    H = instance.H if instance.houses and binaries.size == len(instance.houses) * instance.H else 0
    if not H:
        return full, val, 0
    n_h = len(instance.houses)
    hoods = [np.arange(k * H, (k + 1) * H) for k in range(n_h)]
    if n_h <= LNS_PAIR_HOUSES:
        hoods += [np.r_[hoods[a], hoods[b]] for a in range(n_h) for b in range(a + 1, n_h)]
    w = LNS_WINDOW
    for a in range(0, max(H - w, 0) + 1, w // 2):
        hoods.append(np.concatenate([np.arange(k * H + a, k * H + min(a + w, H)) for k in range(n_h)]))
    sub_cfg = BnbConfig(gap_tol=0.0, time_limit=config.time_limit, node_limit=LNS_SUB_NODES,
                        branching=config.branching, heuristics="rounding")
    used = 0
    improved = True
    while improved and used < config.lns_nodes:
        improved = False
        for i, free in enumerate(["guide", "peak"] + hoods):
            if used >= config.lns_nodes or time.perf_counter() - t0 > config.time_limit:
                break
            if isinstance(free, str) and free == "guide":
                if guide is None:
                    continue
                g = guide[binaries]
                free = np.flatnonzero((np.abs(g - full[binaries]) > 0.5) | ((g > 0.01) & (g < 0.99)))
            elif isinstance(free, str):
                free = _peak_hood(instance, full, H)
            if free.size == 0:
                continue
            lb, ub = lb0.copy(), ub0.copy()
            fixed = np.ones(binaries.size, bool)
            fixed[free] = False
            lb[binaries[fixed]] = ub[binaries[fixed]] = full[binaries[fixed]]
            res = _search(instance, lb, ub, sub_cfg, t0, start=(full, val))
            used += res.nodes
            if res.value < val - 1e-9 * max(1.0, abs(val)):
                log.debug("lns block %d: %.6f -> %.6f", i, val, res.value)
                full, val, improved = res.values, res.value, True
    return full, val, used


@dataclass
class _Result:
    values: np.ndarray | None
    value: float
    bound: float
    nodes: int
    timed_out: bool


def _search(instance: MilpInstance, lb0, ub0, config: BnbConfig, t0: float, start=None,
            record=None) -> _Result:
    binaries = instance.binaries
    full_heur = config.heuristics == "full"
    row_lo, row_hi = row_bounds(instance.sense, instance.rhs)
    lp = DualSimplex(instance.A, row_lo, row_hi, instance.c)

    incumbent, incumbent_val = start if start is not None else (None, np.inf)
    pruned_bound = np.inf  # smallest bound among nodes discarded by the gap test
    heap = []
    seq = itertools.count()
    nodes = 0
    pops = 0
    lns_done = not full_heur or start is not None

    def out_of_budget():
        return nodes >= config.node_limit or time.perf_counter() - t0 > config.time_limit

    def finalize(values):
        full = values.copy()
        full[binaries] = np.rint(full[binaries])
        try:
            comp = instance.complete(full[binaries])
            if not validate_schedule(comp, instance, tol=1e-9):
                full = comp
        except ValueError:
            pass
        if full_heur:
            full = _improve(instance, full)
        return full, instance.objective(full)

    def threshold():
        if not np.isfinite(incumbent_val):
            return np.inf
        return incumbent_val - max(config.gap_tol * abs(incumbent_val), 1e-9 * max(1.0, abs(incumbent_val)))

    def offer(full, val, bound):
        nonlocal incumbent, incumbent_val, lns_done, nodes
        if not val < incumbent_val:
            return
        incumbent, incumbent_val = full, val
        if not lns_done:
            # polish the first incumbent so the gap test starts pruning early
            lns_done = True
            incumbent, incumbent_val, used = _lns(instance, lb0, ub0, incumbent, incumbent_val, config, t0,
                                                  root_values)
            nodes += used
        if start is None:
            log.info("node=%d bound=%.6f incumbent=%.6f gap=%.6f", nodes, bound, incumbent_val,
                     _rel_gap(incumbent_val, bound))

    if np.any(lb0 > ub0):
        return _Result(incumbent, incumbent_val, np.inf, nodes, False)
    lp.load(lb0, ub0)
    root = lp.solve(cutoff=threshold())
    root_values = root.values
    nodes += 1
    if root.status in ("infeasible", "cutoff"):
        bound = np.inf if root.status == "infeasible" else root.objective
        return _Result(incumbent, incumbent_val, min(bound, incumbent_val), nodes, False)
    cand = _rounding_heuristic(instance, root.values, polish=full_heur)
    if cand is not None:
        offer(cand, instance.objective(cand), root.objective)
    heapq.heappush(heap, (root.objective, next(seq), lb0, ub0, lp.snapshot()[0], root))
    timed_out = False

    while heap:
        if out_of_budget():
            timed_out = True
            break
        open_bound = heap[0][0]
        if _rel_gap(incumbent_val, min(open_bound, pruned_bound)) <= config.gap_tol:
            break
        if incumbent is None:
            # depth-first (newest node) until the first incumbent exists
            k = max(range(len(heap)), key=lambda i: heap[i][1])
            entry = heap.pop(k)
            heapq.heapify(heap)
        else:
            entry = heapq.heappop(heap)
        bound, _, lb, ub, basis, presolved = entry
        pops += 1
        if bound >= threshold():
            pruned_bound = min(pruned_bound, bound)
            continue
        lb, ub = lb.copy(), ub.copy()
        if presolved is not None:
            sol = presolved
            lp.load(lb, ub, basis)
        else:
            lp.load(lb, ub, basis)
            sol = lp.solve(cutoff=threshold())
            nodes += 1
            if sol.status == "optimal" and sol.objective < threshold() and pops % HEURISTIC_EVERY == 0:
                cand = _rounding_heuristic(instance, sol.values, polish=full_heur)
                if cand is not None:
                    offer(cand, instance.objective(cand), bound)
        # plunge
        while True:
            if record is not None:
                record.append((nodes, sol.objective, incumbent_val))
            if sol.status == "infeasible":
                break
            if sol.status == "cutoff" or sol.objective >= threshold():
                pruned_bound = min(pruned_bound, sol.objective)
                break
            j = _pick_branch(sol.values, binaries)
            if j is None:
                full, val = finalize(sol.values)
                offer(full, val, min([sol.objective] + [h[0] for h in heap[:1]]))
                break
            v = sol.values[j]
            basis = lp.snapshot()[0]
            lb_other, ub_other = lb.copy(), ub.copy()
            if v >= 0.5:
                ub_other[j] = 0.0
                lb[j] = 1.0
            else:
                lb_other[j] = 1.0
                ub[j] = 0.0
            heapq.heappush(heap, (sol.objective, next(seq), lb_other, ub_other, basis, None))
            lp.set_bounds(j, lb[j], ub[j])
            sol = lp.solve(cutoff=threshold())
            nodes += 1
            if out_of_budget():
                if sol.status == "optimal" and _pick_branch(sol.values, binaries) is None:
                    full, val = finalize(sol.values)
                    offer(full, val, sol.objective)
                elif sol.status not in ("infeasible", "cutoff"):
                    heapq.heappush(heap, (sol.objective, next(seq), lb.copy(), ub.copy(),
                                          lp.snapshot()[0], None))
                break

    if full_heur and start is None and incumbent is not None:
        # final polish of the best incumbent
        full, val, used = _lns(instance, lb0, ub0, incumbent, incumbent_val, config, t0, root_values)
        nodes += used
        if val < incumbent_val:
            incumbent, incumbent_val = full, val
    open_bound = heap[0][0] if heap else np.inf
    best_bound = min(open_bound, pruned_bound, incumbent_val)
    return _Result(incumbent, incumbent_val, best_bound, nodes, timed_out)


def solve_milp(instance: MilpInstance, config: BnbConfig | None = None, record=None) -> ScheduleSolution:
    """Branch and bound with best-first node selection and depth-first plunging.

    Until a first incumbent exists, nodes are taken newest-first (plain
    depth-first backtracking), which reaches integral leaves quickly when
    the rounding heuristic fails. With ``config.heuristics == "full"`` the
    first incumbent is polished by large-neighbourhood search and every
    incumbent by local search; ``"rounding"`` keeps only the rounding repair.

    ``record``, if a list, receives ``(node, lp_bound, incumbent)`` per solved node.
    Log lines: ``node=<n> bound=<b> incumbent=<v> gap=<g>``.
    """
    config = config or BnbConfig()
    t0 = time.perf_counter()
    binaries = instance.binaries
    lb0 = np.array(instance.lb, float)
    ub0 = np.array(instance.ub, float)
    lb0[binaries] = np.maximum(lb0[binaries], 0.0)
    ub0[binaries] = np.minimum(ub0[binaries], 1.0)
    res = _search(instance, lb0, ub0, config, t0, record=record)
    if res.values is None:
        infeasible = not res.timed_out
        return _solution(instance, "infeasible" if infeasible else "timeout", None, np.inf,
                         res.bound, res.nodes, t0)
    gap = _rel_gap(res.value, res.bound)
    # pruning treats a relative difference of 1e-9 as zero; so does the status
    if gap > config.gap_tol + 1e-9:
        status = "timeout"
    else:
        status = "optimal" if gap <= 1e-9 else "gap-feasible"
    log.info("node=%d bound=%.6f incumbent=%.6f gap=%.6f", res.nodes, res.bound, res.value, gap)
    return _solution(instance, status, res.values, res.value, res.bound, res.nodes, t0)


def enumerate_small(instance: MilpInstance, max_binaries: int = 22) -> ScheduleSolution:
    """Exact optimum by checking every binary assignment.

    Continuous variables are set analytically to their smallest feasible
    value (epigraph form). Ties go to the assignment with the smallest
    integer code, bit ``j`` of the code being binary ``j``.
    """
    t0 = time.perf_counter()
    nb = instance.binaries.size
    if nb > max_binaries:
        raise ValueError(f"{nb} binaries exceed the enumeration limit of {max_binaries}")
    total = 1 << nb
    chunk = max(1, min(total, 4_000_000 // max(1, instance.n_rows + instance.n_vars)))
    best_val, best = np.inf, None
    bits = np.arange(nb)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk))
        X = ((codes[:, None] >> bits) & 1).astype(float)
        full = instance.complete(X)
        ok = np.all(full >= instance.lb - 1e-9, axis=1) & np.all(full <= instance.ub + 1e-9, axis=1)
        if instance.n_rows:
            act = full @ instance.A.T
            tol = 1e-9 * np.maximum(1.0, np.abs(instance.rhs))
            le = np.where(instance.sense == "L", act <= instance.rhs + tol, True)
            ge = np.where(instance.sense == "G", act >= instance.rhs - tol, True)
            eq = np.where(instance.sense == "E", np.abs(act - instance.rhs) <= tol, True)
            ok &= np.all(le & ge & eq, axis=1)
        if not ok.any():
            continue
        obj = full @ instance.c
        obj[~ok] = np.inf
        k = int(np.argmin(obj))
        if obj[k] < best_val:
            best_val, best = float(obj[k]), full[k]
    if best is None:
        return _solution(instance, "infeasible", None, np.inf, np.inf, total, t0)
    return _solution(instance, "optimal", best, best_val, best_val, total, t0)
