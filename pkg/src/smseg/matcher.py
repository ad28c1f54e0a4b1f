"""Rectangular assignment solver and decoupled group matching.

``hungarian`` solves min-cost assignment of T targets to K queries
(T <= K) and pins a deterministic tie-break: among all minimum-cost
assignments it returns the one whose (query, target) pair sequence,
sorted by query, is lexicographically smallest. That makes fixtures
portable across implementations — equal-cost optima cannot flip the
output.

The solve runs in two phases. Phase one is a shortest-augmenting-path
Kuhn-Munkres over targets (float64 potentials) that yields the optimal
total. Phase two canonicalizes: it fixes pairs greedily in (query,
target) order, keeping a pair only when some completion still reaches the
optimal total. Totals are compared with ``math.fsum`` (correctly rounded,
order independent), so the equality test is robust to summation order.
Phase two prunes candidates by reduced cost using phase one's dual
potentials and rescans without pruning if the pruned pass comes up empty.

``split_match`` runs the solver independently for the seen and candidate
query groups and concatenates the results into one assignment, so a pair
can never link a query to the other group's targets.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .losses import class_similarity, match_cost_matrix


class Pair(NamedTuple):
    query: int
    target: int
    cost: float
    group: str


@dataclass
class Assignment:
    pairs: list                      # Pair, ascending query index
    group: str                       # "seen" | "candidate" | "combined"
    unmatched_queries: list = field(default_factory=list)

    @property
    def total_cost(self):
        return math.fsum(p.cost for p in self.pairs)

    def validate(self):
        queries = [p.query for p in self.pairs]
        targets = [p.target for p in self.pairs]
        if len(set(queries)) != len(queries):
            raise ValueError("duplicate query index in assignment")
        if len(set(targets)) != len(targets):
            raise ValueError("duplicate target index in assignment")
        if set(queries) & set(self.unmatched_queries):
            raise ValueError("query listed as both matched and unmatched")
        return self


def _lsa(cost):
    """Shortest-augmenting-path assignment over rows of ``cost`` (n <= m).

    Returns (col_of_row, row_potentials, col_potentials). Ports the
    classic O(n^2 m) potential formulation; the virtual column sits at
    index m.
    """
    a = np.asarray(cost, dtype=np.float64)
    n, m = a.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.full(m + 1, n)            # matched row per column, n = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        p[m] = i
        j0 = m
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[:m]
            cand = a[i0] - u[i0] - v[:m]
            better = free & (cand < minv[:m])
            minv[:m][better] = cand[better]
            way[:m][better] = j0
            free_idx = np.flatnonzero(free)
            k = int(np.argmin(minv[free_idx]))
            delta = minv[free_idx][k]
            j1 = int(free_idx[k])
            used_idx = np.flatnonzero(used)
            u[p[used_idx]] += delta
            v[used_idx] -= delta
            minv[:m][free] -= delta
            j0 = j1
            if p[j0] == n:
                break
        while j0 != m:
            j1 = int(way[j0])
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(m):
        if p[j] != n:
            col_of_row[p[j]] = j
    return col_of_row, u[:n], v[:m]


def _min_completion(cost, rows, cols):
    """Optimal total for matching every target in ``cols`` within ``rows``."""
    if not cols:
        return 0.0, []
    sub = cost[np.ix_(rows, cols)]
    col_of_row = _lsa(sub.T)[0]      # solver rows = targets
    entries = [float(cost[rows[col_of_row[t]], cols[t]]) for t in range(len(cols))]
    return math.fsum(entries), entries


def hungarian(cost, group="combined"):
    """Min-cost injective target->query assignment with lexicographic ties.

    ``cost`` is (K queries, T targets) with T <= K and finite entries.
    T = 0 yields an empty assignment with every query unmatched.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be rank 2, got shape {cost.shape}")
    k, t = cost.shape
    if t > k:
        raise ValueError(f"{t} targets exceed {k} queries")
    if cost.size and not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    if t == 0:
        return Assignment(pairs=[], group=group,
                          unmatched_queries=list(range(k))).validate()

    col_of_row, u_t, v_q = _lsa(cost.T)
    best_total = math.fsum(float(cost[col_of_row[i], i]) for i in range(t))
    # reduced cost of (query q, target i) under phase-one potentials
    reduced = cost - v_q[:, None] - u_t[None, :]
    rc_tol = 1e-9 * (1.0 + float(np.abs(cost).max()))

    fixed = []                        # (q, t, cost) in discovery order
    fixed_costs = []
    rem_q = list(range(k))
    rem_t = list(range(t))

    while rem_t:
        chosen = None
        for prune in (True, False):
            for q in rem_q:
                for tt in rem_t:
                    if prune and reduced[q, tt] > rc_tol:
                        continue
                    rows = [r for r in rem_q if r != q]
                    cols = [c for c in rem_t if c != tt]
                    _, entries = _min_completion(cost, rows, cols)
                    trial = math.fsum(fixed_costs + [float(cost[q, tt])] + entries)
                    if trial == best_total:
                        chosen = (q, tt)
                        break
                if chosen:
                    break
            if chosen:
                break
        if chosen is None:
            # fp-degenerate case: phase one's total was not reachable by
            # fsum bookkeeping; fall back to the cheapest extension.
            best_trial = None
            for q in rem_q:
                for tt in rem_t:
                    rows = [r for r in rem_q if r != q]
                    cols = [c for c in rem_t if c != tt]
                    _, entries = _min_completion(cost, rows, cols)
                    trial = math.fsum(fixed_costs + [float(cost[q, tt])] + entries)
                    if best_trial is None or trial < best_trial[0]:
                        best_trial = (trial, q, tt)
            best_total, q, tt = best_trial
            chosen = (q, tt)
        q, tt = chosen
        fixed.append((q, tt, float(cost[q, tt])))
        fixed_costs.append(float(cost[q, tt]))
        rem_q.remove(q)
        rem_t.remove(tt)

    pairs = [Pair(q, tt, c, group) for q, tt, c in sorted(fixed)]
    matched = {p.query for p in pairs}
    return Assignment(
        pairs=pairs, group=group,
        unmatched_queries=[q for q in range(k) if q not in matched],
    ).validate()


def split_match(preds_seen, preds_cand, seen_targets, cand_targets, joint, weights):
    """Assign each query group to its own targets, then concatenate.

    ``preds_seen``/``preds_cand`` are (V, M) pairs for the two groups;
    targets are (joint class id, mask) lists whose ids must respect the
    seen/candidate boundary of ``joint``. Candidate query indices are
    shifted by the seen group size and candidate target indices by the
    seen target count, so the combined assignment indexes the stacked
    prediction and target lists directly.
    """
    v_seen, m_seen = preds_seen
    v_cand, m_cand = preds_cand
    k_seen, k_cand = len(v_seen), len(v_cand)
    if len(seen_targets) > k_seen:
        raise ValueError(
            f"{len(seen_targets)} seen targets exceed {k_seen} seen queries")
    if len(cand_targets) > k_cand:
        raise ValueError(
            f"{len(cand_targets)} candidate targets exceed {k_cand} candidate queries")

    if seen_targets:
        cm = match_cost_matrix(class_similarity(v_seen, joint), m_seen,
                               seen_targets, "seen", weights, joint.seen_count)
        a_seen = hungarian(cm.values, group="seen")
    else:
        a_seen = Assignment(pairs=[], group="seen",
                            unmatched_queries=list(range(k_seen)))
    if cand_targets:
        cm = match_cost_matrix(class_similarity(v_cand, joint), m_cand,
                               cand_targets, "candidate", weights, joint.seen_count)
        a_cand = hungarian(cm.values, group="candidate")
    else:
        a_cand = Assignment(pairs=[], group="candidate",
                            unmatched_queries=list(range(k_cand)))

    t_seen = len(seen_targets)
    pairs = list(a_seen.pairs)
    pairs += [Pair(p.query + k_seen, p.target + t_seen, p.cost, "candidate")
              for p in a_cand.pairs]
    unmatched = list(a_seen.unmatched_queries)
    unmatched += [q + k_seen for q in a_cand.unmatched_queries]
    return Assignment(pairs=pairs, group="combined",
                      unmatched_queries=unmatched).validate()
