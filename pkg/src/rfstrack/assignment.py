"""Joint prediction-update assignment: cost matrix, ranked assignment, Gibbs sampling.

The cost matrix has one row per candidate track (survivors first, then birth
candidates) and M + 2P columns: detection columns 1..M shared by all rows,
then a per-row miss-detection column and a per-row death/non-birth column.
Entries are negative log weights; impossible pairings are +inf.

A solution assigns every row to a measurement index, MISSED or DEAD, with no
measurement used twice.  ``murty_kbest`` returns the exact K cheapest
solutions; ``gibbs_sample`` runs a systematic-scan Gibbs chain whose
stationary distribution is proportional to exp(-total cost);
``enumerate_all`` is the brute-force oracle for small instances.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .dynamics import TrackLabel

MISSED = -1
DEAD = -2

_INFEASIBLE = 1e30


@dataclass
class AssignmentProblem:
    """Cost matrix over P rows (survivors then births) and M + 2P columns."""

    costs: np.ndarray
    row_labels: list[TrackLabel]
    n_survivors: int

    @property
    def n_rows(self) -> int:
        return self.costs.shape[0]

    @property
    def n_measurements(self) -> int:
        return self.costs.shape[1] - 2 * self.costs.shape[0]


@dataclass(frozen=True)
class AssignmentSolution:
    """Per-row outcomes (measurement index, MISSED or DEAD) plus total cost."""

    outcomes: tuple[int, ...]
    cost: float


def build_cost_matrix(
    survivors: Sequence[tuple[TrackLabel, float, np.ndarray, float]],
    births: Sequence[tuple[TrackLabel, float, np.ndarray, float]],
) -> AssignmentProblem:
    """Assemble the joint cost matrix from per-row weight components.

    Each entry is (label, presence probability, per-measurement detection
    weights, miss weight); presence is survival probability for survivors and
    birth probability for birth candidates.  Detection entries cost
    -ln(presence * psi_z), miss entries -ln(presence * psi_0) and the
    death/non-birth entry -ln(1 - presence); zero weights become +inf.
    """
    rows = list(survivors) + list(births)
    p = len(rows)
    m = len(rows[0][2]) if p else 0
    costs = np.full((p, m + 2 * p), np.inf)
    with np.errstate(divide="ignore"):
        for i, (label, presence, psi_z, psi_0) in enumerate(rows):
            psi_z = np.asarray(psi_z, dtype=float)
            if psi_z.shape != (m,):
                raise ValueError("inconsistent per-measurement weight lengths")
            costs[i, :m] = -np.log(presence * psi_z)
            costs[i, m + i] = -np.log(presence * psi_0)
            costs[i, m + p + i] = -np.log1p(-presence) if presence < 1.0 else np.inf
    labels = [r[0] for r in rows]
    return AssignmentProblem(costs, labels, len(list(survivors)))


def _outcome_of_column(col: int, n_meas: int, n_rows: int) -> int:
    if col < n_meas:
        return col
    if col < n_meas + n_rows:
        return MISSED
    return DEAD


def _solution_from_columns(columns, costs: np.ndarray, n_meas: int) -> AssignmentSolution:
    n_rows = costs.shape[0]
    total = float(sum(costs[i, c] for i, c in enumerate(columns)))
    outcomes = tuple(_outcome_of_column(int(c), n_meas, n_rows) for c in columns)
    return AssignmentSolution(outcomes, total)


# -- exact LAP kernel (shortest augmenting path with dual potentials) --------


@njit(cache=True)
def _lap_kernel(cost):  # pragma: no cover - exercised via murty_kbest
    n, m = cost.shape
    u = np.zeros(n)
    v = np.zeros(m)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(m, -1, dtype=np.int64)
    shortest = np.empty(m)
    remaining = np.empty(m, dtype=np.int64)
    path = np.full(m, -1, dtype=np.int64)
    sr = np.zeros(n, dtype=np.bool_)
    sc = np.zeros(m, dtype=np.bool_)
    for cur_row in range(n):
        for j in range(m):
            shortest[j] = np.inf
            path[j] = -1
            sc[j] = False
            remaining[j] = j
        for i in range(n):
            sr[i] = False
        num_remaining = m
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            sr[i] = True
            lowest = np.inf
            index_lowest = -1
            for it in range(num_remaining):
                j = remaining[it]
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                if shortest[j] < lowest or (
                    shortest[j] == lowest and index_lowest >= 0
                    and row4col[remaining[index_lowest]] != -1 and row4col[j] == -1
                ):
                    lowest = shortest[j]
                    index_lowest = it
            min_val = lowest
            if min_val == np.inf:
                return col4row, np.inf
            j = remaining[index_lowest]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            sc[j] = True
            num_remaining -= 1
            remaining[index_lowest] = remaining[num_remaining]
        u[cur_row] += min_val
        for ii in range(n):
            if sr[ii] and ii != cur_row:
                u[ii] += min_val - shortest[col4row[ii]]
        for jj in range(m):
            if sc[jj]:
                v[jj] -= min_val - shortest[jj]
        while True:
            ii = path[sink]
            row4col[sink] = ii
            tmp = col4row[ii]
            col4row[ii] = sink
            sink = tmp
            if ii == cur_row:
                break
    total = 0.0
    for i in range(n):
        total += cost[i, col4row[i]]
    return col4row, total


def solve_assignment(costs: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-cost row-to-column assignment; +inf entries are forbidden.

    Returns (column per row, total cost); total is inf when infeasible.
    """
    if costs.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    return _lap_kernel(np.ascontiguousarray(costs, dtype=np.float64))


def murty_kbest(problem: AssignmentProblem, k: int) -> list[AssignmentSolution]:
    """The K cheapest valid assignments, ascending cost.

    Ties are broken lexicographically on the outcome vector.  Returns all
    solutions when fewer than K exist.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    costs = problem.costs
    n_rows, n_meas = costs.shape[0], problem.n_measurements
    if n_rows == 0:
        return [AssignmentSolution((), 0.0)]
    cols, total = solve_assignment(costs)
    if not np.isfinite(total):
        return []
    counter = 0
    heap = [(total, counter, costs, cols)]
    gathered: list[AssignmentSolution] = []
    kth = np.inf
    while heap:
        node_cost, _, node_matrix, node_cols = heapq.heappop(heap)
        if len(gathered) >= k and node_cost > kth + 1e-9:
            break
        sol = _solution_from_columns(node_cols, costs, n_meas)
        gathered.append(sol)
        if len(gathered) == k:
            kth = sorted(s.cost for s in gathered)[-1]
        elif len(gathered) > k:
            kth = sorted(s.cost for s in gathered)[k - 1]
        # partition: child t bans row t's column and pins rows 0..t-1
        for t in range(n_rows):
            child = node_matrix.copy()
            child[t, node_cols[t]] = np.inf
            for s in range(t):
                pinned = node_cols[s]
                keep = child[s, pinned]
                child[s, :] = np.inf
                child[s, pinned] = keep
            child_cols, child_total = solve_assignment(child)
            if np.isfinite(child_total):
                counter += 1
                heapq.heappush(heap, (child_total, counter, child, child_cols))
    gathered.sort(key=lambda s: (s.cost, s.outcomes))
    return gathered[:k]


# -- Gibbs sampling -----------------------------------------------------------


@njit(cache=True)
def _gibbs_kernel(cand_cols, cand_weights, row_ptr, init_cols, n_meas, sweeps, seed):
    # systematic-scan Gibbs over rows; splitmix64 for reproducible draws
    n_rows = init_cols.size
    cur = init_cols.copy()
    taken = np.full(n_meas, -1, dtype=np.int64)
    out = np.empty((sweeps + 1, n_rows), dtype=np.int64)
    for r in range(n_rows):
        out[0, r] = cur[r]
        if cur[r] < n_meas:
            taken[cur[r]] = r
    state = np.uint64(seed)
    inc = np.uint64(0x9E3779B97F4A7C15)
    mul1 = np.uint64(0xBF58476D1CE4E5B9)
    mul2 = np.uint64(0x94D049BB133111EB)
    inv53 = 1.0 / 9007199254740992.0
    for s in range(sweeps):
        for r in range(n_rows):
            c = cur[r]
            if c < n_meas:
                taken[c] = -1
            total = 0.0
            for kk in range(row_ptr[r], row_ptr[r + 1]):
                j = cand_cols[kk]
                if j < n_meas and taken[j] != -1:
                    continue
                total += cand_weights[kk]
            state = state + inc
            z = state
            z = (z ^ (z >> np.uint64(30))) * mul1
            z = (z ^ (z >> np.uint64(27))) * mul2
            z = z ^ (z >> np.uint64(31))
            x = (z >> np.uint64(11)) * inv53 * total
            acc = 0.0
            chosen = np.int64(-1)
            for kk in range(row_ptr[r], row_ptr[r + 1]):
                j = cand_cols[kk]
                if j < n_meas and taken[j] != -1:
                    continue
                acc += cand_weights[kk]
                if x < acc:
                    chosen = j
                    break
            if chosen == -1:  # guard against float round-off at x ~ total
                for kk in range(row_ptr[r + 1] - 1, row_ptr[r] - 1, -1):
                    j = cand_cols[kk]
                    if j < n_meas and taken[j] != -1:
                        continue
                    chosen = j
                    break
            cur[r] = chosen
            if chosen < n_meas:
                taken[chosen] = r
        for r in range(n_rows):
            out[s + 1, r] = cur[r]
    return out


def gibbs_sample(problem: AssignmentProblem, iterations: int, seed: int) -> list[AssignmentSolution]:
    """Distinct assignments visited by a Gibbs chain started from all-miss.

    One iteration is a full sweep over the rows.  Samples are returned in
    first-visit order; the chain is reproducible bit-for-bit for a given
    (problem, iterations, seed).
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    costs = problem.costs
    n_rows, n_meas = costs.shape[0], problem.n_measurements
    if n_rows == 0:
        return [AssignmentSolution((), 0.0)]
    cand_cols: list[int] = []
    cand_weights: list[float] = []
    row_ptr = [0]
    for i in range(n_rows):
        finite = np.flatnonzero(np.isfinite(costs[i]))
        if finite.size == 0:
            return []
        low = costs[i, finite].min()
        cand_cols.extend(int(c) for c in finite)
        cand_weights.extend(np.exp(-(costs[i, finite] - low)))
        row_ptr.append(len(cand_cols))
    init = np.array([n_meas + i for i in range(n_rows)], dtype=np.int64)
    visits = _gibbs_kernel(
        np.asarray(cand_cols, dtype=np.int64),
        np.asarray(cand_weights, dtype=np.float64),
        np.asarray(row_ptr, dtype=np.int64),
        init,
        n_meas,
        int(iterations),
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
    )
    seen: set[tuple[int, ...]] = set()
    solutions = []
    for row in visits:
        key = tuple(int(c) for c in row)
        if key not in seen:
            seen.add(key)
            solutions.append(_solution_from_columns(row, costs, n_meas))
    return solutions


def gibbs_visit_counts(problem: AssignmentProblem, iterations: int, seed: int,
                       burn_in: int = 0) -> dict[tuple[int, ...], int]:
    """Visit frequencies of the Gibbs chain (diagnostics for mixing tests)."""
    costs = problem.costs
    n_rows, n_meas = costs.shape[0], problem.n_measurements
    cand_cols: list[int] = []
    cand_weights: list[float] = []
    row_ptr = [0]
    for i in range(n_rows):
        finite = np.flatnonzero(np.isfinite(costs[i]))
        low = costs[i, finite].min()
        cand_cols.extend(int(c) for c in finite)
        cand_weights.extend(np.exp(-(costs[i, finite] - low)))
        row_ptr.append(len(cand_cols))
    init = np.array([n_meas + i for i in range(n_rows)], dtype=np.int64)
    visits = _gibbs_kernel(
        np.asarray(cand_cols, dtype=np.int64),
        np.asarray(cand_weights, dtype=np.float64),
        np.asarray(row_ptr, dtype=np.int64),
        init, n_meas, int(iterations), np.uint64(seed),
    )
    counts: dict[tuple[int, ...], int] = {}
    for row in visits[burn_in:]:
        outcomes = tuple(_outcome_of_column(int(c), n_meas, n_rows) for c in row)
        counts[outcomes] = counts.get(outcomes, 0) + 1
    return counts


# -- exhaustive oracle ---------------------------------------------------------


def enumerate_all(problem: AssignmentProblem) -> list[AssignmentSolution]:
    """Every valid assignment with finite cost, sorted by (cost, outcomes).

    Guarded to small instances; intended as the validation oracle for the
    ranked-assignment and Gibbs paths.
    """
    n_rows, n_meas = problem.n_rows, problem.n_measurements
    if n_rows > 6 or n_meas > 6:
        raise ValueError(f"enumerate_all limited to 6 rows/measurements, got {n_rows}x{n_meas}")
    costs = problem.costs
    solutions: list[AssignmentSolution] = []
    outcomes = [0] * n_rows

    def descend(row: int, used: int, acc: float):
        if row == n_rows:
            solutions.append(AssignmentSolution(tuple(outcomes), acc))
            return
        for j in range(n_meas):
            c = costs[row, j]
            if np.isfinite(c) and not used & (1 << j):
                outcomes[row] = j
                descend(row + 1, used | (1 << j), acc + c)
        miss = costs[row, n_meas + row]
        if np.isfinite(miss):
            outcomes[row] = MISSED
            descend(row + 1, used, acc + miss)
        dead = costs[row, n_meas + n_rows + row]
        if np.isfinite(dead):
            outcomes[row] = DEAD
            descend(row + 1, used, acc + dead)

    descend(0, 0, 0.0)
    solutions.sort(key=lambda s: (s.cost, s.outcomes))
    return solutions
