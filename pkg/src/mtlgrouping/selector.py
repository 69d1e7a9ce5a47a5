"""Budgeted selection of task groups maximizing per-task best gains.

A selection's objective credits each task with the best gain among the
chosen groups that contain it; a task in no chosen group falls back to its
single-task model and contributes zero. Both an exhaustive search and a
branch-and-bound search are provided; they agree exactly, including on the
tie rule (lexicographically smallest sorted list of chosen groups), because
every objective is summed in fixed task order rather than accumulated
incrementally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from math import comb
from pathlib import Path

from .affinity import AffinityMatrix
from .ensemble import EnsemblePredictor, predict_from_matrix
from .seeding import stream

MAX_EXHAUSTIVE_COMBINATIONS = 10_000_000

_UNIVERSE = 31

SELECTION_SCHEMA = "selection/1"


@dataclass(frozen=True)
class SelectionProblem:
    n_tasks: int
    candidates: tuple  # ((group, {task: gain}), ...)
    budget: int
    min_groups: int = 0  # set to 1 to force at least one chosen group

    def __post_init__(self):
        if self.n_tasks < 1:
            raise ValueError("n_tasks must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not 0 <= self.min_groups <= self.budget:
            raise ValueError("min_groups must lie in [0, budget]")
        seen = set()
        for group, gains in self.candidates:
            group = tuple(group)
            if group in seen:
                raise ValueError(f"duplicate candidate group {group}")
            seen.add(group)
            if tuple(sorted(set(group))) != group:
                raise ValueError(f"candidate group {group} must be sorted and distinct")
            if any(not 0 <= t < self.n_tasks for t in group):
                raise ValueError(f"candidate group {group} has out-of-range tasks")
            if sorted(gains.keys()) != list(group):
                raise ValueError(f"gains for {group} must be keyed exactly by its members")


@dataclass(frozen=True)
class SelectionResult:
    chosen: tuple[tuple[int, ...], ...]  # sorted lexicographically
    objective: float
    assignment: dict[int, tuple[int, ...] | None]  # None marks single-task fallback


def selection_objective(problem: SelectionProblem, chosen):
    """(objective, assignment) for an explicit collection of chosen candidates."""
    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    for group, gains in chosen:
        for t in group:
            gain = gains[t]
            if t not in best or gain > best[t][0] or (gain == best[t][0] and group < best[t][1]):
                best[t] = (gain, group)
    objective = sum(best[t][0] for t in sorted(best))
    assignment: dict[int, tuple[int, ...] | None] = {
        t: (best[t][1] if t in best else None) for t in range(problem.n_tasks)
    }
    return float(objective), assignment


def _result(problem: SelectionProblem, chosen_candidates) -> SelectionResult:
    objective, assignment = selection_objective(problem, chosen_candidates)
    return SelectionResult(
        chosen=tuple(sorted(g for g, _ in chosen_candidates)),
        objective=objective,
        assignment=assignment,
    )


class _Search:
    """Shared cover-array bookkeeping for both search strategies."""

    def __init__(self, problem: SelectionProblem):
        self.problem = problem
        self.cands = list(problem.candidates)
        self.m = len(self.cands)
        if self.m == 0:
            raise ValueError("no candidate groups to select from")
        if problem.min_groups > self.m:
            raise ValueError("min_groups exceeds the number of candidates")
        self.top = min(problem.budget, self.m)
        self.cover: list = [None] * problem.n_tasks
        self.chosen: list[int] = []
        self.best = None  # (objective, tie key, indices)

    def objective(self) -> float:
        return float(sum(v for v in self.cover if v is not None))

    def push(self, j: int) -> list:
        group, gains = self.cands[j]
        undo = []
        for t in group:
            undo.append((t, self.cover[t]))
            if self.cover[t] is None or gains[t] > self.cover[t]:
                self.cover[t] = gains[t]
        self.chosen.append(j)
        return undo

    def pop(self, undo: list) -> None:
        self.chosen.pop()
        for t, old in reversed(undo):
            self.cover[t] = old

    def consider(self) -> None:
        if len(self.chosen) < self.problem.min_groups:
            return
        obj = self.objective()
        if self.best is not None and obj < self.best[0]:
            return
        key = tuple(sorted(self.cands[i][0] for i in self.chosen))
        if self.best is None or obj > self.best[0] or key < self.best[1]:
            self.best = (obj, key, tuple(self.chosen))

    def result(self) -> SelectionResult:
        if self.best is None:
            raise ValueError("no feasible selection")
        return _result(self.problem, [self.cands[i] for i in self.best[2]])


def select_exhaustive(problem: SelectionProblem) -> SelectionResult:
    """Globally optimal selection by enumerating every subset within budget."""
    search = _Search(problem)
    total = sum(comb(search.m, k) for k in range(0, search.top + 1))
    if total > MAX_EXHAUSTIVE_COMBINATIONS:
        raise ValueError(f"{total} subsets exceed the exhaustive-search guard")

    def dfs(i: int):
        search.consider()
        if i == search.m or len(search.chosen) == search.top:
            return
        for j in range(i, search.m):
            undo = search.push(j)
            dfs(j + 1)
            search.pop(undo)

    dfs(0)
    return search.result()


def select_branch_and_bound(problem: SelectionProblem,
                            pruned_log: list | None = None) -> SelectionResult:
    """Same optimum and tie rule as the exhaustive search, with pruning.

    The bound at a node replaces each task's current contribution with the
    best gain still available among undecided candidates whenever that would
    improve it; budget exhaustion collapses the bound to the node objective.
    Nodes are pruned only when the bound is strictly below the incumbent, so
    equal-objective solutions still surface for the lexicographic tie rule.
    If pruned_log is a list, (depth, chosen_indices, bound) triples for every
    pruned node are appended to it.
    """
    search = _Search(problem)
    m, n = search.m, problem.n_tasks
    cands = search.cands

    # best_remaining[i][t]: best gain for t among candidates i.. (None if absent)
    best_remaining: list = [[None] * n for _ in range(m + 1)]
    for i in range(m - 1, -1, -1):
        group, gains = cands[i]
        row = list(best_remaining[i + 1])
        for t in group:
            if row[t] is None or gains[t] > row[t]:
                row[t] = gains[t]
        best_remaining[i] = row

    def node_bound(i: int) -> float:
        if len(search.chosen) == search.top:
            return search.objective()
        remaining = best_remaining[i]
        ub = list(search.cover)
        for t in range(n):
            current = ub[t] if ub[t] is not None else 0.0
            candidate = remaining[t]
            if candidate is not None and candidate > current:
                ub[t] = candidate
        return float(sum(v for v in ub if v is not None))

    def dfs(i: int):
        if len(search.chosen) + (m - i) < problem.min_groups:
            return  # infeasible completion
        if search.best is not None:
            bound = node_bound(i)
            if bound < search.best[0]:
                if pruned_log is not None:
                    pruned_log.append((i, tuple(search.chosen), bound))
                return
        if i == m:
            search.consider()
            return
        if len(search.chosen) < search.top:
            undo = search.push(i)
            dfs(i + 1)
            search.pop(undo)
        dfs(i + 1)

    dfs(0)
    return search.result()


def enumerate_candidate_groups(n_tasks: int, min_size: int = 2, max_size: int | None = None,
                               fraction: float = 1.0, seed: int = 0):
    """All groups with sizes in range, optionally a seeded uniform sample."""
    max_size = n_tasks if max_size is None else max_size
    if not 2 <= min_size <= max_size <= n_tasks:
        raise ValueError(f"size range ({min_size}, {max_size}) invalid for {n_tasks} tasks")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    universe = [g for k in range(min_size, max_size + 1)
                for g in combinations(range(n_tasks), k)]
    if fraction >= 1.0:
        return universe
    count = max(1, round(fraction * len(universe)))
    idx = stream(seed, _UNIVERSE).choice(len(universe), size=count, replace=False)
    return [universe[i] for i in sorted(idx)]


def build_problem(predictor: EnsemblePredictor, matrix: AffinityMatrix,
                  candidate_groups, budget: int, min_groups: int = 0) -> SelectionProblem:
    """Fill candidate gains from the predictor over an affinity matrix."""
    candidates = []
    for group in candidate_groups:
        group = tuple(sorted(set(int(t) for t in group)))
        candidates.append((group, predict_from_matrix(predictor, group, matrix)))
    return SelectionProblem(
        n_tasks=predictor.n_tasks,
        candidates=tuple(candidates),
        budget=budget,
        min_groups=min_groups,
    )


def result_to_dict(result: SelectionResult) -> dict:
    return {
        "schema": SELECTION_SCHEMA,
        "chosen": [list(g) for g in result.chosen],
        "objective": float(result.objective),
        "assignment": {
            str(t): (None if g is None else list(g))
            for t, g in sorted(result.assignment.items())
        },
    }


def result_from_dict(data: dict) -> SelectionResult:
    return SelectionResult(
        chosen=tuple(tuple(int(t) for t in g) for g in data["chosen"]),
        objective=float(data["objective"]),
        assignment={
            int(t): (None if g is None else tuple(int(x) for x in g))
            for t, g in data["assignment"].items()
        },
    )


def save_result(result: SelectionResult, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(result_to_dict(result), fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_selection_table(result: SelectionResult) -> str:
    """Human-readable task-to-group table."""
    lines = [
        f"chosen groups ({len(result.chosen)}): "
        + (", ".join("{" + ",".join(map(str, g)) + "}" for g in result.chosen) or "none"),
        f"objective: {result.objective:.6g}",
        "task  assigned",
        "----  --------",
    ]
    for t in sorted(result.assignment):
        g = result.assignment[t]
        label = "single-task" if g is None else "{" + ",".join(map(str, g)) + "}"
        lines.append(f"{t:>4}  {label}")
    return "\n".join(lines) + "\n"
