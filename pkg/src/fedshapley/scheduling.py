"""Budgeted epoch selection for expensive per-epoch Shapley computation.

Three objectives over a binary epoch-selection vector z with at most k ones:

* one-sided: utility coverage plus a participation bonus; separable, solved
  exactly by a top-k scan.
* two-sided: utility coverage minus the pairwise imbalance of client
  exposure; non-separable, solved exactly by branch and bound.
* two-sided lower bound: the triangle-inequality relaxation of the
  two-sided penalty; separable again, solved by a top-k scan over possibly
  negative scores.

With ``normalize_terms`` the coverage term is divided by the best
achievable coverage of any k epochs and the pairwise fairness terms by the
separable penalty at z = all-ones (shared between the two-sided objectives
so the lower-bound relation survives normalization); the one-sided
participation bonus is divided by its all-ones value.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, ContractError
from .models import Utility
from .shapley import incremental_utilities
from .simulation import GradientLog


class ObjectiveKind(Enum):
    ONE_SIDED = "one_sided"
    TWO_SIDED = "two_sided"
    TWO_SIDED_LB = "two_sided_lb"


class SolverKind(Enum):
    ONE_SIDED = "one_sided"
    TWO_SIDED_EXACT = "two_sided_exact"
    TWO_SIDED_LB = "two_sided_lb"
    EXHAUSTIVE = "exhaustive"


class Optimality(Enum):
    PROVED_OPTIMAL = "proved_optimal"
    HEURISTIC = "heuristic"


class SolverCapError(ConfigurationError):
    """Exact two-sided search refused; use the lower-bound solver instead."""


@dataclass
class ScheduleProblem:
    """Epoch weights and normalized participation rates of one recorded run."""

    T: int
    k: int
    gamma: float
    p: np.ndarray            # (T,); sums to 1
    x: np.ndarray            # (m, T); rows sum to 1, or all-zero for absentees
    normalize_terms: bool = True

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.p.shape != (self.T,):
            raise ContractError("p must have one weight per epoch")
        if self.x.ndim != 2 or self.x.shape[1] != self.T:
            raise ContractError("x must be clients x epochs")
        if not 0 <= self.k <= self.T:
            raise ConfigurationError(f"budget k={self.k} outside [0, T={self.T}]")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be non-negative")

    @property
    def num_clients(self) -> int:
        return self.x.shape[0]

    def pairwise_spread(self) -> np.ndarray:
        """Per-epoch sum over unordered client pairs of |x_i - x_i'|."""
        spread = np.zeros(self.T)
        m = self.num_clients
        for i in range(m):
            for j in range(i + 1, m):
                spread += np.abs(self.x[i] - self.x[j])
        return spread

    def coverage_normalizer(self) -> float:
        top = np.sort(self.p)[::-1][:self.k].sum() if self.k else 0.0
        return float(top) if top > 0 else 1.0

    def exposure_normalizer(self) -> float:
        total = float(self.x.sum())
        return total if total > 0 else 1.0

    def pairwise_normalizer(self) -> float:
        total = float(self.pairwise_spread().sum())
        return total if total > 0 else 1.0


@dataclass
class Schedule:
    z: tuple[int, ...]
    k: int
    gamma: float
    solver: SolverKind
    objective_value: float
    optimality: Optimality

    @property
    def selected_epochs(self) -> tuple[int, ...]:
        return tuple(t + 1 for t, zt in enumerate(self.z) if zt)


def build_problem(log: GradientLog, utility: Utility, k: int, gamma: float,
                  normalize_terms: bool = True) -> ScheduleProblem:
    """Problem data from a recorded run.

    Epoch weights are the normalized absolute utility gains; a run with no
    utility movement at all falls back to uniform weights. Participation
    rows are per-client indicator rows normalized by the client's total
    participation count (all-zero for clients that never participated).
    """
    T = log.num_epochs
    if T < 1:
        raise ConfigurationError("run has no epochs")
    inc = incremental_utilities(log, utility)
    magnitudes = np.abs(inc.deltas)
    total = magnitudes.sum()
    p = magnitudes / total if total > 0 else np.full(T, 1.0 / T)

    x = np.zeros((log.num_clients, T))
    for rec in log.epochs:
        for cid in rec.participants:
            x[cid, rec.epoch - 1] = 1.0
    counts = x.sum(axis=1, keepdims=True)
    np.divide(x, counts, out=x, where=counts > 0)
    return ScheduleProblem(T=T, k=k, gamma=gamma, p=p, x=x,
                           normalize_terms=normalize_terms)


def evaluate_objective(problem: ScheduleProblem, z, kind: ObjectiveKind) -> float:
    """Objective value of a selection vector; shared by solvers and tests."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (problem.T,):
        raise ContractError("z must have one entry per epoch")
    cov_n = problem.coverage_normalizer() if problem.normalize_terms else 1.0
    coverage = float(problem.p @ z) / cov_n
    if kind is ObjectiveKind.ONE_SIDED:
        expo_n = problem.exposure_normalizer() if problem.normalize_terms else 1.0
        bonus = float(problem.x.sum(axis=0) @ z) / expo_n
        return coverage + problem.gamma * bonus
    pair_n = problem.pairwise_normalizer() if problem.normalize_terms else 1.0
    if kind is ObjectiveKind.TWO_SIDED_LB:
        penalty = float(problem.pairwise_spread() @ z)
    else:
        exposure = problem.x @ z  # per-client exposure under the selection
        penalty = 0.0
        m = problem.num_clients
        for i in range(m):
            for j in range(i + 1, m):
                penalty += abs(float(exposure[i] - exposure[j]))
    return coverage - problem.gamma * penalty / pair_n


def _top_k_schedule(problem: ScheduleProblem, scores: np.ndarray,
                    keep_negative: bool, solver: SolverKind,
                    kind: ObjectiveKind) -> Schedule:
    order = sorted(range(problem.T), key=lambda t: (-scores[t], t))
    z = [0] * problem.T
    taken = 0
    for t in order:
        if taken == problem.k:
            break
        if not keep_negative and scores[t] <= 0:
            continue
        z[t] = 1
        taken += 1
    value = evaluate_objective(problem, z, kind)
    return Schedule(z=tuple(z), k=problem.k, gamma=problem.gamma, solver=solver,
                    objective_value=value, optimality=Optimality.PROVED_OPTIMAL)


def solve_one_sided(problem: ScheduleProblem) -> Schedule:
    """Exact optimum of the separable coverage-plus-exposure objective.

    All scores are non-negative, so the top-k epochs by score are optimal;
    ties go to the earlier epoch.
    """
    cov_n = problem.coverage_normalizer() if problem.normalize_terms else 1.0
    expo_n = problem.exposure_normalizer() if problem.normalize_terms else 1.0
    scores = problem.p / cov_n + problem.gamma * problem.x.sum(axis=0) / expo_n
    return _top_k_schedule(problem, scores, keep_negative=True,
                           solver=SolverKind.ONE_SIDED, kind=ObjectiveKind.ONE_SIDED)


def solve_two_sided_lb(problem: ScheduleProblem) -> Schedule:
    """Exact optimum of the separable lower-bound objective.

    Scores can go negative (heavy pairwise imbalance); those epochs are
    never selected since the budget is an inequality.
    """
    cov_n = problem.coverage_normalizer() if problem.normalize_terms else 1.0
    pair_n = problem.pairwise_normalizer() if problem.normalize_terms else 1.0
    scores = problem.p / cov_n - problem.gamma * problem.pairwise_spread() / pair_n
    return _top_k_schedule(problem, scores, keep_negative=False,
                           solver=SolverKind.TWO_SIDED_LB,
                           kind=ObjectiveKind.TWO_SIDED_LB)


def solve_two_sided_exact(problem: ScheduleProblem, cap: int = 25) -> Schedule:
    """Exact optimum of the two-sided objective by branch and bound.

    The pairwise penalty is not separable (adding an epoch can shrink it),
    so subtrees are bounded by current coverage plus the best remaining
    coverage, with zero as the admissible penalty bound. Complete search
    proves optimality; among ties the first solution in include-first
    depth-first order wins, which prefers selecting earlier epochs.
    """
    if problem.T > cap:
        raise SolverCapError(
            f"exact two-sided search capped at T={cap} (got T={problem.T}); "
            "use the lower-bound solver for longer runs")
    cov_n = problem.coverage_normalizer() if problem.normalize_terms else 1.0
    pair_n = problem.pairwise_normalizer() if problem.normalize_terms else 1.0
    p_norm = problem.p / cov_n
    spread = problem.x  # (m, T)
    gamma = problem.gamma
    T, k = problem.T, problem.k

    # best_gain[t][c]: largest possible sum of c of the weights p_norm[t:].
    suffix_sorted = [np.sort(p_norm[t:])[::-1] for t in range(T + 1)]
    best_gain = [np.concatenate([[0.0], np.cumsum(s)]) for s in suffix_sorted]

    m = problem.num_clients
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]

    def penalty_of(exposure: np.ndarray) -> float:
        return sum(abs(float(exposure[i] - exposure[j])) for i, j in pairs)

    best = {"value": -np.inf, "z": None}

    def dfs(t: int, used: int, gain: float, exposure: np.ndarray, z: list[int]):
        if t == T:
            value = gain - gamma * penalty_of(exposure) / pair_n
            if value > best["value"] + 1e-15:
                best["value"] = value
                best["z"] = tuple(z)
            return
        remaining = min(k - used, T - t)
        bound = gain + float(best_gain[t][remaining])
        if bound <= best["value"] + 1e-15 and best["z"] is not None:
            return
        if used < k:
            z.append(1)
            dfs(t + 1, used + 1, gain + p_norm[t], exposure + spread[:, t], z)
            z.pop()
        z.append(0)
        dfs(t + 1, used, gain, exposure, z)
        z.pop()

    dfs(0, 0, 0.0, np.zeros(m), [])
    z = best["z"]
    value = evaluate_objective(problem, z, ObjectiveKind.TWO_SIDED)
    return Schedule(z=z, k=k, gamma=gamma, solver=SolverKind.TWO_SIDED_EXACT,
                    objective_value=value, optimality=Optimality.PROVED_OPTIMAL)


def solve_exhaustive(problem: ScheduleProblem, kind: ObjectiveKind,
                     cap: int = 20) -> Schedule:
    """Reference oracle: enumerate every feasible selection.

    Intended for tests and small runs; refuses T beyond the cap.
    """
    if problem.T > cap:
        raise SolverCapError(f"exhaustive enumeration capped at T={cap}")
    best_value, best_z = -np.inf, None
    for size in range(problem.k + 1):
        for chosen in itertools.combinations(range(problem.T), size):
            z = [0] * problem.T
            for t in chosen:
                z[t] = 1
            value = evaluate_objective(problem, z, kind)
            zt = tuple(z)
            if value > best_value + 1e-15 or (
                    value > best_value - 1e-15 and (best_z is None or zt > best_z)):
                best_value, best_z = max(best_value, value), zt
    return Schedule(z=best_z, k=problem.k, gamma=problem.gamma,
                    solver=SolverKind.EXHAUSTIVE, objective_value=best_value,
                    optimality=Optimality.PROVED_OPTIMAL)
