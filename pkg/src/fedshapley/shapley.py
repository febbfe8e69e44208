"""Per-epoch Shapley values over incremental utility.

Within one epoch the players are the participating clients, and a
coalition's payoff is the incremental utility of the sub-model rebuilt from
that coalition's gradients relative to the epoch's starting model.
Non-participants provably contribute nothing to any coalition, so their
value is set to exactly zero without evaluating a single sub-model; the
per-epoch values of all epochs plus the initial allocation add up to the
utility of the final model.

A caveat on zero gradients: because coalition weights renormalize over the
coalition's data sizes, adding a zero-gradient participant still shifts its
partners' weights, so such a client is only provably worthless when it
participates alone. Its value in larger games is usually near zero but not
identically zero.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .datasets import Dataset
from .errors import ConfigurationError, ContractError
from .models import ModelSpec, Utility, evaluate_utility
from .rng import stream
from .simulation import EpochRecord, GradientLog, weighted_gradient_sum

CONSERVATION_TOL = 1e-9


def lambda_weight(client_id: int, members, data_sizes: dict[int, int]) -> float:
    """Relative data fraction of a client within a coalition; 0 if outside."""
    members = set(members)
    if client_id not in members:
        return 0.0
    total = sum(int(data_sizes[i]) for i in members)
    return data_sizes[client_id] / total


def reconstruct_submodel(record: EpochRecord, subset) -> np.ndarray:
    """Sub-model for a coalition: gradients of subset members that actually
    participated, re-weighted over that intersection.

    An empty intersection reproduces the epoch's starting model.
    """
    members = set(subset) & set(record.participants)
    return weighted_gradient_sum(record.global_before, members, record.gradients,
                                 record.data_sizes)


class EpochEvaluator:
    """Caching payoff oracle for one epoch's coalition game.

    Coalitions are bitmasks over the sorted participant list. Every distinct
    sub-model evaluation is counted once (the empty coalition's model is the
    epoch's starting model and counts too); cache hits are free. The counter
    backs the complexity ledger: exact Shapley must evaluate exactly
    2^(number of participants) coalitions.
    """

    def __init__(self, record: EpochRecord, model_spec: ModelSpec,
                 validation: Dataset, utility: Utility):
        self.record = record
        self.model_spec = model_spec
        self.validation = validation
        self.utility = utility
        self.players = tuple(record.participants)
        self._cache: dict[int, float] = {}
        self._base: float | None = None
        self.evaluations = 0

    @property
    def num_players(self) -> int:
        return len(self.players)

    def mask_of(self, subset) -> int:
        index = {cid: b for b, cid in enumerate(self.players)}
        mask = 0
        for cid in subset:
            if cid in index:
                mask |= 1 << index[cid]
        return mask

    def members_of(self, mask: int) -> tuple[int, ...]:
        return tuple(cid for b, cid in enumerate(self.players) if mask >> b & 1)

    def base_utility(self) -> float:
        """Utility of the epoch's starting model (the empty coalition)."""
        if self._base is None:
            self._base = evaluate_utility(self.record.global_before, self.model_spec,
                                          self.validation, self.utility)
            self.evaluations += 1
        return self._base

    def payoff(self, mask: int) -> float:
        """Incremental utility of the coalition's sub-model; cached by mask."""
        base = self.base_utility()
        if mask == 0:
            return 0.0
        if mask not in self._cache:
            model = weighted_gradient_sum(self.record.global_before,
                                          self.members_of(mask),
                                          self.record.gradients,
                                          self.record.data_sizes)
            value = evaluate_utility(model, self.model_spec, self.validation,
                                     self.utility)
            self.evaluations += 1
            self._cache[mask] = value - base
        return self._cache[mask]


# ---------------------------------------------------------------------------
# Methods


@dataclass(frozen=True)
class Exact:
    pass


@dataclass(frozen=True)
class MonteCarloPermutation:
    samples: int
    seed: int
    rescale: bool = True

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigurationError("samples must be >= 1")


@dataclass(frozen=True)
class PluginApproximation:
    """A registered drop-in estimator behind the per-epoch contract.

    The slot named "complementary" is reserved for a complementary
    contribution estimator but ships unregistered; using an unregistered
    name is a configuration error.
    """

    samples: int
    seed: int
    name: str = "complementary"

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigurationError("samples must be >= 1")


ShapleyMethod = Exact | MonteCarloPermutation | PluginApproximation

PluginFn = Callable[[EpochEvaluator, int, int], dict[int, float]]
_APPROXIMATIONS: dict[str, PluginFn] = {}


def register_approximation(name: str, fn: PluginFn) -> None:
    _APPROXIMATIONS[name] = fn


def registered_approximations() -> tuple[str, ...]:
    return tuple(sorted(_APPROXIMATIONS))


# ---------------------------------------------------------------------------
# Per-epoch computations


def _shapley_from_subsets(evaluator: EpochEvaluator) -> dict[int, float]:
    n = evaluator.num_players
    weights = [math.factorial(s) * math.factorial(n - 1 - s) / math.factorial(n)
               for s in range(n)]
    payoffs = {mask: evaluator.payoff(mask) for mask in range(1 << n)}
    phi = {}
    for b, cid in enumerate(evaluator.players):
        bit = 1 << b
        total = 0.0
        for mask in range(1 << n):
            if mask & bit:
                continue
            total += weights[mask.bit_count()] * (payoffs[mask | bit] - payoffs[mask])
        phi[cid] = total
    return phi


def exact_epoch_shapley(record: EpochRecord, model_spec: ModelSpec,
                        validation: Dataset, utility: Utility,
                        evaluator: EpochEvaluator | None = None) -> dict[int, float]:
    """Exact Shapley values of one epoch for every client.

    Participants get the subset-enumeration formula over the participant
    set; non-participants get exactly 0.0 with no model evaluations spent.
    Pass an existing evaluator to share its coalition cache.
    """
    if evaluator is None:
        evaluator = EpochEvaluator(record, model_spec, validation, utility)
    phi = {cid: 0.0 for cid in sorted(record.data_sizes)}
    phi.update(_shapley_from_subsets(evaluator))
    return phi


def _monte_carlo_shapley(evaluator: EpochEvaluator,
                         method: MonteCarloPermutation) -> dict[int, float]:
    n = evaluator.num_players
    rng = stream(method.seed, "mc-perm", epoch=evaluator.record.epoch)
    sums = np.zeros(n)
    for _ in range(method.samples):
        order = rng.permutation(n)
        mask, prev = 0, 0.0
        for b in order:
            mask |= 1 << int(b)
            cur = evaluator.payoff(mask)
            sums[int(b)] += cur - prev
            prev = cur
    estimates = sums / method.samples
    if method.rescale:
        target = evaluator.payoff((1 << n) - 1)
        raw = float(estimates.sum())
        if abs(raw) > 1e-12 * max(1.0, abs(target)):
            estimates *= target / raw
        else:
            estimates += (target - raw) / n
    return {cid: float(estimates[b]) for b, cid in enumerate(evaluator.players)}


def approx_epoch_shapley(record: EpochRecord, model_spec: ModelSpec,
                         validation: Dataset, utility: Utility,
                         method: MonteCarloPermutation | PluginApproximation,
                         evaluator: EpochEvaluator | None = None) -> dict[int, float]:
    """Approximate per-epoch Shapley values behind the exact contract.

    Monte Carlo averages marginal payoffs over random permutations of the
    participants, then rescales the estimates by a common factor so they sum
    to the grand-coalition payoff (restoring per-epoch decomposability; the
    raw permutation average already telescopes there up to sampling noise).
    Plug-in estimators are looked up in the registry by name.
    """
    if evaluator is None:
        evaluator = EpochEvaluator(record, model_spec, validation, utility)
    phi = {cid: 0.0 for cid in sorted(record.data_sizes)}
    if isinstance(method, MonteCarloPermutation):
        phi.update(_monte_carlo_shapley(evaluator, method))
        return phi
    if isinstance(method, PluginApproximation):
        fn = _APPROXIMATIONS.get(method.name)
        if fn is None:
            raise ConfigurationError(
                f"no approximation plug-in registered under {method.name!r}; "
                f"registered: {list(registered_approximations()) or 'none'}")
        result = fn(evaluator, method.samples, method.seed)
        phi.update({cid: float(v) for cid, v in result.items()})
        return phi
    raise ConfigurationError(f"unsupported approximation method {method!r}")


def initial_allocation(v0: float, m: int) -> dict[int, float]:
    """Uniform split of the initial model's utility across all clients."""
    if m < 1:
        raise ContractError("need at least one client")
    return {cid: v0 / m for cid in range(m)}


def greedy_aggregate(record: EpochRecord, model_spec: ModelSpec, validation: Dataset,
                     utility: Utility, evaluator: EpochEvaluator | None = None
                     ) -> tuple[tuple[int, ...], np.ndarray]:
    """Best coalition of the epoch's participants by incremental utility.

    Enumerates all coalitions (sharing the evaluator cache with an exact
    Shapley pass, so the marginal cost after one is zero) and returns the
    maximizer with its reconstructed model. Ties prefer smaller coalitions,
    then lexicographically smaller client tuples; the empty coalition keeps
    the starting model.
    """
    if not record.participants:
        raise ContractError("epoch has no participants")
    if evaluator is None:
        evaluator = EpochEvaluator(record, model_spec, validation, utility)
    n = evaluator.num_players
    best_mask, best_value = 0, evaluator.payoff(0)
    best_key = (0, ())
    for mask in range(1, 1 << n):
        value = evaluator.payoff(mask)
        key = (mask.bit_count(), evaluator.members_of(mask))
        if value > best_value or (value == best_value and key < best_key):
            best_mask, best_value, best_key = mask, value, key
    members = evaluator.members_of(best_mask)
    return members, reconstruct_submodel(record, members)


# ---------------------------------------------------------------------------
# Run-level assessment


@dataclass(frozen=True)
class IncrementalUtility:
    """Per-epoch utility gains of a recorded run, plus the initial utility."""

    base: float
    deltas: np.ndarray  # deltas[t-1] is epoch t

    @property
    def total(self) -> float:
        return self.base + float(self.deltas.sum())


def incremental_utilities(log: GradientLog, utility: Utility) -> IncrementalUtility:
    prev = evaluate_utility(log.initial_model, log.model_spec, log.validation, utility)
    base = prev
    deltas = np.zeros(log.num_epochs)
    for i, rec in enumerate(log.epochs):
        cur = evaluate_utility(rec.global_after, log.model_spec, log.validation, utility)
        deltas[i] = cur - prev
        prev = cur
    return IncrementalUtility(base=base, deltas=deltas)


@dataclass
class ContributionTimeline:
    """Per-client, per-epoch values; column 0 is the initial allocation.

    Epochs that were skipped by the schedule hold NaN and are flagged in
    ``computed``; their utility gains pile up in ``residual`` instead of
    being silently attributed.
    """

    values: np.ndarray        # (m, T+1)
    computed: np.ndarray      # bool, (T+1,); index 0 always True
    utility: Utility
    epoch_deltas: np.ndarray  # (T+1,); [0] unused (0.0)
    base_utility: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.computed = np.asarray(self.computed, dtype=bool)
        self.epoch_deltas = np.asarray(self.epoch_deltas, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != self.computed.shape[0]:
            raise ContractError("values and computed mask disagree on epoch count")
        if not self.computed[0]:
            raise ContractError("the initial allocation is always computed")

    @property
    def num_clients(self) -> int:
        return self.values.shape[0]

    @property
    def num_epochs(self) -> int:
        return self.values.shape[1] - 1

    @property
    def computed_epochs(self) -> tuple[int, ...]:
        return tuple(t for t in range(1, self.num_epochs + 1) if self.computed[t])

    @property
    def residual(self) -> float:
        """Utility gain of the epochs whose values were never computed."""
        skipped = ~self.computed
        return float(self.epoch_deltas[skipped].sum())

    @property
    def final_utility(self) -> float:
        return self.base_utility + float(self.epoch_deltas[1:].sum())

    def totals(self) -> np.ndarray:
        """Total contribution per client over the computed epochs."""
        return self.values[:, self.computed].sum(axis=1)

    def cumulative(self) -> np.ndarray:
        """Running totals per client; skipped epochs contribute nothing."""
        filled = np.where(self.computed[None, :], np.nan_to_num(self.values), 0.0)
        return filled.cumsum(axis=1)


@dataclass
class AssessmentResult:
    timeline: ContributionTimeline
    eval_counts: dict[int, int]   # epoch -> sub-model evaluations spent
    elapsed_seconds: float
    completed: bool               # False when a cutoff stopped the pass early


def assess(log: GradientLog, utility: Utility, method: ShapleyMethod,
           schedule=None, cutoff_seconds: float | None = None) -> AssessmentResult:
    """Value every scheduled epoch of a recorded run.

    ``schedule`` is an optional 0/1 vector over epochs (or an object with a
    ``z`` attribute); without one, every epoch is computed. A cutoff stops
    the per-epoch work early and leaves the remaining epochs marked as not
    computed, with their utility gains reported as the residual.
    """
    started = time.monotonic()
    z = getattr(schedule, "z", schedule)
    if z is not None:
        z = np.asarray(z, dtype=int)
        if z.shape != (log.num_epochs,):
            raise ContractError(
                f"schedule has length {z.shape}, run has {log.num_epochs} epochs")

    m = log.num_clients
    T = log.num_epochs
    inc = incremental_utilities(log, utility)
    values = np.full((m, T + 1), np.nan)
    computed = np.zeros(T + 1, dtype=bool)
    computed[0] = True
    values[:, 0] = [initial_allocation(inc.base, m)[cid] for cid in range(m)]

    eval_counts: dict[int, int] = {}
    completed = True
    for rec in log.epochs:
        t = rec.epoch
        if z is not None and not z[t - 1]:
            continue
        if cutoff_seconds is not None and time.monotonic() - started > cutoff_seconds:
            completed = False
            break
        evaluator = EpochEvaluator(rec, log.model_spec, log.validation, utility)
        if isinstance(method, Exact):
            phi = exact_epoch_shapley(rec, log.model_spec, log.validation, utility,
                                      evaluator=evaluator)
        else:
            phi = approx_epoch_shapley(rec, log.model_spec, log.validation, utility,
                                       method, evaluator=evaluator)
        for cid in range(m):
            values[cid, t] = phi.get(cid, 0.0)
        computed[t] = True
        eval_counts[t] = evaluator.evaluations

    deltas = np.concatenate([[0.0], inc.deltas])
    timeline = ContributionTimeline(values=values, computed=computed, utility=utility,
                                    epoch_deltas=deltas, base_utility=inc.base)
    return AssessmentResult(timeline=timeline, eval_counts=eval_counts,
                            elapsed_seconds=time.monotonic() - started,
                            completed=completed)


def mse_vs_exact(estimate: ContributionTimeline, exact: ContributionTimeline) -> float:
    """Mean squared error of total contributions against an exact timeline."""
    if estimate.values.shape != exact.values.shape:
        raise ContractError("timelines cover different clients or epochs")
    diff = estimate.totals() - exact.totals()
    return float(np.mean(diff ** 2))
