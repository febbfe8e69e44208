"""Reusable experiment fixtures: standard scenarios, the greedy-aggregation
comparison, and the detection pipeline glue shared by the CLI and tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset, make_synthetic, train_validation_split
from .detection import (ChangePointPrior, cluster_clients, cumulative_series,
                        detect_change_points, jaccard_honest_separation)
from .models import (LocalTrainConfig, ModelKind, ModelSpec, Utility,
                     evaluate_utility, init_model)
from .shapley import ContributionTimeline, Exact, assess, greedy_aggregate
from .simulation import ClientConfig, Scenario, run_simulation, simulate_epoch


def equal_split(data: Dataset, m: int) -> list[Dataset]:
    """Deterministic contiguous split into m near-equal parts."""
    edges = np.linspace(0, data.num_rows, m + 1).astype(int)
    return [data.subset(range(edges[i], edges[i + 1]), name=f"{data.name}/client{i}")
            for i in range(m)]


def synthetic_scenario(m: int, T: int, fraction: float, seed: int, *,
                       rows: int = 320, separation: float = 4.0,
                       learning_rate: float = 0.4, local_epochs: int = 3,
                       batch_size: int = 16,
                       dishonest: dict[int, tuple[tuple[int, int], float]] | None = None
                       ) -> Scenario:
    """Two-class blob scenario with an equal per-client split.

    ``dishonest`` maps client ids to (poison window, flip probability).
    """
    data = make_synthetic(2, rows, 2, separation, seed=seed)
    train, validation = train_validation_split(data, 0.25, seed=seed)
    parts = equal_split(train, m)
    dishonest = dishonest or {}
    clients = []
    for i in range(m):
        if i in dishonest:
            window, flip = dishonest[i]
            clients.append(ClientConfig(client_id=i, data=parts[i], dishonest=True,
                                        poison_window=window, flip_probability=flip))
        else:
            clients.append(ClientConfig(client_id=i, data=parts[i]))
    spec = ModelSpec(kind=ModelKind.LOGISTIC, input_dim=2, num_classes=2)
    cfg = LocalTrainConfig(local_epochs=local_epochs, batch_size=batch_size,
                           learning_rate=learning_rate)
    return Scenario(clients=clients, model_spec=spec, num_epochs=T, fraction=fraction,
                    train=cfg, validation=validation, seed=seed * 977 + 13)


def detection_scenario(seed: int, *, m: int = 4, T: int = 20,
                       window: tuple[int, int] = (16, 20), flip: float = 0.5,
                       dishonest_ids: tuple[int, ...] = (0,)) -> Scenario:
    """Poisoning scenario used for the intent-analysis experiments.

    Clients hold i.i.d. equal shares so honest behavior is symmetric; the
    dishonest clients flip labels inside the window. Full participation
    keeps every client's timeline dense.
    """
    dishonest = {cid: (window, flip) for cid in dishonest_ids}
    return synthetic_scenario(m, T, fraction=1.0, seed=seed, dishonest=dishonest)


@dataclass
class DetectionOutcome:
    timeline: ContributionTimeline
    posteriors: dict[int, np.ndarray]
    masses: dict[int, float]          # per-client in-window change mass
    dishonest: tuple[int, ...]
    assignment: object
    jaccard: float

    @property
    def mean_dishonest_mass(self) -> float:
        return float(np.mean([self.masses[cid] for cid in self.dishonest]))


def run_detection_pipeline(timeline: ContributionTimeline, window: tuple[int, int],
                           dishonest: tuple[int, ...], *, hazard: float = 0.1,
                           k_clusters: int = 2, seed: int = 0,
                           noise_scale: float | None = None,
                           mean_scale: float | None = None) -> DetectionOutcome:
    """Changepoint + clustering analysis of a fully computed timeline."""
    series = cumulative_series(timeline)
    prior = ChangePointPrior(hazard=hazard, noise_scale=noise_scale,
                             mean_scale=mean_scale)
    posteriors = {cid: detect_change_points(series[cid], prior).mass
                  for cid in series}
    masses = {}
    for cid, mass in posteriors.items():
        total = float(mass[1:].sum())
        inside = float(mass[window[0]:window[1] + 1].sum())
        masses[cid] = inside / total if total > 0 else 0.0
    assignment = cluster_clients(series, k_clusters, seed=seed)
    honest = set(series) - set(dishonest)
    jaccard = jaccard_honest_separation(assignment, honest) if honest else float("nan")
    return DetectionOutcome(timeline=timeline, posteriors=posteriors, masses=masses,
                            dishonest=tuple(sorted(dishonest)), assignment=assignment,
                            jaccard=jaccard)


def detection_experiment(seed: int, *, m: int = 4, T: int = 20,
                         window: tuple[int, int] = (16, 20), flip: float = 0.5,
                         dishonest_ids: tuple[int, ...] = (0,),
                         hazard: float = 0.1) -> DetectionOutcome:
    """Simulate, assess exactly, and analyze one poisoning run."""
    scenario = detection_scenario(seed, m=m, T=T, window=window, flip=flip,
                                  dishonest_ids=dishonest_ids)
    log = run_simulation(scenario)
    timeline = assess(log, Utility.NEG_LOSS, Exact()).timeline
    return run_detection_pipeline(timeline, window, dishonest_ids, hazard=hazard,
                                  seed=seed)


@dataclass
class AggregationComparison:
    """Validation-utility curves of plain weighted aggregation vs. the
    greedy best-coalition aggregation, from a shared initial model."""

    plain_utility: list[float]
    greedy_utility: list[float]
    greedy_subsets: list[tuple[int, ...]]

    def final_loss_gap(self) -> float:
        """plain final loss minus greedy final loss (positive: greedy wins)."""
        return self.greedy_utility[-1] - self.plain_utility[-1]


def aggregation_comparison(scenario: Scenario,
                           utility: Utility = Utility.NEG_LOSS) -> AggregationComparison:
    """Train twice from one initial model, differing only in aggregation.

    Both arms share per-epoch client selection and local-training seed
    streams; the greedy arm replaces the weighted aggregate with the
    best-coalition model of that epoch.
    """
    spec = scenario.model_spec
    validation = scenario.validation
    initial = init_model(spec, scenario.seed)

    def utility_of(params) -> float:
        return evaluate_utility(params, spec, validation, utility)

    plain, greedy = initial, initial
    plain_curve = [utility_of(initial)]
    greedy_curve = [utility_of(initial)]
    subsets: list[tuple[int, ...]] = []
    for epoch in range(1, scenario.num_epochs + 1):
        rec_plain = simulate_epoch(scenario, epoch, plain)
        plain = rec_plain.global_after
        plain_curve.append(utility_of(plain))

        rec_greedy = simulate_epoch(scenario, epoch, greedy)
        subset, greedy = greedy_aggregate(rec_greedy, spec, validation, utility)
        subsets.append(subset)
        greedy_curve.append(utility_of(greedy))
    return AggregationComparison(plain_utility=plain_curve, greedy_utility=greedy_curve,
                                 greedy_subsets=subsets)
