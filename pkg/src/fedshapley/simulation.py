"""Federated training simulation and the gradient log it produces.

One simulated run follows the standard server loop: select a client subset,
train each participant locally from the current global model, aggregate
the returned displacement vectors with data-size weights, and record
everything needed to replay or re-value the run afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .errors import ConfigurationError, ContractError
from .models import LocalTrainConfig, ModelSpec, init_model, local_train
from .rng import derive_key, stream


@dataclass
class ClientConfig:
    """One simulated client; dishonest clients flip labels inside a window."""

    client_id: int
    data: Dataset
    dishonest: bool = False
    poison_window: tuple[int, int] | None = None
    flip_probability: float = 0.0

    def __post_init__(self):
        if self.dishonest != (self.poison_window is not None):
            raise ConfigurationError(
                f"client {self.client_id}: poison_window must be set iff dishonest")
        if self.poison_window is not None:
            lo, hi = self.poison_window
            if lo > hi or lo < 1:
                raise ConfigurationError(
                    f"client {self.client_id}: bad poison window {self.poison_window}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigurationError("flip_probability must be in [0, 1]")


@dataclass
class EpochRecord:
    """Everything the server saw in one epoch.

    ``global_after`` is the FedAvg reconstruction from ``global_before`` and
    the participant gradients, bit for bit.
    """

    epoch: int
    participants: tuple[int, ...]
    gradients: dict[int, np.ndarray]
    data_sizes: dict[int, int]
    global_before: np.ndarray
    global_after: np.ndarray

    def __post_init__(self):
        self.participants = tuple(sorted(self.participants))
        if set(self.gradients) != set(self.participants):
            raise ContractError("gradients must be keyed exactly by participants")
        missing = [i for i in self.participants if i not in self.data_sizes]
        if missing:
            raise ContractError(f"data_sizes missing participants {missing}")


@dataclass
class GradientLog:
    """A full recorded run: initial model plus one record per epoch."""

    model_spec: ModelSpec
    initial_model: np.ndarray
    epochs: list[EpochRecord]
    validation: Dataset
    num_clients: int

    @property
    def num_epochs(self) -> int:
        return len(self.epochs)

    def check_chain(self) -> None:
        """Verify the epoch chain: each record starts where the last ended."""
        prev = self.initial_model
        for rec in self.epochs:
            if not np.array_equal(rec.global_before, prev):
                raise ContractError(f"epoch {rec.epoch}: global_before breaks the chain")
            prev = rec.global_after


def weighted_gradient_sum(base: np.ndarray, members, gradients: dict[int, np.ndarray],
                          data_sizes: dict[int, int]) -> np.ndarray:
    """base + sum over members of (|D_i| / sum |D|) * gradient_i.

    Shared by FedAvg aggregation and sub-model reconstruction so both
    produce bit-identical arithmetic; members are accumulated in sorted
    client order.
    """
    members = sorted(members)
    out = np.array(base, dtype=np.float64, copy=True)
    if not members:
        return out
    total = sum(int(data_sizes[i]) for i in members)
    if total <= 0:
        raise ContractError("aggregation members must have positive data sizes")
    for i in members:
        out += (data_sizes[i] / total) * gradients[i]
    return out


def fedavg_aggregate(global_before: np.ndarray, gradients: dict[int, np.ndarray],
                     data_sizes: dict[int, int]) -> np.ndarray:
    """Data-size weighted aggregation of participant gradients."""
    if not gradients:
        raise ContractError("cannot aggregate an empty participant set")
    for i in gradients:
        if int(data_sizes.get(i, 0)) <= 0:
            raise ContractError(f"participant {i} has no positive data size")
    return weighted_gradient_sum(global_before, gradients.keys(), gradients, data_sizes)


def select_clients(m: int, fraction: float, epoch: int, seed: int) -> tuple[int, ...]:
    """Uniform subset of round(fraction*m) clients, at least one.

    Rounding is half-up. Deterministic in (epoch, seed).
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError("fraction must be in (0, 1]")
    size = max(1, int(np.floor(fraction * m + 0.5)))
    size = min(size, m)
    rng = stream(seed, "select", epoch=epoch)
    return tuple(sorted(rng.choice(m, size=size, replace=False).tolist()))


def poison_labels(data: Dataset, flip_probability: float, seed: int) -> Dataset:
    """Copy of ``data`` with each label flipped to a random other class.

    Each row flips independently with ``flip_probability``; the replacement
    class is uniform over the other classes present in the label range.
    The input dataset is left untouched.
    """
    rng = stream(seed, "poison")
    labels = data.labels.copy()
    classes = data.num_classes
    if classes > 1:
        flip = rng.random(data.num_rows) < flip_probability
        # Uniform over the C-1 other classes via a shifted draw.
        offsets = rng.integers(1, classes, size=data.num_rows)
        flipped = (labels + offsets) % classes
        labels[flip] = flipped[flip]
    return Dataset(data.features.copy(), labels, name=f"{data.name}/poisoned")


def partition_noniid(source: Dataset, m: int, beta: float, seed: int) -> list[Dataset]:
    """Split rows across m clients with per-class Dirichlet(beta) proportions.

    Lower beta means more skew. Every client ends up with at least one row:
    the proportion draw is retried a bounded number of times, then rows are
    moved round-robin from the largest clients. Partitions are disjoint and
    exhaustive.
    """
    if m < 1:
        raise ConfigurationError("need at least one client")
    if beta <= 0:
        raise ConfigurationError("beta must be positive")
    if m > source.num_rows:
        raise ConfigurationError(f"cannot split {source.num_rows} rows across {m} clients")
    rng = stream(seed, "partition")

    def draw() -> list[list[int]]:
        buckets: list[list[int]] = [[] for _ in range(m)]
        for cls in range(source.num_classes):
            rows = np.flatnonzero(source.labels == cls)
            if rows.size == 0:
                continue
            rows = rows[rng.permutation(rows.size)]
            props = rng.dirichlet(np.full(m, beta))
            edges = np.floor(np.cumsum(props) * rows.size + 0.5).astype(int)[:-1]
            for i, chunk in enumerate(np.split(rows, edges)):
                buckets[i].extend(chunk.tolist())
        return buckets

    buckets = draw()
    for _ in range(20):
        if all(buckets[i] for i in range(m)):
            break
        buckets = draw()
    else:
        for i in range(m):
            while not buckets[i]:
                donor = max(range(m), key=lambda j: (len(buckets[j]), -j))
                buckets[i].append(buckets[donor].pop())

    return [source.subset(sorted(buckets[i]), name=f"{source.name}/client{i}")
            for i in range(m)]


@dataclass
class Scenario:
    """Inputs of one simulated run."""

    clients: list[ClientConfig]
    model_spec: ModelSpec
    num_epochs: int
    fraction: float
    train: LocalTrainConfig
    validation: Dataset
    seed: int

    def __post_init__(self):
        if self.num_epochs < 1:
            raise ConfigurationError("need at least one epoch")
        ids = [c.client_id for c in self.clients]
        if ids != list(range(len(ids))):
            raise ConfigurationError("client ids must be 0..m-1 in order")
        for c in self.clients:
            if c.poison_window is not None and c.poison_window[1] > self.num_epochs:
                raise ConfigurationError(
                    f"client {c.client_id}: poison window exceeds the run length")


def training_data_for(client: ClientConfig, epoch: int, master_seed: int) -> Dataset:
    """The data a client trains on in one epoch (poisoned inside its window)."""
    if (client.dishonest and client.poison_window is not None
            and client.poison_window[0] <= epoch <= client.poison_window[1]):
        poison_seed = derive_key(master_seed, "poison", epoch, client.client_id)
        return poison_labels(client.data, client.flip_probability, poison_seed)
    return client.data


def simulate_epoch(scenario: Scenario, epoch: int, global_before: np.ndarray) -> EpochRecord:
    """Select, locally train, and FedAvg-aggregate one epoch."""
    m = len(scenario.clients)
    participants = select_clients(m, scenario.fraction, epoch, scenario.seed)
    gradients: dict[int, np.ndarray] = {}
    for cid in participants:
        client = scenario.clients[cid]
        train_seed = derive_key(scenario.seed, "train", epoch, cid)
        data = training_data_for(client, epoch, scenario.seed)
        gradients[cid] = local_train(global_before, scenario.model_spec, data,
                                     scenario.train, train_seed)
    data_sizes = {c.client_id: c.data.num_rows for c in scenario.clients}
    global_after = fedavg_aggregate(global_before, gradients, data_sizes)
    return EpochRecord(epoch=epoch, participants=participants, gradients=gradients,
                       data_sizes=data_sizes, global_before=global_before,
                       global_after=global_after)


def run_simulation(scenario: Scenario) -> GradientLog:
    """Run the full training loop and record every epoch."""
    initial = init_model(scenario.model_spec, scenario.seed)
    records: list[EpochRecord] = []
    current = initial
    for epoch in range(1, scenario.num_epochs + 1):
        record = simulate_epoch(scenario, epoch, current)
        records.append(record)
        current = record.global_after
    return GradientLog(model_spec=scenario.model_spec, initial_model=initial,
                       epochs=records, validation=scenario.validation,
                       num_clients=len(scenario.clients))
