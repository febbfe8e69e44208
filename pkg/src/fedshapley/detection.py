"""Dishonest-client analysis over contribution timelines.

Two tools drive the analysis: an exact Bayesian changepoint posterior over
a client's cumulative contribution series, used to locate the epochs where
a client's behavior shifted, and k-means clustering of all clients' series,
used to separate honest clients from poisoning ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy import logaddexp

from .errors import ConfigurationError, ContractError
from .rng import stream
from .shapley import ContributionTimeline


def cumulative_series(timeline: ContributionTimeline) -> dict[int, np.ndarray]:
    """Per-client running contribution totals, epoch 0 included.

    Detection needs the full history, so timelines with skipped epochs are
    rejected rather than silently zero-filled.
    """
    if not timeline.computed.all():
        missing = [t for t in range(1, timeline.num_epochs + 1) if not timeline.computed[t]]
        raise ContractError(f"timeline has uncomputed epochs {missing}; "
                            "detection needs a full schedule")
    cumulative = timeline.cumulative()
    return {cid: cumulative[cid].copy() for cid in range(timeline.num_clients)}


@dataclass(frozen=True)
class ChangePointPrior:
    """Geometric segment-length prior plus the observation noise scale.

    ``noise_scale`` defaults to 1.4826 times the median absolute first
    difference of the series. ``mean_scale`` (the prior scale of a segment's
    mean) defaults to the larger of 10 noise scales and the largest absolute
    first difference, so segment means anywhere in the observed range stay
    plausible under the prior.
    """

    hazard: float = 0.1
    noise_scale: float | None = None
    mean_scale: float | None = None

    def __post_init__(self):
        if not 0.0 < self.hazard < 1.0:
            raise ConfigurationError("hazard must be in (0, 1)")
        if self.noise_scale is not None and self.noise_scale <= 0:
            raise ConfigurationError("noise_scale must be positive")
        if self.mean_scale is not None and self.mean_scale <= 0:
            raise ConfigurationError("mean_scale must be positive")


@dataclass
class ChangePointPosterior:
    """Per-epoch probability that the series started a new regime there.

    ``mass[t]`` is the posterior probability that a segment boundary
    precedes the step into epoch t; entries are probabilities of distinct
    events, not a normalized distribution. Epochs 0 and 1 carry no boundary
    by construction.
    """

    mass: np.ndarray
    hazard: float
    noise_scale: float
    mean_scale: float
    log_evidence: float
    evidence_consistency: float  # backward/forward evidence ratio, ~1.0

    @property
    def num_epochs(self) -> int:
        return self.mass.shape[0] - 1


def detect_change_points(series: np.ndarray,
                         prior: ChangePointPrior = ChangePointPrior()
                         ) -> ChangePointPosterior:
    """Exact changepoint posterior for one cumulative contribution series.

    The first-differenced series is modeled as Gaussian noise of known
    scale around a piecewise-constant mean with a conjugate Gaussian prior
    per segment and geometric segment lengths. Forward/backward recursions
    over all segmentations (quadratic in length) yield, for every interior
    position, the exact posterior probability of a boundary there.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.shape[0] < 3:
        raise ContractError("series must be one-dimensional with length >= 3")
    y = np.diff(series)
    n = y.shape[0]

    sigma = prior.noise_scale
    if sigma is None:
        sigma = 1.4826 * float(np.median(np.abs(y)))
    if sigma <= 0.0:
        # Degenerate (near-constant) series: keep the math finite; the
        # posterior then just reproduces the prior.
        sigma = max(1e-12, 1e-8 * (1.0 + float(np.max(np.abs(y)))))
    rho = prior.mean_scale
    if rho is None:
        rho = max(10.0 * sigma, float(np.max(np.abs(y))))

    s1 = np.concatenate([[0.0], np.cumsum(y)])
    s2 = np.concatenate([[0.0], np.cumsum(y * y)])
    var = sigma * sigma
    rho2 = rho * rho
    log_2pi_var = np.log(2.0 * np.pi * var)

    def log_marginal(s: int, e: int) -> float:
        """Log evidence of y[s..e] under one segment (0-indexed, inclusive)."""
        length = e - s + 1
        sy = s1[e + 1] - s1[s]
        syy = s2[e + 1] - s2[s]
        return -0.5 * (length * log_2pi_var + np.log1p(length * rho2 / var)
                       + syy / var - rho2 * sy * sy / (var * (var + length * rho2)))

    log_h = np.log(prior.hazard)
    log_1h = np.log1p(-prior.hazard)

    def log_end(length: int) -> float:   # segment of exactly this length, then a boundary
        return (length - 1) * log_1h + log_h

    def log_tail(length: int) -> float:  # final segment of at least this length
        return (length - 1) * log_1h

    neg_inf = -np.inf
    # forward[e]: log P(y[0..e-1], boundary after position e)
    forward = np.full(n + 1, neg_inf)
    forward[0] = 0.0
    for e in range(1, n + 1):
        acc = neg_inf
        for s in range(1, e + 1):
            acc = logaddexp(acc, forward[s - 1] + log_marginal(s - 1, e - 1)
                            + log_end(e - s + 1))
        forward[e] = acc
    log_z = neg_inf
    for s in range(1, n + 1):
        log_z = logaddexp(log_z, forward[s - 1] + log_marginal(s - 1, n - 1)
                          + log_tail(n - s + 1))

    # backward[s]: log P(y[s-1..n-1] | a segment starts at position s)
    backward = np.full(n + 2, neg_inf)
    backward[n + 1] = 0.0
    for s in range(n, 0, -1):
        acc = log_marginal(s - 1, n - 1) + log_tail(n - s + 1)
        for e in range(s, n):
            acc = logaddexp(acc, log_marginal(s - 1, e - 1) + log_end(e - s + 1)
                            + backward[e + 1])
        backward[s] = acc

    consistency = float(np.exp(backward[1] - log_z))

    # A boundary after difference position e means epoch e+1 opened a new
    # regime; epochs 0 and 1 cannot open one.
    mass = np.zeros(n + 1)
    for e in range(1, n):
        mass[e + 1] = float(np.exp(forward[e] + backward[e + 1] - log_z))
    mass = np.clip(mass, 0.0, 1.0)

    return ChangePointPosterior(mass=mass, hazard=prior.hazard, noise_scale=sigma,
                                mean_scale=rho, log_evidence=float(log_z),
                                evidence_consistency=consistency)


def window_mass(posterior: ChangePointPosterior, window: tuple[int, int]) -> float:
    """Fraction of the total change mass that falls inside an epoch window."""
    start, end = window
    T = posterior.num_epochs
    if not (1 <= start <= end <= T):
        raise ContractError(f"window {window} outside epochs [1, {T}]")
    total = float(posterior.mass[1:].sum())
    if total <= 0.0:
        return 0.0
    return float(posterior.mass[start:end + 1].sum()) / total


@dataclass
class ClusterAssignment:
    labels: dict[int, int]
    requested_clusters: int
    num_clusters: int
    reduced: bool  # True when fewer distinct series than requested clusters

    def clusters(self) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {}
        for cid, label in self.labels.items():
            out.setdefault(label, set()).add(cid)
        return out


def cluster_clients(series: dict[int, np.ndarray], k_clusters: int,
                    seed: int) -> ClusterAssignment:
    """Euclidean k-means over the clients' cumulative series.

    Seeding is k-means++ from the given seed; Lloyd iterations run to an
    assignment fixed point (at most 300 rounds). When there are fewer
    distinct series than requested clusters, the effective cluster count is
    reduced and flagged.
    """
    if k_clusters < 2:
        raise ConfigurationError("need at least 2 clusters")
    if k_clusters > len(series):
        raise ConfigurationError("more clusters than clients")
    ids = sorted(series)
    X = np.stack([np.asarray(series[cid], dtype=np.float64) for cid in ids])
    distinct = np.unique(X, axis=0).shape[0]
    k = min(k_clusters, distinct)
    reduced = k < k_clusters

    rng = stream(seed, "cluster")
    m = X.shape[0]
    centers = [X[int(rng.integers(m))].copy()]
    while len(centers) < k:
        d2 = np.min([((X - c) ** 2).sum(axis=1) for c in centers], axis=0)
        probs = d2 / d2.sum()
        centers.append(X[int(rng.choice(m, p=probs))].copy())
    centers = np.stack(centers)

    assignment = np.full(m, -1)
    for _ in range(300):
        dists = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assignment = np.argmin(dists, axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(k):
            mine = X[assignment == j]
            if len(mine):
                centers[j] = mine.mean(axis=0)
            else:
                # Re-seed an emptied cluster with the point farthest from
                # its current center (deterministic; ties to the lowest id).
                far = int(np.argmax(dists[np.arange(m), assignment]))
                centers[j] = X[far].copy()

    return ClusterAssignment(labels={cid: int(assignment[i]) for i, cid in enumerate(ids)},
                             requested_clusters=k_clusters, num_clusters=k,
                             reduced=reduced)


def jaccard_honest_separation(assignment: ClusterAssignment, honest: set[int]) -> float:
    """Jaccard index between the honest set and every client sharing a
    cluster with at least one honest client."""
    if not honest:
        raise ContractError("honest set must be non-empty")
    honest_labels = {assignment.labels[c] for c in honest}
    mixed = {c for c, label in assignment.labels.items() if label in honest_labels}
    return len(honest & mixed) / len(honest | mixed)
