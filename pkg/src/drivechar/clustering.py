"""Evolving Takagi-Sugeno (eTS) online clustering of parameter estimates.

Only the antecedent part of eTS is used: data potentials decide whether an
incoming estimate founds or replaces a cluster, and otherwise the most
similar existing center is returned to guide the next estimation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_Q = 7.0
DEFAULT_EPSILON = 0.45
INITIAL_VARIANCE = 1.0


@dataclass
class Cluster:
    center: np.ndarray
    potential: float = 1.0
    variance: float = INITIAL_VARIANCE
    member_count: int = 1

    def to_dict(self) -> dict:
        return {
            "center": [float(x) for x in self.center],
            "potential": float(self.potential),
            "variance": float(self.variance),
            "member_count": int(self.member_count),
        }


@dataclass
class ClusterStore:
    """Cluster centers plus the running sums needed by the potential.

    Attributes:
        clusters: Clusters in creation order.
        sum_z: Componentwise sum of every ingested sample.
        sum_sq: Sum of squared norms of every ingested sample.
        t: Number of ingested samples.
        last: Most recently ingested sample.
    """

    dim: int = 3
    clusters: list[Cluster] = field(default_factory=list)
    sum_z: np.ndarray = None
    sum_sq: float = 0.0
    t: int = 0
    last: np.ndarray = None

    def __post_init__(self):
        if self.sum_z is None:
            self.sum_z = np.zeros(self.dim)

    @property
    def centers(self) -> np.ndarray:
        return np.array([c.center for c in self.clusters]).reshape(-1, self.dim)

    def ingest(self, z) -> None:
        z = np.asarray(z, dtype=float)
        self.sum_z = self.sum_z + z
        self.sum_sq += float(z @ z)
        self.t += 1
        self.last = z.copy()

    def to_json(self) -> str:
        return json.dumps(
            {
                "t": self.t,
                "sum_z": [float(x) for x in self.sum_z],
                "sum_sq": self.sum_sq,
                "last": None if self.last is None else [float(x) for x in self.last],
                "clusters": [c.to_dict() for c in self.clusters],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ClusterStore":
        d = json.loads(text)
        sum_z = np.array(d["sum_z"], dtype=float)
        store = cls(dim=len(sum_z), sum_z=sum_z, sum_sq=float(d["sum_sq"]), t=int(d["t"]))
        store.last = None if d["last"] is None else np.array(d["last"], dtype=float)
        store.clusters = [
            Cluster(np.array(c["center"], dtype=float), c["potential"], c["variance"], c["member_count"])
            for c in d["clusters"]
        ]
        return store


def potential_of_sample(store: ClusterStore, z) -> float:
    """Potential of a new sample ``z`` against the samples already ingested.

    ``store`` must not yet contain ``z``; with ``k`` stored samples this is
    the potential at time ``t = k + 1``. A degenerate denominator yields 1.
    """
    z = np.asarray(z, dtype=float)
    n_prev = store.t  # equals t - 1
    if n_prev < 1:
        raise ValueError("potential needs at least one previous sample")
    a_t = float(z @ z)
    c_t = float(z @ store.sum_z)
    b_t = store.sum_sq
    denom = n_prev * (a_t + 1.0) - 2.0 * c_t + b_t
    if not math.isfinite(denom) or denom <= 0:
        return 1.0
    p = n_prev / denom
    return p if math.isfinite(p) else 1.0


def update_cluster_potential(cluster: Cluster, z_prev, t: int, q: float = DEFAULT_Q) -> float:
    """Recursive potential update of a center given the previous sample."""
    if t < 2:
        raise ValueError("recursive potential update needs t >= 2")
    d2 = float(np.sum((cluster.center - np.asarray(z_prev, dtype=float)) ** 2))
    p_prev = cluster.potential
    cluster.potential = (t - 1) * p_prev / (t - 2 + p_prev * (1.0 + q * d2))
    return cluster.potential


def similarity(z, clusters: list[Cluster]) -> np.ndarray:
    if not clusters:
        raise ValueError("similarity needs at least one cluster")
    z = np.asarray(z, dtype=float)
    centers = np.array([c.center for c in clusters])
    var = np.array([c.variance for c in clusters])
    log_g = -np.sum((centers - z) ** 2, axis=1) / var
    g = np.exp(log_g - log_g.max())
    return g / g.sum()


def _absorb(cluster: Cluster, z: np.ndarray) -> None:
    d2 = float(np.sum((z - cluster.center) ** 2))
    n = cluster.member_count
    cluster.variance = (cluster.variance * n + d2) / (n + 1)
    cluster.member_count = n + 1


def ets_step(theta_star, store: ClusterStore, epsilon: float = DEFAULT_EPSILON, q: float = DEFAULT_Q) -> tuple[np.ndarray, str]:
    """Run one pass of the online clustering on a new estimate.

    Mutates ``store`` and returns ``(selected_center, event)`` where event is
    one of ``"init"``, ``"replace"``, ``"insert"`` or ``"select"``.
    """
    z = np.asarray(theta_star, dtype=float).copy()
    if store.t == 0 or not store.clusters:
        store.ingest(z)
        store.clusters.append(Cluster(center=z.copy()))
        return z, "init"

    p_new = potential_of_sample(store, z)
    t = store.t + 1
    for c in store.clusters:
        update_cluster_potential(c, store.last, t, q)
    store.ingest(z)

    if p_new > max(c.potential for c in store.clusters):
        dists = np.linalg.norm(store.centers - z, axis=1)
        s = int(np.argmin(dists))
        if dists[s] < epsilon:
            cl = store.clusters[s]
            cl.center = z.copy()
            cl.potential = p_new
            _absorb(cl, z)
            return z, "replace"
        store.clusters.append(Cluster(center=z.copy(), potential=p_new))
        return z, "insert"

    lam = similarity(z, store.clusters)
    best = int(np.argmax(lam))
    nearest = int(np.argmin(np.linalg.norm(store.centers - z, axis=1)))
    _absorb(store.clusters[nearest], z)
    return store.clusters[best].center.copy(), "select"


def ets_cluster(theta_star, store: ClusterStore, epsilon: float = DEFAULT_EPSILON, q: float = DEFAULT_Q) -> tuple[ClusterStore, np.ndarray]:
    selected, _ = ets_step(theta_star, store, epsilon, q)
    return store, selected
