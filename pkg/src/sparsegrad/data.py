"""Synthetic datasets: classification blobs and diffusion-on-graph traffic.

All randomness flows through ``numpy.random.default_rng(seed)`` (PCG64), so
regenerating with the same seed gives bit-identical arrays on any platform
with IEEE-754 doubles.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "make_classify",
    "make_traffic",
    "bfs_geodesics",
    "TrafficData",
    "window_series",
    "chronological_split",
]


def make_classify(n_samples: int, n_features: int = 16, seed: int = 0,
                  informative: int | None = None):
    """Two-class blobs where only some features carry signal.

    The informative coordinates get class-dependent means drawn on a
    sphere; the rest are pure noise, so pruning them should not hurt.
    Returns (X, y) with X float64 (n, f) and y int labels in {0, 1}.
    """
    if n_samples < 4 or n_features < 1:
        raise ValueError("need n_samples >= 4 and n_features >= 1")
    rng = np.random.default_rng(seed)
    k = informative if informative is not None else max(1, (n_features * 3) // 8)
    k = min(k, n_features)
    direction = rng.normal(size=k)
    direction /= np.sqrt(np.sum(direction ** 2))
    y = rng.integers(0, 2, size=n_samples)
    x = rng.normal(size=(n_samples, n_features))
    shift = np.zeros(n_features)
    shift[:k] = 1.25 * direction
    x += np.where(y[:, None] == 1, shift[None, :], -shift[None, :])
    return x, y.astype(np.int64)


def bfs_geodesics(adjacency: np.ndarray) -> np.ndarray:
    """Hop distances between all node pairs; unreachable pairs get n + 1.

    The diagonal is 0 regardless of self-loops.
    """
    adj = np.asarray(adjacency) != 0
    n = adj.shape[0]
    dist = np.full((n, n), n + 1, dtype=np.int64)
    for source in range(n):
        dist[source, source] = 0
        frontier = [source]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in np.flatnonzero(adj[u]):
                    if dist[source, v] > d:
                        dist[source, v] = d
                        nxt.append(v)
            frontier = nxt
    return dist


def _geometric_graph(n: int, rng: np.random.Generator) -> np.ndarray:
    """Connected random geometric graph with self-loops, symmetric."""
    pos = rng.random((n, 2))
    d2 = np.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=-1)
    # grow the radius until the graph is connected
    radius2 = 0.3 ** 2
    while True:
        adj = (d2 <= radius2).astype(np.float64)
        reach = bfs_geodesics(adj)
        if np.all(reach <= n):
            return adj
        radius2 *= 1.3


class TrafficData:
    """Node-value series plus the generating graph and its geodesics."""

    def __init__(self, series: np.ndarray, adjacency: np.ndarray,
                 geodesic: np.ndarray, seed: int):
        self.series = series        # (T, N), strictly positive
        self.adjacency = adjacency  # (N, N) binary, symmetric, self-loops
        self.geodesic = geodesic    # (N, N) hop distances
        self.seed = int(seed)


def make_traffic(n_nodes: int = 30, t_steps: int = 2000, seed: int = 0,
                 rho: float = 0.45, feedback: float = 0.35,
                 noise: float = 2.0) -> TrafficData:
    """Diffusion on a random geometric graph, shifted strictly positive.

    Node deviations follow d[t+1] = rho * A_hat d[t] + feedback * d[t] +
    noise * eps with A_hat the row-normalized adjacency; values are the
    deviations around per-node base levels near 50.  Stability requires
    rho + feedback < 1.  Every emitted value is strictly positive (floored
    far from zero), keeping relative-error losses well defined.
    """
    if n_nodes < 2 or t_steps < 20:
        raise ValueError("need n_nodes >= 2 and t_steps >= 20")
    if rho + feedback >= 1.0:
        raise ValueError("rho + feedback must stay below 1 for stability")
    rng = np.random.default_rng(seed)
    adj = _geometric_graph(n_nodes, rng)
    a_hat = adj / adj.sum(axis=1, keepdims=True)
    base = rng.uniform(40.0, 60.0, size=n_nodes)
    series = np.empty((t_steps, n_nodes))
    d = rng.normal(size=n_nodes) * noise
    for t in range(t_steps):
        d = rho * (a_hat @ d) + feedback * d + noise * rng.normal(size=n_nodes)
        series[t] = np.maximum(base + d, 1.0)
    geo = bfs_geodesics(adj)
    return TrafficData(series, adj, geo, seed)


def window_series(series: np.ndarray, history: int = 8):
    """Sliding windows: features (n, N, history), next-step targets (n, N)."""
    t_steps, _ = series.shape
    n = t_steps - history
    if n < 1:
        raise ValueError("series shorter than the history window")
    feats = np.stack([series[t:t + history].T for t in range(n)])
    targets = series[history:]
    return feats, targets


def chronological_split(n: int, train: float = 0.7, val: float = 0.15):
    """Index ranges for a 70/15/15 (by default) time-ordered split."""
    n_train = int(n * train)
    n_val = int(n * val)
    return (np.arange(0, n_train),
            np.arange(n_train, n_train + n_val),
            np.arange(n_train + n_val, n))
