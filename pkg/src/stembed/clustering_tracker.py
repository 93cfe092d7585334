"""Instance discovery and temporal association from pixel embeddings.

Per frame: drop background pixels, pool the remaining embeddings with the
embeddings retained by each live track, cluster the pool with flat-kernel
mean shift, and match each cluster to a track by mean-embedding distance
(below ``rho_r`` is a match).
"""

from dataclasses import dataclass, field

import numpy as np

from .embedding_loss import LossConfig

MAX_RESTARTS = 64
SHIFT_TOL = 1e-4
MAX_ITER = 100


@dataclass
class ClusterResult:
    """``labels[i]`` is a cluster index, or -1 for points never reached."""

    labels: np.ndarray
    means: list

    @property
    def n_clusters(self):
        return len(self.means)


def mean_shift_cluster(embeddings, rho_a, seed=0, max_restarts=MAX_RESTARTS,
                       tol=SHIFT_TOL, max_iter=MAX_ITER):
    """Cluster ``(N, p)`` embeddings with a flat kernel of radius ``rho_a``.

    Repeatedly seeds at a random unassigned point, shifts it to the mean of
    the unassigned points within ``rho_a`` until the shift drops below
    ``tol``, then claims every unassigned point within ``rho_a`` of the mode.
    Stops when all points are assigned or after ``max_restarts`` seeds.
    """
    if rho_a <= 0:
        raise ValueError("rho_a must be positive")
    X = np.asarray(embeddings, dtype=np.float64)
    if X.size == 0:
        return ClusterResult(np.zeros(0, dtype=np.int64), [])
    if X.ndim == 1:
        X = X[:, None]
    rng = np.random.default_rng(seed)
    labels = np.full(len(X), -1, dtype=np.int64)
    means = []
    r2 = rho_a * rho_a
    for _ in range(max_restarts):
        free = np.flatnonzero(labels < 0)
        if len(free) == 0:
            break
        pool = X[free]
        mode = pool[rng.integers(len(free))]
        for _ in range(max_iter):
            near = np.sum((pool - mode) ** 2, axis=1) <= r2
            shifted = pool[near].mean(axis=0)
            moved = np.linalg.norm(shifted - mode)
            mode = shifted
            if moved < tol:
                break
        claim = np.sum((pool - mode) ** 2, axis=1) <= r2
        if not claim.any():
            continue
        labels[free[claim]] = len(means)
        means.append(pool[claim].mean(axis=0))
    return ClusterResult(labels, means)


@dataclass
class Track:
    members: list = field(default_factory=list)   # [(frame_idx, (n, p) array)]
    last_seen: int = -1

    @property
    def embeddings(self):
        return np.concatenate([m for _, m in self.members]) if self.members else np.zeros((0, 0))

    @property
    def mean(self):
        return self.embeddings.mean(axis=0)


@dataclass
class TrackStore:
    life_span: int = 5
    seed: int = 0
    tracks: dict = field(default_factory=dict)
    next_id: int = 1
    last_frame: int = None

    def __post_init__(self):
        if self.life_span < 1:
            raise ValueError("life_span must be a positive number of frames")

    def means(self):
        return {k: tr.mean for k, tr in self.tracks.items() if tr.members}

    def age(self, frame_idx):
        """Drop members observed ``life_span`` or more frames before ``frame_idx``."""
        for k in list(self.tracks):
            tr = self.tracks[k]
            tr.members = [(f, m) for f, m in tr.members if frame_idx - f < self.life_span]
            if not tr.members:
                del self.tracks[k]

    def add(self, track_id, frame_idx, embeddings):
        tr = self.tracks.setdefault(track_id, Track())
        tr.members.append((frame_idx, np.asarray(embeddings, dtype=np.float64)))
        tr.last_seen = frame_idx

    def fresh_id(self):
        k = self.next_id
        self.next_id += 1
        return k


def match_clusters(cluster_means, track_means, rho_r):
    """Greedy nearest-first matching of clusters to tracks.

    Pairs closer than ``rho_r`` are accepted in order of increasing distance,
    ties going to the lower cluster index (then lower track id). Each track
    and each cluster is used at most once. Returns ``{cluster: track_id or
    None}``.
    """
    result = {c: None for c in range(len(cluster_means))}
    candidates = []
    for c, mu in enumerate(cluster_means):
        for k, tm in track_means.items():
            d = float(np.linalg.norm(np.asarray(mu) - tm))
            if d < rho_r:
                candidates.append((d, c, k))
    candidates.sort()
    used = set()
    for d, c, k in candidates:
        if result[c] is None and k not in used:
            result[c] = k
            used.add(k)
    return result


def _merge_fragments(groups, rho_r):
    """Union clusters whose current-frame means lie within ``rho_r``.

    Fragments of one instance land well inside ``rho_r`` of each other,
    while distinct instances sit ``2 rho_r`` apart.
    """
    means = [g.mean(axis=0) for g in groups]
    parent = list(range(len(groups)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            if np.linalg.norm(means[i] - means[j]) < rho_r:
                parent[find(j)] = find(i)
    return [find(i) for i in range(len(groups))]


def segment_frame(embedding_frame, background_mask, store, frame_idx, cfg=LossConfig()):
    """Segment one frame and associate its instances with the store's tracks.

    Parameters
    ----------
    embedding_frame : array_like, (p, H, W)
    background_mask : array_like of bool, (H, W)
        True marks background pixels, which stay unlabelled.
    store : TrackStore
        Updated in place.
    frame_idx : int
        Must increase strictly from call to call on the same store.

    Returns
    -------
    numpy.ndarray
        ``(H, W)`` int64 label map; 0 is background, other values are track ids.
    """
    emb = np.asarray(embedding_frame, dtype=np.float64)
    bg = np.asarray(background_mask, dtype=bool)
    if emb.ndim != 3 or emb.shape[1:] != bg.shape:
        raise ValueError("embedding frame and background mask sizes differ")
    if store.last_frame is not None and frame_idx <= store.last_frame:
        raise ValueError(f"frame index {frame_idx} does not follow {store.last_frame}")
    store.last_frame = frame_idx
    store.age(frame_idx)

    H, W = bg.shape
    labels = np.zeros((H, W), dtype=np.int64)
    fg = np.flatnonzero(~bg.reshape(-1))
    current = emb.reshape(emb.shape[0], -1)[:, fg].T
    history = [tr.embeddings for tr in store.tracks.values()]
    pool = np.concatenate([current] + history) if history else current
    result = mean_shift_cluster(pool, cfg.rho_a, seed=(store.seed, frame_idx))
    cur_labels = result.labels[:len(current)]

    # clusters that own current-frame pixels, reduced to those pixels
    owners = sorted(set(cur_labels[cur_labels >= 0].tolist()))
    groups = [current[cur_labels == c] for c in owners]
    roots = _merge_fragments(groups, cfg.rho_r)
    instances = {}
    for c, root in zip(owners, roots):
        instances.setdefault(root, []).append(c)
    inst_keys = sorted(instances)
    pixel_sets = [np.isin(cur_labels, instances[r]) for r in inst_keys]
    inst_means = [current[m].mean(axis=0) for m in pixel_sets]

    matches = match_clusters(inst_means, store.means(), cfg.rho_r)
    flat = labels.reshape(-1)
    for i, members in enumerate(pixel_sets):
        track_id = matches[i] if matches[i] is not None else store.fresh_id()
        flat[fg[members]] = track_id
        store.add(track_id, frame_idx, current[members])
    return labels


def segment_sequence(embeddings, background_masks, cfg=LossConfig(), life_span=5, seed=0):
    """Run :func:`segment_frame` over a ``(p, T, H, W)`` field; returns ``(T, H, W)`` labels."""
    emb = np.asarray(embeddings)
    store = TrackStore(life_span=life_span, seed=seed)
    return np.stack([segment_frame(emb[:, t], background_masks[t], store, t, cfg)
                     for t in range(emb.shape[1])])
