"""Spatio-temporal instance embedding loss.

The embedding field ``y`` has shape ``(p, T, H, W)``. An instance ``k`` owns
the video-pixels ``S_k``; its mean embedding ``mu_k`` is pulled together
(attraction, hinge at ``rho_a``), pushed away from other means (repulsion,
hinge at ``2 rho_r``) and kept near the origin (regularisation).

All three terms are computed over the whole video block, not per frame.
Gradients are analytic and flow through ``mu_k`` into every pixel of ``S_k``.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    rho_a: float = 0.5
    rho_r: float = 1.5
    lambda_a: float = 1.0
    lambda_r: float = 1.0
    lambda_reg: float = 0.001
    lambda_vs: float = 1.0

    def __post_init__(self):
        if self.rho_a <= 0 or self.rho_r <= 0:
            raise ValueError("radii must be positive")
        for name in ("lambda_a", "lambda_r", "lambda_reg", "lambda_vs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def separates(self):
        """True when ``rho_r > 2 rho_a``, the regime with a separation guarantee."""
        return self.rho_r > 2 * self.rho_a


@dataclass
class InstancePartition:
    """Instance id -> ``(n, 3)`` integer array of ``(t, h, w)`` indices."""

    sets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sets = {int(k): np.asarray(v, dtype=np.int64).reshape(-1, 3)
                     for k, v in sorted(self.sets.items())}

    @classmethod
    def from_labels(cls, labels):
        """Build from a ``(T, H, W)`` label volume; id 0 is background."""
        labels = np.asarray(labels)
        if labels.ndim == 2:
            labels = labels[None]
        sets = {}
        for k in np.unique(labels):
            if k == 0:
                continue
            sets[int(k)] = np.argwhere(labels == k)
        return cls(sets)

    @property
    def ids(self):
        return list(self.sets)

    @property
    def is_empty(self):
        return len(self.sets) == 0

    def __len__(self):
        return len(self.sets)

    def validate(self, shape):
        """Check disjointness, bounds and non-emptiness against ``(T, H, W)``."""
        seen = set()
        for k, idx in self.sets.items():
            if len(idx) == 0:
                raise ValueError(f"instance {k} has no pixels")
            if np.any(idx < 0) or np.any(idx >= np.asarray(shape)):
                raise IndexError(f"instance {k} has out-of-bounds indices")
            flat = set(np.ravel_multi_index(idx.T, shape).tolist())
            if seen & flat:
                raise ValueError(f"instance {k} overlaps another instance")
            seen |= flat

    def gather(self, y, k):
        """Embeddings of instance ``k`` as an ``(n, p)`` array."""
        t, h, w = self.sets[k].T
        return y[:, t, h, w].T


def compute_means(y, part):
    """Mean embedding of every instance, accumulated in float64."""
    y = np.asarray(y)
    means = {}
    for k, idx in part.sets.items():
        if len(idx) == 0:
            raise ValueError(f"instance {k} has an empty pixel set")
        if np.any(idx < 0) or np.any(idx >= np.asarray(y.shape[1:])):
            raise IndexError(f"instance {k} indexes outside the embedding field")
        means[k] = part.gather(y, k).astype(np.float64).mean(axis=0)
    return means


def _attraction(y, part, means, cfg, want_grad):
    K = len(part)
    if K == 0:
        return 0.0, (np.zeros(y.shape) if want_grad else None)
    total = 0.0
    grad = np.zeros(y.shape) if want_grad else None
    for k, idx in part.sets.items():
        emb = part.gather(y, k).astype(np.float64)
        n = len(emb)
        diff = emb - means[k]
        dist = np.linalg.norm(diff, axis=1)
        hinge = np.maximum(0.0, dist - cfg.rho_a)
        total += np.sum(hinge ** 2) / n
        if want_grad:
            scale = np.zeros_like(dist)
            active = hinge > 0
            scale[active] = 2.0 * hinge[active] / dist[active] / (n * K)
            direct = diff * scale[:, None]
            # d mu_k / d y_i = I / n, and the mean-path term is -sum(direct) / n
            g = direct - direct.sum(axis=0) / n
            t, h, w = idx.T
            grad[:, t, h, w] += g.T
    return total / K, grad


def _repulsion_means_grad(means, cfg):
    """Repulsion value and its gradient with respect to each mean."""
    keys = list(means)
    K = len(keys)
    grads = {k: np.zeros_like(means[k]) for k in keys}
    if K < 2:
        return 0.0, grads
    mu = np.stack([means[k] for k in keys])
    diff = mu[:, None, :] - mu[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    hinge = np.maximum(0.0, 2.0 * cfg.rho_r - dist)
    np.fill_diagonal(hinge, 0.0)
    norm = K * (K - 1)
    value = float(np.sum(hinge ** 2) / norm)
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(dist > 0, -2.0 * hinge / dist, 0.0) / norm
    # each ordered pair (a, b) pulls on a with coef*diff and on b with -coef*diff
    g = 2.0 * np.einsum("ab,abp->ap", coef, diff)
    for i, k in enumerate(keys):
        grads[k] = g[i]
    return value, grads


def _regularisation_means_grad(means):
    keys = list(means)
    K = len(keys)
    grads = {k: np.zeros_like(means[k]) for k in keys}
    if K == 0:
        return 0.0, grads
    value = 0.0
    for k in keys:
        nrm = np.linalg.norm(means[k])
        value += nrm
        if nrm > 0:
            grads[k] = means[k] / (nrm * K)
    return value / K, grads


def _spread_means_grad(y, part, mean_grads):
    """Push per-mean gradients back to the pixels, d mu_k / d y_i = I / n."""
    grad = np.zeros(y.shape)
    for k, idx in part.sets.items():
        t, h, w = idx.T
        grad[:, t, h, w] += (mean_grads[k] / len(idx))[:, None]
    return grad


def attraction_loss(y, part, means, cfg):
    """Pull each pixel embedding to within ``rho_a`` of its instance mean.

    Returns 0 when there are no instances (``part.is_empty``).
    """
    return _attraction(np.asarray(y), part, means, cfg, False)[0]


def repulsion_loss(means, cfg):
    """Push instance means at least ``2 rho_r`` apart.

    Sums over ordered pairs, matching the ``K (K - 1)`` normaliser.
    """
    return _repulsion_means_grad(means, cfg)[0]


def regularisation_loss(means):
    """Average Euclidean norm of the instance means."""
    return _regularisation_means_grad(means)[0]


def attraction_grad(y, part, cfg):
    y = np.asarray(y, dtype=np.float64)
    return _attraction(y, part, compute_means(y, part), cfg, True)[1]


def repulsion_grad(y, part, cfg):
    y = np.asarray(y, dtype=np.float64)
    _, g = _repulsion_means_grad(compute_means(y, part), cfg)
    return _spread_means_grad(y, part, g)


def regularisation_grad(y, part):
    y = np.asarray(y, dtype=np.float64)
    _, g = _regularisation_means_grad(compute_means(y, part))
    return _spread_means_grad(y, part, g)


def instance_loss_terms(y, part, cfg):
    """Individual loss terms plus an ``empty`` flag for frames without instances."""
    y = np.asarray(y, dtype=np.float64)
    means = compute_means(y, part)
    return {
        "attraction": attraction_loss(y, part, means, cfg),
        "repulsion": repulsion_loss(means, cfg),
        "regularisation": regularisation_loss(means),
        "empty": part.is_empty,
    }


def total_instance_loss(y, part, cfg):
    """Weighted instance loss and its gradient with respect to ``y``.

    Returns
    -------
    (float, numpy.ndarray)
        ``lambda_a L_a + lambda_r L_r + lambda_reg L_reg`` and a float64 array
        shaped like ``y``.
    """
    y = np.asarray(y, dtype=np.float64)
    means = compute_means(y, part)
    la, grad_a = _attraction(y, part, means, cfg, True)
    lr, gr = _repulsion_means_grad(means, cfg)
    lreg, greg = _regularisation_means_grad(means)
    mean_grads = {k: cfg.lambda_r * gr[k] + cfg.lambda_reg * greg[k] for k in means}
    value = cfg.lambda_a * la + cfg.lambda_r * lr + cfg.lambda_reg * lreg
    grad = cfg.lambda_a * grad_a + _spread_means_grad(y, part, mean_grads)
    return float(value), grad


def hinge_margins(y, part, cfg):
    """Signed hinge arguments of every attraction and repulsion term.

    Useful for keeping finite-difference test points away from the kinks.
    """
    y = np.asarray(y, dtype=np.float64)
    means = compute_means(y, part)
    margins = []
    for k in part.sets:
        emb = part.gather(y, k)
        margins.append(np.linalg.norm(emb - means[k], axis=1) - cfg.rho_a)
    keys = list(means)
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            d = np.linalg.norm(means[keys[i]] - means[keys[j]])
            margins.append(np.array([2 * cfg.rho_r - d]))
    return np.concatenate(margins) if margins else np.zeros(0)


def windowed_attraction_loss(y, labels, window, cfg):
    """Average attraction loss over all sliding windows of ``window`` frames.

    Each window pools the video-pixels of an instance across its frames, the
    way a training clip of that sequence length would.
    """
    y = np.asarray(y, dtype=np.float64)
    labels = np.asarray(labels)
    T = y.shape[1]
    if not 1 <= window <= T:
        raise ValueError(f"window must lie in [1, {T}]")
    values = []
    for start in range(T - window + 1):
        part = InstancePartition.from_labels(labels[start:start + window])
        clip = y[:, start:start + window]
        if part.is_empty:
            values.append(0.0)
            continue
        values.append(attraction_loss(clip, part, compute_means(clip, part), cfg))
    return float(np.mean(values))
