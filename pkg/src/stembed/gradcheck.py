"""Finite-difference checks of every analytic gradient in the package."""

import numpy as np

from . import embedding_loss as el
from . import geometry as geo
from .numerics import DEFAULT_EPS, finite_diff_grad, relative_error

EMBEDDING_TOL = 1e-4
GEOMETRY_TOL = 1e-3
EMBEDDING_TERMS = ("attraction", "repulsion", "regularisation", "instance")


def random_embedding_problem(rng, p=3, shape=(2, 4, 4), n_instances=2, cfg=el.LossConfig(),
                             eps=DEFAULT_EPS, max_tries=100):
    """Random field and partition with every hinge argument at least ``10 eps`` from its kink."""
    T, H, W = shape
    for _ in range(max_tries):
        labels = rng.integers(0, n_instances + 1, size=shape)
        if len(np.unique(labels[labels > 0])) < n_instances:
            continue
        y = rng.normal(0.0, 1.0, (p,) + shape)
        part = el.InstancePartition.from_labels(labels)
        if np.min(np.abs(el.hinge_margins(y, part, cfg))) > 10 * eps:
            return y, part
    raise RuntimeError("could not sample a test point away from the hinge kinks")


def _embedding_fns(part, cfg):
    def la(y):
        return el.attraction_loss(y, part, el.compute_means(y, part), cfg)

    def lr(y):
        return el.repulsion_loss(el.compute_means(y, part), cfg)

    def lreg(y):
        return el.regularisation_loss(el.compute_means(y, part))

    def total(y):
        return el.total_instance_loss(y, part, cfg)[0]

    return {
        "attraction": (la, lambda y: el.attraction_grad(y, part, cfg)),
        "repulsion": (lr, lambda y: el.repulsion_grad(y, part, cfg)),
        "regularisation": (lreg, lambda y: el.regularisation_grad(y, part)),
        "instance": (total, lambda y: el.total_instance_loss(y, part, cfg)[1]),
    }


def check_embedding_grads(seed, cfg=el.LossConfig(), flip_sign=False):
    """Relative error of each embedding-loss gradient at one random point."""
    rng = np.random.default_rng(seed)
    y, part = random_embedding_problem(rng, n_instances=2 + seed % 2, cfg=cfg)
    errors = {}
    for name, (f, g) in _embedding_fns(part, cfg).items():
        analytic = g(y)
        if flip_sign:
            analytic = -analytic
        errors[name] = relative_error(analytic, finite_diff_grad(f, y))
    return errors


def random_view_problem(rng, shape=(8, 10), n_sources=2, max_tries=100):
    """Random target, sources, depth and poses with samples off the integer grid."""
    H, W = shape
    cam = geo.CameraModel(fx=float(W), fy=float(W), cx=(W - 1) / 2, cy=(H - 1) / 2)
    for _ in range(max_tries):
        I_t = rng.random((H, W, 3))
        sources = [rng.random((H, W, 3)) for _ in range(n_sources)]
        depth = rng.uniform(2.0, 4.0, (H, W))
        poses = [geo.PoseSE3(rng.normal(0, 0.02, 3), rng.normal(0, 0.1, 3)) for _ in range(n_sources)]
        coords = np.stack([geo._warp_geometry(depth, p, cam)[0] for p in poses])
        frac = np.abs(coords - np.round(coords))
        if frac.min() > 1e-4:
            return I_t, sources, depth, poses, cam
    raise RuntimeError("could not sample a view-synthesis test point")


def check_geometry_grad(seed, cfg=geo.PhotometricConfig(), flip_sign=False):
    """Relative error of the min-reprojection depth gradient at one random point."""
    rng = np.random.default_rng(seed)
    I_t, sources, depth, poses, cam = random_view_problem(rng)
    use_mask = bool(seed % 2)
    _, analytic = geo.view_synthesis_loss(I_t, sources, depth, poses, cam, cfg, use_auto_mask=use_mask)
    if flip_sign:
        analytic = -analytic
    numeric = finite_diff_grad(
        lambda d: geo.view_synthesis_loss(I_t, sources, d, poses, cam, cfg,
                                          use_auto_mask=use_mask, want_grad=False), depth)
    return relative_error(analytic, numeric)


def run_checks(seed=0, trials=20, flip_sign=False):
    """Worst relative error per loss over ``trials`` consecutive seeds."""
    worst = {name: 0.0 for name in EMBEDDING_TERMS}
    worst["view_synthesis"] = 0.0
    for i in range(trials):
        for name, err in check_embedding_grads(seed + i, flip_sign=flip_sign).items():
            worst[name] = max(worst[name], err)
        worst["view_synthesis"] = max(worst["view_synthesis"],
                                      check_geometry_grad(seed + i, flip_sign=flip_sign))
    return worst


def passed(worst):
    return all(v < (GEOMETRY_TOL if k == "view_synthesis" else EMBEDDING_TOL)
               for k, v in worst.items())
