"""Dense tensor helpers and the central finite-difference gradient oracle.

Tensors are plain :class:`numpy.ndarray` objects. Oracle paths run in
float64; production paths may use float32.
"""

import numpy as np

DEFAULT_EPS = 1e-5


def as_tensor(x, dtype=np.float64):
    """Return ``x`` as a C-contiguous array and reject non-finite values."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def finite_diff_grad(f, x, eps=DEFAULT_EPS):
    """Central-difference gradient of a scalar function.

    Parameters
    ----------
    f : callable
        Maps an array shaped like ``x`` to a real scalar.
    x : array_like
        Evaluation point. It is never modified.
    eps : float
        Perturbation step, applied to one element at a time.

    Returns
    -------
    numpy.ndarray
        Array of ``x.shape`` holding ``(f(x + eps e_i) - f(x - eps e_i)) / 2 eps``.

    Raises
    ------
    FloatingPointError
        If ``f`` returns a non-finite value at a perturbed point.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x0)
    flat = x0.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x0))
        flat[i] = orig - eps
        fm = float(f(x0))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            index = np.unravel_index(i, x0.shape)
            raise FloatingPointError(
                f"non-finite function value at perturbed index {tuple(int(j) for j in index)}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(a, b, floor=1e-12):
    """``||a - b|| / max(||a||, ||b||)`` in the Euclidean norm.

    Returns 0 when both arrays are (numerically) zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)
