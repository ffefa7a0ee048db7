"""Central finite-difference gradient checks (test oracle, never used for training)."""
import numpy as np


def numerical_grad(fn, arrays, step=1e-5):
    """d fn / d array for each array, by central differences. ``fn`` maps arrays to a float."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = fn()
            flat[i] = orig - step
            lo = fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    """max |a - n| / max(|a|, |n|, 1e-8) over all entries, in the aggregate-norm sense."""
    a = np.concatenate([x.reshape(-1) for x in analytic])
    n = np.concatenate([x.reshape(-1) for x in numeric])
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(loss_fn, tensors, step=1e-5):
    """Compare autodiff and finite-difference gradients of ``loss_fn()`` w.r.t. ``tensors``.

    ``tensors`` must be float64 leaves with ``requires_grad=True``. Returns the
    relative error as computed by :func:`relative_error`.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def scalar():
        return float(loss_fn().data)

    numeric = numerical_grad(scalar, [t.data for t in tensors], step)
    return relative_error(analytic, numeric)


__all__ = ["check_gradients", "numerical_grad", "relative_error"]
