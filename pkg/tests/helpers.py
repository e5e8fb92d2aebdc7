"""Shared test utilities: finite-difference gradient oracle."""

import numpy as np

from artifit.autodiff import Tensor


def finite_diff_grad(fn, params, h: float = 1e-5):
    """Central finite differences of a scalar-valued ``fn(*params)``.

    ``params`` are numpy arrays; returns one gradient array per parameter.
    ``fn`` must rebuild its graph from raw values each call (taking numpy
    arrays, wrapping them itself) and return a float.
    """
    grads = []
    for k, p in enumerate(params):
        p = np.asarray(p, dtype=np.float64)
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn(*params)
            flat[i] = orig - h
            f_minus = fn(*params)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def autodiff_grad(fn, params):
    """Backprop gradients of scalar ``fn`` w.r.t. numpy ``params``."""
    tensors = [Tensor(p.copy(), requires_grad=True) for p in params]
    out = fn(*tensors)
    out.backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def check_grads(build_fn, params, h: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-7):
    """Compare backprop vs central differences for scalar ``build_fn``.

    ``build_fn`` receives Tensors when differentiating analytically and must
    also accept numpy arrays for the finite-difference probe (it should only
    use ops that exist on both, or wrap inputs itself).
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]

    def numeric_fn(*raw):
        out = build_fn(*[Tensor(r) for r in raw])
        return float(out.data)

    ana = autodiff_grad(build_fn, params)
    num = finite_diff_grad(numeric_fn, params, h=h)
    for k, (a, n) in enumerate(zip(ana, num)):
        np.testing.assert_allclose(
            a, n, rtol=rtol, atol=atol,
            err_msg=f"gradient mismatch for parameter {k}",
        )
    return ana, num


def rel_err(a, b, floor: float = 1e-12) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), floor)
    return float(np.linalg.norm((a - b).ravel()) / denom)
