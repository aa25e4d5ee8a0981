"""Shared numeric test utilities: finite differences and brute-force oracles."""

import numpy as np

from drax import tensor as T


def finite_difference(f, x, step=1e-6):
    """Central-difference gradient of scalar-valued f with respect to array x.

    `f` takes no arguments and must read the current contents of `x`; entries
    of `x` are perturbed in place one at a time and restored afterwards.
    """
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + step
        hi = f()
        x[idx] = original - step
        lo = f()
        x[idx] = original
        grad[idx] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    """max over entries of |a - n| / max(1, |a|, |n|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(build_loss, params, step=1e-6, tol=1e-7):
    """Compare backward() gradients of every parameter against finite differences.

    `build_loss` returns a scalar Tensor built from the current parameter
    values. Returns the worst relative error seen.
    """
    loss = build_loss()
    for p in params:
        p.zero_grad()
    T.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)

        def value():
            with T.no_grad():
                return build_loss().item()

        numeric = finite_difference(value, p.data, step=step)
        err = relative_error(analytic, numeric)
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch for {getattr(p, 'name', '?')}: {err:.3e}"
    return worst


def matmul_oracle(a, b):
    """Triple-loop matrix product for 2-D arrays."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def softmax_oracle(row):
    """Direct exp/sum softmax of a 1-D array (no stabilization tricks)."""
    e = np.exp(row - np.max(row))
    return e / e.sum()
