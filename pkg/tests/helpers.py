"""Shared test utilities: finite-difference oracle and tolerance helpers."""

import numpy as np

from voxelpaint import autodiff as ad


def numerical_grad(f, arrays, h=1e-5):
    """Central-difference gradients of a scalar function of numpy arrays.

    ``f`` is re-evaluated from scratch for every probe, so it must not
    depend on the autodiff tape.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-4):
    denom = np.maximum(floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_op_grads(op, arrays, tol=1e-3, h=1e-5):
    """Compare tape gradients of sum(op(*xs) * R) against central differences."""
    rng = np.random.default_rng(0)
    probe_shape = op(*[ad.Tensor(a) for a in arrays]).shape
    R = rng.standard_normal(probe_shape)

    tensors = [ad.Tensor(a.copy()) for a in arrays]
    with ad.Tape() as tape:
        loss = ad.sum_all(ad.mul(op(*tensors), ad.Tensor(R)))
        tape.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    def scalar(*arrs):
        out = op(*[ad.Tensor(a) for a in arrs])
        return float(np.sum(out.data * R))

    numeric = numerical_grad(scalar, [a.copy() for a in arrays], h=h)
    errs = [max_rel_err(a, n) for a, n in zip(analytic, numeric)]
    assert max(errs) < tol, f"gradient mismatch: rel errs {errs}"
    return errs
