"""Independent brute-force reference implementations used only by tests.

Everything here is written the slow, obvious way (index loops, dense
pseudo-inverses) so that library results can be checked against code that
shares none of their internals.
"""

import itertools

import numpy as np


def unfold_by_enumeration(data: np.ndarray, mode: int) -> np.ndarray:
    """Mode unfolding via explicit index iteration, last remaining index fastest."""
    shape = data.shape
    rest = [ax for ax in range(data.ndim) if ax != mode]
    rest_dims = [shape[ax] for ax in rest]
    out = np.zeros((shape[mode], int(np.prod(rest_dims))))
    for idx in itertools.product(*(range(s) for s in shape)):
        col = 0
        for ax in rest:
            col = col * shape[ax] + idx[ax]
        out[idx[mode], col] = data[idx]
    return out


def vectorize_by_enumeration(data: np.ndarray) -> np.ndarray:
    shape = data.shape
    out = np.zeros(data.size)
    for idx in itertools.product(*(range(s) for s in shape)):
        lin = 0
        for ax in range(data.ndim):
            lin = lin * shape[ax] + idx[ax]
        out[lin] = data[idx]
    return out


def khatri_rao_by_enumeration(factors) -> np.ndarray:
    dims = [f.shape[0] for f in factors]
    r = factors[0].shape[1]
    out = np.zeros((int(np.prod(dims)), r))
    for row, idx in enumerate(itertools.product(*(range(d) for d in dims))):
        acc = np.ones(r)
        for f, i in zip(factors, idx):
            acc = acc * f[i]
        out[row] = acc
    return out


def kron_by_enumeration(factors) -> np.ndarray:
    dims = [f.shape[0] for f in factors]
    col_dims = [f.shape[1] for f in factors]
    out = np.zeros((int(np.prod(dims)), int(np.prod(col_dims))))
    for row, ridx in enumerate(itertools.product(*(range(d) for d in dims))):
        for col, cidx in enumerate(itertools.product(*(range(d) for d in col_dims))):
            v = 1.0
            for f, i, j in zip(factors, ridx, cidx):
                v *= f[i, j]
            out[row, col] = v
    return out


def projector(a: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the column space of ``a``."""
    return a @ np.linalg.pinv(a.T @ a) @ a.T


def leverage_by_projector(a: np.ndarray) -> np.ndarray:
    return np.diag(projector(a)).copy()


def masked_lstsq(a: np.ndarray, omega, q) -> np.ndarray:
    x, *_ = np.linalg.lstsq(a[np.asarray(omega)], np.asarray(q), rcond=None)
    return x


def richardson_iterates(a: np.ndarray, omega, q, n_iters: int, x0=None):
    """Explicit x_{k+1} = x_k - (AᵀA)⁺ (P̃ᵀP̃ x_k - P̃ᵀq̃) sequence."""
    omega = np.asarray(omega)
    p_tilde = np.zeros_like(a)
    p_tilde[omega] = a[omega]
    q_tilde = np.zeros(a.shape[0])
    q_tilde[omega] = q
    ginv = np.linalg.pinv(a.T @ a)
    gp = p_tilde.T @ p_tilde
    cp = p_tilde.T @ q_tilde
    x = np.zeros(a.shape[1]) if x0 is None else np.array(x0, dtype=float)
    out = [x.copy()]
    for _ in range(n_iters):
        x = x - ginv @ (gp @ x - cp)
        out.append(x.copy())
    return out


def cp_als_update_unmasked(x_unfolded: np.ndarray, others) -> np.ndarray:
    """Classical unmasked CP factor update via MTTKRP + Hadamard Gram."""
    m = khatri_rao_by_enumeration(others)
    return x_unfolded @ m @ np.linalg.pinv(m.T @ m)


def tucker_core_update_unmasked(x_vec: np.ndarray, factors) -> np.ndarray:
    a = kron_by_enumeration(factors)
    sol, *_ = np.linalg.lstsq(a, x_vec, rcond=None)
    return sol


def tt_reconstruct_elementwise(cores) -> np.ndarray:
    shape = tuple(c.shape[1] for c in cores)
    out = np.zeros(shape)
    for idx in itertools.product(*(range(s) for s in shape)):
        acc = np.ones((1, 1))
        for c, i in zip(cores, idx):
            acc = acc @ c[:, i, :]
        out[idx] = acc[0, 0]
    return out


def cp_reconstruct_elementwise(weights, factors) -> np.ndarray:
    shape = tuple(f.shape[0] for f in factors)
    out = np.zeros(shape)
    for idx in itertools.product(*(range(s) for s in shape)):
        acc = weights.copy()
        for f, i in zip(factors, idx):
            acc = acc * f[i]
        out[idx] = acc.sum()
    return out


def tucker_reconstruct_elementwise(core: np.ndarray, factors) -> np.ndarray:
    shape = tuple(f.shape[0] for f in factors)
    out = np.zeros(shape)
    for idx in itertools.product(*(range(s) for s in shape)):
        total = 0.0
        for ridx in itertools.product(*(range(r) for r in core.shape)):
            v = core[ridx]
            for f, i, r in zip(factors, idx, ridx):
                v *= f[i, r]
            total += v
        out[idx] = total
    return out


def mode_product_by_summation(data: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    shape = list(data.shape)
    shape[mode] = m.shape[0]
    out = np.zeros(shape)
    for idx in itertools.product(*(range(s) for s in out.shape)):
        total = 0.0
        for k in range(data.shape[mode]):
            src = list(idx)
            src[mode] = k
            total += data[tuple(src)] * m[idx[mode], k]
        out[idx] = total
    return out
