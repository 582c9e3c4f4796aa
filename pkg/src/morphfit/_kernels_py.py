"""Pure NumPy implementation of the TMOP element kernel.

This is the fallback used when the compiled extension is unavailable; it
also serves as the reference the compiled path is tested against.

The metric is written as ``f(I1, tau)`` with ``I1 = |T|^2`` and
``tau = det(T)``; every supported metric reduces to this form.
"""
import numpy as np

METRIC_CODES = (2, 77, 80, 303)


def invariant_derivs(code, gamma, I1, tau):
    """Return ``f, f_I, f_t, f_II, f_It, f_tt`` for a metric.

    Arrays broadcast; ``tau`` must be positive.
    """
    I1 = np.asarray(I1, dtype=float)
    tau = np.asarray(tau, dtype=float)
    zero = np.zeros(np.broadcast(I1, tau).shape)
    if code == 2:
        return (I1 / (2 * tau) - 1, 1 / (2 * tau) + zero, -I1 / (2 * tau**2), zero,
                -1 / (2 * tau**2) + zero, I1 / tau**3)
    if code == 303:
        t23 = tau ** (2.0 / 3.0)
        t53 = tau ** (5.0 / 3.0)
        t83 = tau ** (8.0 / 3.0)
        return (I1 / (3 * t23) - 1, 1 / (3 * t23) + zero, -2 * I1 / (9 * t53), zero,
                -2 / (9 * t53) + zero, 10 * I1 / (27 * t83))
    if code == 77:
        a = tau - 1 / tau
        b = 1 + 1 / tau**2
        return (0.5 * a**2 + zero, zero, a * b + zero, zero, zero, b**2 - 2 * a / tau**3 + zero)
    if code == 80:
        s = invariant_derivs(2, gamma, I1, tau)
        v = invariant_derivs(77, gamma, I1, tau)
        return tuple(gamma * x + (1 - gamma) * y for x, y in zip(s, v))
    raise ValueError(f"unknown metric code {code}")


def cofactor(T):
    """Cofactor matrix ``d det(T) / dT`` for stacks of 2x2 or 3x3 matrices."""
    d = T.shape[-1]
    if d == 2:
        C = np.empty_like(T)
        C[..., 0, 0] = T[..., 1, 1]
        C[..., 0, 1] = -T[..., 1, 0]
        C[..., 1, 0] = -T[..., 0, 1]
        C[..., 1, 1] = T[..., 0, 0]
        return C
    C = np.empty_like(T)
    C[..., 0, :] = np.cross(T[..., 1, :], T[..., 2, :])
    C[..., 1, :] = np.cross(T[..., 2, :], T[..., 0, :])
    C[..., 2, :] = np.cross(T[..., 0, :], T[..., 1, :])
    return C


def tmop_element(X, D, wq, code, gamma, order):
    """Element energies and derivatives of ``sum_q wq * mu(T_q)``.

    Parameters
    ----------
    X : (nE, Np, d) element node coordinates
    D : (nq, Np, d) basis gradients in target space (``grad_ref @ W^-1``)
    wq : (nq,) quadrature weights times ``det(W)``
    code, gamma : metric id (2, 77, 80, 303) and mixing parameter
    order : 0 energy only, 1 adds gradients, 2 adds Hessians

    Returns
    -------
    energy : (nE,)
    grad : (nE, Np, d) or None
    hess : (nE, Np, d, Np, d) or None
    min_tau : float, minimum ``det(T)``; when it is <= 0 the other outputs
        are meaningless.
    """
    T = np.einsum("eia,qib->eqab", X, D)
    tau = _det(T)
    min_tau = float(tau.min()) if tau.size else np.inf
    nE, Np, d = X.shape
    if min_tau <= 0:
        return np.full(nE, np.nan), None, None, min_tau
    I1 = np.einsum("eqab,eqab->eq", T, T)
    f, fI, ft, fII, fIt, ftt = invariant_derivs(code, gamma, I1, tau)
    energy = f @ wq
    if order < 1:
        return energy, None, None, min_tau
    C = cofactor(T)
    UT = np.einsum("eqab,qib->eqia", T, D)
    UC = np.einsum("eqab,qib->eqia", C, D)
    w = wq[None, :]
    grad = np.einsum("eq,eqia->eia", w * 2 * fI, UT) + np.einsum("eq,eqia->eia", w * ft, UC)
    if order < 2:
        return energy, grad, None, min_tau
    nq = D.shape[0]
    n = Np * d
    U = np.stack([UT, UC], axis=2).reshape(nE, nq, 2, n)
    K = np.empty((nE, nq, 2, 2))
    K[..., 0, 0] = 4 * fII
    K[..., 0, 1] = K[..., 1, 0] = 2 * fIt
    K[..., 1, 1] = ftt + ft / tau
    K *= w[..., None, None]
    V = np.einsum("eqmn,eqmk->eqnk", K, U)
    H = np.matmul(U.reshape(nE, nq * 2, n).transpose(0, 2, 1), V.reshape(nE, nq * 2, n))
    s = (w * ft / tau)[..., None]
    UCf = UC.reshape(nE, nq, n)
    Z = np.matmul(UCf.transpose(0, 2, 1), s * UCf).reshape(nE, Np, d, Np, d)
    # swapped term: value at (i, a, j, c) is Z[j, a, i, c]
    H = H.reshape(nE, Np, d, Np, d) - Z.transpose(0, 3, 2, 1, 4)
    G = np.einsum("qib,qjb->qij", D, D)
    GI = np.einsum("eq,qij->eij", w * 2 * fI, G)
    H += GI[:, :, None, :, None] * np.eye(d)[None, None, :, None, :]
    H = 0.5 * (H + H.transpose(0, 3, 4, 1, 2))
    return energy, grad, H, min_tau


def _det(T):
    if T.shape[-1] == 2:
        return T[..., 0, 0] * T[..., 1, 1] - T[..., 0, 1] * T[..., 1, 0]
    return (T[..., 0, 0] * (T[..., 1, 1] * T[..., 2, 2] - T[..., 1, 2] * T[..., 2, 1])
            - T[..., 0, 1] * (T[..., 1, 0] * T[..., 2, 2] - T[..., 1, 2] * T[..., 2, 0])
            + T[..., 0, 2] * (T[..., 1, 0] * T[..., 2, 1] - T[..., 1, 1] * T[..., 2, 0]))
