# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled TMOP element kernel (same contract as ``_kernels_py.tmop_element``)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport pow, INFINITY

cnp.import_array()


cdef inline void _derivs(int code, double gamma, double I1, double tau,
                         double* out) noexcept nogil:
    # out = f, fI, ft, fII, fIt, ftt
    cdef double a, b, t23, t53, t83
    cdef double s[6]
    cdef double v[6]
    cdef int k
    if code == 2:
        out[0] = I1 / (2 * tau) - 1
        out[1] = 1 / (2 * tau)
        out[2] = -I1 / (2 * tau * tau)
        out[3] = 0
        out[4] = -1 / (2 * tau * tau)
        out[5] = I1 / (tau * tau * tau)
    elif code == 303:
        t23 = pow(tau, 2.0 / 3.0)
        t53 = pow(tau, 5.0 / 3.0)
        t83 = pow(tau, 8.0 / 3.0)
        out[0] = I1 / (3 * t23) - 1
        out[1] = 1 / (3 * t23)
        out[2] = -2 * I1 / (9 * t53)
        out[3] = 0
        out[4] = -2 / (9 * t53)
        out[5] = 10 * I1 / (27 * t83)
    elif code == 77:
        a = tau - 1 / tau
        b = 1 + 1 / (tau * tau)
        out[0] = 0.5 * a * a
        out[1] = 0
        out[2] = a * b
        out[3] = 0
        out[4] = 0
        out[5] = b * b - 2 * a / (tau * tau * tau)
    else:  # 80
        _derivs(2, gamma, I1, tau, s)
        _derivs(77, gamma, I1, tau, v)
        for k in range(6):
            out[k] = gamma * s[k] + (1 - gamma) * v[k]


def tmop_element(double[:, :, ::1] X, double[:, :, ::1] D, double[::1] wq,
                 int code, double gamma, int order):
    cdef Py_ssize_t nE = X.shape[0], Np = X.shape[1], d = X.shape[2]
    cdef Py_ssize_t nq = D.shape[0]
    cdef Py_ssize_t e, q, i, j, a, b, c, n = Np * d, k, l
    cdef double T[3][3]
    cdef double C[3][3]
    cdef double f[6]
    cdef double I1, tau, w, min_tau = INFINITY, cI, cT, kTT, kTC, kCC, sw, gij, val
    if code not in (2, 77, 80, 303):
        raise ValueError(f"unknown metric code {code}")
    if d != 2 and d != 3:
        raise ValueError("only 2D and 3D elements are supported")

    energy_a = np.zeros(nE)
    cdef double[::1] energy = energy_a
    grad_a = np.zeros((nE, Np, d)) if order >= 1 else None
    hess_a = np.zeros((nE, Np, d, Np, d)) if order >= 2 else None
    cdef double[:, :, ::1] grad
    cdef double[:, :, :, :, ::1] hess
    if order >= 1:
        grad = grad_a
    if order >= 2:
        hess = hess_a
    UT_a = np.empty((Np, d))
    UC_a = np.empty((Np, d))
    G_a = np.empty((Np, Np))
    cdef double[:, ::1] UT = UT_a
    cdef double[:, ::1] UC = UC_a
    cdef double[:, ::1] G = G_a

    with nogil:
        for e in range(nE):
            for q in range(nq):
                for a in range(d):
                    for b in range(d):
                        val = 0
                        for i in range(Np):
                            val = val + X[e, i, a] * D[q, i, b]
                        T[a][b] = val
                if d == 2:
                    tau = T[0][0] * T[1][1] - T[0][1] * T[1][0]
                    C[0][0] = T[1][1]
                    C[0][1] = -T[1][0]
                    C[1][0] = -T[0][1]
                    C[1][1] = T[0][0]
                else:
                    C[0][0] = T[1][1] * T[2][2] - T[1][2] * T[2][1]
                    C[0][1] = T[1][2] * T[2][0] - T[1][0] * T[2][2]
                    C[0][2] = T[1][0] * T[2][1] - T[1][1] * T[2][0]
                    C[1][0] = T[2][1] * T[0][2] - T[2][2] * T[0][1]
                    C[1][1] = T[2][2] * T[0][0] - T[2][0] * T[0][2]
                    C[1][2] = T[2][0] * T[0][1] - T[2][1] * T[0][0]
                    C[2][0] = T[0][1] * T[1][2] - T[0][2] * T[1][1]
                    C[2][1] = T[0][2] * T[1][0] - T[0][0] * T[1][2]
                    C[2][2] = T[0][0] * T[1][1] - T[0][1] * T[1][0]
                    tau = T[0][0] * C[0][0] + T[0][1] * C[0][1] + T[0][2] * C[0][2]
                if tau < min_tau:
                    min_tau = tau
                if tau <= 0:
                    continue
                I1 = 0
                for a in range(d):
                    for b in range(d):
                        I1 = I1 + T[a][b] * T[a][b]
                _derivs(code, gamma, I1, tau, f)
                w = wq[q]
                energy[e] += w * f[0]
                if order < 1:
                    continue
                for i in range(Np):
                    for a in range(d):
                        cT = 0
                        cI = 0
                        for b in range(d):
                            cT = cT + T[a][b] * D[q, i, b]
                            cI = cI + C[a][b] * D[q, i, b]
                        UT[i, a] = cT
                        UC[i, a] = cI
                        grad[e, i, a] += w * (2 * f[1] * cT + f[2] * cI)
                if order < 2:
                    continue
                for i in range(Np):
                    for j in range(Np):
                        gij = 0
                        for b in range(d):
                            gij = gij + D[q, i, b] * D[q, j, b]
                        G[i, j] = gij
                kTT = w * 4 * f[3]
                kTC = w * 2 * f[4]
                kCC = w * (f[5] + f[2] / tau)
                sw = w * f[2] / tau
                cI = w * 2 * f[1]
                for i in range(Np):
                    for a in range(d):
                        k = i * d + a
                        for j in range(i, Np):
                            for c in range(d):
                                l = j * d + c
                                if l < k:
                                    continue
                                val = (kTT * UT[i, a] * UT[j, c]
                                       + kTC * (UT[i, a] * UC[j, c] + UC[i, a] * UT[j, c])
                                       + kCC * UC[i, a] * UC[j, c]
                                       - sw * UC[j, a] * UC[i, c])
                                if a == c:
                                    val = val + cI * G[i, j]
                                hess[e, i, a, j, c] += val
        if order >= 2:
            for e in range(nE):
                for i in range(Np):
                    for a in range(d):
                        for j in range(i, Np):
                            for c in range(d):
                                if j * d + c > i * d + a:
                                    hess[e, j, c, i, a] = hess[e, i, a, j, c]
    if min_tau <= 0:
        return np.full(nE, np.nan), None, None, min_tau
    return energy_a, grad_a, hess_a, min_tau
