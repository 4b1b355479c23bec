"""Hot numeric kernels, compiled with numba when available.

Three inner loops dominate runtime: the operator-splitting iteration of the
PSD completion solver, the per-iteration pass of the EM baseline, and
empirical monomial means over large samples.  Each kernel exists in two
functionally identical variants: a pure-numpy implementation and a numba
``@njit`` build.  Set ``MIXMOM_DISABLE_NUMBA=1`` before import to force the
numpy lane (the flag is also honoured when numba is not installed).

``benchmarks/bench_kernels.py`` times both lanes side by side.
"""

from __future__ import annotations

import math
import os

import numpy as np

NUMBA_DISABLED = os.environ.get("MIXMOM_DISABLE_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
}

if not NUMBA_DISABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        njit = None
        NUMBA_DISABLED = True
else:
    njit = None

NUMBA_ENABLED = not NUMBA_DISABLED


# ---------------------------------------------------------------------------
# Operator-splitting loop for trace-minimal PSD moment completion.
#
# Minimizes c . y subject to At y = bt and M(y) >= 0, where M(y) places
# y[cell_index[i*s+j]] at cell (i, j).  Consensus splitting M(y) = S with
# scaled dual U; the y-step is a diagonally weighted least squares whose
# affine projection matrix G is precomputed by the caller:
#     y = y_hat - G @ (At @ y_hat - bt),   G = W^-1 At' (At W^-1 At')^-1
# with W = diag(cell multiplicities).
# ---------------------------------------------------------------------------


def admm_nuclear_numpy(
    cell_index, mult, c_vec, At, bt, G, y_init, rho, alpha, tol_primal, tol_dual, max_iter
):
    s = int(math.isqrt(cell_index.size))
    n = mult.size
    y = y_init.copy()
    M = y[cell_index].reshape(s, s)
    w, V = np.linalg.eigh(M)
    S = (V * np.maximum(w, 0.0)) @ V.T
    U = np.zeros((s, s))
    r_primal = np.inf
    r_dual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        T = S - U
        y_hat = (
            np.bincount(cell_index, weights=T.ravel(), minlength=n) / mult
            - c_vec / (rho * mult)
        )
        y = y_hat - G @ (At @ y_hat - bt)
        M = y[cell_index].reshape(s, s)
        M_rel = alpha * M + (1.0 - alpha) * S
        w, V = np.linalg.eigh(M_rel + U)
        S_new = (V * np.maximum(w, 0.0)) @ V.T
        U = U + M_rel - S_new
        r_primal = float(np.linalg.norm(M - S_new))
        r_dual = float(rho * np.linalg.norm(S_new - S))
        S = S_new
        eps_p = tol_primal * max(1.0, float(np.linalg.norm(M)), float(np.linalg.norm(S)))
        eps_d = tol_dual * max(1.0, float(rho * np.linalg.norm(U)))
        if r_primal <= eps_p and r_dual <= eps_d:
            break
        # residual balancing: boundary solutions stall one residual far
        # ahead of the other unless the penalty tracks their ratio
        if it % 50 == 0:
            rp_rel = r_primal / (eps_p / tol_primal)
            rd_rel = r_dual / (eps_d / tol_dual)
            if rp_rel > 10.0 * rd_rel and rho < 1e8:
                rho *= 2.0
                U /= 2.0
            elif rd_rel > 10.0 * rp_rel and rho > 1e-6:
                rho /= 2.0
                U *= 2.0
    return y, S, it, r_primal, r_dual


def _admm_nuclear_loop(
    cell_index, mult, c_vec, At, bt, G, y_init, rho, alpha, tol_primal, tol_dual, max_iter
):
    # Kept in lockstep with admm_nuclear_numpy; written with explicit loops
    # so numba compiles the whole iteration.
    s = int(math.sqrt(cell_index.size) + 0.5)
    n = mult.size
    y = y_init.copy()
    M = np.empty((s, s))
    for i in range(s):
        for j in range(s):
            M[i, j] = y[cell_index[i * s + j]]
    w, V = np.linalg.eigh(M)
    for k in range(s):
        if w[k] < 0.0:
            w[k] = 0.0
    S = (V * w) @ V.T
    U = np.zeros((s, s))
    y_hat = np.empty(n)
    r_primal = 1e300
    r_dual = 1e300
    it = 0
    for it in range(1, max_iter + 1):
        for u in range(n):
            y_hat[u] = 0.0
        for i in range(s):
            for j in range(s):
                y_hat[cell_index[i * s + j]] += S[i, j] - U[i, j]
        for u in range(n):
            y_hat[u] = y_hat[u] / mult[u] - c_vec[u] / (rho * mult[u])
        y = y_hat - G @ (At @ y_hat - bt)
        norm_m = 0.0
        for i in range(s):
            for j in range(s):
                m_ij = y[cell_index[i * s + j]]
                M[i, j] = m_ij
                norm_m += m_ij * m_ij
        norm_m = math.sqrt(norm_m)
        W_mat = alpha * M + (1.0 - alpha) * S
        w, V = np.linalg.eigh(W_mat + U)
        for k in range(s):
            if w[k] < 0.0:
                w[k] = 0.0
        S_new = (V * w) @ V.T
        rp = 0.0
        rd = 0.0
        norm_s = 0.0
        norm_u = 0.0
        for i in range(s):
            for j in range(s):
                U[i, j] = U[i, j] + W_mat[i, j] - S_new[i, j]
                dp = M[i, j] - S_new[i, j]
                dd = S_new[i, j] - S[i, j]
                rp += dp * dp
                rd += dd * dd
                norm_s += S_new[i, j] * S_new[i, j]
                norm_u += U[i, j] * U[i, j]
                S[i, j] = S_new[i, j]
        r_primal = math.sqrt(rp)
        r_dual = rho * math.sqrt(rd)
        eps_p = tol_primal * max(1.0, max(norm_m, math.sqrt(norm_s)))
        eps_d = tol_dual * max(1.0, rho * math.sqrt(norm_u))
        if r_primal <= eps_p and r_dual <= eps_d:
            break
        if it % 50 == 0:
            rp_rel = r_primal / (eps_p / tol_primal)
            rd_rel = r_dual / (eps_d / tol_dual)
            if rp_rel > 10.0 * rd_rel and rho < 1e8:
                rho *= 2.0
                for i in range(s):
                    for j in range(s):
                        U[i, j] /= 2.0
            elif rd_rel > 10.0 * rp_rel and rho > 1e-6:
                rho /= 2.0
                for i in range(s):
                    for j in range(s):
                        U[i, j] *= 2.0
    return y, S, it, r_primal, r_dual


# ---------------------------------------------------------------------------
# One EM pass for a diagonal-covariance Gaussian mixture: responsibilities,
# log-likelihood and sufficient statistics in a single sweep.
# ---------------------------------------------------------------------------

_LOG_2PI = math.log(2.0 * math.pi)


def em_diag_step_numpy(data, log_pi, mu, var):
    T, D = data.shape
    K = log_pi.size
    logp = np.empty((T, K))
    for k in range(K):
        diff = data - mu[k]
        logp[:, k] = log_pi[k] - 0.5 * (
            np.sum(diff * diff / var[k], axis=1) + np.sum(np.log(var[k])) + D * _LOG_2PI
        )
    m = logp.max(axis=1)
    w = np.exp(logp - m[:, None])
    tot = w.sum(axis=1)
    loglik = float(np.sum(m + np.log(tot)))
    resp = w / tot[:, None]
    nk = resp.sum(axis=0)
    sx = resp.T @ data
    sxx = resp.T @ (data * data)
    return loglik, nk, sx, sxx


def _em_diag_step_loop(data, log_pi, mu, var):
    T, D = data.shape
    K = log_pi.size
    nk = np.zeros(K)
    sx = np.zeros((K, D))
    sxx = np.zeros((K, D))
    logp = np.empty(K)
    half_logdet = np.empty(K)
    for k in range(K):
        acc = 0.0
        for d in range(D):
            acc += math.log(var[k, d])
        half_logdet[k] = 0.5 * (acc + D * _LOG_2PI)
    loglik = 0.0
    for t in range(T):
        m = -1e300
        for k in range(K):
            q = 0.0
            for d in range(D):
                diff = data[t, d] - mu[k, d]
                q += diff * diff / var[k, d]
            logp[k] = log_pi[k] - 0.5 * q - half_logdet[k]
            if logp[k] > m:
                m = logp[k]
        tot = 0.0
        for k in range(K):
            logp[k] = math.exp(logp[k] - m)
            tot += logp[k]
        loglik += m + math.log(tot)
        for k in range(K):
            r = logp[k] / tot
            nk[k] += r
            for d in range(D):
                sx[k, d] += r * data[t, d]
                sxx[k, d] += r * data[t, d] * data[t, d]
    return loglik, nk, sx, sxx


# ---------------------------------------------------------------------------
# Empirical means of monomials x^alpha over the rows of a data matrix.
# ---------------------------------------------------------------------------


def raw_moment_means_numpy(data, exponents):
    T = data.shape[0]
    out = np.empty(len(exponents))
    for e, alpha in enumerate(exponents):
        acc = np.ones(T)
        for d, a in enumerate(alpha):
            if a == 1:
                acc = acc * data[:, d]
            elif a > 1:
                acc = acc * data[:, d] ** int(a)
        out[e] = acc.mean()
    return out


def _raw_moment_means_loop(data, exponents):
    T, D = data.shape
    n = exponents.shape[0]
    out = np.zeros(n)
    for t in range(T):
        for e in range(n):
            v = 1.0
            for d in range(D):
                a = exponents[e, d]
                x = data[t, d]
                for _ in range(a):
                    v *= x
            out[e] += v
    return out / T


if NUMBA_ENABLED:
    admm_nuclear_numba = njit(cache=True)(_admm_nuclear_loop)
    em_diag_step_numba = njit(cache=True)(_em_diag_step_loop)
    raw_moment_means_numba = njit(cache=True)(_raw_moment_means_loop)
    admm_nuclear = admm_nuclear_numba
    em_diag_step = em_diag_step_numba
    _raw_moment_means_active = raw_moment_means_numba
else:
    admm_nuclear_numba = None
    em_diag_step_numba = None
    raw_moment_means_numba = None
    admm_nuclear = admm_nuclear_numpy
    em_diag_step = em_diag_step_numpy
    _raw_moment_means_active = raw_moment_means_numpy


def raw_moment_means(data: np.ndarray, exponents) -> np.ndarray:
    """Means of prod_d x_d^alpha_d over rows, one value per exponent row."""
    data = np.ascontiguousarray(data, dtype=float)
    exps = np.ascontiguousarray(np.asarray(exponents, dtype=np.int64))
    if exps.ndim != 2 or exps.shape[1] != data.shape[1]:
        raise ValueError("exponent rows must match the data dimension")
    if _raw_moment_means_active is raw_moment_means_numpy:
        return raw_moment_means_numpy(data, exps)
    return _raw_moment_means_active(data, exps)
