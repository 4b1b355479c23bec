"""Moment completion: recover the parameter moment sequence from constraints.

Three routes, matching how determined the problem is:

* a direct linear solve when the constraint stack pins the unknown moments
  uniquely;
* block corner completion for three-view mixtures, where every unknown block
  of the second-order moment matrix is a corner of a low-rank partitioned
  matrix and fills in by ``X = C A^-1 B``;
* a trace-penalized semidefinite relaxation otherwise: minimize
  ``tr(C M_r(y))`` subject to the linear moment constraints, ``M_r(y) >= 0``
  and optional localizing-matrix positivity, solved by operator splitting
  (affine projection + PSD cone projection with over-relaxation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from . import _accel
from .errors import InconsistentSystemError, SingularBlockError
from .momentmat import (
    DegreeOverflowError,
    LinearMomentConstraint,
    LocalizingIndex,
    MomentSequence,
    RankTolerance,
    build_moment_index,
    flat_extension_rank,
    numeric_rank,
)
from .polyring import Exponent, MonomialBasis, monomials_up_to, unit_exponent

STATUS_LINEAR = "exact-linear"
STATUS_CONVERGED = "sdp-converged"
STATUS_MAX_ITER = "sdp-max-iter"


@dataclass
class MomentConstraintSystem:
    """Linear equalities over the unknown moments y_alpha, |alpha| <= max_degree.

    The normalization y_0 = 1 is appended automatically when absent.
    """

    num_vars: int
    max_degree: int
    constraints: list[LinearMomentConstraint] = field(default_factory=list)

    def __post_init__(self):
        zero = (0,) * self.num_vars
        for c in self.constraints:
            if c.max_degree() > self.max_degree:
                raise DegreeOverflowError(
                    f"constraint '{c.label}' touches degree {c.max_degree()} "
                    f"but the unknown set stops at {self.max_degree}"
                )
        if not any(
            c.coefficients == {zero: 1.0} and c.rhs == 1.0 for c in self.constraints
        ):
            self.constraints = list(self.constraints) + [
                LinearMomentConstraint({zero: 1.0}, 1.0, label="normalization")
            ]

    @property
    def unknowns(self) -> MonomialBasis:
        return monomials_up_to(self.num_vars, self.max_degree)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        basis = self.unknowns
        a = np.zeros((len(self.constraints), len(basis)))
        b = np.zeros(len(self.constraints))
        for i, c in enumerate(self.constraints):
            for alpha, coef in c.coefficients.items():
                a[i, basis.index_of(alpha)] = coef
            b[i] = c.rhs
        return a, b

    def residual_norm(self, y: MomentSequence) -> float:
        return float(
            np.linalg.norm([c.residual(y) for c in self.constraints])
        )


@dataclass(frozen=True)
class SdpConfig:
    """Parameters of the operator-splitting semidefinite solver.

    ``scaling`` is the matrix C in the objective tr(C M_r(y)); None means
    the identity, i.e. plain nuclear-norm (trace) minimization.
    """

    scaling: np.ndarray | None = None
    rho: float = 1.0
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    max_iter: int = 20000
    over_relax: float = 1.6
    rank_rel_tol: float = 1e-6

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.over_relax < 2.0:
            raise ValueError("over-relaxation must lie in (0, 2)")

    @classmethod
    def from_dict(cls, raw: dict) -> "SdpConfig":
        allowed = {"rho", "tol_primal", "tol_dual", "max_iter", "rank_rel_tol"}
        unknown = set(raw) - allowed
        if unknown:
            raise ValueError(f"unknown solver config keys: {sorted(unknown)}")
        return cls(**{k: raw[k] for k in raw})

    def rank_tolerance(self) -> RankTolerance:
        return RankTolerance(rel=self.rank_rel_tol)


@dataclass
class CompletionResult:
    """Completed moment sequence plus how it was obtained and how well it fits."""

    y: MomentSequence
    status: str
    residual_norm: float
    certificate: int | None = None
    iterations: int = 0
    objective: float | None = None
    primal_residual: float = 0.0
    dual_residual: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status in (STATUS_LINEAR, STATUS_CONVERGED)


def solve_linear_completion(
    system: MomentConstraintSystem,
    rank_rtol: float = 1e-9,
    residual_rtol: float = 1e-6,
) -> CompletionResult | None:
    """Solve the constraint stack directly when it determines y uniquely.

    Returns None when the system is underdetermined (rank below the number
    of unknowns); no least-squares guess is made in that case.  A
    full-rank stack whose least-squares residual exceeds
    ``residual_rtol * max(1, |b|)`` raises InconsistentSystemError.
    """
    a, b = system.stacked()
    n = a.shape[1]
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    rank = int(np.count_nonzero(sigma > rank_rtol * (sigma[0] if sigma.size else 0.0)))
    if rank < n:
        return None
    y_vec = vt.T @ ((u.T @ b) / sigma)
    zero = (0,) * system.num_vars
    zero_pos = system.unknowns.index_of(zero)
    if y_vec[zero_pos] <= 1e-3:
        raise InconsistentSystemError(float(abs(y_vec[zero_pos] - 1.0)), 1e-3)
    # moment sequences are projective in y_0; renormalize the least-squares
    # solution so downstream consumers see y_0 = 1 exactly
    y_vec = y_vec / y_vec[zero_pos]
    residual = float(np.linalg.norm(a @ y_vec - b))
    tol = residual_rtol * max(1.0, float(np.linalg.norm(b)))
    if residual > tol:
        raise InconsistentSystemError(residual, tol)
    values = dict(zip(system.unknowns.exponents, map(float, y_vec)))
    values[zero] = 1.0
    y = MomentSequence(system.num_vars, system.max_degree, values)
    certificate = None
    if system.max_degree >= 2 and system.max_degree % 2 == 0:
        certificate = flat_extension_rank(y, system.max_degree // 2)
    return CompletionResult(
        y, STATUS_LINEAR, residual, certificate=certificate, iterations=0
    )


def complete_corner(
    a: np.ndarray, b: np.ndarray, c: np.ndarray, rank_tol: RankTolerance = RankTolerance()
) -> np.ndarray:
    """Fill the missing corner X of [[A, B], [C, X]] as X = C A^-1 B.

    Requires the pivot block A to be square and of full numeric rank; the
    completed matrix then has rank equal to A's.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    k = a.shape[0]
    if a.shape != (k, k):
        raise ValueError(f"pivot block must be square, got {a.shape}")
    if numeric_rank(a, rank_tol) < k:
        raise SingularBlockError(
            f"pivot block is numerically singular (size {k})"
        )
    return c @ np.linalg.solve(a, b)


def rank_truncated_pinv(m: np.ndarray, k: int) -> np.ndarray:
    """Pseudo-inverse through the top-k singular triplets."""
    u, sigma, vt = np.linalg.svd(np.asarray(m, dtype=float), full_matrices=False)
    if sigma[min(k, len(sigma)) - 1] <= 0.0:
        raise SingularBlockError(f"block has rank below {k}")
    return (vt[:k].T / sigma[:k]) @ u[:, :k].T


@dataclass
class MultiviewMoments:
    """Observed moment blocks of a three-view mixture.

    ``first[l]`` holds the per-view means, ``pairs[(a, b)]`` the cross-view
    second-order block for views a < b, and ``triple`` the third-order
    cross-view tensor.  Views are 0-indexed.
    """

    first: list[np.ndarray]
    pairs: dict[tuple[int, int], np.ndarray]
    triple: np.ndarray

    def __post_init__(self):
        if len(self.first) != 3:
            raise ValueError("three views are required")
        self.first = [np.asarray(v, dtype=float) for v in self.first]
        dims = self.view_dims
        for (a, b) in ((0, 1), (0, 2), (1, 2)):
            got = np.asarray(self.pairs[(a, b)], dtype=float)
            if got.shape != (dims[a], dims[b]):
                raise ValueError(f"pair block {(a, b)} has shape {got.shape}")
            self.pairs[(a, b)] = got
        self.triple = np.asarray(self.triple, dtype=float)
        if self.triple.shape != dims:
            raise ValueError(f"triple block has shape {self.triple.shape}")

    @property
    def view_dims(self) -> tuple[int, int, int]:
        return tuple(len(v) for v in self.first)


@dataclass
class MultiviewCompletion:
    result: CompletionResult
    matrix: np.ndarray
    view_dims: tuple[int, int, int]


def _view_exponent(dims, view: int, i: int) -> Exponent:
    offset = sum(dims[:view])
    return unit_exponent(sum(dims), offset + i)


def complete_multiview(
    observed: MultiviewMoments, k: int, rank_tol: RankTolerance = RankTolerance()
) -> MultiviewCompletion:
    """Fill every unknown block of the three-view moment matrix.

    Cross-view blocks are observed directly; each same-view block is the
    missing corner of a rank-k partitioned matrix built from two observed
    blocks and falls out of the corner-completion identity (applied with a
    rank-k truncated inverse so it also covers rectangular pivots).  The
    third-order tensor then completes the degree-(2,1) blocks the extraction
    stage shifts into.
    """
    dims = observed.view_dims
    if k > min(dims):
        raise ValueError(f"corner completion needs k <= min view dim, got k={k}")
    p_total = sum(dims)

    def pair(a: int, b: int) -> np.ndarray:
        # Block of cross moments with rows in view a, columns in view b.
        if a < b:
            return observed.pairs[(a, b)]
        return observed.pairs[(b, a)].T

    for (a, b) in ((0, 1), (0, 2), (1, 2)):
        if numeric_rank(observed.pairs[(a, b)], rank_tol) < k:
            raise SingularBlockError(
                f"cross-view block {(a, b)} has numeric rank below {k}"
            )

    # Same-view blocks: Z_aa = Y_ab (Y_db)^+ Y_da with d the remaining view.
    z_same: dict[int, np.ndarray] = {}
    for a in range(3):
        b, d = [v for v in range(3) if v != a]
        z = pair(a, b) @ rank_truncated_pinv(pair(d, b), k) @ pair(d, a)
        z_same[a] = 0.5 * (z + z.T)

    # Unfold the triple tensor into rows (view a, view b) by columns view d.
    def triple_unfold(a: int, b: int) -> np.ndarray:
        axes = {0: None, 1: None, 2: None}
        d = [v for v in range(3) if v not in (a, b)][0]
        t = np.moveaxis(observed.triple, (a, b, d), (0, 1, 2))
        return t.reshape(dims[a] * dims[b], dims[d])

    # Pair-row blocks: rows indexed by (i in view a, j in view b), columns by
    # view c in {a, b}; completed as Triple_(ab),d (Y_ad)^+ M_ac where M_ac is
    # the (a, c) block already known (Z_aa when c == a, Y_ab otherwise).
    pair_row_blocks: dict[tuple[int, int, int], np.ndarray] = {}
    for (a, b) in ((0, 1), (0, 2), (1, 2)):
        d = [v for v in range(3) if v not in (a, b)][0]
        t_ab = triple_unfold(a, b)
        pinv_ad = rank_truncated_pinv(pair(a, d), k)
        for c in (a, b):
            m_ac = z_same[a] if c == a else pair(a, c)
            pair_row_blocks[(a, b, c)] = t_ab @ pinv_ad @ m_ac
        pair_row_blocks[(a, b, d)] = t_ab

    # Accumulate every determined entry into the moment sequence; symmetric
    # appearances of the same exponent are averaged.
    sums: dict[Exponent, float] = {}
    counts: dict[Exponent, int] = {}

    def put(alpha: Exponent, value: float):
        sums[alpha] = sums.get(alpha, 0.0) + float(value)
        counts[alpha] = counts.get(alpha, 0) + 1

    zero = (0,) * p_total
    put(zero, 1.0)
    for l in range(3):
        for i in range(dims[l]):
            put(_view_exponent(dims, l, i), observed.first[l][i])
    for (a, b) in ((0, 1), (0, 2), (1, 2)):
        y_ab = pair(a, b)
        for i in range(dims[a]):
            for j in range(dims[b]):
                alpha = tuple(
                    x + y
                    for x, y in zip(
                        _view_exponent(dims, a, i), _view_exponent(dims, b, j)
                    )
                )
                put(alpha, y_ab[i, j])
    for a in range(3):
        for i in range(dims[a]):
            for j in range(dims[a]):
                alpha = tuple(
                    x + y
                    for x, y in zip(
                        _view_exponent(dims, a, i), _view_exponent(dims, a, j)
                    )
                )
                put(alpha, z_same[a][i, j])
    for (a, b, c), block in pair_row_blocks.items():
        for row in range(dims[a] * dims[b]):
            i, j = divmod(row, dims[b])
            base = tuple(
                x + y
                for x, y in zip(_view_exponent(dims, a, i), _view_exponent(dims, b, j))
            )
            for m in range(dims[c]):
                alpha = tuple(
                    x + y for x, y in zip(base, _view_exponent(dims, c, m))
                )
                put(alpha, block[row, m])

    values = {alpha: sums[alpha] / counts[alpha] for alpha in sums}
    y = MomentSequence(p_total, 3, values)

    singles = [
        _view_exponent(dims, l, i) for l in range(3) for i in range(dims[l])
    ]
    matrix = np.empty((p_total, p_total))
    for i, ea in enumerate(singles):
        for j, eb in enumerate(singles):
            matrix[i, j] = values[tuple(x + y_ for x, y_ in zip(ea, eb))]

    result = CompletionResult(y, STATUS_LINEAR, residual_norm=0.0)
    return MultiviewCompletion(result, matrix, dims)


# ---------------------------------------------------------------------------
# Semidefinite relaxation
# ---------------------------------------------------------------------------


def _orthonormal_constraints(a: np.ndarray, b: np.ndarray):
    """Rewrite A y = b with orthonormal rows; inconsistent parts of b are
    projected out (the solve then matches constraints in least squares)."""
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    keep = sigma > max(a.shape) * np.finfo(float).eps * (sigma[0] if sigma.size else 0)
    return vt[keep], (u[:, keep].T @ b) / sigma[keep]


def solve_sdp_nuclear(
    system: MomentConstraintSystem,
    config: SdpConfig = SdpConfig(),
    extra_psd: Sequence[LocalizingIndex] = (),
) -> CompletionResult:
    """Minimize tr(C M_r(y)) over the constraint set with M_r(y) >= 0.

    ``extra_psd`` adds localizing-matrix positivity for declared inequality
    constraints.  Without them the iteration runs through the compiled
    kernel; with them a dense KKT step handles the coupled quadratic.
    """
    if system.max_degree < 2 or system.max_degree % 2 != 0:
        raise ValueError("the SDP path needs an even unknown degree 2r >= 2")
    r = system.max_degree // 2
    index = build_moment_index(system.num_vars, r)
    basis = system.unknowns
    s = index.size
    n = len(basis)

    cell_index = np.empty(s * s, dtype=np.int64)
    for alpha, cells in index.groups.items():
        u = basis.index_of(alpha)
        for (i, j) in cells:
            cell_index[i * s + j] = u
    mult = np.bincount(cell_index, minlength=n).astype(float)

    scaling = config.scaling
    if scaling is None:
        c_vec = np.bincount(
            cell_index, weights=np.eye(s).ravel(), minlength=n
        )
    else:
        scaling = np.asarray(scaling, dtype=float)
        if scaling.shape != (s, s):
            raise ValueError(f"scaling matrix must be {s}x{s}, got {scaling.shape}")
        c_vec = np.bincount(cell_index, weights=scaling.ravel(), minlength=n)

    a_full, b_full = system.stacked()
    at, bt = _orthonormal_constraints(a_full, b_full)
    y_init = at.T @ bt

    for loc in extra_psd:
        if loc.max_moment_degree() > system.max_degree:
            raise DegreeOverflowError(
                "localizing block indexes moments beyond the unknown degree"
            )

    if not extra_psd:
        w_inv_at = at.T / mult[:, None]
        gram = at @ w_inv_at
        g_proj = w_inv_at @ np.linalg.inv(gram)
        y_vec, s_mat, iters, r_primal, r_dual = _accel.admm_nuclear(
            np.ascontiguousarray(cell_index),
            np.ascontiguousarray(mult),
            np.ascontiguousarray(c_vec),
            np.ascontiguousarray(at),
            np.ascontiguousarray(bt),
            np.ascontiguousarray(g_proj),
            np.ascontiguousarray(y_init),
            config.rho,
            config.over_relax,
            config.tol_primal,
            config.tol_dual,
            config.max_iter,
        )
        converged = iters < config.max_iter or (
            r_primal <= config.tol_primal * 10 and r_dual <= config.tol_dual * 10
        )
    else:
        y_vec, iters, r_primal, r_dual, converged = _admm_with_localizing(
            cell_index, mult, c_vec, at, bt, y_init, config, extra_psd, basis, s
        )

    zero = (0,) * system.num_vars
    values = dict(zip(basis.exponents, map(float, y_vec)))
    if abs(values[zero] - 1.0) < 1e-6:
        values[zero] = 1.0
    y = MomentSequence(system.num_vars, system.max_degree, values)
    residual = float(np.linalg.norm(a_full @ y_vec - b_full))
    certificate = flat_extension_rank(y, r, config.rank_tolerance())
    status = STATUS_CONVERGED if converged else STATUS_MAX_ITER
    return CompletionResult(
        y,
        status,
        residual,
        certificate=certificate,
        iterations=int(iters),
        objective=float(c_vec @ y_vec),
        primal_residual=float(r_primal),
        dual_residual=float(r_dual),
    )


def _localizing_operator(loc: LocalizingIndex, basis: MonomialBasis) -> np.ndarray:
    s = loc.size
    op = np.zeros((s * s, len(basis)))
    for i in range(s):
        for j in range(s):
            for alpha, coef in loc.cells[i][j].items():
                op[i * s + j, basis.index_of(alpha)] += coef
    return op


def _admm_with_localizing(cell_index, mult, c_vec, at, bt, y_init, config, extra_psd, basis, s):
    """Operator-splitting iteration with additional PSD blocks; the y-step
    solves a fixed KKT system assembled from all block operators."""
    n = len(basis)
    moment_op = np.zeros((s * s, n))
    moment_op[np.arange(s * s), cell_index] = 1.0
    ops = [moment_op] + [_localizing_operator(loc, basis) for loc in extra_psd]
    sizes = [s] + [loc.size for loc in extra_psd]

    rho = config.rho
    h = sum(op.T @ op for op in ops)
    m = at.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = rho * h
    kkt[:n, n:] = at.T
    kkt[n:, :n] = at
    lu, piv = scipy.linalg.lu_factor(kkt)

    y = y_init.copy()
    s_blocks = []
    u_blocks = []
    for op, sz in zip(ops, sizes):
        mat = (op @ y).reshape(sz, sz)
        w, v = np.linalg.eigh(0.5 * (mat + mat.T))
        s_blocks.append((v * np.maximum(w, 0.0)) @ v.T)
        u_blocks.append(np.zeros((sz, sz)))

    alpha = config.over_relax
    it = 0
    r_primal = np.inf
    r_dual = np.inf
    for it in range(1, config.max_iter + 1):
        rhs = np.zeros(n + m)
        acc = np.zeros(n)
        for op, s_b, u_b in zip(ops, s_blocks, u_blocks):
            acc += op.T @ (s_b - u_b).ravel()
        rhs[:n] = rho * acc - c_vec
        rhs[n:] = bt
        sol = scipy.linalg.lu_solve((lu, piv), rhs)
        y = sol[:n]

        rp_sq = 0.0
        rd_sq = 0.0
        norm_ax = 0.0
        norm_s = 0.0
        norm_u = 0.0
        for b_idx, (op, sz) in enumerate(zip(ops, sizes)):
            mat = (op @ y).reshape(sz, sz)
            rel = alpha * mat + (1.0 - alpha) * s_blocks[b_idx]
            w, v = np.linalg.eigh(rel + u_blocks[b_idx])
            s_new = (v * np.maximum(w, 0.0)) @ v.T
            u_blocks[b_idx] += rel - s_new
            rp_sq += float(np.sum((mat - s_new) ** 2))
            rd_sq += float(np.sum((s_new - s_blocks[b_idx]) ** 2))
            norm_ax += float(np.sum(mat**2))
            norm_s += float(np.sum(s_new**2))
            norm_u += float(np.sum(u_blocks[b_idx] ** 2))
            s_blocks[b_idx] = s_new
        r_primal = np.sqrt(rp_sq)
        r_dual = rho * np.sqrt(rd_sq)
        eps_p = config.tol_primal * max(1.0, np.sqrt(max(norm_ax, norm_s)))
        eps_d = config.tol_dual * max(1.0, rho * np.sqrt(norm_u))
        if r_primal <= eps_p and r_dual <= eps_d:
            break
    converged = it < config.max_iter or (
        r_primal <= config.tol_primal * 10 and r_dual <= config.tol_dual * 10
    )
    return y, it, r_primal, r_dual, converged
