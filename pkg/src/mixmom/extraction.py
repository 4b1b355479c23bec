"""Recover component parameters from a completed moment matrix.

The completed matrix factors through the canonical basis V whose column k
stacks all monomials evaluated at component k.  Multiplying a row block of V
by one coordinate of the parameters lands on another row block (a shift), so
an orthonormal column-space basis U turns each coordinate into a generalized
eigenproblem sharing eigenvectors across coordinates.  One random combination
pins the eigenvectors; every coordinate then falls out of a ratio of random
projections.  The classical univariate special case, where the moment matrix
is Hankel and the shift operator is a companion matrix, is exposed directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    ComplexEigenvalueError,
    ExtractionError,
    RankDeficiencyError,
    RowBasisError,
)
from .momentmat import RankTolerance
from .polyring import Exponent, add_exponents, unit_exponent


@dataclass
class ColumnBasis:
    """Orthonormal basis U of the column space, with labelled rows."""

    matrix: np.ndarray
    exponents: tuple[Exponent, ...]
    rank: int
    _positions: dict[Exponent, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        self._positions.update({a: i for i, a in enumerate(self.exponents)})

    @property
    def num_vars(self) -> int:
        return len(self.exponents[0])

    def row_index(self, alpha: Exponent) -> int | None:
        return self._positions.get(alpha)


def column_space_basis(
    m: np.ndarray,
    exponents,
    k: int,
    tol: RankTolerance = RankTolerance(),
) -> ColumnBasis:
    """Top-k left singular vectors of a (possibly rectangular) moment block."""
    m = np.asarray(m, dtype=float)
    if m.shape[0] != len(exponents):
        raise ValueError("row labels do not match the matrix")
    u, sigma, _ = np.linalg.svd(m, full_matrices=False)
    rank = int(np.count_nonzero(sigma > tol.threshold(sigma[0]))) if sigma.size else 0
    if rank < k:
        raise RankDeficiencyError(
            f"matrix has numeric rank {rank}, below the requested {k}"
        )
    return ColumnBasis(np.ascontiguousarray(u[:, :k]), tuple(exponents), k)


@dataclass
class RowBasisSelection:
    """K rows of U forming an invertible block, plus their per-variable shifts."""

    beta_indices: np.ndarray
    beta_exponents: tuple[Exponent, ...]
    shift_indices: np.ndarray  # (P, K): row of beta_k + gamma_p
    condition_number: float


def _admissible_rows(u: ColumnBasis) -> list[int]:
    """Rows whose shift by every variable stays inside the row set."""
    p = u.num_vars
    out = []
    for i, alpha in enumerate(u.exponents):
        ok = True
        for v in range(p):
            if u.row_index(add_exponents(alpha, unit_exponent(p, v))) is None:
                ok = False
                break
        if ok:
            out.append(i)
    return out


def _pivot_rows(block: np.ndarray, k: int) -> np.ndarray:
    """Indices of k rows chosen by column-pivoted QR on the transpose."""
    _, _, piv = scipy.linalg.qr(block.T, pivoting=True)
    return np.sort(piv[:k])


def select_row_basis(u: ColumnBasis, cond_limit: float = 1e8) -> RowBasisSelection:
    """Pick K rows with admissible shifts; fall back to pivoting when the
    leading choice is ill-conditioned."""
    k = u.rank
    p = u.num_vars
    admissible = _admissible_rows(u)
    if len(admissible) < k:
        raise RowBasisError(
            f"only {len(admissible)} rows admit shifts, need {k}"
        )

    def build(indices) -> RowBasisSelection | None:
        block = u.matrix[indices, :]
        cond = float(np.linalg.cond(block))
        if not np.isfinite(cond) or cond > cond_limit:
            return None
        betas = tuple(u.exponents[i] for i in indices)
        shifts = np.empty((p, k), dtype=np.int64)
        for v in range(p):
            for j, beta in enumerate(betas):
                shifts[v, j] = u.row_index(add_exponents(beta, unit_exponent(p, v)))
        return RowBasisSelection(np.asarray(indices), betas, shifts, cond)

    first = build(admissible[:k])
    if first is not None:
        return first
    pivoted = build([admissible[i] for i in _pivot_rows(u.matrix[admissible, :], k)])
    if pivoted is not None:
        return pivoted
    raise RowBasisError(
        f"no admissible row basis with condition number below {cond_limit:g}"
    )


@dataclass
class ShiftPlan:
    """Row indices driving one variable's shift: base block and shifted block."""

    beta_indices: np.ndarray
    shift_indices: np.ndarray


def _eigenvectors_from_combination(
    u_mat: np.ndarray,
    plans: list[ShiftPlan],
    anchor: list[int],
    rng: np.random.Generator,
    max_retries: int,
    gap_rtol: float = 1e-7,
):
    """Shared eigenvectors Q from one random combination over the anchor
    variables (all of which must share a base block)."""
    base = plans[anchor[0]].beta_indices
    a_block = u_mat[base, :]
    last_gap = np.inf
    for _ in range(max_retries):
        eta = rng.standard_normal(len(anchor))
        combo = np.zeros_like(a_block)
        for w, p in zip(eta, anchor):
            combo += w * u_mat[plans[p].shift_indices, :]
        evals, evecs = scipy.linalg.eig(np.linalg.solve(a_block, combo))
        scale = max(float(np.abs(evals).max()), 1.0)
        gaps = np.abs(evals[:, None] - evals[None, :])
        np.fill_diagonal(gaps, np.inf)
        last_gap = float(gaps.min()) if evals.size > 1 else np.inf
        if last_gap > gap_rtol * scale:
            return evecs
    raise ExtractionError(
        f"eigenvalues of the random shift combination coalesced "
        f"(min gap {last_gap:.2e} after {max_retries} draws); "
        "input may be noisy or components coincident"
    )


def _extract_with_plans(
    u_mat: np.ndarray,
    plans: list[ShiftPlan],
    anchor: list[int],
    rng: np.random.Generator,
    max_retries: int = 8,
    imag_rtol: float = 1e-6,
) -> np.ndarray:
    k = u_mat.shape[1]
    num_params = len(plans)
    q = _eigenvectors_from_combination(u_mat, plans, anchor, rng, max_retries)
    theta = np.empty((k, num_params), dtype=complex)
    for _ in range(max_retries):
        rho = rng.standard_normal(k)
        ok = True
        for p, plan in enumerate(plans):
            den = rho @ (u_mat[plan.beta_indices, :] @ q)
            num = rho @ (u_mat[plan.shift_indices, :] @ q)
            if np.any(np.abs(den) < 1e-12 * (np.abs(num) + 1.0)):
                ok = False
                break
            theta[:, p] = num / den
        if ok:
            break
    else:
        raise ExtractionError(
            "projection vector kept landing orthogonal to an eigenvector"
        )
    scale = max(float(np.abs(theta).max()), 1.0)
    worst = float(np.abs(theta.imag).max())
    if worst > imag_rtol * scale:
        raise ComplexEigenvalueError(
            f"extracted parameters have imaginary magnitude {worst:.2e} "
            f"(tolerance {imag_rtol * scale:.2e}); "
            "input moments are noisy or not atomic"
        )
    return np.ascontiguousarray(theta.real)


def extract_parameters(
    u: ColumnBasis,
    selection: RowBasisSelection,
    seed: int | np.random.Generator = 0,
    max_retries: int = 8,
    imag_rtol: float = 1e-6,
) -> np.ndarray:
    """Solve the shift eigenproblems and return the K parameter vectors.

    One random combination of the per-variable shifted blocks fixes the
    eigenvectors; each coordinate is then the ratio of random projections of
    the shifted and base blocks.  Components come back in no particular
    order.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = selection.shift_indices.shape[0]
    plans = [
        ShiftPlan(selection.beta_indices, selection.shift_indices[v])
        for v in range(p)
    ]
    return _extract_with_plans(
        u.matrix, plans, list(range(p)), rng, max_retries, imag_rtol
    )


def extract_parameters_via_inversion(
    u: ColumnBasis,
    selection: RowBasisSelection,
    seed: int | np.random.Generator = 0,
) -> np.ndarray:
    """Cross-check route: eigenvalues of P random combinations, unmixed by
    inverting the random matrix."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = selection.shift_indices.shape[0]
    k = u.rank
    a_block = u.matrix[selection.beta_indices, :]
    shifted = [u.matrix[selection.shift_indices[v], :] for v in range(p)]
    r_mat = rng.standard_normal((p, p))
    q = None
    lam = np.empty((p, k), dtype=complex)
    for row in range(p):
        combo = sum(r_mat[row, v] * shifted[v] for v in range(p))
        m = np.linalg.solve(a_block, combo)
        if q is None:
            _, q = scipy.linalg.eig(m)
        # shared eigenvectors: eigenvalues for this combination sit on the
        # diagonal of Q^-1 M Q
        lam[row] = np.diag(np.linalg.solve(q, m @ q))
    theta = np.linalg.solve(r_mat, lam).T
    if np.abs(theta.imag).max() > 1e-6 * max(1.0, np.abs(theta).max()):
        raise ComplexEigenvalueError("inversion route produced complex parameters")
    return theta.real


def crossview_plans(
    u: ColumnBasis, view_dims: tuple[int, int, int], cond_limit: float = 1e8
) -> tuple[list[ShiftPlan], list[int]]:
    """Per-variable shift plans for three-view moment blocks.

    Same-view products of degree two are never observable, so no single row
    basis shifts along every coordinate.  Coordinates of view a instead use a
    base block drawn from the constant row and the other views' first-degree
    rows, whose shifts land on observable cross-view rows.  The eigenvector
    matrix is global, so mixing base blocks across views is sound.
    """
    p_total = sum(view_dims)
    k = u.rank
    offsets = np.cumsum((0,) + view_dims)
    zero = (0,) * p_total
    plans: list[ShiftPlan] = [None] * p_total  # type: ignore[list-item]
    for view in range(3):
        candidates = []
        zero_row = u.row_index(zero)
        if zero_row is not None:
            candidates.append(zero_row)
        for other in range(3):
            if other == view:
                continue
            for i in range(view_dims[other]):
                idx = u.row_index(unit_exponent(p_total, offsets[other] + i))
                if idx is not None:
                    candidates.append(idx)
        if len(candidates) < k:
            raise RowBasisError(
                f"view {view}: only {len(candidates)} candidate rows for {k}"
            )
        block = u.matrix[candidates, :]
        chosen = [candidates[i] for i in _pivot_rows(block, k)]
        cond = float(np.linalg.cond(u.matrix[chosen, :]))
        if cond > cond_limit:
            raise RowBasisError(
                f"view {view}: best row basis condition {cond:.2e} too large"
            )
        beta = np.asarray(chosen)
        for local in range(view_dims[view]):
            p = offsets[view] + local
            gamma = unit_exponent(p_total, p)
            shift = np.empty(k, dtype=np.int64)
            for j, row in enumerate(chosen):
                target = u.row_index(add_exponents(u.exponents[row], gamma))
                if target is None:
                    raise RowBasisError(
                        f"shifted row missing for view {view} coordinate {local}"
                    )
                shift[j] = target
            plans[p] = ShiftPlan(beta, shift)
    anchor = list(range(offsets[0], offsets[1]))
    return plans, anchor


def extract_crossview(
    u: ColumnBasis,
    view_dims: tuple[int, int, int],
    seed: int | np.random.Generator = 0,
    max_retries: int = 8,
    imag_rtol: float = 1e-6,
) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    plans, anchor = crossview_plans(u, view_dims)
    return _extract_with_plans(u.matrix, plans, anchor, rng, max_retries, imag_rtol)


# ---------------------------------------------------------------------------
# Multiplication matrices (directly observed monomial moments)
# ---------------------------------------------------------------------------


def multiplication_matrix(
    theta_hat: np.ndarray, phi_hat: np.ndarray, cond_limit: float = 1e12
) -> np.ndarray:
    """Operator C_j with C_j Theta = Phi_j, i.e. multiplication by one
    variable in the chosen monomial basis; its eigenvalues are that
    variable's coordinates across components."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    phi_hat = np.asarray(phi_hat, dtype=float)
    cond = float(np.linalg.cond(theta_hat))
    if not np.isfinite(cond) or cond > cond_limit:
        raise RankDeficiencyError(
            f"monomial moment matrix is numerically singular (cond {cond:.2e}); "
            "components may coincide or the monomial set is deficient"
        )
    return np.linalg.solve(theta_hat.T, phi_hat.T).T


def hankel_moment_matrices(moments, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Square Hankel blocks (orders 0..2k-2 and 1..2k-1) of a univariate
    moment list."""
    moments = np.asarray(moments, dtype=float)
    if moments.size < 2 * k:
        raise ValueError(f"need 2k = {2 * k} moments, got {moments.size}")
    theta_hat = scipy.linalg.hankel(moments[:k], moments[k - 1 : 2 * k - 1])
    phi_hat = scipy.linalg.hankel(moments[1 : k + 1], moments[k : 2 * k])
    return theta_hat, phi_hat


def univariate_atoms_from_moments(
    moments, k: int, imag_rtol: float = 1e-6
) -> np.ndarray:
    """Support points of a k-atomic measure on the line from its raw moments
    M_0..M_{2k-1}, via the eigenvalues of the Hankel multiplication matrix."""
    theta_hat, phi_hat = hankel_moment_matrices(moments, k)
    c = multiplication_matrix(theta_hat, phi_hat)
    evals = np.linalg.eigvals(c)
    scale = max(float(np.abs(evals).max()), 1.0)
    if np.abs(evals.imag).max() > imag_rtol * scale:
        raise ComplexEigenvalueError(
            "Hankel multiplication matrix has complex eigenvalues; "
            "moments are noisy or not k-atomic"
        )
    return np.sort(evals.real)


# ---------------------------------------------------------------------------
# Mixing weights
# ---------------------------------------------------------------------------


def recover_weights(
    thetas: np.ndarray, observed, rank_tol: RankTolerance = RankTolerance()
) -> tuple[np.ndarray, float]:
    """Least-squares weights matching sum_k pi_k theta_k^alpha to the observed
    moments; include the pair (0, 1) to softly pin the total mass."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    k = thetas.shape[0]
    pairs = list(observed)
    if len(pairs) < k:
        raise ValueError(f"need at least {k} observed moments, got {len(pairs)}")
    design = np.empty((len(pairs), k))
    rhs = np.empty(len(pairs))
    for row, (alpha, value) in enumerate(pairs):
        design[row] = np.prod(thetas ** np.asarray(alpha, dtype=float), axis=1)
        rhs[row] = value
    sigma = np.linalg.svd(design, compute_uv=False)
    if int(np.count_nonzero(sigma > rank_tol.threshold(sigma[0]))) < k:
        raise RankDeficiencyError(
            "weight design matrix is rank-deficient; components nearly coincide"
        )
    weights, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    residual = float(np.linalg.norm(design @ weights - rhs))
    return weights, residual


@dataclass
class ComponentEstimate:
    """Extracted parameters and weights; components carry no ordering."""

    thetas: np.ndarray
    weights: np.ndarray
    certificate: int | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.thetas.shape[0]
