"""Truncated moment matrices over parameter monomials.

A moment sequence y assigns a real value to each exponent tuple; the moment
matrix of degree r has rows and columns labelled by the grlex basis of
degree <= r and cell (i, j) equal to y at the exponent sum of the two
labels.  This module builds those indices symbolically, realises them
numerically, applies the linear functional behind them to polynomials, and
certifies atomicity through the flat-extension rank test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .polyring import (
    Exponent,
    MonomialBasis,
    Polynomial,
    add_exponents,
    grlex_key,
    monomials_up_to,
)


class MissingMomentError(KeyError):
    """A consumer indexed an exponent the moment sequence does not cover."""

    def __init__(self, alpha: Exponent):
        super().__init__(alpha)
        self.alpha = alpha

    def __str__(self):
        return f"moment value for exponent {self.alpha} is not available"


class DegreeOverflowError(ValueError):
    """A symbolic construction would index moments beyond the available degree."""


@dataclass(frozen=True)
class MomentSequence:
    """Values y_alpha indexed by exponent tuples, normalized so y_0 = 1."""

    num_vars: int
    max_degree: int
    values: dict[Exponent, float]

    def __post_init__(self):
        zero = (0,) * self.num_vars
        if zero not in self.values:
            raise ValueError("moment sequence must define the zero exponent")
        if abs(self.values[zero] - 1.0) > 1e-9:
            raise ValueError(
                f"moment sequence must have y_0 = 1, got {self.values[zero]!r}"
            )

    @classmethod
    def from_atoms(cls, atoms, weights, max_degree: int) -> "MomentSequence":
        """Moments of the atomic measure sum_k weights[k] * delta(atoms[k])."""
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        weights = np.asarray(weights, dtype=float)
        num_vars = atoms.shape[1]
        vals: dict[Exponent, float] = {}
        for alpha in monomials_up_to(num_vars, max_degree):
            powers = np.prod(atoms ** np.asarray(alpha), axis=1)
            vals[alpha] = float(weights @ powers)
        return cls(num_vars, max_degree, vals)

    def value(self, alpha: Exponent) -> float:
        try:
            return self.values[tuple(alpha)]
        except KeyError:
            raise MissingMomentError(tuple(alpha)) from None

    def covers(self, alpha: Exponent) -> bool:
        return tuple(alpha) in self.values

    def covers_degree(self, deg: int) -> bool:
        return all(a in self.values for a in monomials_up_to(self.num_vars, deg))

    def to_pairs(self) -> list[tuple[list[int], float]]:
        """Sorted (exponent, value) pairs, the JSON serialization layout."""
        return [
            [list(a), self.values[a]] for a in sorted(self.values, key=grlex_key)
        ]


@dataclass(frozen=True)
class MomentIndex:
    """Symbolic moment matrix: cell (i, j) holds the exponent sum of its labels."""

    basis: MonomialBasis
    cells: tuple[tuple[Exponent, ...], ...]
    groups: dict[Exponent, list[tuple[int, int]]] = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.basis)

    def cell(self, i: int, j: int) -> Exponent:
        return self.cells[i][j]


def build_moment_index(num_vars: int, r: int) -> MomentIndex:
    """Index of the degree-r moment matrix over the full grlex basis."""
    if r < 1:
        raise ValueError(f"moment matrix degree must be >= 1, got {r}")
    basis = monomials_up_to(num_vars, r)
    cells = []
    groups: dict[Exponent, list[tuple[int, int]]] = {}
    for i, a in enumerate(basis):
        row = []
        for j, b in enumerate(basis):
            ab = add_exponents(a, b)
            row.append(ab)
            groups.setdefault(ab, []).append((i, j))
        cells.append(tuple(row))
    return MomentIndex(basis, tuple(cells), groups)


def assemble(index: MomentIndex, y: MomentSequence) -> np.ndarray:
    """Numeric moment matrix: shared cells get the identical value, so the
    result is exactly symmetric."""
    s = index.size
    out = np.empty((s, s))
    for alpha, cells in index.groups.items():
        v = y.value(alpha)
        for i, j in cells:
            out[i, j] = v
    return out


def assemble_slab(row_exponents, col_exponents, y: MomentSequence) -> np.ndarray:
    """Rectangular moment block with cell (i, j) = y at row_i + col_j."""
    out = np.empty((len(row_exponents), len(col_exponents)))
    for i, a in enumerate(row_exponents):
        for j, b in enumerate(col_exponents):
            out[i, j] = y.value(add_exponents(a, b))
    return out


def riesz_coefficients(f: Polynomial) -> dict[Exponent, float]:
    """Representation of f under the moment functional: applying the result
    to y gives sum_alpha a_alpha * y_alpha, the constant term hitting y_0."""
    return dict(f.terms)


def apply_riesz(coefficients: dict[Exponent, float], y: MomentSequence) -> float:
    return sum(c * y.value(a) for a, c in coefficients.items())


@dataclass(frozen=True)
class LinearMomentConstraint:
    """One linear equality sum_alpha a_alpha y_alpha = rhs."""

    coefficients: dict[Exponent, float]
    rhs: float
    label: str = ""

    def __post_init__(self):
        if not any(c != 0.0 for c in self.coefficients.values()):
            raise ValueError("constraint has no nonzero coefficient")

    def max_degree(self) -> int:
        return max(sum(a) for a in self.coefficients)

    def residual(self, y: MomentSequence) -> float:
        return apply_riesz(self.coefficients, y) - self.rhs


def constraint_from_polynomial(
    f: Polynomial, rhs: float, label: str = ""
) -> LinearMomentConstraint:
    return LinearMomentConstraint(riesz_coefficients(f), rhs, label)


@dataclass(frozen=True)
class LocalizingIndex:
    """Symbolic localizing matrix for a constraint polynomial g: cell (i, j)
    holds the coefficient map of the monomial product of its labels with g."""

    polynomial: Polynomial
    basis: MonomialBasis
    cells: tuple[tuple[dict[Exponent, float], ...], ...]

    @property
    def size(self) -> int:
        return len(self.basis)

    def max_moment_degree(self) -> int:
        return 2 * self.basis.max_degree + self.polynomial.degree()


def localizing_index(
    g: Polynomial, max_moment_degree: int, basis_degree: int | None = None
) -> LocalizingIndex:
    """Localizing index for g, sized to fit within the available moments.

    The row/column basis degree defaults to the largest value with
    2 * basis_degree + deg(g) <= max_moment_degree.
    """
    if g.is_zero:
        raise ValueError("localizing polynomial must be nonzero")
    if basis_degree is None:
        basis_degree = (max_moment_degree - g.degree()) // 2
    if basis_degree < 0 or 2 * basis_degree + g.degree() > max_moment_degree:
        raise DegreeOverflowError(
            f"localizing matrix for degree-{g.degree()} polynomial does not fit "
            f"within moments of degree {max_moment_degree}"
        )
    basis = monomials_up_to(g.num_vars, basis_degree)
    cells = []
    for a in basis:
        row = []
        for b in basis:
            row.append(riesz_coefficients(g.shift(add_exponents(a, b))))
        cells.append(tuple(row))
    return LocalizingIndex(g, basis, tuple(cells))


def assemble_localizing(index: LocalizingIndex, y: MomentSequence) -> np.ndarray:
    s = index.size
    out = np.empty((s, s))
    for i in range(s):
        for j in range(i, s):
            v = apply_riesz(index.cells[i][j], y)
            out[i, j] = v
            out[j, i] = v
    return out


def equality_constraint_family(
    g: Polynomial, max_shift_degree: int
) -> list[LinearMomentConstraint]:
    """Constraints L_y(theta^beta * g) = 0 for every |beta| <= max_shift_degree.

    Valid when g vanishes at every component parameter vector: the atomic
    measure then annihilates all shifted copies of g.
    """
    out = []
    for beta in monomials_up_to(g.num_vars, max_shift_degree):
        out.append(
            LinearMomentConstraint(
                riesz_coefficients(g.shift(beta)), 0.0, label=f"shift{beta}"
            )
        )
    return out


@dataclass(frozen=True)
class RankTolerance:
    """Singular values above rel * sigma_max (with an optional absolute floor)
    count toward the numeric rank."""

    rel: float = 1e-6
    floor: float = 0.0

    def threshold(self, sigma_max: float) -> float:
        return max(self.rel * sigma_max, self.floor)


def numeric_rank(a: np.ndarray, tol: RankTolerance = RankTolerance()) -> int:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0
    sigma = np.linalg.svd(a, compute_uv=False)
    if sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > tol.threshold(sigma[0])))


def flat_extension_rank(
    y: MomentSequence,
    r: int,
    tol: RankTolerance = RankTolerance(),
    psd_slack_rel: float = 1e-8,
) -> int | None:
    """Certified atom count, or None when the flat-rank test fails.

    Returns K when rank M_{r-1}(y) = rank M_r(y) = K and M_r(y) is
    positive semidefinite up to a slack proportional to its largest
    singular value; in that case y restricted to degree 2r is the moment
    sequence of a unique K-atomic measure.
    """
    if r < 1:
        raise ValueError("flat extension requires r >= 1")
    index = build_moment_index(y.num_vars, r)
    big = assemble(index, y)
    # grlex prefix property: the degree r-1 matrix is the leading block
    s_small = len(monomials_up_to(y.num_vars, r - 1))
    small = big[:s_small, :s_small]
    sigma_max = float(np.linalg.norm(big, 2))
    min_eig = float(np.linalg.eigvalsh(big).min())
    if min_eig < -psd_slack_rel * max(sigma_max, 1e-300):
        return None
    k_big = numeric_rank(big, tol)
    k_small = numeric_rank(small, tol)
    if k_big == k_small:
        return k_big
    return None


def flat_slab_rank(
    slab: np.ndarray, n_low_rows: int, tol: RankTolerance = RankTolerance()
) -> int | None:
    """Rank-flatness test for a rectangular moment block whose first
    n_low_rows rows are the low-degree monomials: certified K when the
    low block already spans the full column space."""
    k_full = numeric_rank(slab, tol)
    k_low = numeric_rank(slab[:n_low_rows], tol)
    if k_full == k_low:
        return k_full
    return None
