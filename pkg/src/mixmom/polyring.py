"""Sparse multivariate polynomials and graded-lexicographic monomial bases.

Exponent vectors are plain tuples of non-negative ints, one entry per
variable.  Every moment index, constraint system and extraction step in this
package shares the ordering fixed here: graded lexicographic, i.e. total
degree first, ties broken so that powers on earlier variables come first.
The basis for degree r is therefore always a prefix of the basis for r+1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

Exponent = tuple[int, ...]


class DimensionMismatchError(ValueError):
    """Operands or evaluation points disagree on the number of variables."""


def degree_of(alpha: Exponent) -> int:
    return sum(alpha)


def add_exponents(a: Exponent, b: Exponent) -> Exponent:
    if len(a) != len(b):
        raise DimensionMismatchError(f"exponent lengths differ: {len(a)} vs {len(b)}")
    return tuple(x + y for x, y in zip(a, b))


def unit_exponent(num_vars: int, p: int) -> Exponent:
    """Exponent of the single variable x_{p+1} (1 at position p)."""
    e = [0] * num_vars
    e[p] = 1
    return tuple(e)


def grlex_key(alpha: Exponent):
    return (sum(alpha), tuple(-a for a in alpha))


def _exponents_of_degree(num_vars: int, deg: int):
    """All exponents of exact total degree, in grlex order."""
    if num_vars == 1:
        yield (deg,)
        return
    for first in range(deg, -1, -1):
        for rest in _exponents_of_degree(num_vars - 1, deg - first):
            yield (first,) + rest


@dataclass(frozen=True)
class MonomialBasis:
    """Grlex-ordered monomials of degree <= max_degree in num_vars variables."""

    num_vars: int
    max_degree: int
    exponents: tuple[Exponent, ...]
    _positions: dict[Exponent, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        self._positions.update({a: i for i, a in enumerate(self.exponents)})

    def __len__(self) -> int:
        return len(self.exponents)

    def __iter__(self):
        return iter(self.exponents)

    def __getitem__(self, i: int) -> Exponent:
        return self.exponents[i]

    def index_of(self, alpha: Exponent) -> int:
        return self._positions[alpha]

    def __contains__(self, alpha: Exponent) -> bool:
        return alpha in self._positions


def monomials_up_to(num_vars: int, max_degree: int) -> MonomialBasis:
    """Grlex basis of all monomials with total degree <= max_degree.

    The first element is the constant monomial; the length is
    C(num_vars + max_degree, max_degree).
    """
    if num_vars < 1:
        raise ValueError(f"need at least one variable, got {num_vars}")
    if max_degree < 0:
        raise ValueError(f"degree bound must be non-negative, got {max_degree}")
    exps = tuple(
        itertools.chain.from_iterable(
            _exponents_of_degree(num_vars, d) for d in range(max_degree + 1)
        )
    )
    return MonomialBasis(num_vars, max_degree, exps)


@dataclass(frozen=True)
class Polynomial:
    """Sparse real polynomial: a map from exponent tuples to coefficients.

    Zero coefficients are never stored; the zero polynomial has an empty
    term map.  Instances are treated as immutable; all arithmetic returns
    new objects.
    """

    num_vars: int
    terms: dict[Exponent, float]

    def __post_init__(self):
        for alpha in self.terms:
            if len(alpha) != self.num_vars:
                raise DimensionMismatchError(
                    f"exponent {alpha} has length {len(alpha)}, expected {self.num_vars}"
                )
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")

    @classmethod
    def from_terms(cls, num_vars: int, terms: dict[Exponent, float]) -> "Polynomial":
        return cls(num_vars, {a: float(c) for a, c in terms.items() if c != 0.0})

    @classmethod
    def zero(cls, num_vars: int) -> "Polynomial":
        return cls(num_vars, {})

    @classmethod
    def constant(cls, num_vars: int, value: float) -> "Polynomial":
        return cls.from_terms(num_vars, {(0,) * num_vars: value})

    @classmethod
    def variable(cls, num_vars: int, p: int) -> "Polynomial":
        return cls(num_vars, {unit_exponent(num_vars, p): 1.0})

    @classmethod
    def monomial(cls, alpha: Exponent, coeff: float = 1.0) -> "Polynomial":
        return cls.from_terms(len(alpha), {tuple(alpha): coeff})

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def coefficient(self, alpha: Exponent) -> float:
        return self.terms.get(tuple(alpha), 0.0)

    def __call__(self, point) -> float:
        return poly_eval(self, point)

    def _check_compatible(self, other: "Polynomial"):
        if self.num_vars != other.num_vars:
            raise DimensionMismatchError(
                f"mixing polynomials in {self.num_vars} and {other.num_vars} variables"
            )

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.num_vars, other)
        self._check_compatible(other)
        terms = dict(self.terms)
        for alpha, c in other.terms.items():
            terms[alpha] = terms.get(alpha, 0.0) + c
        return Polynomial.from_terms(self.num_vars, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.num_vars, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.num_vars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, factor: float) -> "Polynomial":
        return Polynomial.from_terms(
            self.num_vars, {a: factor * c for a, c in self.terms.items()}
        )

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        self._check_compatible(other)
        terms: dict[Exponent, float] = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                ab = add_exponents(a, b)
                terms[ab] = terms.get(ab, 0.0) + ca * cb
        return Polynomial.from_terms(self.num_vars, terms)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        return NotImplemented

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative powers are not polynomials")
        out = Polynomial.constant(self.num_vars, 1.0)
        for _ in range(n):
            out = out * self
        return out

    def shift(self, alpha: Exponent) -> "Polynomial":
        """Multiply by the monomial with the given exponent."""
        return Polynomial(
            self.num_vars,
            {add_exponents(a, alpha): c for a, c in self.terms.items()},
        )

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for alpha in sorted(self.terms, key=grlex_key):
            c = self.terms[alpha]
            factors = [f"{c:g}"]
            for p, a in enumerate(alpha):
                if a > 0:
                    factors.append(f"x{p + 1}^{a}")
            parts.append("*".join(factors))
        return " + ".join(parts)


def poly_eval(f: Polynomial, point) -> float:
    """Evaluate f at a point given as a length-num_vars sequence."""
    if len(point) != f.num_vars:
        raise DimensionMismatchError(
            f"point has length {len(point)}, expected {f.num_vars}"
        )
    total = 0.0
    for alpha, c in f.terms.items():
        v = c
        for x, a in zip(point, alpha):
            if a:
                v *= float(x) ** a
        total += v
    return total
