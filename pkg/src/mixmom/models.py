"""Model adapters: observation functions, their expected-value polynomials,
samplers and parameter layouts.

Each adapter owns one mixture family.  It declares a list of observation
descriptors, turns each descriptor into the polynomial giving the
observation's expectation over a single component, samples synthetic data,
and estimates the observation means from data.  Estimation code downstream
never needs to know which model it is running on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import raw_moment_means
from .errors import ExtractionError, InputError
from .momentmat import MissingMomentError
from .polyring import Exponent, Polynomial, monomials_up_to, poly_eval, unit_exponent


@dataclass
class MixtureSpec:
    """Ground-truth mixture: weights, per-component parameter vectors and any
    model-side nuisance values (trial count, known noise variance, ...)."""

    model: str
    weights: np.ndarray
    components: np.ndarray
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.components = np.atleast_2d(np.asarray(self.components, dtype=float))
        if np.any(self.weights <= 0):
            raise ValueError("mixing weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-8:
            raise ValueError("mixing weights must sum to 1")
        if self.weights.shape[0] != self.components.shape[0]:
            raise ValueError("weights and components disagree on K")

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def num_params(self) -> int:
        return self.components.shape[1]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "weights": [float(w) for w in self.weights],
            "components": [[float(v) for v in row] for row in self.components],
            "extras": {k: self.extras[k] for k in sorted(self.extras)},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MixtureSpec":
        try:
            return cls(
                raw["model"],
                raw["weights"],
                raw["components"],
                dict(raw.get("extras", {})),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed mixture spec: {exc}") from exc


# ---------------------------------------------------------------------------
# Gaussian moment polynomials
# ---------------------------------------------------------------------------


def hermite_moment_coeffs(a: int) -> list[float]:
    """Coefficients of E[(xi + sqrt(c) Z)^a] as a polynomial in (xi, c):
    entry i multiplies xi^(a-2i) c^i.  These are the absolute coefficients of
    the degree-a probabilists' Hermite polynomial."""
    if a < 0:
        raise ValueError("moment order must be non-negative")
    return [
        math.factorial(a) / (2**i * math.factorial(i) * math.factorial(a - 2 * i))
        for i in range(a // 2 + 1)
    ]


def gaussian_moment_poly(alpha, data_dim: int) -> Polynomial:
    """E[x^alpha] for x ~ N(xi, diag(c)) as a polynomial in (xi_1..xi_D,
    c_1..c_D): the product over dimensions of univariate Gaussian moment
    polynomials."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != data_dim:
        raise ValueError("exponent length must match the data dimension")
    p_total = 2 * data_dim
    out = Polynomial.constant(p_total, 1.0)
    for d, a in enumerate(alpha):
        if a == 0:
            continue
        coeffs = hermite_moment_coeffs(a)
        terms = {}
        for i, coef in enumerate(coeffs):
            e = [0] * p_total
            e[d] = a - 2 * i
            e[data_dim + d] = i
            terms[tuple(e)] = coef
        out = out * Polynomial.from_terms(p_total, terms)
    return out


def binomial_moment_poly(i: int, m: int) -> Polynomial:
    """P[X = i] for X ~ Binomial(m, p), expanded as a degree-m polynomial."""
    if not 0 <= i <= m:
        raise ValueError(f"need 0 <= i <= m, got i={i}, m={m}")
    p = Polynomial.variable(1, 0)
    return math.comb(m, i) * p**i * (1 - p) ** (m - i)


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def mlr_moment_poly(
    alpha,
    b: int,
    x_moments: dict[Exponent, float],
    sigma2: float | None,
    data_dim: int,
    sigma_as_param: bool = False,
) -> Polynomial:
    """E[x^alpha y^b] with y = w.x + eps, eps ~ N(0, sigma^2), as a polynomial
    in the slopes w (and in sigma^2 itself when it is a parameter).

    Coefficients are moments of the x distribution, supplied by the caller.
    """
    alpha = tuple(int(a) for a in alpha)
    if b not in (0, 1, 2, 3):
        raise ValueError(f"observation power b must be in 0..3, got {b}")
    p_total = data_dim + 1 if sigma_as_param else data_dim

    def xm(exp: Exponent) -> float:
        try:
            return x_moments[exp]
        except KeyError:
            raise MissingMomentError(exp) from None

    terms: dict[Exponent, float] = {}
    for j in range(0, b + 1, 2):
        noise = math.comb(b, j) * _double_factorial(j - 1)
        for kappa in monomials_up_to(data_dim, b - j):
            if sum(kappa) != b - j:
                continue
            multi = math.factorial(b - j)
            for a in kappa:
                multi //= math.factorial(a)
            coef = noise * multi * xm(tuple(x + y for x, y in zip(alpha, kappa)))
            if sigma_as_param:
                exp = kappa + (j // 2,)
            else:
                if sigma2 is None and j > 0:
                    raise ValueError(
                        "noise variance is unknown and not a parameter; "
                        f"observation (alpha={alpha}, b={b}) has no "
                        "component-independent polynomial"
                    )
                coef *= (sigma2 or 0.0) ** (j // 2)
                exp = kappa
            terms[exp] = terms.get(exp, 0.0) + coef
    return Polynomial.from_terms(p_total, terms)


def multiview_moment_poly(descriptor, view_dims) -> Polynomial:
    """Cross-view product moments: each observation is a monomial in the
    stacked per-view means."""
    p_total = sum(view_dims)
    offsets = np.cumsum((0,) + tuple(view_dims))
    kind = descriptor[0]
    e = [0] * p_total
    if kind == "single":
        _, view, i = descriptor
        e[offsets[view] + i] = 1
    elif kind == "pair":
        _, a, i, b, j = descriptor
        e[offsets[a] + i] += 1
        e[offsets[b] + j] += 1
    elif kind == "triple":
        _, i, j, k = descriptor
        e[offsets[0] + i] += 1
        e[offsets[1] + j] += 1
        e[offsets[2] + k] += 1
    else:
        raise ValueError(f"unknown multiview descriptor {descriptor!r}")
    return Polynomial.monomial(tuple(e))


# ---------------------------------------------------------------------------
# Adapters
# ---------------------------------------------------------------------------

SOURCE_CONSTANT = "constant"
SOURCE_DATA_MOMENT = "data-moment"
SOURCE_COMPONENT_PARAMETER = "component-parameter"


class GaussianAdapter:
    """Mixture of Gaussians with diagonal covariance; parameters per
    component are (xi_1..xi_D, c_1..c_D)."""

    def __init__(self, data_dim: int, max_obs_degree: int | None = None):
        self.data_dim = data_dim
        self.max_obs_degree = max_obs_degree or (6 if data_dim == 1 else 4)
        self.name = "gaussian-diag" if data_dim > 1 else "gaussian-1d"
        self.num_params = 2 * data_dim

    def observation_descriptors(self):
        return [
            alpha
            for alpha in monomials_up_to(self.data_dim, self.max_obs_degree)
            if sum(alpha) >= 1
        ]

    def moment_polynomial(self, descriptor, aux=None) -> Polynomial:
        return gaussian_moment_poly(descriptor, self.data_dim)

    def coefficient_sources(self, descriptor):
        return frozenset({SOURCE_CONSTANT})

    def default_degree(self, k: int) -> int:
        return 3 if self.data_dim == 1 else 2

    @property
    def moment_degree(self) -> int:
        return self.max_obs_degree

    def domain_inequalities(self):
        return [
            Polynomial.variable(self.num_params, self.data_dim + d)
            for d in range(self.data_dim)
        ]

    def validate_spec(self, spec: MixtureSpec):
        if spec.num_params != self.num_params:
            raise ValueError("component vectors must hold means then variances")
        if np.any(spec.components[:, self.data_dim :] <= 0):
            raise ValueError("variances must be positive")

    def sample(self, spec: MixtureSpec, t: int, rng: np.random.Generator):
        self.validate_spec(spec)
        z = rng.choice(spec.k, size=t, p=spec.weights)
        mean = spec.components[z, : self.data_dim]
        std = np.sqrt(spec.components[z, self.data_dim :])
        return mean + std * rng.standard_normal((t, self.data_dim))

    def estimate_observation_means(self, data: np.ndarray):
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[0] == 0:
            raise ValueError("no data rows")
        descriptors = self.observation_descriptors()
        vals = raw_moment_means(data, np.array(descriptors))
        return list(zip(descriptors, map(float, vals))), {}

    def exact_aux(self, spec: MixtureSpec) -> dict:
        return {}

    def postprocess_thetas(self, thetas: np.ndarray, clip_eps: float = 1e-8):
        thetas = np.array(thetas, dtype=float)
        variances = thetas[:, self.data_dim :]
        too_negative = variances < -clip_eps
        if np.any(too_negative):
            raise ExtractionError(
                f"extracted variance {variances.min():.3e} is negative beyond "
                f"tolerance {clip_eps:.0e}"
            )
        thetas[:, self.data_dim :] = np.maximum(variances, 0.0)
        return thetas

    def param_names(self):
        d = self.data_dim
        return [f"mean{i + 1}" for i in range(d)] + [f"var{i + 1}" for i in range(d)]


class MlrAdapter:
    """Mixture of linear regressions y = w_k . x + noise with x shared across
    components; parameters per component are the slopes w (plus the noise
    variance when sigma_as_param is set)."""

    def __init__(
        self,
        data_dim: int,
        sigma2: float | None,
        b_max: int = 2,
        sigma_as_param: bool = False,
        max_x_degree: int = 3,
    ):
        if b_max not in (1, 2, 3):
            raise ValueError("b_max must be 1, 2 or 3")
        self.data_dim = data_dim  # dimension of x; data rows carry x then y
        self.sigma2 = sigma2
        self.b_max = b_max
        self.sigma_as_param = sigma_as_param
        self.max_x_degree = max_x_degree
        self.name = "mlr"
        self.num_params = data_dim + 1 if sigma_as_param else data_dim

    def observation_descriptors(self):
        return [
            (alpha, b)
            for alpha in monomials_up_to(self.data_dim, self.max_x_degree)
            for b in range(1, self.b_max + 1)
        ]

    def moment_polynomial(self, descriptor, aux=None) -> Polynomial:
        alpha, b = descriptor
        if aux is None or "x_moments" not in aux:
            raise ValueError("regression polynomials need estimated x moments")
        return mlr_moment_poly(
            alpha, b, aux["x_moments"], self.sigma2, self.data_dim, self.sigma_as_param
        )

    def coefficient_sources(self, descriptor):
        _, b = descriptor
        if b >= 2 and self.sigma2 is None and not self.sigma_as_param:
            # noise enters the expectation but belongs to no declared quantity
            return frozenset(
                {SOURCE_DATA_MOMENT, SOURCE_COMPONENT_PARAMETER}
            )
        return frozenset({SOURCE_DATA_MOMENT, SOURCE_CONSTANT})

    def default_degree(self, k: int) -> int:
        return 2

    @property
    def moment_degree(self) -> int:
        return self.b_max

    def domain_inequalities(self):
        if self.sigma_as_param:
            return [Polynomial.variable(self.num_params, self.data_dim)]
        return []

    def validate_spec(self, spec: MixtureSpec):
        if spec.num_params != self.num_params:
            raise ValueError("component vectors must hold the slope parameters")
        if self.sigma2 is None and not self.sigma_as_param:
            raise ValueError("sampling needs a known noise variance")

    def sample(self, spec: MixtureSpec, t: int, rng: np.random.Generator):
        self.validate_spec(spec)
        z = rng.choice(spec.k, size=t, p=spec.weights)
        x = rng.standard_normal((t, self.data_dim))
        w = spec.components[z, : self.data_dim]
        if self.sigma_as_param:
            s2 = spec.components[z, self.data_dim]
        else:
            s2 = np.full(t, float(self.sigma2))
        y = np.sum(w * x, axis=1) + np.sqrt(s2) * rng.standard_normal(t)
        return np.column_stack([x, y])

    def _x_moment_exponents(self):
        max_deg = self.max_x_degree + self.b_max
        return [alpha for alpha in monomials_up_to(self.data_dim, max_deg)]

    def estimate_observation_means(self, data: np.ndarray):
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[0] == 0:
            raise ValueError("no data rows")
        if data.shape[1] != self.data_dim + 1:
            raise ValueError("regression data must hold x columns then y")
        descriptors = self.observation_descriptors()
        exps = np.array([alpha + (b,) for alpha, b in descriptors])
        vals = raw_moment_means(data, exps)
        x_exps = self._x_moment_exponents()
        x_vals = raw_moment_means(data[:, : self.data_dim], np.array(x_exps))
        aux = {"x_moments": dict(zip(x_exps, map(float, x_vals)))}
        return list(zip(descriptors, map(float, vals))), aux

    def exact_aux(self, spec: MixtureSpec) -> dict:
        dist = spec.extras.get("x_dist", "standard_normal")
        if dist != "standard_normal":
            raise ValueError(f"exact x moments unavailable for x_dist={dist!r}")
        moments = {}
        for alpha in self._x_moment_exponents():
            v = 1.0
            for a in alpha:
                v *= 0.0 if a % 2 else _double_factorial(a - 1)
            moments[alpha] = v
        return {"x_moments": moments}

    def postprocess_thetas(self, thetas: np.ndarray, clip_eps: float = 1e-8):
        if not self.sigma_as_param:
            return np.array(thetas, dtype=float)
        thetas = np.array(thetas, dtype=float)
        s2 = thetas[:, self.data_dim]
        if np.any(s2 < -clip_eps):
            raise ExtractionError("extracted noise variance is negative")
        thetas[:, self.data_dim] = np.maximum(s2, 0.0)
        return thetas

    def param_names(self):
        names = [f"w{i + 1}" for i in range(self.data_dim)]
        if self.sigma_as_param:
            names.append("noise_var")
        return names


class BinomialAdapter:
    """Mixture of binomial counts over m trials; one success probability per
    component."""

    def __init__(self, m: int):
        if m < 1:
            raise ValueError("m must be at least 1")
        self.m = m
        self.data_dim = 1
        self.name = "binomial"
        self.num_params = 1

    def observation_descriptors(self):
        return list(range(self.m + 1))

    def moment_polynomial(self, descriptor, aux=None) -> Polynomial:
        return binomial_moment_poly(int(descriptor), self.m)

    def coefficient_sources(self, descriptor):
        return frozenset({SOURCE_CONSTANT})

    def default_degree(self, k: int) -> int:
        return min(k, self.m // 2) if self.m >= 2 else 1

    @property
    def moment_degree(self) -> int:
        return self.m

    def domain_inequalities(self):
        p = Polynomial.variable(1, 0)
        return [p, 1 - p]

    def validate_spec(self, spec: MixtureSpec):
        if spec.num_params != 1:
            raise ValueError("binomial components have a single parameter")
        if np.any((spec.components <= 0) | (spec.components >= 1)):
            raise ValueError("success probabilities must lie in (0, 1)")

    def sample(self, spec: MixtureSpec, t: int, rng: np.random.Generator):
        self.validate_spec(spec)
        z = rng.choice(spec.k, size=t, p=spec.weights)
        draws = rng.binomial(self.m, spec.components[z, 0])
        return draws.reshape(-1, 1).astype(float)

    def estimate_observation_means(self, data: np.ndarray):
        data = np.asarray(data, dtype=float).reshape(-1)
        if data.size == 0:
            raise ValueError("no data rows")
        counts = np.bincount(data.astype(int), minlength=self.m + 1)
        freqs = counts / data.size
        return [(i, float(freqs[i])) for i in range(self.m + 1)], {}

    def exact_aux(self, spec: MixtureSpec) -> dict:
        return {}

    def postprocess_thetas(self, thetas: np.ndarray, clip_eps: float = 1e-8):
        return np.array(thetas, dtype=float)

    def param_names(self):
        return ["p"]


class MultiviewAdapter:
    """Three conditionally independent views, each with a per-component mean
    vector; parameters stack the three view means."""

    def __init__(self, view_dim: int | tuple[int, int, int]):
        if isinstance(view_dim, int):
            self.view_dims = (view_dim, view_dim, view_dim)
        else:
            self.view_dims = tuple(view_dim)
        self.data_dim = sum(self.view_dims)
        self.name = "multiview"
        self.num_params = sum(self.view_dims)

    def observation_descriptors(self):
        d1, d2, d3 = self.view_dims
        out = [("single", l, i) for l in range(3) for i in range(self.view_dims[l])]
        out += [
            ("pair", a, i, b, j)
            for (a, b) in ((0, 1), (0, 2), (1, 2))
            for i in range(self.view_dims[a])
            for j in range(self.view_dims[b])
        ]
        out += [
            ("triple", i, j, k)
            for i in range(d1)
            for j in range(d2)
            for k in range(d3)
        ]
        return out

    def moment_polynomial(self, descriptor, aux=None) -> Polynomial:
        return multiview_moment_poly(descriptor, self.view_dims)

    def coefficient_sources(self, descriptor):
        return frozenset({SOURCE_CONSTANT})

    def default_degree(self, k: int) -> int:
        return 1

    @property
    def moment_degree(self) -> int:
        return 3

    def domain_inequalities(self):
        return []

    def validate_spec(self, spec: MixtureSpec):
        if spec.num_params != self.num_params:
            raise ValueError("component vectors must stack the three view means")

    def sample(self, spec: MixtureSpec, t: int, rng: np.random.Generator):
        self.validate_spec(spec)
        noise = float(spec.extras.get("view_noise", 1.0))
        z = rng.choice(spec.k, size=t, p=spec.weights)
        means = spec.components[z]
        return means + noise * rng.standard_normal((t, self.data_dim))

    def _descriptor_exponent(self, descriptor):
        return multiview_moment_poly(descriptor, self.view_dims)

    def estimate_observation_means(self, data: np.ndarray):
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[0] == 0:
            raise ValueError("no data rows")
        if data.shape[1] != self.data_dim:
            raise ValueError("multiview data must concatenate the three views")
        descriptors = self.observation_descriptors()
        exps = []
        for desc in descriptors:
            poly = multiview_moment_poly(desc, self.view_dims)
            exps.append(next(iter(poly.terms)))
        vals = raw_moment_means(data, np.array(exps))
        return list(zip(descriptors, map(float, vals))), {}

    def exact_aux(self, spec: MixtureSpec) -> dict:
        return {}

    def postprocess_thetas(self, thetas: np.ndarray, clip_eps: float = 1e-8):
        return np.array(thetas, dtype=float)

    def param_names(self):
        return [
            f"view{l + 1}_mean{i + 1}"
            for l in range(3)
            for i in range(self.view_dims[l])
        ]


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def exact_observation_means(adapter, spec: MixtureSpec):
    """Noise-free observation means: the weighted sum of each observation
    polynomial over the true components."""
    adapter.validate_spec(spec)
    aux = adapter.exact_aux(spec)
    out = []
    for desc in adapter.observation_descriptors():
        f = adapter.moment_polynomial(desc, aux)
        val = sum(
            w * poly_eval(f, theta) for w, theta in zip(spec.weights, spec.components)
        )
        out.append((desc, float(val)))
    return out, aux


def mixture_moment(adapter, thetas, weights, descriptor, aux) -> float:
    f = adapter.moment_polynomial(descriptor, aux)
    return float(
        sum(w * poly_eval(f, theta) for w, theta in zip(weights, thetas))
    )


@dataclass
class SeparabilityResult:
    ok: bool
    witness: object = None

    def __bool__(self):
        return self.ok


def separability_check(adapter) -> SeparabilityResult:
    """Verify that no observation polynomial smuggles component-dependent
    quantities into its coefficients; coefficients may only reference data-side
    moments and known constants."""
    for desc in adapter.observation_descriptors():
        sources = adapter.coefficient_sources(desc)
        if SOURCE_COMPONENT_PARAMETER in sources:
            return SeparabilityResult(False, witness=desc)
    return SeparabilityResult(True)


MODEL_NAMES = (
    "gaussian-1d",
    "gaussian-diag",
    "gaussian-spherical",
    "mlr",
    "binomial",
    "multiview",
)


def make_adapter(model: str, d: int = 1, **options):
    """Adapter factory shared by the CLI and the experiment harness."""
    if model in ("gaussian-1d", "gaussian-diag", "gaussian-spherical"):
        return GaussianAdapter(1 if model == "gaussian-1d" else d)
    if model == "mlr":
        return MlrAdapter(
            d,
            sigma2=options.get("sigma2", 0.25),
            b_max=options.get("b_max", 2),
            sigma_as_param=options.get("sigma_as_param", False),
        )
    if model == "binomial":
        return BinomialAdapter(options.get("m", 10))
    if model == "multiview":
        return MultiviewAdapter(d)
    raise InputError(f"unknown model {model!r}; choose from {MODEL_NAMES}")


def random_mixture_spec(
    model: str, k: int, d: int, rng: np.random.Generator, **options
) -> MixtureSpec:
    """Random ground-truth models for the experiment harness.

    Gaussian rows follow the hard regime used in the evaluation tables: means
    drawn standard normal, redrawn until no two are closer than 0.2, with the
    common noise scale sigma = spread * mean pairwise distance (spread
    defaults to 2).  Weights are uniform on [0.3, 0.7]^K, normalized.
    """
    weights = rng.uniform(0.3, 0.7, size=k)
    weights = weights / weights.sum()

    def separated_points(dim, min_gap=0.2):
        while True:
            pts = rng.standard_normal((k, dim))
            gaps = [
                np.linalg.norm(pts[i] - pts[j])
                for i in range(k)
                for j in range(i + 1, k)
            ]
            if not gaps or min(gaps) >= min_gap:
                return pts, (float(np.mean(gaps)) if gaps else 1.0)

    if model in ("gaussian-spherical", "gaussian-diag", "gaussian-1d"):
        dim = 1 if model == "gaussian-1d" else d
        means, mean_gap = separated_points(dim)
        sigma = options.get("spread", 2.0) * mean_gap
        if model == "gaussian-diag":
            variances = sigma**2 * rng.uniform(0.5, 1.5, size=(k, dim))
        else:
            variances = np.full((k, dim), sigma**2)
        return MixtureSpec(model, weights, np.hstack([means, variances]))
    if model == "mlr":
        slopes, _ = separated_points(d, min_gap=0.5)
        return MixtureSpec(
            model, weights, slopes, {"sigma2": options.get("sigma2", 0.25)}
        )
    if model == "binomial":
        m = options.get("m", 10)
        while True:
            probs = rng.uniform(0.15, 0.85, size=(k, 1))
            gaps = [
                abs(probs[i, 0] - probs[j, 0])
                for i in range(k)
                for j in range(i + 1, k)
            ]
            if not gaps or min(gaps) >= 0.15:
                break
        return MixtureSpec(model, weights, probs, {"m": m})
    if model == "multiview":
        comps, _ = separated_points(3 * d, min_gap=0.5)
        return MixtureSpec(
            model, weights, comps, {"view_noise": options.get("view_noise", 1.0)}
        )
    raise InputError(f"unknown model {model!r}; choose from {MODEL_NAMES}")
