"""End-to-end estimation: data -> moment constraints -> completion ->
certification -> extraction -> weights, plus the EM baseline, the error
metric and the experiment harness.

The solver path is chosen per problem: three-view mixtures complete by block
corner completion, constraint stacks that pin the moments uniquely go through
the direct linear solve, everything else through the semidefinite relaxation.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .completion import (
    CompletionResult,
    MomentConstraintSystem,
    MultiviewMoments,
    SdpConfig,
    complete_multiview,
    solve_linear_completion,
    solve_sdp_nuclear,
)
from .errors import ExtractionError, InputError, SolverError
from .extraction import (
    ColumnBasis,
    ComponentEstimate,
    column_space_basis,
    extract_crossview,
    extract_parameters,
    recover_weights,
    select_row_basis,
    univariate_atoms_from_moments,
)
from .momentmat import (
    LinearMomentConstraint,
    MomentSequence,
    RankTolerance,
    assemble,
    assemble_slab,
    build_moment_index,
    equality_constraint_family,
    flat_extension_rank,
    flat_slab_rank,
    localizing_index,
    riesz_coefficients,
)
from .models import MixtureSpec, mixture_moment, random_mixture_spec
from .polyring import (
    Polynomial,
    grlex_key,
    monomials_up_to,
    poly_eval,
    unit_exponent,
)

SOLVER_PATHS = ("auto", "linear", "sdp", "multiview-corner", "multiplication-matrix")


@dataclass
class ConstraintSpec:
    """A declared constraint on the component parameters.

    kind "eq":   poly(theta_k) = 0 for every component; enters as the linear
                 family of shifted moment equalities.
    kind "ineq": poly(theta_k) >= 0 for every component; enters the SDP as a
                 localizing-matrix positivity block.
    kind "mean-affine": coefficients . sum_k theta_k = rhs across components;
                 encoded on first-order moments assuming equal weights (an
                 approximation, documented in the README).
    """

    kind: str
    poly: Polynomial | None = None
    coefficients: np.ndarray | None = None
    rhs: float = 0.0

    def __post_init__(self):
        if self.kind not in ("eq", "ineq", "mean-affine"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind in ("eq", "ineq") and self.poly is None:
            raise ValueError(f"{self.kind} constraints need a polynomial")
        if self.kind == "mean-affine" and self.coefficients is None:
            raise ValueError("mean-affine constraints need coefficients")


@dataclass
class FitConfig:
    """Estimation settings shared across models."""

    k: int
    degree: int | None = None
    solver: str = "auto"
    sdp: SdpConfig = field(default_factory=SdpConfig)
    seed: int = 0
    constraints: list[ConstraintSpec] = field(default_factory=list)
    linear_residual_rtol: float = 1e-6
    domain_inequalities: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.solver not in SOLVER_PATHS:
            raise ValueError(f"solver must be one of {SOLVER_PATHS}")


@dataclass
class FitReport:
    estimate: ComponentEstimate
    path: str
    completion_status: str
    completion_residual: float
    certificate: int | None
    moment_residual_norm: float
    observation_residuals: list[tuple[str, float]]
    timings: dict
    config: dict
    relative_error: float | None = None
    iterations: int = 0
    objective: float | None = None

    def to_dict(self, include_timings: bool = True) -> dict:
        out = {
            "path": self.path,
            "solver_status": self.completion_status,
            "completion_residual": self.completion_residual,
            "certificate_rank": self.certificate,
            "moment_residual_norm": self.moment_residual_norm,
            "iterations": self.iterations,
            "objective": self.objective,
            "weights": [float(w) for w in self.estimate.weights],
            "components": [[float(v) for v in row] for row in self.estimate.thetas],
            "observation_residuals": [
                [label, float(res)] for label, res in self.observation_residuals
            ],
            "config": self.config,
        }
        if self.relative_error is not None:
            out["relative_error"] = self.relative_error
        if include_timings:
            out["timings"] = {k: float(v) for k, v in self.timings.items()}
        return out


def _resolve_degree(adapter, cfg: FitConfig, check_flat: bool = True) -> int:
    r = cfg.degree if cfg.degree is not None else adapter.default_degree(cfg.k)
    if r < 1:
        raise ValueError("moment matrix degree must be at least 1")
    if check_flat:
        s_low = len(monomials_up_to(adapter.num_params, r - 1))
        if s_low < cfg.k:
            raise ValueError(
                f"degree {r} leaves only {s_low} low-degree monomials; "
                f"a flat rank-{cfg.k} pair needs at least {cfg.k}"
            )
    return r


def _observation_constraints(adapter, observed, aux) -> list[LinearMomentConstraint]:
    out = []
    for desc, value in observed:
        f = adapter.moment_polynomial(desc, aux)
        if f.is_zero:
            # exactly vanishing coefficients (e.g. odd moments of a symmetric
            # covariate distribution) carry no information about y
            continue
        out.append(LinearMomentConstraint(riesz_coefficients(f), value, label=str(desc)))
    return out


def _declared_constraints(cfg: FitConfig, num_vars: int, max_degree: int, k: int):
    linear = []
    for spec in cfg.constraints:
        if spec.kind == "eq":
            shift = max_degree - spec.poly.degree()
            if shift < 0:
                raise ValueError("equality constraint degree exceeds the unknown set")
            linear.extend(equality_constraint_family(spec.poly, shift))
        elif spec.kind == "mean-affine":
            coeffs = np.asarray(spec.coefficients, dtype=float)
            mapping = {
                unit_exponent(num_vars, p): float(c)
                for p, c in enumerate(coeffs)
                if c != 0.0
            }
            linear.append(
                LinearMomentConstraint(mapping, spec.rhs / k, label="mean-affine")
            )
    return linear


def _localizing_blocks(adapter, cfg: FitConfig, max_degree: int):
    polys = [c.poly for c in cfg.constraints if c.kind == "ineq"]
    if cfg.domain_inequalities:
        polys.extend(adapter.domain_inequalities())
    return [localizing_index(g, max_degree) for g in polys]


def _extraction_slab(y: MomentSequence):
    """Largest rectangular moment block the coverage of y supports: columns
    are the constant and first-degree monomials, rows every exponent whose
    shift by any column stays covered."""
    p = y.num_vars
    zero = (0,) * p
    cols = [zero] + [unit_exponent(p, v) for v in range(p)]
    for kappa in cols:
        if not y.covers(kappa):
            raise ExtractionError("first-order moments are not determined")
    rows = [
        eps
        for eps in sorted(y.values, key=grlex_key)
        if all(y.covers(tuple(a + b for a, b in zip(eps, kappa))) for kappa in cols)
    ]
    matrix = assemble_slab(rows, cols, y)
    max_deg = max(sum(eps) for eps in rows)
    n_low = sum(1 for eps in rows if sum(eps) < max_deg)
    return rows, cols, matrix, n_low


def _multiview_blocks(adapter, observed) -> MultiviewMoments:
    dims = adapter.view_dims
    first = [np.zeros(dims[l]) for l in range(3)]
    pairs = {ab: np.zeros((dims[ab[0]], dims[ab[1]])) for ab in ((0, 1), (0, 2), (1, 2))}
    triple = np.zeros(dims)
    for desc, value in observed:
        kind = desc[0]
        if kind == "single":
            first[desc[1]][desc[2]] = value
        elif kind == "pair":
            _, a, i, b, j = desc
            pairs[(a, b)][i, j] = value
        else:
            _, i, j, k = desc
            triple[i, j, k] = value
    return MultiviewMoments(first, pairs, triple)


def fit(
    adapter,
    cfg: FitConfig,
    data=None,
    observed=None,
    aux=None,
    truth: MixtureSpec | None = None,
) -> FitReport:
    """Run the full estimation pipeline and report estimates with diagnostics.

    Either raw data or precomputed observation means (``observed`` plus the
    adapter's auxiliary estimates) must be supplied.  Ground truth, when
    given, adds the permutation-minimal relative error to the report.
    """
    t_start = time.perf_counter()
    if observed is None:
        if data is None:
            raise InputError("fit needs data or precomputed observation means")
        observed, aux = adapter.estimate_observation_means(data)
    elif aux is None:
        aux = {}

    p = adapter.num_params
    rng = np.random.default_rng(cfg.seed)
    path = cfg.solver
    if path == "auto":
        path = "multiview-corner" if adapter.name == "multiview" else "auto-linear"
    r = _resolve_degree(adapter, cfg, check_flat=path != "multiview-corner")
    if path == "multiview-corner" and adapter.name != "multiview":
        raise InputError("the corner-completion path is specific to multiview models")
    if path == "multiplication-matrix" and p != 1:
        raise InputError("the multiplication-matrix path needs a single parameter")

    obs_constraints = _observation_constraints(adapter, observed, aux)
    result: CompletionResult
    t_complete = time.perf_counter()

    if path == "multiview-corner":
        blocks = _multiview_blocks(adapter, observed)
        mv = complete_multiview(blocks, cfg.k, cfg.sdp.rank_tolerance())
        result = mv.result
        taken = "multiview-corner"
    else:
        linear_degree = max(adapter.moment_degree, 1)
        want_linear = path in ("auto-linear", "linear", "multiplication-matrix")
        result = None
        if want_linear:
            system = MomentConstraintSystem(
                p,
                linear_degree,
                obs_constraints + _declared_constraints(cfg, p, linear_degree, cfg.k),
            )
            try:
                result = solve_linear_completion(
                    system, residual_rtol=cfg.linear_residual_rtol
                )
            except SolverError:
                if path in ("linear", "multiplication-matrix"):
                    raise
                result = None
            if result is None and path in ("linear", "multiplication-matrix"):
                raise SolverError(
                    "constraint stack does not determine the moments uniquely"
                )
        if result is not None:
            taken = path if path != "auto-linear" else "linear"
        else:
            sdp_degree = 2 * r
            if adapter.moment_degree > sdp_degree:
                raise ValueError(
                    f"observations touch degree {adapter.moment_degree} moments; "
                    f"raise the fit degree above {r}"
                )
            system = MomentConstraintSystem(
                p,
                sdp_degree,
                obs_constraints + _declared_constraints(cfg, p, sdp_degree, cfg.k),
            )
            blocks = _localizing_blocks(adapter, cfg, sdp_degree)
            result = solve_sdp_nuclear(system, cfg.sdp, blocks)
            if result.status == "sdp-max-iter":
                raise SolverError(
                    f"semidefinite solver stopped at max iterations with primal "
                    f"residual {result.primal_residual:.2e} and dual residual "
                    f"{result.dual_residual:.2e}"
                )
            taken = "sdp"
    t_extract = time.perf_counter()

    y = result.y
    certificate = result.certificate
    diagnostics: dict = {}
    if path == "multiplication-matrix":
        needed = [(i,) for i in range(2 * cfg.k)]
        moments = [y.value(e) for e in needed]
        atoms = univariate_atoms_from_moments(moments, cfg.k)
        thetas = atoms.reshape(-1, 1)
        taken = "multiplication-matrix"
    elif taken == "multiview-corner":
        rows, cols, slab, n_low = _extraction_slab(y)
        certificate = flat_slab_rank(slab, n_low, cfg.sdp.rank_tolerance())
        basis = column_space_basis(slab, rows, cfg.k, cfg.sdp.rank_tolerance())
        thetas = extract_crossview(basis, adapter.view_dims, rng)
    else:
        if y.covers_degree(2 * r):
            index = build_moment_index(p, r)
            matrix = assemble(index, y)
            if certificate is None:
                certificate = flat_extension_rank(y, r, cfg.sdp.rank_tolerance())
            basis = column_space_basis(
                matrix, index.basis.exponents, cfg.k, cfg.sdp.rank_tolerance()
            )
        else:
            rows, cols, slab, n_low = _extraction_slab(y)
            certificate = flat_slab_rank(slab, n_low, cfg.sdp.rank_tolerance())
            basis = column_space_basis(slab, rows, cfg.k, cfg.sdp.rank_tolerance())
        selection = select_row_basis(basis)
        diagnostics["row_basis_condition"] = selection.condition_number
        thetas = extract_parameters(basis, selection, rng)

    thetas = adapter.postprocess_thetas(thetas)
    weight_pairs = [(e, y.value(e)) for e in sorted(y.values, key=grlex_key)]
    weights, weight_residual = recover_weights(thetas, weight_pairs)
    diagnostics["weight_residual"] = weight_residual
    t_done = time.perf_counter()

    obs_residuals = []
    for desc, value in observed:
        resyn = mixture_moment(adapter, thetas, weights, desc, aux)
        obs_residuals.append((str(desc), resyn - value))
    moment_residual = float(np.linalg.norm([res for _, res in obs_residuals]))

    estimate = ComponentEstimate(thetas, weights, certificate, diagnostics)
    rel = None
    if truth is not None:
        rel = relative_error(estimate, truth)
    return FitReport(
        estimate=estimate,
        path=taken,
        completion_status=result.status,
        completion_residual=result.residual_norm,
        certificate=certificate,
        moment_residual_norm=moment_residual,
        observation_residuals=obs_residuals,
        timings={
            "total": t_done - t_start,
            "completion": t_extract - t_complete,
            "extraction": t_done - t_extract,
        },
        config={
            "model": adapter.name,
            "k": cfg.k,
            "degree": r,
            "solver": cfg.solver,
            "seed": cfg.seed,
        },
        relative_error=rel,
        iterations=result.iterations,
        objective=result.objective,
    )


# ---------------------------------------------------------------------------
# Error metric
# ---------------------------------------------------------------------------


def relative_error(estimate, truth) -> float:
    """max_k |theta_hat - theta*| / |theta*| minimized over component
    matchings (exhaustive; K <= 6 enforced)."""
    est = estimate.thetas if isinstance(estimate, ComponentEstimate) else estimate
    tru = truth.components if isinstance(truth, MixtureSpec) else truth
    est = np.atleast_2d(np.asarray(est, dtype=float))
    tru = np.atleast_2d(np.asarray(tru, dtype=float))
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: estimate {est.shape}, truth {tru.shape}")
    k = est.shape[0]
    if k > 6:
        raise ValueError("exhaustive matching is limited to K <= 6")
    norms = np.linalg.norm(tru, axis=1)
    norms = np.where(norms == 0, 1.0, norms)
    best = np.inf
    for perm in itertools.permutations(range(k)):
        worst = max(
            np.linalg.norm(est[list(perm)][i] - tru[i]) / norms[i] for i in range(k)
        )
        best = min(best, worst)
    return float(best)


# ---------------------------------------------------------------------------
# EM baseline (diagonal-covariance Gaussian mixture)
# ---------------------------------------------------------------------------


def _kmeans_centers(data, k, rng, n_iter=10):
    t = data.shape[0]
    centers = [data[rng.integers(t)]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.sum((data - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(data[rng.integers(t)])
        else:
            centers.append(data[rng.choice(t, p=d2 / total)])
    centers = np.array(centers)
    for _ in range(n_iter):
        assign = np.argmin(
            ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2), axis=1
        )
        for j in range(k):
            mask = assign == j
            if mask.any():
                centers[j] = data[mask].mean(axis=0)
    return centers, assign


def em_gaussian_baseline(
    data,
    k: int,
    seed: int = 0,
    restarts: int = 5,
    max_iter: int = 500,
    tol: float = 1e-9,
) -> ComponentEstimate:
    """Diagonal-covariance EM initialized by k-means; best of several
    restarts by final log-likelihood.  Component vectors come back in the
    (means, variances) layout of the Gaussian adapter."""
    data = np.ascontiguousarray(np.atleast_2d(np.asarray(data, dtype=float)))
    t, d = data.shape
    rng = np.random.default_rng(seed)
    global_var = data.var(axis=0) + 1e-12
    var_floor = 1e-10 * float(global_var.max())

    best = None
    for _ in range(max(restarts, 1)):
        centers, assign = _kmeans_centers(data, k, rng)
        mu = centers.copy()
        var = np.empty((k, d))
        pi = np.empty(k)
        for j in range(k):
            mask = assign == j
            pi[j] = max(mask.mean(), 1.0 / t)
            var[j] = data[mask].var(axis=0) + var_floor if mask.any() else global_var
        pi = pi / pi.sum()
        var = np.maximum(var, var_floor)

        trace = []
        prev = -np.inf
        for _ in range(max_iter):
            loglik, nk, sx, sxx = _accel.em_diag_step(data, np.log(pi), mu, var)
            trace.append(loglik)
            empty = nk < 1e-8 * t
            if empty.any():
                for j in np.flatnonzero(empty):
                    mu[j] = data[rng.integers(t)]
                    var[j] = global_var
                    nk[j] = 1.0
                pi = np.full(k, 1.0 / k)
                prev = -np.inf
                continue
            pi = nk / t
            mu = sx / nk[:, None]
            var = np.maximum(sxx / nk[:, None] - mu**2, var_floor)
            if abs(loglik - prev) <= tol * (1.0 + abs(loglik)):
                break
            prev = loglik
        candidate = (trace[-1], np.hstack([mu, var]), pi, trace)
        if best is None or candidate[0] > best[0]:
            best = candidate

    loglik, thetas, weights, trace = best
    return ComponentEstimate(
        thetas, weights, None, {"loglik": loglik, "loglik_trace": trace}
    )


# ---------------------------------------------------------------------------
# Experiment harness
# ---------------------------------------------------------------------------


def _spherical_tie_constraints(adapter) -> list[ConstraintSpec]:
    """Variance tying c_1 = c_d for spherical fits, valid per-component."""
    d = adapter.data_dim
    out = []
    for dim in range(1, d):
        g = Polynomial.variable(adapter.num_params, d) - Polynomial.variable(
            adapter.num_params, d + dim
        )
        out.append(ConstraintSpec("eq", poly=g))
    return out


def run_experiment(
    model: str,
    k: int,
    d: int,
    sample_sizes,
    trials: int,
    methods,
    seed: int = 0,
    fit_options: dict | None = None,
) -> dict:
    """Repeated random-model trials; one result row per (sample size, method).

    Every trial draws a fresh ground-truth model, then all methods see the
    same data at each sample size.  Failed fits are counted, not fatal;
    summary statistics cover the successful trials.
    """
    from .models import make_adapter  # local import to avoid cycle at module load

    if trials < 1:
        raise InputError("trials must be at least 1")
    fit_options = dict(fit_options or {})
    sample_sizes = [int(x) for x in sample_sizes]
    adapter_options = {
        key: fit_options.pop(key)
        for key in ("m", "sigma2", "b_max", "sigma_as_param")
        if key in fit_options
    }
    adapter = make_adapter(model, d, **adapter_options)
    tie = fit_options.pop("tie_variances", model == "gaussian-spherical")
    degree = fit_options.pop("degree", None)
    sdp_cfg = SdpConfig.from_dict(fit_options.pop("sdp", {}))
    if fit_options:
        raise InputError(f"unknown fit options: {sorted(fit_options)}")

    root = np.random.SeedSequence(seed)
    trial_seeds = root.spawn(trials)
    cells: dict[tuple[int, str], list] = {
        (t_size, m): [] for t_size in sample_sizes for m in methods
    }
    failures: dict[tuple[int, str], int] = {
        (t_size, m): 0 for t_size in sample_sizes for m in methods
    }

    for trial, tseed in enumerate(trial_seeds):
        streams = tseed.spawn(2 + len(sample_sizes))
        spec_rng = np.random.default_rng(streams[0])
        spec = random_mixture_spec(model, k, d, spec_rng, **adapter_options)
        for t_idx, t_size in enumerate(sample_sizes):
            data_rng = np.random.default_rng(streams[1 + t_idx])
            data = adapter.sample(spec, t_size, data_rng)
            method_seed = int(streams[-1].generate_state(1)[0] % (2**31))
            for method in methods:
                try:
                    if method == "poly":
                        constraints = _spherical_tie_constraints(adapter) if tie else []
                        cfg = FitConfig(
                            k=k,
                            degree=degree,
                            sdp=sdp_cfg,
                            seed=method_seed + t_idx,
                            constraints=constraints,
                        )
                        report = fit(adapter, cfg, data=data, truth=spec)
                        cells[(t_size, method)].append(report.relative_error)
                    elif method == "em":
                        if not adapter.name.startswith("gaussian"):
                            raise InputError("the EM baseline handles Gaussian data")
                        est = em_gaussian_baseline(
                            data, k, seed=method_seed + t_idx
                        )
                        cells[(t_size, method)].append(relative_error(est, spec))
                    else:
                        raise InputError(f"unknown method {method!r}")
                except InputError:
                    raise
                except Exception:
                    failures[(t_size, method)] += 1

    rows = []
    for t_size in sample_sizes:
        for method in methods:
            errs = cells[(t_size, method)]
            rows.append(
                {
                    "model": model,
                    "k": k,
                    "d": d,
                    "t": t_size,
                    "method": method,
                    "trials": trials,
                    "failures": failures[(t_size, method)],
                    "mean_error": float(np.mean(errs)) if errs else None,
                    "median_error": float(np.median(errs)) if errs else None,
                    "errors": [float(e) for e in errs],
                }
            )
    return {
        "model": model,
        "k": k,
        "d": d,
        "trials": trials,
        "seed": seed,
        "methods": list(methods),
        "sample_sizes": sample_sizes,
        "rows": rows,
    }


def render_experiment_table(report: dict) -> str:
    """Aligned text table, one row per (sample size, method)."""
    header = f"{'model':<20} {'T':>9} {'method':>8} {'mean':>10} {'median':>10} {'fail':>5}"
    lines = [header, "-" * len(header)]
    for row in report["rows"]:
        mean = "-" if row["mean_error"] is None else f"{row['mean_error']:.4f}"
        med = "-" if row["median_error"] is None else f"{row['median_error']:.4f}"
        lines.append(
            f"{row['model']:<20} {row['t']:>9} {row['method']:>8} "
            f"{mean:>10} {med:>10} {row['failures']:>5}"
        )
    return "\n".join(lines)
