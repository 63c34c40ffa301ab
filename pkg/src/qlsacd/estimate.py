"""Maximum-likelihood estimation for the conditional-quantile duration model.

Fitting maximizes the kernel log-likelihood over (log phi, omega, alpha,
beta) with BFGS; phi is optimized on the log scale so positivity never
binds.  Extra kernel shape parameters are handled by profiling over a
candidate grid.  Standard errors come from the inverse negated numerical
Hessian at the optimum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from . import __version__ as _PKG_VERSION
from .acd import (
    AcdModelSpec,
    AcdParams,
    Link,
    Presample,
    acd_filter,
    loglik_and_score,
    loglik_constant,
    loglik_kernel,
)
from .errors import (
    DegenerateDataError,
    DomainError,
    FilterDivergenceError,
    FitError,
    ProfileGridError,
)
from .lsdist import EXTRA_COUNT, Family, GeneratorSpec

__all__ = [
    "FitOptions",
    "FittedModel",
    "starting_values",
    "fit",
    "profile_fit",
    "fit_auto",
    "default_profile_grid",
    "numerical_hessian",
    "standard_errors",
    "information_criteria",
    "q_grid_scan",
    "QGridResult",
]

SCHEMA_VERSION = 1

# finite rejection value: keeps numeric differentiation well defined when a
# trial step diverges the filter
_PENALTY = 1e300


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``profile_grid`` is a sequence of extra-parameter tuples (scalars are
    accepted for one-parameter families); when None the family default from
    :func:`default_profile_grid` is used.
    """

    max_iterations: int = 200
    gradient_tolerance: float = 1e-4
    profile_grid: tuple | None = None
    use_analytic_score: bool = True
    seed: int = 0
    restarts: int = 3
    compute_se: bool = True

    def __post_init__(self):
        if self.gradient_tolerance <= 0:
            raise DomainError("gradient_tolerance must be positive")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")


def default_profile_grid(family: Family) -> tuple:
    """Candidate extra-parameter grids used when none is supplied."""
    if family is Family.LOG_NORMAL:
        return ((),)
    if family is Family.LOG_STUDENT_T:
        return tuple((float(k),) for k in range(1, 31))
    if family is Family.LOG_POWER_EXPONENTIAL:
        return tuple((round(v, 1),) for v in np.arange(-0.9, 1.01, 0.1))
    if family in (Family.LOG_HYPERBOLIC, Family.LOG_SLASH):
        return tuple((float(v),) for v in np.arange(0.5, 10.01, 0.5))
    if family is Family.LOG_CONTAMINATED_NORMAL:
        vals = (0.1, 0.3, 0.5, 0.7, 0.9)
        return tuple((a, b) for a in vals for b in vals)
    if family is Family.EXTENDED_BS:
        return tuple((v,) for v in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0))
    if family is Family.EXTENDED_BS_T:
        shapes = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
        return tuple((a, float(k)) for a in shapes for k in range(1, 31))
    raise DomainError(f"unknown family {family}")


def starting_values(spec: AcdModelSpec, x) -> AcdParams:
    """Moment-based feasible starting point."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n <= 10 * (spec.r + spec.s + 2):
        raise DomainError(
            f"need more than {10 * (spec.r + spec.s + 2)} observations "
            f"for an order-({spec.r},{spec.s}) model, got {n}"
        )
    if np.any(x <= 0):
        raise DomainError("durations must be strictly positive")
    if np.all(x == x[0]):
        raise DegenerateDataError("degenerate durations: all values equal")
    logx = np.log(x)
    phi0 = float(np.var(logx, ddof=1))
    if phi0 <= 0 or not np.isfinite(phi0):
        raise DegenerateDataError("degenerate durations: no variation in log(x)")
    alpha0 = (0.5 / spec.r,) * spec.r if spec.r else ()
    beta0 = (0.1 / spec.s,) * spec.s if spec.s else ()
    omega0 = (1.0 - sum(alpha0)) * math.log(float(np.quantile(x, spec.q)))
    return AcdParams(phi=phi0, omega=omega0, alpha=alpha0, beta=beta0)


@dataclass
class FittedModel:
    """Result of a maximum-likelihood fit."""

    spec: AcdModelSpec
    params: AcdParams
    theta_extra: tuple
    loglik_kernel: float
    loglik_full: float
    se: np.ndarray | None
    se_message: str
    hessian: np.ndarray | None
    criteria: dict
    psi_path: np.ndarray
    convergence: dict
    n_obs: int
    profile_table: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return bool(self.convergence.get("converged", False))

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "software_version": _PKG_VERSION,
            "spec": {
                "family": self.spec.gen.family.value,
                "extra": list(self.spec.gen.extra),
                "r": self.spec.r,
                "s": self.spec.s,
                "q": self.spec.q,
                "link": self.spec.link.value,
            },
            "params": {
                "phi": self.params.phi,
                "omega": self.params.omega,
                "alpha": list(self.params.alpha),
                "beta": list(self.params.beta),
            },
            "theta_extra": list(self.theta_extra),
            "loglik_kernel": self.loglik_kernel,
            "loglik_full": self.loglik_full,
            "se": None if self.se is None else [float(v) for v in self.se],
            "se_message": self.se_message,
            "hessian": None if self.hessian is None else [[float(v) for v in row] for row in self.hessian],
            "criteria": self.criteria,
            "psi_path": [float(v) for v in self.psi_path],
            "convergence": self.convergence,
            "n_obs": self.n_obs,
            "profile_table": self.profile_table,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FittedModel":
        spec = AcdModelSpec(
            r=int(doc["spec"]["r"]),
            s=int(doc["spec"]["s"]),
            q=float(doc["spec"]["q"]),
            gen=GeneratorSpec(Family(doc["spec"]["family"]), tuple(doc["spec"]["extra"])),
            link=Link(doc["spec"]["link"]),
        )
        params = AcdParams(
            phi=doc["params"]["phi"],
            omega=doc["params"]["omega"],
            alpha=tuple(doc["params"]["alpha"]),
            beta=tuple(doc["params"]["beta"]),
        )
        return cls(
            spec=spec,
            params=params,
            theta_extra=tuple(doc["theta_extra"]),
            loglik_kernel=doc["loglik_kernel"],
            loglik_full=doc["loglik_full"],
            se=None if doc["se"] is None else np.asarray(doc["se"], float),
            se_message=doc.get("se_message", ""),
            hessian=None if doc["hessian"] is None else np.asarray(doc["hessian"], float),
            criteria=dict(doc["criteria"]),
            psi_path=np.asarray(doc["psi_path"], float),
            convergence=dict(doc["convergence"]),
            n_obs=int(doc["n_obs"]),
            profile_table=list(doc.get("profile_table", [])),
        )

    @classmethod
    def from_json(cls, path) -> "FittedModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))

    @classmethod
    def from_params(cls, spec: AcdModelSpec, params: AcdParams, x) -> "FittedModel":
        """Wrap known parameters as a fitted model (no optimization).

        Useful for oracle studies where the true parameters are injected.
        """
        x = np.asarray(x, dtype=float)
        out = acd_filter(spec, params, x)
        llk = loglik_kernel(spec, params, x)
        llf = llk + loglik_constant(spec, x)
        return cls(
            spec=spec,
            params=params,
            theta_extra=spec.gen.extra,
            loglik_kernel=llk,
            loglik_full=llf,
            se=None,
            se_message="not estimated (parameters supplied)",
            hessian=None,
            criteria=information_criteria(llf, spec.n_params + len(spec.gen.extra), x.shape[0]),
            psi_path=out.psi,
            convergence={"converged": True, "message": "parameters supplied"},
            n_obs=int(x.shape[0]),
        )


def _to_internal(params: AcdParams) -> np.ndarray:
    vec = params.to_vector()
    vec[0] = math.log(vec[0])
    return vec


def _from_internal(u: np.ndarray, spec: AcdModelSpec) -> AcdParams:
    theta = np.array(u, dtype=float)
    theta[0] = math.exp(theta[0])
    return AcdParams.from_vector(theta, spec.r, spec.s)


def fit(spec: AcdModelSpec, x, options: FitOptions | None = None) -> FittedModel:
    """Maximize the likelihood at a fully specified kernel (extras fixed)."""
    options = options or FitOptions()
    x = np.asarray(x, dtype=float)
    presample = Presample.from_data(spec, x)
    start = starting_values(spec, x)

    def objective(u):
        try:
            params = _from_internal(u, spec)
            value, grad = loglik_and_score(spec, params, x, presample)
        except (DomainError, FilterDivergenceError, OverflowError):
            return _PENALTY, np.zeros_like(u)
        if not np.isfinite(value):
            return _PENALTY, np.zeros_like(u)
        grad_u = grad.copy()
        grad_u[0] *= params.phi  # chain rule for the log-phi coordinate
        return -value, -grad_u

    def value_only(u):
        return objective(u)[0]

    rng = np.random.default_rng(options.seed)
    u0 = _to_internal(start)
    u_start = u0
    best = None
    attempts = 0
    for attempt in range(options.restarts + 1):
        attempts = attempt + 1
        if options.use_analytic_score:
            res = optimize.minimize(
                objective,
                u_start,
                jac=True,
                method="BFGS",
                options={"gtol": options.gradient_tolerance, "maxiter": options.max_iterations},
            )
        else:
            res = optimize.minimize(
                value_only,
                u_start,
                method="BFGS",
                options={"gtol": options.gradient_tolerance, "maxiter": options.max_iterations},
            )
        improved = False
        if np.all(np.isfinite(res.x)) and np.isfinite(res.fun):
            if best is None or res.fun < best.fun - 1e-12:
                improved = best is None or res.fun < best.fun
                best = res
            if np.max(np.abs(best.jac)) <= options.gradient_tolerance:
                break
        if best is not None and improved:
            # polish: restarting resets the Hessian approximation
            u_start = best.x
        elif best is not None:
            u_start = best.x + rng.normal(scale=0.02, size=u0.shape[0])
        else:
            u_start = u0 + rng.normal(scale=0.05, size=u0.shape[0])
    if best is None or not np.isfinite(best.fun) or best.fun >= _PENALTY:
        raise FitError("optimization never produced a finite likelihood")

    params = _from_internal(best.x, spec)
    grad_max = float(np.max(np.abs(best.jac)))
    converged = grad_max <= options.gradient_tolerance
    llk = -float(best.fun)
    llf = llk + loglik_constant(spec, x)
    out = acd_filter(spec, params, x, presample)

    hess = None
    se = None
    se_message = "" if options.compute_se else "not computed (compute_se=False)"
    if options.compute_se:
        try:
            hess = numerical_hessian(
                lambda th: loglik_kernel(spec, AcdParams.from_vector(th, spec.r, spec.s), x, presample),
                params.to_vector(),
            )
            se, se_message = standard_errors(hess)
        except Exception as exc:  # pragma: no cover - diagnostic path
            se_message = f"Hessian evaluation failed: {exc}"

    n = x.shape[0]
    p = spec.n_params + len(spec.gen.extra)
    return FittedModel(
        spec=spec,
        params=params,
        theta_extra=spec.gen.extra,
        loglik_kernel=llk,
        loglik_full=llf,
        se=se,
        se_message=se_message,
        hessian=hess,
        criteria=information_criteria(llf, p, n),
        psi_path=out.psi,
        convergence={
            "converged": bool(converged),
            "iterations": int(best.nit),
            "grad_max": grad_max,
            "attempts": attempts,
            "message": str(best.message),
        },
        n_obs=int(n),
    )


def profile_fit(spec: AcdModelSpec, x, options: FitOptions | None = None) -> FittedModel:
    """Estimate extra shape parameters by profiling over a grid.

    Each grid candidate is fitted at fixed extras; the candidate with the
    largest full log-likelihood wins (the full version is required because
    the normalizing constant varies with the extras).
    """
    options = options or FitOptions()
    family = spec.gen.family
    grid = options.profile_grid
    if grid is None:
        grid = default_profile_grid(family)
    grid = tuple(
        tuple(float(v) for v in np.atleast_1d(np.asarray(point, dtype=float)))
        for point in grid
    )
    if EXTRA_COUNT[family] == 0:
        return fit(spec, x, options)
    if not grid:
        raise DomainError("profile grid is empty")

    best = None
    table = []
    failures = {}
    grid_options = replace(options, compute_se=False)  # SEs only for the winner
    for point in grid:
        cand_spec = replace(spec, gen=GeneratorSpec(family, point))
        try:
            fitted = fit(cand_spec, x, grid_options)
        except Exception as exc:
            failures[point] = f"{type(exc).__name__}: {exc}"
            table.append({"extra": list(point), "loglik_full": None, "converged": False})
            continue
        table.append(
            {
                "extra": list(point),
                "loglik_full": fitted.loglik_full,
                "converged": fitted.converged,
            }
        )
        if best is None or fitted.loglik_full > best.loglik_full:
            best = fitted
    if best is None:
        raise ProfileGridError(failures)
    best.profile_table = table
    if options.compute_se:
        presample = Presample.from_data(best.spec, np.asarray(x, dtype=float))
        try:
            best.hessian = numerical_hessian(
                lambda th: loglik_kernel(
                    best.spec,
                    AcdParams.from_vector(th, best.spec.r, best.spec.s),
                    np.asarray(x, dtype=float),
                    presample,
                ),
                best.params.to_vector(),
            )
            best.se, best.se_message = standard_errors(best.hessian)
        except Exception as exc:  # pragma: no cover - diagnostic path
            best.se_message = f"Hessian evaluation failed: {exc}"
    return best


def fit_auto(spec: AcdModelSpec, x, options: FitOptions | None = None, profile: bool = False) -> FittedModel:
    """fit() with the spec's extras pinned, or profile_fit() when asked.

    ``profile=True`` treats the spec's extras as a placeholder and
    estimates them over the grid (no-op for extra-free families).
    """
    if profile and EXTRA_COUNT[spec.gen.family] > 0:
        return profile_fit(spec, x, options)
    return fit(spec, x, options)


def numerical_hessian(fun, theta, step=None) -> np.ndarray:
    """Central-difference Hessian of a scalar function, symmetrized.

    Step sizes default to max(1e-5, 1e-4 * |theta_i|) per coordinate.
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[0]
    if step is None:
        step = np.maximum(1e-5, 1e-4 * np.abs(theta))
    else:
        step = np.broadcast_to(np.asarray(step, float), (p,)).copy()
    hess = np.empty((p, p))
    f0 = fun(theta)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = step[i]
        hess[i, i] = (fun(theta + ei) - 2.0 * f0 + fun(theta - ei)) / step[i] ** 2
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = step[j]
            hess[i, j] = (
                fun(theta + ei + ej)
                - fun(theta + ei - ej)
                - fun(theta - ei + ej)
                + fun(theta - ei - ej)
            ) / (4.0 * step[i] * step[j])
            hess[j, i] = hess[i, j]
    return 0.5 * (hess + hess.T)


def standard_errors(hessian: np.ndarray):
    """(se, message) from the negated-Hessian inverse; se is None when not PD."""
    neg = -np.asarray(hessian, dtype=float)
    try:
        chol = np.linalg.cholesky(neg)
    except np.linalg.LinAlgError:
        return None, "negated Hessian is not positive definite"
    inv_chol = np.linalg.inv(chol)
    cov = inv_chol.T @ inv_chol
    return np.sqrt(np.diag(cov)), ""


def information_criteria(loglik_full: float, n_params: int, n_obs: int) -> dict:
    """AIC/BIC/CAIC/HQIC (plus small-sample AICc under its own key)."""
    if n_obs <= math.e:
        raise DomainError(f"HQIC needs n > e, got n={n_obs}")
    ll = float(loglik_full)
    p = int(n_params)
    n = int(n_obs)
    out = {
        "aic": -2.0 * ll + 2.0 * p,
        "bic": -2.0 * ll + p * math.log(n),
        "caic": -2.0 * ll + p * (math.log(n) + 1.0),
        "hqic": -2.0 * ll + 2.0 * p * math.log(math.log(n)),
    }
    if n - p - 1 > 0:
        out["aicc"] = out["aic"] + 2.0 * p * (p + 1.0) / (n - p - 1.0)
    else:
        out["aicc"] = math.inf
    return out


_CRITERIA_KEYS = ("aic", "bic", "caic", "hqic")


@dataclass
class QGridResult:
    """Per-quantile fits with across-grid criteria averages."""

    rows: list
    averages: dict
    n_converged: int
    n_failed: int

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["q", "converged", "loglik_full"] + list(_CRITERIA_KEYS) + ["error"])
            for row in self.rows:
                writer.writerow(
                    [repr(row["q"]), row["converged"], _num(row["loglik_full"])]
                    + [_num(row.get(k)) for k in _CRITERIA_KEYS]
                    + [row.get("error", "")]
                )

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "rows": self.rows,
            "averages": self.averages,
            "n_converged": self.n_converged,
            "n_failed": self.n_failed,
        }


def _num(v):
    return "" if v is None else repr(float(v))


def q_grid_scan(
    spec_template: AcdModelSpec,
    x,
    q_values,
    options: FitOptions | None = None,
    profile: bool = False,
) -> QGridResult:
    """Fit the model at each quantile level and average the criteria.

    Individual failures are recorded per row and excluded from the
    averages, which are reported together with the convergence count.
    """
    q_values = [float(q) for q in np.atleast_1d(np.asarray(q_values, dtype=float))]
    if not q_values:
        raise DomainError("q_values must be nonempty")
    rows = []
    fits = []
    for q in q_values:
        if not 0.0 < q < 1.0:
            raise DomainError(f"every q must lie in (0, 1), got {q}")
        spec = replace(spec_template, q=q)
        try:
            fitted = fit_auto(spec, x, options, profile=profile)
        except Exception as exc:
            rows.append(
                {
                    "q": q,
                    "converged": False,
                    "loglik_full": None,
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
            continue
        row = {
            "q": q,
            "converged": fitted.converged,
            "loglik_full": fitted.loglik_full,
            "error": "",
        }
        for key in _CRITERIA_KEYS:
            row[key] = fitted.criteria[key]
        rows.append(row)
        if fitted.converged:
            fits.append(row)
    averages = {}
    for key in _CRITERIA_KEYS:
        vals = [row[key] for row in fits]
        averages[key] = float(np.mean(vals)) if vals else None
    return QGridResult(
        rows=rows,
        averages=averages,
        n_converged=len(fits),
        n_failed=len(rows) - len(fits),
    )
