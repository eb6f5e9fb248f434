"""Numerical maximum-likelihood fitting in the unconstrained coefficient space.

Strategy: a derivative-free simplex warm start (robust to the noisy, flat
regions a zero-inflated likelihood can present), then quasi-Newton refinement
with central-difference gradients.  An optional symmetric box [-B, B]^d is
enforced by coordinate clipping during the simplex phase and projected steps
during refinement; convergence is judged by the projected gradient norm
against gradient_tolerance * sqrt(d).  Multi-start is sequential and fully
deterministic given the seed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from scipy.special import erfc

from . import __version__
from .data import Dataset
from .likelihood import CoefVector, MODELS, coef_dim, total_loglik

__all__ = [
    "FitConfig",
    "FitError",
    "FitResult",
    "fit",
    "numerical_gradient",
    "numerical_hessian",
    "wald_inference",
]

# substitute for non-finite objective values so simplex/line searches can back off
_HUGE = 1e18


class FitError(RuntimeError):
    """No start produced a usable likelihood value."""


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    box, when set to B > 0, constrains every coefficient to [-B, B]
    (simulation protocol); None leaves the space unconstrained (data
    analysis).  The first start is always the zero vector; remaining starts
    are drawn uniformly from [-start_scale, start_scale]^d.
    """

    max_iterations: int = 2000
    gradient_tolerance: float = 1e-5
    parameter_tolerance: float = 1e-6
    n_starts: int = 3
    start_scale: float = 2.0
    box: float | None = None
    finite_difference_step: float = 1e-5
    seed: int = 0
    compute_hessian: bool = True
    use_cache: bool = True

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("gradient_tolerance", "parameter_tolerance", "finite_difference_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.box is not None and self.box <= 0:
            raise ValueError("box bound must be > 0")

    def to_dict(self) -> dict:
        return {
            "max_iterations": self.max_iterations,
            "gradient_tolerance": self.gradient_tolerance,
            "parameter_tolerance": self.parameter_tolerance,
            "n_starts": self.n_starts,
            "start_scale": self.start_scale,
            "box": self.box,
            "finite_difference_step": self.finite_difference_step,
            "seed": self.seed,
            "compute_hessian": self.compute_hessian,
            "use_cache": self.use_cache,
        }


def numerical_gradient(f: Callable, theta, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient with per-coordinate step h_i = step*(1+|theta_i|).

    A non-finite stencil value triggers one retry with the step shrunk by 10;
    if that also fails the coordinate is reported as an error.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.shape[0]):
        h = step * (1.0 + abs(theta[i]))
        for attempt in (h, h / 10.0):
            probe = theta.copy()
            probe[i] = theta[i] + attempt
            up = f(probe)
            probe[i] = theta[i] - attempt
            down = f(probe)
            if math.isfinite(up) and math.isfinite(down):
                grad[i] = (up - down) / (2.0 * attempt)
                break
        else:
            raise ArithmeticError(f"non-finite stencil around coordinate {i}")
    return grad


def numerical_hessian(f: Callable, theta, step: float = 1e-3) -> np.ndarray:
    """Central second differences, symmetrized as (H + H^T)/2.

    Uses a larger default step than the gradient because second differences
    amplify objective noise by 1/h^2.
    """
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[0]
    h = step * (1.0 + np.abs(theta))
    H = np.empty((d, d))

    def eval_at(*pairs):
        probe = theta.copy()
        for idx, delta in pairs:
            probe[idx] += delta
        return f(probe)

    f0 = eval_at()
    if not math.isfinite(f0):
        raise ArithmeticError("objective non-finite at expansion point")
    for i in range(d):
        for scale in (1.0, 0.1):
            hi = h[i] * scale
            up = eval_at((i, hi))
            down = eval_at((i, -hi))
            if math.isfinite(up) and math.isfinite(down):
                H[i, i] = (up - 2.0 * f0 + down) / (hi * hi)
                break
        else:
            raise ArithmeticError(f"non-finite stencil on diagonal {i}")
        for j in range(i + 1, d):
            for scale in (1.0, 0.1):
                hi, hj = h[i] * scale, h[j] * scale
                pp = eval_at((i, hi), (j, hj))
                pm = eval_at((i, hi), (j, -hj))
                mp = eval_at((i, -hi), (j, hj))
                mm = eval_at((i, -hi), (j, -hj))
                if all(math.isfinite(v) for v in (pp, pm, mp, mm)):
                    H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4.0 * hi * hj)
                    break
            else:
                raise ArithmeticError(f"non-finite stencil at pair ({i}, {j})")
    return 0.5 * (H + H.T)


@dataclass(frozen=True)
class FitResult:
    """Outcome of one maximum-likelihood fit.

    hessian holds second differences of the negative log-likelihood at the
    optimum (the observed information); std_errors/z_stats/p_values are filled
    by wald_inference and contain NaN where the information matrix is not
    positive definite.
    """

    model: str
    coefficients: CoefVector
    loglik: float
    converged: bool
    n: int
    N: int | None
    n_evaluations: int
    column_names: tuple[str, ...]
    has_intercept: bool
    dataset_digest: str
    config: FitConfig
    hessian: np.ndarray | None = None
    std_errors: np.ndarray | None = None
    z_stats: np.ndarray | None = None
    p_values: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return int(self.coefficients.values.shape[0])

    @property
    def aic(self) -> float:
        return 2.0 * self.d - 2.0 * self.loglik

    def to_json_dict(self) -> dict:
        def clean_vec(v):
            if v is None:
                return None
            return [None if not math.isfinite(x) else float(x) for x in np.asarray(v)]

        blocks = {k: clean_vec(b) for k, b in self.coefficients.blocks().items()}
        return {
            "artifact": "fit_result",
            "tool_version": __version__,
            "model": self.model,
            "m": self.coefficients.m,
            "d": self.d,
            "coefficients": clean_vec(self.coefficients.values),
            "blocks": blocks,
            "column_names": list(self.column_names),
            "has_intercept": self.has_intercept,
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "converged": bool(self.converged),
            "n": self.n,
            "N": self.N,
            "n_evaluations": self.n_evaluations,
            "std_errors": clean_vec(self.std_errors),
            "z_stats": clean_vec(self.z_stats),
            "p_values": clean_vec(self.p_values),
            "hessian": None
            if self.hessian is None
            else [clean_vec(row) for row in self.hessian],
            "diagnostics": self.diagnostics,
            "dataset_digest": self.dataset_digest,
            "config": self.config.to_dict(),
            "seed": self.config.seed,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FitResult":
        def vec(v):
            if v is None:
                return None
            return np.array([math.nan if x is None else float(x) for x in v])

        cfg_doc = dict(doc.get("config") or {})
        cfg_doc["box"] = cfg_doc.get("box")
        config = FitConfig(**cfg_doc) if cfg_doc else FitConfig()
        hess = doc.get("hessian")
        return cls(
            model=doc["model"],
            coefficients=CoefVector(doc["model"], vec(doc["coefficients"]), m=doc["m"]),
            loglik=float(doc["loglik"]),
            converged=bool(doc["converged"]),
            n=int(doc["n"]),
            N=None if doc.get("N") is None else int(doc["N"]),
            n_evaluations=int(doc.get("n_evaluations", 0)),
            column_names=tuple(doc.get("column_names", ())),
            has_intercept=bool(doc.get("has_intercept", True)),
            dataset_digest=doc.get("dataset_digest", ""),
            config=config,
            hessian=None if hess is None else np.array([vec(r) for r in hess]),
            std_errors=vec(doc.get("std_errors")),
            z_stats=vec(doc.get("z_stats")),
            p_values=vec(doc.get("p_values")),
            diagnostics=dict(doc.get("diagnostics", {})),
        )

    def coefficient_table(self) -> str:
        """Aligned text table: one row per design column, one 'estimate (p)'
        cell per coefficient block; scalar dispersion gets its own row."""
        blocks = self.coefficients.blocks()
        names = list(self.column_names) or [f"x{j}" for j in range(self.coefficients.m)]
        p_vals = self.p_values

        def cell(block_name, row_idx):
            offset = 0
            for bn, bv in blocks.items():
                if bn == block_name:
                    break
                offset += len(bv)
            est = blocks[block_name][row_idx]
            if p_vals is None or not math.isfinite(p_vals[offset + row_idx]):
                return f"{est:9.4f} (  -  )"
            return f"{est:9.4f} ({p_vals[offset + row_idx]:5.3f})"

        column_blocks = [bn for bn in blocks if bn != "log_theta"]
        widths = 20
        header = "column".ljust(14) + "".join(bn.ljust(widths) for bn in column_blocks)
        lines = [header, "-" * len(header)]
        for r, cname in enumerate(names):
            row = cname.ljust(14)
            for bn in column_blocks:
                row += (cell(bn, r) if r < len(blocks[bn]) else "").ljust(widths)
            lines.append(row)
        # scalar dispersion has no design row of its own
        if "log_theta" in blocks:
            lines.append("log_theta".ljust(14) + cell("log_theta", 0))
        lines.append("")
        lines.append(
            f"model={self.model}  n={self.n}  loglik={self.loglik:.4f}  "
            f"aic={self.aic:.4f}  converged={self.converged}"
        )
        return "\n".join(lines)


def _projected_gradient(grad: np.ndarray, theta: np.ndarray, box: float | None) -> np.ndarray:
    if box is None:
        return grad
    out = grad.copy()
    eps = 1e-9 * (1.0 + box)
    at_low = theta <= -box + eps
    at_high = theta >= box - eps
    # minimizing: at an active bound, an outward-pointing descent direction is
    # inadmissible, so that component does not count against convergence
    out[at_low & (grad > 0)] = 0.0
    out[at_high & (grad < 0)] = 0.0
    return out


def fit(
    model: str,
    dataset: Dataset,
    config: FitConfig | None = None,
    N: int | None = None,
    eval_callback: Callable[[np.ndarray, float], None] | None = None,
) -> FitResult:
    """Maximize the log-likelihood; return the best local optimum over all starts.

    Deterministic given config.seed.  converged reflects the projected
    gradient norm at the returned point, not optimizer self-reports.  A start
    whose objective is non-finite everywhere is recorded as failed; if every
    start fails, FitError carries the diagnostics.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    config = config or FitConfig()
    m = dataset.X.shape[1]
    d = coef_dim(model, m)
    n_bound = dataset.N if N is None else int(N)
    box = config.box

    counter = [0]

    def objective(theta: np.ndarray) -> float:
        th = np.clip(theta, -box, box) if box is not None else theta
        counter[0] += 1
        value = total_loglik(model, th, dataset, N=n_bound, use_cache=config.use_cache)
        neg = -value
        if not math.isfinite(neg):
            neg = _HUGE
        if eval_callback is not None:
            eval_callback(np.array(th, dtype=float), -neg)
        return neg

    def gradient(theta: np.ndarray) -> np.ndarray:
        return numerical_gradient(objective, theta, step=config.finite_difference_step)

    rng = np.random.default_rng(config.seed)
    starts = [np.zeros(d)]
    for _ in range(config.n_starts - 1):
        starts.append(rng.uniform(-config.start_scale, config.start_scale, d))

    best: dict | None = None
    start_reports = []
    for s_idx, theta0 in enumerate(starts):
        if box is not None:
            theta0 = np.clip(theta0, -box, box)
        warm = optimize.minimize(
            objective,
            theta0,
            method="Nelder-Mead",
            options={
                "maxiter": config.max_iterations,
                "xatol": config.parameter_tolerance,
                "fatol": 1e-10,
                "adaptive": True,
            },
        )
        x_warm = np.clip(warm.x, -box, box) if box is not None else warm.x
        if box is not None:
            refined = optimize.minimize(
                objective,
                x_warm,
                method="L-BFGS-B",
                jac=gradient,
                bounds=[(-box, box)] * d,
                options={"maxiter": config.max_iterations, "ftol": 1e-12, "gtol": 1e-9},
            )
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                refined = optimize.minimize(
                    objective,
                    x_warm,
                    method="BFGS",
                    jac=gradient,
                    options={"maxiter": config.max_iterations, "gtol": 1e-9},
                )
        candidates = [(float(refined.fun), refined.x), (float(warm.fun), x_warm)]
        fun, x_hat = min(candidates, key=lambda t: t[0])
        x_hat = np.clip(x_hat, -box, box) if box is not None else np.asarray(x_hat)
        report = {"start": s_idx, "loglik": -fun if fun < _HUGE else None}
        if fun >= _HUGE:
            report["failed"] = True
            start_reports.append(report)
            continue
        start_reports.append(report)
        if best is None or fun < best["fun"]:
            best = {"fun": fun, "x": x_hat}

    if best is None:
        raise FitError(f"all {config.n_starts} starts failed; reports: {start_reports}")

    # Newton polish: quasi-Newton phases stop once objective improvements fall
    # below float resolution, which can leave the gradient an order of
    # magnitude above tolerance.  A few Newton steps off the second-difference
    # Hessian close that gap.
    tol = config.gradient_tolerance * math.sqrt(d)
    x_hat, fun = best["x"], best["fun"]

    def grad_and_norm(x):
        g = gradient(x)
        return g, float(np.linalg.norm(_projected_gradient(g, x, box)))

    try:
        grad_here, gnorm = grad_and_norm(x_hat)
    except ArithmeticError:
        grad_here, gnorm = None, math.inf
    polish_steps = 0
    for _ in range(3):
        if grad_here is None or gnorm < tol:
            break
        # coordinates pinned at an active bound stay put; Newton runs on the rest
        if box is not None:
            eps = 1e-9 * (1.0 + box)
            pinned = ((x_hat <= -box + eps) & (grad_here > 0)) | (
                (x_hat >= box - eps) & (grad_here < 0)
            )
        else:
            pinned = np.zeros(d, dtype=bool)
        free = ~pinned
        if not np.any(free):
            break
        try:
            hess_polish = numerical_hessian(objective, x_hat, step=1e-3)
            sub = hess_polish[np.ix_(free, free)]
            delta_free = np.linalg.solve(sub, -grad_here[free])
        except (ArithmeticError, np.linalg.LinAlgError):
            break
        if not np.all(np.isfinite(delta_free)):
            break
        delta = np.zeros(d)
        delta[free] = delta_free
        cand = np.clip(x_hat + delta, -box, box) if box is not None else x_hat + delta
        f_cand = objective(cand)
        if not math.isfinite(f_cand) or f_cand > fun + 1e-9 * (1.0 + abs(fun)):
            break
        x_hat, fun = cand, min(fun, f_cand)
        polish_steps += 1
        try:
            grad_here, gnorm = grad_and_norm(x_hat)
        except ArithmeticError:
            grad_here, gnorm = None, math.inf
            break
    converged = gnorm < tol
    diag_warnings: list[str] = []
    boundary: list[str] = []
    limit = box * 0.999 if box is not None else 15.0
    names = _coef_names(model, dataset.column_names, m)
    for i, v in enumerate(x_hat):
        if abs(v) >= limit:
            boundary.append(names[i])
    if boundary:
        diag_warnings.append(
            "coefficients at or near the search boundary: " + ", ".join(boundary)
        )

    hessian = None
    if config.compute_hessian:
        try:
            hessian = numerical_hessian(objective, x_hat, step=1e-3)
        except ArithmeticError as exc:
            diag_warnings.append(f"hessian unavailable: {exc}")

    result = FitResult(
        model=model,
        coefficients=CoefVector(model, x_hat, m=m),
        loglik=-fun,
        converged=bool(converged),
        n=dataset.n,
        N=n_bound if model == "fb" else None,
        n_evaluations=counter[0],
        column_names=dataset.column_names,
        has_intercept=dataset.has_intercept,
        dataset_digest=dataset.digest(),
        config=config,
        hessian=hessian,
        diagnostics={
            "starts": start_reports,
            "warnings": diag_warnings,
            "boundary": boundary,
            "projected_gradient_norm": gnorm,
            "newton_polish_steps": polish_steps,
        },
    )
    if config.compute_hessian:
        result = wald_inference(result)
    return result


def _coef_names(model: str, column_names: Sequence[str], m: int) -> list[str]:
    cols = list(column_names) if column_names else [f"x{j}" for j in range(m)]
    if model == "fb":
        blocks = [("psi", m), ("eta", m), ("nu", m)]
    elif model == "zip":
        blocks = [("beta", m), ("gamma", m)]
    elif model == "zinb":
        blocks = [("beta", m), ("gamma", m), ("log_theta", 1)]
    else:
        blocks = [("beta", m), ("gamma", m), ("alpha", m)]
    out = []
    for bname, width in blocks:
        if width == 1 and bname == "log_theta":
            out.append(bname)
        else:
            out.extend(f"{bname}:{cols[j]}" for j in range(width))
    return out


def wald_inference(result: FitResult) -> FitResult:
    """Fill std_errors, z_stats, p_values from the observed information.

    The information matrix is the Hessian of the negative log-likelihood at
    the optimum.  A non-positive-definite information matrix yields NaN
    sentinels and a warning instead of failing the fit.
    """
    if result.hessian is None:
        raise ValueError("hessian required for Wald inference")
    info = np.asarray(result.hessian, dtype=float)
    d = info.shape[0]
    nan_vec = np.full(d, math.nan)
    diag = dict(result.diagnostics)
    warnings_list = list(diag.get("warnings", []))
    try:
        np.linalg.cholesky(info)
        cov = np.linalg.inv(info)
        variances = np.diag(cov).copy()
    except np.linalg.LinAlgError:
        warnings_list.append(
            "observed information is not positive definite; standard errors unavailable"
        )
        diag["warnings"] = warnings_list
        return replace(
            result,
            std_errors=nan_vec,
            z_stats=nan_vec.copy(),
            p_values=nan_vec.copy(),
            diagnostics=diag,
        )
    bad = variances <= 0
    variances[bad] = math.nan
    se = np.sqrt(variances)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = result.coefficients.values / se
        p = erfc(np.abs(z) / math.sqrt(2.0))
    if np.any(bad):
        warnings_list.append("nonpositive variance estimates for some coefficients")
        diag["warnings"] = warnings_list
    unstable = np.isfinite(se) & (se > 1e3)
    if np.any(unstable):
        warnings_list.append(
            "near-singular information: very large standard errors; p-values unreliable"
        )
        diag["warnings"] = warnings_list
    return replace(result, std_errors=se, z_stats=z, p_values=p, diagnostics=diag)
