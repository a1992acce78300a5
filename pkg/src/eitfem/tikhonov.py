"""Tikhonov functional with H1 or smoothed-TV penalty, adjoint gradients, and a
box-constrained projected-gradient minimizer."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .cem_forward import (
    NodalField,
    _solve_reduced,
    assemble_system,
    check_pattern,
    solve_patterns,
    values_of,
)
from .errors import DivergedError, InvalidArgumentError, NonsmoothPenaltyError
from .mesh import ElectrodeConfig, TriMesh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TikhonovConfig:
    alpha: float = 1e-3
    penalty: str = "h1"  # "h1" or "tv"
    eps_tv: float | None = None  # None -> 1e-4 * (1/lam - lam)
    lambda_bound: float = 0.1
    max_iters: int = 200
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    step_init: float | None = None  # None -> 1 / |G_0|_{L2}
    tol_stationarity: float = 1e-8
    metric: str = "l2"  # inner product defining the descent direction: "h1" or "l2"
    max_backtracks: int = 60
    step_rule: str = "bb"  # first trial step: "bb" (Barzilai-Borwein) or "carry" (2 x previous)

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidArgumentError("alpha must be positive")
        if self.penalty not in ("h1", "tv"):
            raise InvalidArgumentError("penalty must be 'h1' or 'tv'")
        if not 0 < self.lambda_bound < 1:
            raise InvalidArgumentError("lambda must lie in (0, 1)")
        if self.eps_tv is not None and not self.eps_tv > 0:
            raise InvalidArgumentError("eps_tv must be positive")
        if self.step_rule not in ("bb", "carry"):
            raise InvalidArgumentError("step_rule must be 'bb' or 'carry'")
        if self.metric not in ("h1", "l2"):
            raise InvalidArgumentError("metric must be 'h1' or 'l2'")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo_c < 1:
            raise InvalidArgumentError("backtrack factor and Armijo constant must lie in (0, 1)")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise InvalidArgumentError("max_iters must be a nonnegative integer")

    @property
    def eps(self) -> float:
        if self.eps_tv is not None:
            return self.eps_tv
        lam = self.lambda_bound
        return 1e-4 * (1.0 / lam - lam)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.lambda_bound, 1.0 / self.lambda_bound


@dataclass
class ReconstructionResult:
    sigma_star: NodalField
    objective_history: list[float]
    fit_term: float
    penalty_term: float
    iterations: int
    converged: bool
    reason: str
    fit_history: list[float] = field(default_factory=list)
    penalty_history: list[float] = field(default_factory=list)
    step_history: list[float] = field(default_factory=list)


# ---------------------------------------------------------------- penalties

def penalty_h1(mesh: TriMesh, sigma) -> float:
    s = values_of(sigma)
    A = fem.stiffness_matrix(mesh) + fem.mass_matrix(mesh)
    return 0.5 * float(s @ (A @ s))


def penalty_tv(mesh: TriMesh, sigma, eps: float = 0.0) -> float:
    """``sum_T |T| (sqrt(|grad s|^2 + eps^2) - eps)``; exact P1 total variation for ``eps = 0``."""
    if eps < 0:
        raise InvalidArgumentError("eps must be nonnegative")
    area = fem.signed_areas(mesh)
    g2 = np.sum(fem.element_gradients(mesh, values_of(sigma)) ** 2, axis=1)
    # g^2 / (sqrt(g^2 + eps^2) + eps) avoids cancellation; zero for constant fields
    denom = np.sqrt(g2 + eps**2) + eps
    per = np.divide(g2, denom, out=np.zeros_like(g2), where=denom > 0)
    return float(np.sum(area * per))


def penalty_value(mesh: TriMesh, sigma, config: TikhonovConfig) -> float:
    if config.penalty == "h1":
        return penalty_h1(mesh, sigma)
    return penalty_tv(mesh, sigma, config.eps)


def penalty_gradient(mesh: TriMesh, sigma, penalty: str = "h1", eps: float | None = None) -> np.ndarray:
    """Derivative of the penalty with respect to the nodal values."""
    s = values_of(sigma)
    if penalty == "h1":
        return (fem.stiffness_matrix(mesh) + fem.mass_matrix(mesh)) @ s
    if penalty != "tv":
        raise InvalidArgumentError(f"unknown penalty {penalty!r}")
    if eps is None or eps <= 0:
        raise NonsmoothPenaltyError("total variation needs eps > 0 to be differentiable")
    area, grads = fem.basis_gradients(mesh)
    g = np.einsum("ti,tid->td", s[mesh.triangles], grads)
    w = area / np.sqrt(np.sum(g**2, axis=1) + eps**2)
    local = w[:, None] * np.einsum("td,tid->ti", g, grads)
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


# ---------------------------------------------------------------- data fit

def _check_data(patterns, data, L):
    patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
    data = np.asarray(data, dtype=float)
    if patterns.ndim != 2 or patterns.shape[1] != L:
        raise InvalidArgumentError(f"patterns must be (P, {L})")
    if data.shape != (L, patterns.shape[0]):
        raise InvalidArgumentError(f"data must be (L, P) = ({L}, {patterns.shape[0]})")
    for I in patterns:
        check_pattern(I, L)
    return patterns, data


def _as_conductivity(mesh: TriMesh, sigma, lam: float) -> NodalField:
    if isinstance(sigma, NodalField) and sigma.bounds is not None:
        return sigma
    return NodalField.conductivity(values_of(sigma), lam)


def fit_and_gradient(mesh: TriMesh, sigma, electrodes: ElectrodeConfig, patterns, data,
                     lam: float = 0.1, need_gradient: bool = True):
    """Data misfit ``1/2 sum_p |U_p(sigma) - d_p|^2`` and its adjoint gradient."""
    patterns, data = _check_data(patterns, data, electrodes.n_electrodes)
    system = assemble_system(mesh, _as_conductivity(mesh, sigma, lam), electrodes)
    u, U = solve_patterns(system, patterns)
    residual = U - data
    fit = 0.5 * float(np.sum(residual**2))
    if not need_gradient:
        return fit, None
    # the reduced system is symmetric: the adjoint solve reuses the factorization
    w, _ = _solve_reduced(system, residual)
    area, grads = fem.basis_gradients(mesh)
    gu = np.einsum("tip,tid->tdp", u[mesh.triangles], grads)
    gw = np.einsum("tip,tid->tdp", w[mesh.triangles], grads)
    per_elem = area * np.einsum("tdp,tdp->t", gu, gw) / 3.0
    grad = -np.bincount(mesh.triangles.ravel(), weights=np.repeat(per_elem, 3), minlength=mesh.n_nodes)
    return fit, grad


def fit_gradient_adjoint(mesh: TriMesh, sigma, electrodes: ElectrodeConfig, patterns, data,
                         lam: float = 0.1) -> np.ndarray:
    return fit_and_gradient(mesh, sigma, electrodes, patterns, data, lam)[1]


def project_box(f, lam: float):
    """Nodal clamp to ``[lam, 1/lam]``."""
    if not 0 < lam < 1:
        raise InvalidArgumentError("lambda must lie in (0, 1)")
    out = np.clip(values_of(f), lam, 1.0 / lam)
    if isinstance(f, NodalField):
        return NodalField(out, f.bounds or (lam, 1.0 / lam))
    return out


def objective(mesh: TriMesh, sigma, electrodes: ElectrodeConfig, patterns, data,
              config: TikhonovConfig) -> tuple[float, float, float]:
    """``(J, fit, penalty)`` with ``J = fit + alpha * penalty``."""
    fit, _ = fit_and_gradient(mesh, sigma, electrodes, patterns, data, config.lambda_bound,
                              need_gradient=False)
    pen = penalty_value(mesh, sigma, config)
    return fit + config.alpha * pen, fit, pen


def objective_and_gradient(mesh, sigma, electrodes, patterns, data, config: TikhonovConfig):
    fit, gfit = fit_and_gradient(mesh, sigma, electrodes, patterns, data, config.lambda_bound)
    pen = penalty_value(mesh, sigma, config)
    gpen = penalty_gradient(mesh, sigma, config.penalty, config.eps)
    return fit + config.alpha * pen, fit, pen, gfit + config.alpha * gpen


# ---------------------------------------------------------------- minimization

class _Metric:
    """Riesz map turning the nodal derivative into a descent direction, plus the L2 norm."""

    def __init__(self, mesh: TriMesh, kind: str):
        self.mass = fem.mass_matrix(mesh)
        if kind == "l2":
            lumped = fem.lumped_mass(mesh)
            self.gram = sp.diags(lumped)
            self.riesz = lambda g: g / lumped
        else:
            self.gram = (fem.stiffness_matrix(mesh) + self.mass).tocsc()
            self.riesz = spla.factorized(self.gram)

    def norm(self, v: np.ndarray) -> float:
        return math.sqrt(max(float(v @ (self.gram @ v)), 0.0))

    def l2(self, v: np.ndarray) -> float:
        return math.sqrt(max(float(v @ (self.mass @ v)), 0.0))


def reconstruct(mesh: TriMesh, electrodes: ElectrodeConfig, patterns, data,
                config: TikhonovConfig, sigma0=None) -> ReconstructionResult:
    """Minimize the Tikhonov functional over the nodal box by projected gradient descent.

    Iterates ``s+ = P(s - t G)`` where ``G`` is the gradient represented in the
    configured metric (lumped L2 by default). The first trial step is the
    Barzilai-Borwein step, or twice the last accepted step under
    ``step_rule="carry"``; trials are then shrunk until the Armijo condition
    holds. Stops when ``|s - P(s - G)|_{L2} <= tol``.
    """
    lam = config.lambda_bound
    patterns, data = _check_data(patterns, data, electrodes.n_electrodes)
    s = project_box(np.ones(mesh.n_nodes) if sigma0 is None else values_of(sigma0), lam)
    metric = _Metric(mesh, config.metric)

    def evaluate(x):
        return objective_and_gradient(mesh, x, electrodes, patterns, data, config)

    def trial_steps(step, first):
        yield first
        t = step
        for _ in range(config.max_backtracks):
            yield t
            t *= config.backtrack

    J, fit, pen, g = evaluate(s)
    history, fits, pens, steps = [J], [fit], [pen], [0.0]
    if not math.isfinite(J):
        raise DivergedError("objective is not finite at the initial guess", history)
    G = metric.riesz(g)
    step = config.step_init or 1.0 / max(metric.l2(G), 1e-300)
    converged, reason = False, "max_iters"
    bb_step = None
    for it in range(config.max_iters + 1):
        stationarity = metric.l2(s - project_box(s - G, lam))
        if stationarity <= config.tol_stationarity:
            converged, reason = True, "stationary"
            break
        if it == config.max_iters:
            break
        accepted = None
        if bb_step is None:
            first, rest = 2.0 * step, step
        else:
            first, rest = bb_step, bb_step * config.backtrack
        for trial in trial_steps(rest, first):
            s_new = project_box(s - trial * G, lam)
            delta = s_new - s
            if not np.any(delta):
                break
            J_new, fit_new, pen_new, g_new = evaluate(s_new)
            if not math.isfinite(J_new):
                history.append(J_new)
                raise DivergedError("objective became non-finite", history)
            if J_new <= J + config.armijo_c * min(float(g @ delta), 0.0):
                accepted = (trial, s_new, J_new, fit_new, pen_new, g_new)
                break
        if accepted is None:
            reason = "line_search_failed"
            break
        step, s_new, J, fit, pen, g_new = accepted
        ds, dg = s_new - s, g_new - g
        curvature = float(ds @ dg)
        if config.step_rule == "bb" and curvature > 0:
            bb_step = metric.norm(ds) ** 2 / curvature
        else:
            bb_step = None
        s, g = s_new, g_new
        G = metric.riesz(g)
        history.append(J)
        fits.append(fit)
        pens.append(pen)
        steps.append(step)
        log.debug("iter %d J=%.12g fit=%.4g pen=%.4g step=%.3g", it + 1, J, fit, pen, step)
    return ReconstructionResult(
        sigma_star=NodalField.conductivity(s, lam),
        objective_history=history,
        fit_term=fit,
        penalty_term=pen,
        iterations=len(history) - 1,
        converged=converged,
        reason=reason,
        fit_history=fits,
        penalty_history=pens,
        step_history=steps,
    )
