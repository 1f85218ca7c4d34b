"""Projected-gradient solution of the velocity-tracking control problem.

The admissible set is the L2 ball of radius R in the span of the first
m_c modes: closed, convex, bounded in H(curl), with an exact projection.
The reduced cost J(u) = 1/2 ||eta(u) - d||^2 + offset + lambda_reg/2
||u||^2 is differentiated through the discrete adjoint: grad = p +
lambda_reg u with L(eta)^T p = eta - d, the L2-Riesz gradient in modal
coordinates.  Armijo backtracking along the projection arc, with a
Barzilai-Borwein initial step.
"""

from dataclasses import dataclass, field

import numpy as np

from .linearized import assemble_linearized, solve_adjoint
from .state import StateProblem, StateSolveError, solve_state
from .tensors import ReducedSystem

__all__ = ["AdmissibleSet", "CostSpec", "OptimalityReport", "ControlResult",
           "OptimizerError", "cost", "reduced_gradient", "project",
           "solve_control"]


class OptimizerError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


@dataclass
class AdmissibleSet:
    m_c: int
    R: float

    def __post_init__(self):
        if self.m_c < 1 or self.R <= 0:
            raise ValueError("admissible set needs m_c >= 1 and R > 0")


@dataclass
class CostSpec:
    """Tracking target in modal coordinates plus the part of ||y_d||^2/2
    outside the modal span (a constant offset)."""

    y_d: np.ndarray
    lambda_reg: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        self.y_d = np.asarray(self.y_d, dtype=float)


@dataclass
class OptimalityReport:
    J: float
    gradient: np.ndarray
    vi_residual: float
    mu: float
    collinearity: float
    ball_active: bool
    fp_residual: float
    n_iterations: int
    converged: bool
    trace: list = field(default_factory=list)


@dataclass
class ControlResult:
    u: np.ndarray
    eta: np.ndarray
    p: np.ndarray
    report: OptimalityReport


def cost(sys: ReducedSystem, u: np.ndarray, eta: np.ndarray,
         spec: CostSpec) -> float:
    d = np.zeros(sys.m)
    d[:len(spec.y_d)] = spec.y_d
    return float(0.5 * np.sum((eta - d) ** 2) + spec.offset
                 + 0.5 * spec.lambda_reg * np.sum(np.asarray(u) ** 2))


def reduced_gradient(sys: ReducedSystem, nu: float, alpha: float,
                     u: np.ndarray, spec: CostSpec, m_c: int = None,
                     sol=None):
    """Adjoint gradient of the reduced cost at u.

    Returns (grad restricted to the control modes, full adjoint p, state
    solution)."""
    u = np.asarray(u, dtype=float)
    if m_c is None:
        m_c = len(u)
    if sol is None:
        sol = solve_state(sys, StateProblem(nu=nu, alpha=alpha, u=u))
    d = np.zeros(sys.m)
    d[:len(spec.y_d)] = spec.y_d
    lin = assemble_linearized(sys, sol.eta, nu, alpha)
    p = solve_adjoint(lin, sol.eta - d)
    grad = p[:m_c] + spec.lambda_reg * u[:m_c]
    return grad, p, sol


def project(u: np.ndarray, adm: AdmissibleSet) -> np.ndarray:
    """Exact projection onto the modal L2 ball: truncate then rescale."""
    out = np.array(u[:adm.m_c], dtype=float)
    nrm = np.linalg.norm(out)
    if nrm > adm.R:
        out *= adm.R / nrm
    return out


def _vi_residual(grad, u, adm):
    """min over the sampled extreme points v = +-R e_k of (grad, v - u)."""
    base = -float(grad @ u)
    vals = [base + s * adm.R * grad[k]
            for k in range(adm.m_c) for s in (1.0, -1.0)]
    return float(min(vals))


def solve_control(sys: ReducedSystem, nu: float, alpha: float,
                  adm: AdmissibleSet, spec: CostSpec,
                  u0: np.ndarray = None, tol: float = 1e-8,
                  max_iterations: int = 200, c1: float = 1e-4,
                  max_backtracks: int = 40) -> ControlResult:
    """Projected gradient with Armijo backtracking along the projection arc.

    Terminates on the fixed-point residual ||u - P(u - grad)|| <= tol
    (reference step 1).  A state-solve failure inside the line search
    rejects the step.
    """
    if adm.m_c > sys.m:
        raise OptimizerError(f"m_c = {adm.m_c} exceeds basis size {sys.m}")
    u = (np.zeros(adm.m_c) if u0 is None
         else project(np.asarray(u0, dtype=float), adm))

    def evaluate(uc):
        grad, p, sol = reduced_gradient(sys, nu, alpha, uc, spec, adm.m_c)
        return grad, p, sol, cost(sys, uc, sol.eta, spec)

    try:
        grad, p, sol, j_cur = evaluate(u)
    except StateSolveError as exc:
        raise OptimizerError(f"state solve failed at the initial iterate: "
                             f"{exc}") from exc

    trace = []
    step = 1.0 / (nu * sys.lam[0])     # Stokes-scale first trial step
    prev_u = prev_grad = None
    converged = False
    n_it = 0
    for n_it in range(1, max_iterations + 1):
        fp_res = float(np.linalg.norm(u - project(u - grad, adm)))
        trace.append({"iter": n_it - 1, "J": j_cur, "step": step,
                      "grad_norm": float(np.linalg.norm(grad)),
                      "u_norm": float(np.linalg.norm(u)),
                      "fp_residual": fp_res})
        if fp_res <= tol:
            converged = True
            break

        if prev_u is not None:
            du = u - prev_u
            dg = grad - prev_grad
            den = float(du @ dg)
            if den > 1e-300:
                step = float(du @ du) / den
        step = float(np.clip(step, 1e-12, 1e12))

        s = step
        accepted = False
        for _ in range(max_backtracks):
            u_try = project(u - s * grad, adm)
            if np.allclose(u_try, u, rtol=0.0, atol=1e-300):
                break
            try:
                g_try, p_try, sol_try, j_try = evaluate(u_try)
            except StateSolveError:
                s *= 0.5
                continue
            if j_try <= j_cur + c1 * float(grad @ (u_try - u)):
                prev_u, prev_grad = u, grad
                u, grad, p, sol, j_cur = u_try, g_try, p_try, sol_try, j_try
                accepted = True
                break
            s *= 0.5
        if not accepted:
            # no descent step available: accept termination at this point
            converged = fp_res <= max(tol, 1e2 * tol)
            break

    fp_res = float(np.linalg.norm(u - project(u - grad, adm)))
    u_norm = float(np.linalg.norm(u))
    ball_active = u_norm >= adm.R * (1.0 - 1e-9)
    if ball_active and u_norm > 0:
        mu = max(0.0, -float(grad @ u) / u_norm)
        tangential = grad - (float(grad @ u) / u_norm ** 2) * u
        gn = float(np.linalg.norm(grad))
        collinearity = float(np.linalg.norm(tangential)) / gn if gn > 0 \
            else 0.0
    else:
        mu = 0.0
        collinearity = 0.0

    report = OptimalityReport(
        J=j_cur, gradient=grad, vi_residual=_vi_residual(grad, u, adm),
        mu=mu, collinearity=collinearity, ball_active=ball_active,
        fp_residual=fp_res, n_iterations=n_it, converged=converged,
        trace=trace)
    if not converged:
        raise OptimizerError(
            f"projected gradient did not reach tol {tol:.1e} in "
            f"{max_iterations} iterations (fp residual {fp_res:.3e})",
            trace)
    return ControlResult(u, sol.eta, p, report)
