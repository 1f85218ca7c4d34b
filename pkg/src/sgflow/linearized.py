"""Linearized state and adjoint equations in the modal basis.

The linearized pairing (curl sigma(z) x y + curl sigma(y) x z, e_k)
assembles into

    L(eta)_kj = nu lam_k delta_kj + sum_i eta_i (w_j C_jik + w_i C_ijk),

which is exactly the Newton Jacobian of the state residual.  The discrete
adjoint is the matrix transpose: the adjoint weak form is the transpose of
the linearized form, so solving L^T p = f realizes the adjoint Galerkin
system in the same basis and makes the duality (f, z) = (w, p) exact.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .state import StateProblem, solve_state
from .tensors import ReducedSystem

__all__ = ["LinearizedOperator", "assemble_linearized", "solve_linearized",
           "solve_adjoint", "gateaux_check", "lipschitz_check"]


@dataclass
class LinearizedOperator:
    matrix: np.ndarray
    eta: np.ndarray
    nu: float
    alpha: float
    _lu: tuple = None

    def lu(self):
        if self._lu is None:
            self._lu = scipy.linalg.lu_factor(self.matrix)
        return self._lu

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self.lu(), rhs)

    def solve_transposed(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self.lu(), rhs, trans=1)


def assemble_linearized(sys: ReducedSystem, eta: np.ndarray, nu: float,
                        alpha: float) -> LinearizedOperator:
    """L(eta) from the weak-form pairing; L(0) = nu diag(lam)."""
    eta = np.asarray(eta, dtype=float)
    w = sys.weights(alpha)
    mat = (np.diag(nu * sys.lam)
           + np.einsum("jik,i->kj", sys.C, eta) * w[None, :]
           + np.einsum("ijk,i->kj", sys.C, w * eta))
    return LinearizedOperator(mat, eta.copy(), nu, alpha)


def _check_factorizable(lin: LinearizedOperator):
    try:
        lu = lin.lu()
    except Exception as exc:
        raise RuntimeError(
            "linearized operator not factorizable; consult the uniqueness "
            f"monitor (q, sigma_min): {exc}") from exc
    if not np.all(np.isfinite(lu[0])):
        raise RuntimeError("linearized operator is singular; consult the "
                           "uniqueness monitor (q, sigma_min)")


def solve_linearized(lin: LinearizedOperator, w_rhs: np.ndarray,
                     sys: ReducedSystem = None) -> dict:
    """Solve L z = w; report the H1-estimate ratio nu ||Dz|| / ||w||."""
    _check_factorizable(lin)
    w_rhs = np.asarray(w_rhs, dtype=float)
    z = lin.solve(w_rhs)
    out = {"z": z}
    wn = float(np.linalg.norm(w_rhs))
    if sys is not None and wn > 0:
        out["ratio_48"] = sys.dsemi(z) * lin.nu / wn
    return out


def solve_adjoint(lin: LinearizedOperator, f_rhs: np.ndarray) -> np.ndarray:
    """Solve L^T p = f (discrete adjoint = transpose)."""
    _check_factorizable(lin)
    return lin.solve_transposed(np.asarray(f_rhs, dtype=float))


def gateaux_check(sys: ReducedSystem, nu: float, alpha: float,
                  u: np.ndarray, w_dir: np.ndarray,
                  rho_list=(1e-1, 1e-2, 1e-3, 1e-4),
                  y_d: np.ndarray = None,
                  lambda_reg: float = 0.0) -> dict:
    """Directional differentiability check of the control-to-state map.

    Solves y(u + rho w), forms r_rho = (eta_rho - eta)/rho - zeta with
    zeta the linearized solution, and regresses ||D r_rho|| against rho in
    log-log; also checks the first-order cost expansion when a tracking
    target y_d is given.
    """
    u = np.asarray(u, dtype=float)
    w_dir = np.asarray(w_dir, dtype=float)
    base = solve_state(sys, StateProblem(nu=nu, alpha=alpha, u=u))
    lin = assemble_linearized(sys, base.eta, nu, alpha)
    w_pad = np.zeros(sys.m)
    w_pad[:len(w_dir)] = w_dir
    zeta = lin.solve(w_pad)

    if y_d is None:
        y_d = np.zeros(sys.m)
    cost0 = 0.5 * np.sum((base.eta - y_d) ** 2) \
        + 0.5 * lambda_reg * np.sum(u ** 2)
    djdu = float(zeta @ (base.eta - y_d) + lambda_reg * (u @ w_dir))

    rows = []
    for rho in rho_list:
        try:
            pert = solve_state(sys, StateProblem(nu=nu, alpha=alpha,
                                                 u=u + rho * w_dir))
        except Exception:
            rows.append({"rho": rho, "failed": True})
            continue
        r = (pert.eta - base.eta) / rho - zeta
        cost_rho = 0.5 * np.sum((pert.eta - y_d) ** 2) \
            + 0.5 * lambda_reg * np.sum((u + rho * w_dir) ** 2)
        rows.append({
            "rho": rho,
            "Dr": sys.dsemi(r),
            "cost_remainder": abs(cost_rho - cost0 - rho * djdu) / rho,
        })

    good = [r for r in rows if "Dr" in r and r["Dr"] > 0]
    report = {"rows": rows, "zeta": zeta, "djdu": djdu}
    if len(good) >= 2:
        lr = np.log([r["rho"] for r in good])
        report["slope_Dr"] = float(np.polyfit(
            lr, np.log([r["Dr"] for r in good]), 1)[0])
        rem = [r["cost_remainder"] for r in good]
        if min(rem) > 0:
            report["slope_cost"] = float(np.polyfit(lr, np.log(rem), 1)[0])
    return report


def lipschitz_check(sys: ReducedSystem, nu: float, alpha: float,
                    u1: np.ndarray, u2: np.ndarray) -> dict:
    """Stability ratios of the state map between two controls (report only).

    nu ||D(y1 - y2)|| / ||u1 - u2|| tracks the H1 Lipschitz estimate; the
    sigma-norm ratio tracks its H2 analog.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    s1 = solve_state(sys, StateProblem(nu=nu, alpha=alpha, u=u1))
    s2 = solve_state(sys, StateProblem(nu=nu, alpha=alpha, u=u2))
    diff = s1.eta - s2.eta
    du = float(np.linalg.norm(u1 - u2))
    w = sys.weights(alpha)
    sigma_norm = float(np.linalg.norm(w * diff))  # ||P sigma(y1-y2)||
    if du == 0.0:
        return {"D_diff": sys.dsemi(diff), "ratio_H1": 0.0,
                "ratio_H2_proxy": 0.0}
    return {
        "D_diff": sys.dsemi(diff),
        "ratio_H1": sys.dsemi(diff) * nu / du,
        "ratio_H2_proxy": sigma_norm * nu / du,
    }
