"""Vanishing-viscoelasticity study: solve along a decreasing alpha ladder
with warm starts and compare against the Navier-Stokes problem at alpha=0.

The alpha = 0 path runs through exactly the same state and control code
with modal weights w_i = 1; there is no special-cased branch.  Warm
starting in decreasing alpha biases the optimizer toward a continuous
solution branch so the observed sequence converges (an implementation
device; the underlying convergence theory is along subsequences).
No convergence rates are asserted anywhere: limits are checked through
monotone-trend diagnostics.
"""

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .control import AdmissibleSet, ControlResult, CostSpec, OptimizerError, \
    solve_control
from .state import StateProblem, StateSolveError, solve_state
from .tensors import ReducedSystem

__all__ = ["SweepResult", "run_state_sweep", "run_control_sweep",
           "verify_ns_limit_assembly"]


def _check_ladder(alphas):
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas):
        raise ValueError("ladder alphas must be positive; the alpha = 0 "
                         "record is produced automatically")
    if any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alpha ladder must be strictly decreasing")
    return alphas


def run_state_sweep(sys: ReducedSystem, nu: float, u: np.ndarray,
                    alphas) -> dict:
    """States for a fixed control along the alpha ladder plus alpha = 0.

    Reports ||y_alpha - y_0||_H1 and the alpha-uniform curl-sigma norms.
    """
    alphas = _check_ladder(alphas)
    u = np.asarray(u, dtype=float)

    records = []
    eta_warm = None
    for a in alphas:
        rec = {"alpha": a}
        try:
            sol = solve_state(sys, StateProblem(nu=nu, alpha=a, u=u))
            rec["eta"] = sol.eta
            rec["curl_sigma_L2"] = sol.diagnostics["curl_sigma_L2"]
            rec["Dsemi"] = sol.diagnostics["Dsemi"]
            eta_warm = sol.eta
        except StateSolveError as exc:
            rec["failed"] = str(exc)
        records.append(rec)

    sol0 = solve_state(sys, StateProblem(nu=nu, alpha=0.0, u=u))
    zero = {"alpha": 0.0, "eta": sol0.eta,
            "curl_sigma_L2": sol0.diagnostics["curl_sigma_L2"],
            "Dsemi": sol0.diagnostics["Dsemi"]}
    for rec in records:
        if "eta" in rec:
            rec["H1_dist_to_0"] = sys.h1(rec["eta"] - sol0.eta)
    return {"records": records, "zero": zero, "nu": nu}


@dataclass
class SweepResult:
    """Per-alpha optimal triples and their distances to the alpha = 0
    solution of the Navier-Stokes control problem."""

    nu: float
    alphas: list
    records: list
    zero: dict
    failures: list = field(default_factory=list)

    @property
    def gaps(self) -> list:
        j0 = self.zero["J"]
        return [abs(r["J"] - j0) for r in self.records if "J" in r]


def run_control_sweep(sys: ReducedSystem, nu: float, adm: AdmissibleSet,
                      spec: CostSpec, alphas, tol: float = 1e-8,
                      max_iterations: int = 200) -> SweepResult:
    """Optimal controls along the alpha ladder, warm-started downward,
    then the alpha = 0 problem from the last warm start."""
    alphas = _check_ladder(alphas)

    def record_of(res: ControlResult, a):
        return {
            "alpha": a, "u": res.u, "eta": res.eta, "p": res.p,
            "J": res.report.J, "vi_residual": res.report.vi_residual,
            "iterations": res.report.n_iterations,
            "q": (np.linalg.norm(res.u)
                  + a * float(np.sqrt(max(res.u @ (
                      sys.Gcurl[:adm.m_c, :adm.m_c] @ res.u), 0.0)))) / nu**2,
        }

    records = []
    failures = []
    warm = None
    for a in alphas:
        try:
            res = solve_control(sys, nu, a, adm, spec, u0=warm, tol=tol,
                                max_iterations=max_iterations)
            warm = res.u
            records.append(record_of(res, a))
        except (OptimizerError, StateSolveError) as exc:
            failures.append({"alpha": a, "error": str(exc)})
            records.append({"alpha": a, "failed": str(exc)})

    res0 = solve_control(sys, nu, 0.0, adm, spec, u0=warm, tol=tol,
                         max_iterations=max_iterations)
    zero = record_of(res0, 0.0)

    for rec in records:
        if "u" in rec:
            rec["gap_J"] = abs(rec["J"] - zero["J"])
            rec["u_dist"] = float(np.linalg.norm(rec["u"] - zero["u"]))
            rec["p_dist"] = float(np.linalg.norm(rec["p"] - zero["p"]))
            rec["y_dist_H1"] = sys.h1(rec["eta"] - zero["eta"])
    return SweepResult(nu, alphas, records, zero, failures)


def verify_ns_limit_assembly(cops, sys: ReducedSystem,
                             eta: np.ndarray) -> float:
    """Max over test modes of |tensor pairing - convective quadrature|.

    At alpha = 0 the rotational pairing sum eta_i eta_j C_ijk and the
    direct quadrature of b(y, y, e_k) differ only by (grad|y|^2/2, e_k),
    which vanishes up to the finite-element divergence error of e_k.
    """
    eta = np.asarray(eta, dtype=float)
    pair = np.einsum("ijk,i,j->k", sys.C, eta, eta)

    space = cops.space
    tab = space.tables(fem.TENSOR_DEGREE)
    y = sys.basis.E @ eta
    yv = fem.velocity_values(space, tab, y)
    yg = fem.velocity_gradients(space, tab, y)
    conv = np.einsum("tqc,tqdc->tqd", yv, yg)       # (y . grad) y
    wconv = tab.wdet[..., None] * conv

    from .tensors import modal_values_at
    xs, ys = modal_values_at(space, tab, sys.basis.E)
    direct = xs.T @ wconv[..., 0].ravel() + ys.T @ wconv[..., 1].ravel()
    return float(np.abs(pair - direct).max())
