"""Reduction of the PDE pairings to finite algebra in the modal basis.

The cubic tensor C_ijk = int curl(e_i) (e_j^perp . e_k) dx realizes the
cross-product pairing: with y = sum eta_i e_i, z = sum zeta_i e_i and
sigma weights w_i = 1 + alpha lambda_i,

    (curl sigma(z) x y, e_k) = sum_ij w_i zeta_i eta_j C_ijk,

the grad(pi) part of sigma dropping because curl(grad) = 0.  Antisymmetry
C_ijk = -C_ikj is exact (the integrand factors as A - A^T), which makes the
discrete energy identity 2 nu ||Dy||^2 = (u, y) hold to roundoff.
"""

from dataclasses import dataclass

import numpy as np

from . import fem
from .eigenbasis import ModalBasis
from .fem import ConstrainedOperatorSet, Field, FeSpace

__all__ = ["ReducedSystem", "ControlMaps", "assemble_cross_tensor",
           "trilinear_b", "control_maps", "modal_curls_at"]


@dataclass
class ReducedSystem:
    """Modal tensors: everything the state/linearized/adjoint solves need."""

    m: int
    lam: np.ndarray
    C: np.ndarray       # (m, m, m), C_ijk = int curl e_i (e_j^perp . e_k)
    Gcurl: np.ndarray   # (m, m), (curl e_i, curl e_j)
    Ggrad: np.ndarray   # (m, m), (grad e_i, grad e_j)
    basis: ModalBasis

    def weights(self, alpha: float) -> np.ndarray:
        return 1.0 + alpha * self.lam

    def cross_pairing(self, zeta, eta, alpha: float) -> np.ndarray:
        """(curl sigma(z) x y, e_k) for all k, as a length-m vector."""
        w = self.weights(alpha)
        return np.einsum("ijk,i,j->k", self.C, w * zeta, eta)

    def dsemi(self, coeffs) -> float:
        """||D y||_2 of a modal field: sqrt(sum lam_k c_k^2 / 2)."""
        return float(np.sqrt(0.5 * np.sum(self.lam * coeffs ** 2)))

    def h1(self, coeffs) -> float:
        return float(np.sqrt(coeffs @ coeffs
                             + coeffs @ (self.Ggrad @ coeffs)))

    def curl_norm(self, coeffs) -> float:
        return float(np.sqrt(max(coeffs @ (self.Gcurl @ coeffs), 0.0)))

    def curl_sigma_norm(self, coeffs, alpha: float) -> float:
        wc = self.weights(alpha) * coeffs
        return float(np.sqrt(max(wc @ (self.Gcurl @ wc), 0.0)))


def modal_values_at(space: FeSpace, tab, e_matrix: np.ndarray):
    """Velocity components of all modes at quadrature points.

    Returns (X, Y) of shape (T*nq, m).
    """
    tris = space.mesh.triangles
    ex = e_matrix[0::2, :]
    ey = e_matrix[1::2, :]
    xs = np.einsum("qa,taj->tqj", tab.shape, ex[tris])
    ys = np.einsum("qa,taj->tqj", tab.shape, ey[tris])
    m = e_matrix.shape[1]
    return xs.reshape(-1, m), ys.reshape(-1, m)


def modal_curls_at(space: FeSpace, tab, e_matrix: np.ndarray) -> np.ndarray:
    """Elementwise curl of all modes at quadrature points, (T*nq, m)."""
    tris = space.mesh.triangles
    ex = e_matrix[0::2, :]
    ey = e_matrix[1::2, :]
    cy = np.einsum("tqa,taj->tqj", tab.grads[:, :, :, 0], ey[tris])
    cx = np.einsum("tqa,taj->tqj", tab.grads[:, :, :, 1], ex[tris])
    m = e_matrix.shape[1]
    return (cy - cx).reshape(-1, m)


def assemble_cross_tensor(cops: ConstrainedOperatorSet,
                          basis: ModalBasis,
                          degree: int = fem.TENSOR_DEGREE) -> ReducedSystem:
    """Degree-6 quadrature assembly of C, Gcurl and Ggrad.

    The integrands are elementwise polynomials of degree <= 5, so the rule
    is exact and antisymmetry holds to roundoff.
    """
    space = cops.space
    tab = space.tables(degree)
    xs, ys = modal_values_at(space, tab, basis.E)
    curls = modal_curls_at(space, tab, basis.E)
    wq = tab.wdet.reshape(-1)

    m = basis.m
    c = np.empty((m, m, m))
    for i in range(m):
        wi = wq * curls[:, i]
        a = xs.T @ (wi[:, None] * ys)
        c[i] = a - a.T

    gcurl = curls.T @ (wq[:, None] * curls)
    gcurl = 0.5 * (gcurl + gcurl.T)
    ggrad = basis.E.T @ (cops.full.Agrad @ basis.E)
    ggrad = 0.5 * (ggrad + ggrad.T)
    return ReducedSystem(m, basis.lam.copy(), c, gcurl, ggrad, basis)


def trilinear_b(space: FeSpace, phi: Field, z: Field, y: Field,
                degree: int = fem.TENSOR_DEGREE) -> float:
    """b(phi, z, y) = int (phi . grad z) . y dx by quadrature."""
    tab = space.tables(degree)
    pv = fem.velocity_values(space, tab, phi.coefficients)
    zg = fem.velocity_gradients(space, tab, z.coefficients)
    yv = fem.velocity_values(space, tab, y.coefficients)
    conv = np.einsum("tqc,tqdc->tqd", pv, zg)
    return float(np.sum(tab.wdet * np.einsum("tqd,tqd->tq", conv, yv)))


@dataclass
class ControlMaps:
    """Controls live in the span of the first m_c modes."""

    m: int
    m_c: int
    Gcurl_cc: np.ndarray

    def inject(self, u: np.ndarray) -> np.ndarray:
        """Pad control coefficients to a length-m modal vector."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.m_c,):
            raise ValueError(f"control needs {self.m_c} coefficients")
        out = np.zeros(self.m)
        out[:self.m_c] = u
        return out

    def l2(self, u: np.ndarray) -> float:
        return float(np.linalg.norm(u))

    def curl_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(u @ (self.Gcurl_cc @ u), 0.0)))

    def hcurl_load(self, u: np.ndarray, alpha: float) -> float:
        """||u||_2 + alpha ||curl u||_2, the load of the a priori bounds."""
        return self.l2(u) + alpha * self.curl_norm(u)


def control_maps(sys: ReducedSystem, m_c: int) -> ControlMaps:
    if not 1 <= m_c <= sys.m:
        raise ValueError(f"m_c = {m_c} outside [1, {sys.m}]")
    return ControlMaps(sys.m, m_c, sys.Gcurl[:m_c, :m_c].copy())
