"""Slip-Stokes eigenpairs: the Galerkin basis of the whole pipeline.

Solves the constrained saddle-point eigenproblem K e = lambda M e with the
divergence constraint enforced through the saddle structure.  Eigenvectors
are M-orthonormalized by a dense Rayleigh-Ritz pass over the converged
ARPACK subspace, which makes the Gram identity (e_i, e_j) = delta_ij and
the stiffness identity 2(De_i, De_j) = lambda_j delta_ij hold to solver
precision.  Signs are fixed deterministically so caches are reproducible.

The pressure modes pi_j are kept because sigma(e_j) = (1 + alpha
lambda_j) e_j - alpha grad(pi_j) is the only route to sigma on
finite-element fields.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from . import fem
from .fem import ConstrainedOperatorSet

__all__ = ["ModalBasis", "EigenSolveError", "compute_eigenbasis",
           "verify_psigma_identity", "save_basis", "load_basis"]

CACHE_FORMAT = 1


class EigenSolveError(RuntimeError):
    pass


@dataclass
class ModalBasis:
    """First m slip-Stokes eigenpairs (lambda_j, e_j, pi_j).

    E holds full-space interleaved velocity coefficients (n_v, m), columns
    L2-orthonormal and exactly slip-constrained; Pi the zero-mean pressure
    modes (n_p, m); curlE the L2 projection of curl e_j onto the quadratic
    scalar space (n_nodes, m).
    """

    m: int
    lam: np.ndarray
    E: np.ndarray
    Pi: np.ndarray
    curlE: np.ndarray
    mesh_hash: str
    residuals: np.ndarray

    def weights(self, alpha: float) -> np.ndarray:
        """Modal sigma weights w_j = 1 + alpha lambda_j."""
        return 1.0 + alpha * self.lam


def _saddle_matrices(cops: ConstrainedOperatorSet):
    n_c, n_p = cops.space.n_c, cops.space.n_p
    mv = sp.csr_matrix(cops.full.pmean.reshape(n_p, 1))
    a = sp.vstack([
        sp.hstack([cops.K, cops.G.T, sp.csr_matrix((n_c, 1))]),
        sp.hstack([cops.G, sp.csr_matrix((n_p, n_p)), mv]),
        sp.hstack([sp.csr_matrix((1, n_c)), mv.T, sp.csr_matrix((1, 1))]),
    ]).tocsc()
    b = sp.block_diag([cops.M, sp.csr_matrix((n_p + 1, n_p + 1))]).tocsc()
    return a, b


def compute_eigenbasis(cops: ConstrainedOperatorSet, m: int,
                       residual_tol: float = 1e-8) -> ModalBasis:
    """Smallest m eigenpairs of the slip-constrained Stokes operator."""
    space = cops.space
    n_c, n_p = space.n_c, space.n_p
    max_m = n_c - n_p  # dimension of the constrained divergence-free space
    if not 1 <= m <= max_m:
        raise EigenSolveError(
            f"m = {m} outside [1, {max_m}] for this discretization")

    amat, bmat = _saddle_matrices(cops)
    v0 = np.ones(amat.shape[0])
    v0 /= np.linalg.norm(v0)
    try:
        vals, vecs = eigsh(amat, k=m, M=bmat, sigma=-1.0, which="LM", v0=v0)
    except Exception as exc:  # ARPACK non-convergence
        raise EigenSolveError(f"eigensolver failed: {exc}") from exc

    order = np.argsort(vals)
    vhat = vecs[:n_c, order]
    pi = vecs[n_c:n_c + n_p, order]

    # Rayleigh-Ritz re-diagonalization in the converged span: exact
    # M-orthonormality and K-diagonality within the subspace.
    sk = vhat.T @ (cops.K @ vhat)
    sm = vhat.T @ (cops.M @ vhat)
    lam, q = scipy.linalg.eigh((sk + sk.T) / 2, (sm + sm.T) / 2)
    vhat = vhat @ q
    pi = pi @ q

    # On axisymmetric domains the rigid rotation is a discrete near-null
    # mode; tolerate it (identity checks only), reject anything clearly
    # negative.
    if lam[0] < -1e-10 * abs(lam[-1]):
        raise EigenSolveError(f"negative eigenvalue {lam[0]:.3e}")

    # zero-mean pressures and deterministic signs
    pmean = cops.full.pmean
    pi -= np.outer(pmean, pmean @ pi) / pmean.sum()
    e_full = space.Ec @ vhat
    for j in range(m):
        lead = np.nonzero(np.abs(e_full[:, j])
                          > 0.1 * np.abs(e_full[:, j]).max())[0][0]
        if e_full[lead, j] < 0:
            e_full[:, j] *= -1.0
            vhat[:, j] *= -1.0
            pi[:, j] *= -1.0

    res = np.empty(m)
    for j in range(m):
        r = (cops.K @ vhat[:, j] - lam[j] * (cops.M @ vhat[:, j])
             + cops.G.T @ pi[:, j])
        res[j] = np.linalg.norm(r) / (lam[j] * np.linalg.norm(vhat[:, j]))
    if res.max() > residual_tol:
        raise EigenSolveError(
            f"eigen-residual {res.max():.2e} above {residual_tol:.1e} "
            f"(achieved {int((res <= residual_tol).sum())} of {m})")

    curl_e = _project_curls(cops, e_full)
    return ModalBasis(m, lam, e_full, pi, curl_e,
                      space.mesh.content_hash(), res)


def _project_curls(cops: ConstrainedOperatorSet,
                   e_full: np.ndarray) -> np.ndarray:
    """L2-project elementwise curl e_j onto the quadratic scalar space."""
    space = cops.space
    tab = space.tables(fem.ASSEMBLY_DEGREE)
    tris = space.mesh.triangles
    m = e_full.shape[1]
    rhs = np.zeros((space.mesh.n_nodes, m))
    for j in range(m):
        g = fem.velocity_gradients(space, tab, e_full[:, j])
        curl = g[:, :, 1, 0] - g[:, :, 0, 1]            # d v2/dx1 - d v1/dx2
        contrib = np.einsum("tq,tq,qa->ta", tab.wdet, curl, tab.shape)
        np.add.at(rhs[:, j], tris.ravel(), contrib.ravel())
    return np.column_stack([
        fem.project_to_scalar(cops, rhs[:, j]) for j in range(m)])


def grad_pi_velocity(cops: ConstrainedOperatorSet,
                     pi_coeffs: np.ndarray) -> np.ndarray:
    """L2 projection of grad(pi) onto the P2 velocity space."""
    return fem.project_to_velocity(cops, cops.full.G.T @ pi_coeffs)


def sigma_field(cops: ConstrainedOperatorSet, basis: ModalBasis,
                coeffs: np.ndarray, alpha: float) -> np.ndarray:
    """sigma(y) = y - alpha Laplace(y) for a modal field, via the
    eigen-relation: sum_j (1 + alpha lambda_j) c_j e_j - alpha grad(pi)."""
    w = basis.weights(alpha)
    out = basis.E @ (w * coeffs)
    if alpha != 0.0:
        out -= alpha * grad_pi_velocity(cops, basis.Pi @ coeffs)
    return out


def verify_psigma_identity(cops: ConstrainedOperatorSet, basis: ModalBasis,
                           alpha: float) -> dict:
    """Residuals of P sigma(e_j) = (1 + alpha lambda_j) e_j per mode."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    space = cops.space
    res = np.empty(basis.m)
    for j in range(basis.m):
        coeffs = np.zeros(basis.m)
        coeffs[j] = 1.0
        sig = sigma_field(cops, basis, coeffs, alpha)
        proj = fem.helmholtz_project(cops, space.field("velocity", sig))
        diff = proj.coefficients - basis.weights(alpha)[j] * basis.E[:, j]
        res[j] = (np.sqrt(diff @ (cops.full.M @ diff))
                  / basis.weights(alpha)[j])
    return {"alpha": alpha, "residuals": res, "max": float(res.max())}


# ---------------------------------------------------------------------------
# cache (JSON header + flat little-endian binary payload)


def save_basis(basis: ModalBasis, path_base: str) -> None:
    arrays = [("E", basis.E), ("Pi", basis.Pi), ("curlE", basis.curlE),
              ("residuals", basis.residuals.reshape(-1, 1))]
    header = {
        "format": CACHE_FORMAT,
        "mesh_hash": basis.mesh_hash,
        "m": basis.m,
        "lambda": [float(v) for v in basis.lam],
        "payload": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "dtype": "<f8",
    }
    with open(path_base + ".json", "w") as f:
        json.dump(header, f, indent=1, sort_keys=True)
    with open(path_base + ".bin", "wb") as f:
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_basis(path_base: str, mesh_hash: str) -> ModalBasis | None:
    """Load a cached basis; None on a missing or stale cache."""
    if not (os.path.exists(path_base + ".json")
            and os.path.exists(path_base + ".bin")):
        return None
    with open(path_base + ".json") as f:
        header = json.load(f)
    if header.get("format") != CACHE_FORMAT:
        return None
    if header["mesh_hash"] != mesh_hash:
        return None
    raw = np.fromfile(path_base + ".bin", dtype="<f8")
    arrays = {}
    off = 0
    for item in header["payload"]:
        n = int(np.prod(item["shape"]))
        arrays[item["name"]] = raw[off:off + n].reshape(item["shape"])
        off += n
    lam = np.array(header["lambda"])
    return ModalBasis(header["m"], lam, arrays["E"], arrays["Pi"],
                      arrays["curlE"], header["mesh_hash"],
                      arrays["residuals"].ravel())
