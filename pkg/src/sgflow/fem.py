"""Taylor-Hood (P2 velocity / P1 pressure) machinery on quadratic triangles.

Velocity DOFs are interleaved (dof = 2*node + comp).  The impermeability
condition y.n = 0 is enforced strongly by rotating boundary velocity DOFs
into the local (n, tau) frame and dropping the normal component; the
zero-tangential-stress condition is the natural condition of the 2(Dy,Dphi)
form, so no boundary terms are assembled.

The divergence coupling is realized through the integrated-by-parts pairing
G[q, v] = (v, grad q).  For exactly tangent fields this equals (div v, q);
discretely it is the variant that makes the Helmholtz projector exactly
orthogonal to pressure gradients and exactly idempotent on the constrained
divergence-free space shared with the eigenbasis.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .meshing import BoundaryFrame, Mesh
from .quadrature import edge_rule, triangle_rule

__all__ = [
    "Field",
    "FeSpace",
    "OperatorSet",
    "ConstrainedOperatorSet",
    "AssemblyError",
    "build_spaces",
    "assemble_operators",
    "apply_slip_constraints",
    "stokes_solve",
    "helmholtz_project",
    "norms",
]

ASSEMBLY_DEGREE = 4
TENSOR_DEGREE = 6


class AssemblyError(RuntimeError):
    pass


@dataclass
class Field:
    """Discrete field: velocity (2 per node), pressure (P1) or scalar (P2)."""

    kind: str
    coefficients: np.ndarray

    def copy(self) -> "Field":
        return Field(self.kind, self.coefficients.copy())


# ---------------------------------------------------------------------------
# reference basis


def p2_shape(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    l1 = 1.0 - x - y
    return np.stack([
        l1 * (2 * l1 - 1), x * (2 * x - 1), y * (2 * y - 1),
        4 * l1 * x, 4 * x * y, 4 * y * l1,
    ], axis=1)


def p2_dshape(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    l1 = 1.0 - x - y
    z = np.zeros_like(x)
    dx = np.stack([1 - 4 * l1, 4 * x - 1, z, 4 * (l1 - x), 4 * y, -4 * y],
                  axis=1)
    dy = np.stack([1 - 4 * l1, z, 4 * y - 1, -4 * x, 4 * x, 4 * (l1 - y)],
                  axis=1)
    return np.stack([dx, dy], axis=2)


def p1_shape(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([1.0 - x - y, x, y], axis=1)


P1_DSHAPE = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


# ---------------------------------------------------------------------------
# element tables


@dataclass
class ElementTables:
    """Per-element geometry and basis data at the points of one triangle rule."""

    degree: int
    weights: np.ndarray      # (nq,) reference weights
    shape: np.ndarray        # (nq, 6)
    qpoints: np.ndarray      # (T, nq, 2) physical coordinates
    grads: np.ndarray        # (T, nq, 6, 2) physical P2 gradients
    detj: np.ndarray         # (T,)
    wdet: np.ndarray         # (T, nq) weights * |J|

    @property
    def n_elements(self) -> int:
        return self.detj.shape[0]


def _element_tables(mesh: Mesh, degree: int) -> ElementTables:
    pts, w = triangle_rule(degree)
    verts = mesh.nodes[mesh.triangles[:, :3]]          # (T, 3, 2)
    jac = np.stack([verts[:, 1] - verts[:, 0],
                    verts[:, 2] - verts[:, 0]], axis=2)  # d x / d xi
    detj = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    if np.any(detj <= 0):
        bad = int(np.nonzero(detj <= 0)[0][0])
        raise AssemblyError(f"singular element geometry (element {bad})")
    inv_jt = np.empty_like(jac)
    inv_jt[:, 0, 0] = jac[:, 1, 1]
    inv_jt[:, 0, 1] = -jac[:, 1, 0]
    inv_jt[:, 1, 0] = -jac[:, 0, 1]
    inv_jt[:, 1, 1] = jac[:, 0, 0]
    inv_jt /= detj[:, None, None]

    shape = p2_shape(pts)
    dref = p2_dshape(pts)
    grads = np.einsum("tij,qaj->tqai", inv_jt, dref)
    p1 = p1_shape(pts)
    qp = np.einsum("qa,tad->tqd", p1, verts)
    wdet = np.multiply.outer(detj, w)
    return ElementTables(degree, w, shape, qp, grads, detj, wdet)


@dataclass
class BoundaryTables:
    """Straight-chord quadrature along the boundary edge loop."""

    edges: np.ndarray        # (E, 3) node ids [v0, v1, mid]
    qpoints: np.ndarray      # (E, nq, 2)
    wds: np.ndarray          # (E, nq) weights * chord length
    trace: np.ndarray        # (nq, 3) quadratic trace basis at [v0, v1, mid]
    sparam: np.ndarray       # (nq,)
    adjacent: np.ndarray     # (E,) element owning each edge
    ref_coords: np.ndarray   # (E, nq, 2) edge quad points in element ref coords


def _boundary_tables(mesh: Mesh, degree: int = 5) -> BoundaryTables:
    s, w = edge_rule(degree)
    edges = mesh.boundary_edges
    p0 = mesh.nodes[edges[:, 0]]
    p1 = mesh.nodes[edges[:, 1]]
    chord = p1 - p0
    length = np.hypot(chord[:, 0], chord[:, 1])
    qp = p0[:, None, :] + s[None, :, None] * chord[:, None, :]
    wds = np.multiply.outer(length, w)
    trace = np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)],
                     axis=1)

    owner = {}
    for t, tri in enumerate(mesh.triangles):
        for k, (va, vb) in enumerate(((tri[0], tri[1]), (tri[1], tri[2]),
                                      (tri[2], tri[0]))):
            owner[(int(va), int(vb))] = (t, k)
    adjacent = np.empty(len(edges), dtype=int)
    ref = np.empty((len(edges), len(s), 2))
    local = {
        0: lambda u: np.stack([u, np.zeros_like(u)], axis=1),
        1: lambda u: np.stack([1 - u, u], axis=1),
        2: lambda u: np.stack([np.zeros_like(u), 1 - u], axis=1),
    }
    for e, (va, vb, _) in enumerate(edges):
        t, k = owner[(int(va), int(vb))]
        adjacent[e] = t
        ref[e] = local[k](s)
    return BoundaryTables(edges, qp, wds, trace, s, adjacent, ref)


# ---------------------------------------------------------------------------
# spaces and operators


@dataclass
class FeSpace:
    """DOF maps, boundary rotations and the slip-constraint prolongation."""

    mesh: Mesh
    frame: BoundaryFrame
    pnodes: np.ndarray          # pressure dof -> node id (vertices)
    pressure_index: np.ndarray  # node id -> pressure dof (-1 otherwise)
    rotations: dict             # boundary node -> 2x2 [[n], [tau]]
    Ec: sp.csr_matrix           # full velocity dofs x constrained dofs
    n_v: int
    n_p: int
    n_c: int
    _tables: dict = field(default_factory=dict, repr=False)

    def tables(self, degree: int = ASSEMBLY_DEGREE) -> ElementTables:
        if degree not in self._tables:
            self._tables[degree] = _element_tables(self.mesh, degree)
        return self._tables[degree]

    def boundary_tables(self) -> BoundaryTables:
        if "boundary" not in self._tables:
            self._tables["boundary"] = _boundary_tables(self.mesh)
        return self._tables["boundary"]

    def constrain(self, v_full: np.ndarray) -> np.ndarray:
        return self.Ec.T @ v_full

    def prolong(self, v_hat: np.ndarray) -> np.ndarray:
        return self.Ec @ v_hat

    def field(self, kind: str, coefficients=None) -> Field:
        n = {"velocity": self.n_v, "pressure": self.n_p,
             "scalar": self.mesh.n_nodes}[kind]
        if coefficients is None:
            coefficients = np.zeros(n)
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (n,):
            raise ValueError(f"{kind} field needs {n} coefficients, "
                             f"got {coefficients.shape}")
        return Field(kind, coefficients)


def build_spaces(mesh: Mesh, frame: BoundaryFrame) -> FeSpace:
    pnodes = np.nonzero(mesh.is_vertex)[0]
    pressure_index = -np.ones(mesh.n_nodes, dtype=int)
    pressure_index[pnodes] = np.arange(len(pnodes))

    n_nodes = mesh.n_nodes
    n_v = 2 * n_nodes
    rotations = {}
    rows, cols, vals = [], [], []
    col = 0
    boundary = set(int(v) for v in frame.loop)
    for node in range(n_nodes):
        if node in boundary:
            n_vec, tau, _ = frame.at(node)
            rotations[node] = np.array([n_vec, tau])
            rows += [2 * node, 2 * node + 1]
            cols += [col, col]
            vals += [tau[0], tau[1]]
            col += 1
        else:
            rows += [2 * node, 2 * node + 1]
            cols += [col, col + 1]
            vals += [1.0, 1.0]
            col += 2
    ec = sp.csr_matrix((vals, (rows, cols)), shape=(n_v, col))
    return FeSpace(mesh, frame, pnodes, pressure_index, rotations, ec,
                   n_v, len(pnodes), col)


@dataclass
class OperatorSet:
    """Assembled unconstrained operators (quadrature exact to degree 4)."""

    M: sp.csr_matrix       # velocity mass
    K: sp.csr_matrix       # 2 (D., D.) stiffness
    Agrad: sp.csr_matrix   # (grad., grad.) stiffness
    G: sp.csr_matrix       # (., grad q) divergence coupling, rows = pressure
    Mp: sp.csr_matrix      # pressure mass
    Ms: sp.csr_matrix      # P2 scalar mass
    area: float
    pmean: np.ndarray      # integral of each pressure basis function


def assemble_operators(space: FeSpace) -> OperatorSet:
    mesh = space.mesh
    tab = space.tables(ASSEMBLY_DEGREE)
    w, shape, grads, detj = tab.weights, tab.shape, tab.grads, tab.detj
    tris = mesh.triangles
    n_t = tab.n_elements

    msc = np.einsum("q,qa,qb->ab", w, shape, shape)
    m_el = detj[:, None, None] * msc[None, :, :]                 # (T,6,6)
    a_el = np.einsum("q,tqai,tqbi,t->tab", w, grads, grads, detj)
    x_el = np.einsum("q,tqad,tqbc,t->tabcd", w, grads, grads, detj)

    k_el = np.zeros((n_t, 12, 12))
    m_vel = np.zeros((n_t, 12, 12))
    ag_el = np.zeros((n_t, 12, 12))
    for c in range(2):
        for d in range(2):
            blk = x_el[:, :, :, c, d]
            if c == d:
                blk = blk + a_el
            k_el[:, c::2, d::2] = blk
            if c == d:
                m_vel[:, c::2, d::2] = m_el
                ag_el[:, c::2, d::2] = a_el

    vdofs = np.empty((n_t, 12), dtype=int)
    vdofs[:, 0::2] = 2 * tris
    vdofs[:, 1::2] = 2 * tris + 1

    def scatter(elmats, rowdofs, coldofs, shape_):
        rows = np.repeat(rowdofs, coldofs.shape[1], axis=1).ravel()
        cols = np.tile(coldofs, (1, rowdofs.shape[1])).ravel()
        mat = sp.coo_matrix((elmats.ravel(), (rows, cols)), shape=shape_)
        return mat.tocsr()

    n_v = space.n_v
    mmat = scatter(m_vel, vdofs, vdofs, (n_v, n_v))
    kmat = scatter(k_el, vdofs, vdofs, (n_v, n_v))
    agmat = scatter(ag_el, vdofs, vdofs, (n_v, n_v))

    # pressure gradient pairing (Phi_b e_d, grad psi_p)
    verts = mesh.nodes[tris[:, :3]]
    jac = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]],
                   axis=2)
    inv_jt = np.empty_like(jac)
    inv_jt[:, 0, 0] = jac[:, 1, 1]
    inv_jt[:, 0, 1] = -jac[:, 1, 0]
    inv_jt[:, 1, 0] = -jac[:, 0, 1]
    inv_jt[:, 1, 1] = jac[:, 0, 0]
    inv_jt /= detj[:, None, None]
    gp1 = np.einsum("tij,aj->tai", inv_jt, P1_DSHAPE)            # (T,3,2)
    int_n = np.einsum("q,qb->b", w, shape)                       # (6,)
    g_el = np.einsum("tpd,b,t->tpbd", gp1, int_n, detj)          # (T,3,6,2)
    g_el = g_el.reshape(n_t, 3, 12, order="C")                   # cols 2b+d
    pdofs = space.pressure_index[tris[:, :3]]
    gmat = scatter(g_el, pdofs, vdofs, (space.n_p, n_v))

    p1q = p1_shape(triangle_rule(2)[0])
    w2 = triangle_rule(2)[1]
    mp_el = np.einsum("q,qa,qb,t->tab", w2, p1q, p1q, detj)
    mpmat = scatter(mp_el, pdofs, pdofs, (space.n_p, space.n_p))

    ndofs = tris
    msmat = scatter(m_el, ndofs, ndofs, (mesh.n_nodes, mesh.n_nodes))

    area = float(detj.sum()) * 0.5
    pmean = np.asarray(mpmat.sum(axis=1)).ravel()
    return OperatorSet(mmat, kmat, agmat, gmat, mpmat, msmat, area, pmean)


@dataclass
class ConstrainedOperatorSet:
    """Slip-constrained operators plus cached saddle factorizations."""

    space: FeSpace
    full: OperatorSet
    M: sp.csr_matrix
    K: sp.csr_matrix
    Agrad: sp.csr_matrix
    G: sp.csr_matrix
    _solvers: dict = field(default_factory=dict, repr=False)

    @property
    def n_c(self) -> int:
        return self.space.n_c

    def saddle_solver(self, tag, amat):
        """Factorize [[A, G^T, 0], [G, 0, m], [0, m^T, 0]] once per tag."""
        if tag not in self._solvers:
            n_c, n_p = self.space.n_c, self.space.n_p
            m = sp.csr_matrix(self.full.pmean.reshape(n_p, 1))
            top = sp.hstack([amat, self.G.T, sp.csr_matrix((n_c, 1))])
            mid = sp.hstack([self.G, sp.csr_matrix((n_p, n_p)), m])
            bot = sp.hstack([sp.csr_matrix((1, n_c)), m.T,
                             sp.csr_matrix((1, 1))])
            kkt = sp.vstack([top, mid, bot]).tocsc()
            self._solvers[tag] = splu(kkt)
        return self._solvers[tag]

    def solve_saddle(self, tag, amat, rhs_v):
        lu = self.saddle_solver(tag, amat)
        rhs = np.concatenate([rhs_v, np.zeros(self.space.n_p + 1)])
        sol = lu.solve(rhs)
        n_c = self.space.n_c
        return sol[:n_c], sol[n_c:n_c + self.space.n_p]


def apply_slip_constraints(ops: OperatorSet,
                           space: FeSpace) -> ConstrainedOperatorSet:
    ec = space.Ec
    return ConstrainedOperatorSet(
        space, ops,
        (ec.T @ ops.M @ ec).tocsr(),
        (ec.T @ ops.K @ ec).tocsr(),
        (ec.T @ ops.Agrad @ ec).tocsr(),
        (ops.G @ ec).tocsr(),
    )


# ---------------------------------------------------------------------------
# solves


def stokes_solve(cops: ConstrainedOperatorSet, f: Field,
                 gamma: float = 0.0, nu: float = 1.0):
    """Saddle solve of (gamma M + nu K) y + G^T pi = M f, G y = 0.

    Pressure is fixed to zero mean.  gamma > 0 gives the zeroth-order
    auxiliary problem; gamma = 0 is plain Stokes.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    space = cops.space
    amat = (gamma * cops.M + nu * cops.K).tocsr()
    rhs = space.constrain(cops.full.M @ f.coefficients)
    y_hat, pi = cops.solve_saddle(("stokes", gamma, nu), amat, rhs)
    return (space.field("velocity", space.prolong(y_hat)),
            space.field("pressure", pi))


def helmholtz_project(cops: ConstrainedOperatorSet, v: Field) -> Field:
    """L2-orthogonal projection onto the discrete space of divergence-free
    tangent fields (the kernel of G in the slip-constrained space)."""
    space = cops.space
    rhs = space.constrain(cops.full.M @ v.coefficients)
    out_hat, _ = cops.solve_saddle("helmholtz", cops.M, rhs)
    return space.field("velocity", space.prolong(out_hat))


def norms(cops: ConstrainedOperatorSet, v: Field) -> dict:
    """L2, H1, D-seminorm, L4 and boundary L2 of a velocity field."""
    ops, space = cops.full, cops.space
    c = v.coefficients
    l2sq = float(c @ (ops.M @ c))
    dsq = 0.5 * float(c @ (ops.K @ c))
    h1sq = l2sq + float(c @ (ops.Agrad @ c))

    tab = space.tables(ASSEMBLY_DEGREE)
    vals = velocity_values(space, tab, c)
    mag2 = vals[..., 0] ** 2 + vals[..., 1] ** 2
    l4 = float(np.sum(tab.wdet * mag2 ** 2)) ** 0.25

    bt = space.boundary_tables()
    bvals = boundary_values(space, bt, c)
    bl2 = float(np.sum(bt.wds * (bvals[..., 0] ** 2 + bvals[..., 1] ** 2)))
    return {
        "L2": np.sqrt(max(l2sq, 0.0)),
        "H1": np.sqrt(max(h1sq, 0.0)),
        "Dsemi": np.sqrt(max(dsq, 0.0)),
        "L4": l4,
        "boundary_L2": np.sqrt(max(bl2, 0.0)),
    }


# ---------------------------------------------------------------------------
# field evaluation at quadrature points


def velocity_values(space: FeSpace, tab: ElementTables,
                    coeffs: np.ndarray) -> np.ndarray:
    """Values (T, nq, 2) of an interleaved velocity coefficient vector."""
    tris = space.mesh.triangles
    nodal = coeffs.reshape(-1, 2)[tris]              # (T, 6, 2)
    return np.einsum("qa,tad->tqd", tab.shape, nodal)


def velocity_gradients(space: FeSpace, tab: ElementTables,
                       coeffs: np.ndarray) -> np.ndarray:
    """Gradients (T, nq, 2, 2) with [..., d, c] = d v_d / d x_c."""
    tris = space.mesh.triangles
    nodal = coeffs.reshape(-1, 2)[tris]
    return np.einsum("tqac,tad->tqdc", tab.grads, nodal)


def scalar_values(space: FeSpace, tab: ElementTables,
                  coeffs: np.ndarray) -> np.ndarray:
    tris = space.mesh.triangles
    return np.einsum("qa,ta->tq", tab.shape, coeffs[tris])


def scalar_gradients(space: FeSpace, tab: ElementTables,
                     coeffs: np.ndarray) -> np.ndarray:
    tris = space.mesh.triangles
    return np.einsum("tqac,ta->tqc", tab.grads, coeffs[tris])


def pressure_gradients(space: FeSpace, coeffs: np.ndarray) -> np.ndarray:
    """Elementwise-constant gradient (T, 2) of a P1 pressure field."""
    mesh = space.mesh
    verts = mesh.nodes[mesh.triangles[:, :3]]
    jac = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]],
                   axis=2)
    detj = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv_jt = np.empty_like(jac)
    inv_jt[:, 0, 0] = jac[:, 1, 1]
    inv_jt[:, 0, 1] = -jac[:, 1, 0]
    inv_jt[:, 1, 0] = -jac[:, 0, 1]
    inv_jt[:, 1, 1] = jac[:, 0, 0]
    inv_jt /= detj[:, None, None]
    gp1 = np.einsum("tij,aj->tai", inv_jt, P1_DSHAPE)
    nodal = coeffs[space.pressure_index[mesh.triangles[:, :3]]]
    return np.einsum("tai,ta->ti", gp1, nodal)


def boundary_values(space: FeSpace, bt: BoundaryTables,
                    coeffs: np.ndarray) -> np.ndarray:
    """Velocity values (E, nq, 2) along the boundary edge loop."""
    nodal = coeffs.reshape(-1, 2)[bt.edges]          # (E, 3, 2)
    return np.einsum("qa,ead->eqd", bt.trace, nodal)


def interpolation_points(space: FeSpace) -> np.ndarray:
    """Nodal interpolation points of the affine-geometry P2 space.

    Vertex nodes sit at their stored coordinates; midpoint nodes sit at the
    chord midpoint of their edge (stored coordinates of projected boundary
    midpoints are displaced off the chord and must not be used to
    interpolate onto straight-edged elements).
    """
    mesh = space.mesh
    pts = mesh.nodes.copy()
    tris = mesh.triangles
    for (ea, eb, col) in ((0, 1, 3), (1, 2, 4), (2, 0, 5)):
        mid = tris[:, col]
        pts[mid] = 0.5 * (mesh.nodes[tris[:, ea]] + mesh.nodes[tris[:, eb]])
    return pts


def interpolate_velocity(space: FeSpace, fn) -> Field:
    """Nodal interpolation of a callable fn(x, y) -> (vx, vy)."""
    pts = interpolation_points(space)
    vals = np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float)
    coeffs = np.empty(space.n_v)
    coeffs[0::2] = vals[0]
    coeffs[1::2] = vals[1]
    return space.field("velocity", coeffs)


def interpolate_scalar(space: FeSpace, fn) -> Field:
    pts = interpolation_points(space)
    return space.field("scalar", np.asarray(fn(pts[:, 0], pts[:, 1]),
                                            dtype=float))


def project_to_velocity(cops: ConstrainedOperatorSet,
                        rhs_moments: np.ndarray) -> np.ndarray:
    """Unconstrained L2 projection: solve M x = rhs_moments."""
    if "mass_lu" not in cops._solvers:
        cops._solvers["mass_lu"] = splu(cops.full.M.tocsc())
    return cops._solvers["mass_lu"].solve(rhs_moments)


def project_to_scalar(cops: ConstrainedOperatorSet,
                      rhs_moments: np.ndarray) -> np.ndarray:
    """L2 projection onto the quadratic scalar space: Ms x = rhs."""
    if "scalar_mass_lu" not in cops._solvers:
        cops._solvers["scalar_mass_lu"] = splu(cops.full.Ms.tocsc())
    return cops._solvers["scalar_mass_lu"].solve(rhs_moments)
