"""Triangulated smooth domains with exact boundary geometry.

The default domain is an ellipse (x/a)^2 + (y/b)^2 = 1, meshed by a
deterministic structured ring construction on the unit disk mapped onto the
ellipse.  All boundary nodes (including quadratic edge midpoints) are placed
exactly on the analytic curve.  Triangles are straight-edged 6-node
quadratic triangles; the geometry map stays affine (vertices only).

An ASCII Gmsh v2 subset (element types 2, 9, 8) can be read and written for
external meshes.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainSpec",
    "Mesh",
    "BoundaryFrame",
    "MeshError",
    "generate_ellipse_mesh",
    "load_msh",
    "write_msh",
    "boundary_frame",
]


class MeshError(ValueError):
    """Invalid domain specification or broken mesh file."""


@dataclass(frozen=True)
class DomainSpec:
    """Domain description: analytic ellipse or an external mesh file."""

    kind: str = "ellipse"
    a: float = 2.0
    b: float = 1.0
    h_target: float = 0.25
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("ellipse", "external-mesh"):
            raise MeshError(f"unknown domain kind {self.kind!r}")
        if self.kind == "ellipse":
            if self.a <= 0 or self.b <= 0:
                raise MeshError("ellipse semi-axes must be positive")
            if self.h_target <= 0:
                raise MeshError("h_target must be positive")
        elif not self.path:
            raise MeshError("external-mesh spec needs a file path")


@dataclass(frozen=True)
class Mesh:
    """Quadratic triangle mesh with an ordered closed boundary loop.

    triangles: (T, 6) connectivity [v0, v1, v2, m01, m12, m20].
    boundary_edges: (E, 3) rows [start, end, mid] forming one
    counterclockwise cycle over boundary vertices.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    is_boundary: np.ndarray
    is_vertex: np.ndarray

    def __post_init__(self):
        for arr in (self.nodes, self.triangles, self.boundary_edges,
                    self.is_boundary, self.is_vertex):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def boundary_loop(self) -> np.ndarray:
        """Boundary node indices in order around the loop (vertices and
        midpoints interleaved)."""
        out = np.empty(2 * len(self.boundary_edges), dtype=int)
        out[0::2] = self.boundary_edges[:, 0]
        out[1::2] = self.boundary_edges[:, 2]
        return out

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        h.update(np.ascontiguousarray(self.boundary_edges).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class BoundaryFrame:
    """Unit outward normal n, tangent tau = (-n2, n1) and g = 2 dn/ds at
    every boundary node, indexed like ``mesh.boundary_loop``."""

    loop: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    g: np.ndarray

    node_index: dict = field(repr=False, default_factory=dict)

    def at(self, node: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        i = self.node_index[node]
        return self.normal[i], self.tangent[i], self.g[i]


# ---------------------------------------------------------------------------
# structured ellipse meshes


def _disk_rings(n_rings: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vertices, P1 triangles, and boundary vertex ring of the unit disk."""
    verts = [(0.0, 0.0)]
    ring_start = [0]
    thetas = [np.zeros(1)]
    for k in range(1, n_rings + 1):
        ring_start.append(len(verts))
        th = 2.0 * np.pi * np.arange(6 * k) / (6 * k)
        thetas.append(th)
        r = k / n_rings
        verts.extend(zip(r * np.cos(th), r * np.sin(th)))
    verts = np.array(verts)

    tris = []
    for k in range(1, n_rings + 1):
        outer = ring_start[k] + np.arange(6 * k)
        th_out = thetas[k]
        if k == 1:
            for i in range(6):
                tris.append((0, outer[i], outer[(i + 1) % 6]))
            continue
        inner = ring_start[k - 1] + np.arange(6 * (k - 1))
        th_in = thetas[k - 1]
        n1, n2 = len(inner), len(outer)
        # merge walk by angle: 2*pi total, n1 + n2 triangles
        i1 = i2 = 0
        while i1 < n1 or i2 < n2:
            nxt_in = th_in[(i1 + 1) % n1] if i1 + 1 < n1 else 2.0 * np.pi
            nxt_out = th_out[(i2 + 1) % n2] if i2 + 1 < n2 else 2.0 * np.pi
            if i2 < n2 and (i1 >= n1 or nxt_out <= nxt_in):
                tris.append((inner[i1 % n1], outer[i2], outer[(i2 + 1) % n2]))
                i2 += 1
            else:
                tris.append((inner[i1], outer[i2 % n2], inner[(i1 + 1) % n1]))
                i1 += 1
    tris = np.array(tris, dtype=int)

    # enforce counterclockwise orientation
    p = verts[tris]
    det = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
           - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    flip = det < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    boundary_ring = ring_start[n_rings] + np.arange(6 * n_rings)
    return verts, tris, boundary_ring


def _promote_quadratic(verts, tris_p1, boundary_ring, midpoint_hook=None):
    """Insert edge midpoints. midpoint_hook(i, j, p) may move the midpoint of
    a boundary edge onto the analytic curve."""
    boundary_set = set(int(v) for v in boundary_ring)
    mid_of = {}
    nodes = [tuple(p) for p in verts]

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key in mid_of:
            return mid_of[key]
        p = 0.5 * (verts[i] + verts[j])
        if midpoint_hook is not None and i in boundary_set and j in boundary_set:
            p = midpoint_hook(i, j, p)
        mid_of[key] = len(nodes)
        nodes.append((float(p[0]), float(p[1])))
        return mid_of[key]

    tris = np.empty((len(tris_p1), 6), dtype=int)
    for t, (v0, v1, v2) in enumerate(tris_p1):
        tris[t] = (v0, v1, v2, midpoint(v0, v1), midpoint(v1, v2),
                   midpoint(v2, v0))
    return np.array(nodes), tris, mid_of


def generate_ellipse_mesh(spec: DomainSpec) -> Mesh:
    """Deterministic structured quadratic mesh of the ellipse.

    Max edge length stays below 1.5 * h_target; every boundary node
    (vertex and midpoint) lies exactly on the curve.
    """
    if spec.kind != "ellipse":
        raise MeshError("generate_ellipse_mesh requires an ellipse spec")
    a, b = spec.a, spec.b
    # 1.25 covers the longest annulus diagonals of the ring triangulation
    n_rings = max(2, int(np.ceil(1.25 * max(a, b) / spec.h_target)))
    verts, tris_p1, ring = _disk_rings(n_rings)

    n_bnd = len(ring)
    theta_of = {int(ring[i]): 2.0 * np.pi * i / n_bnd for i in range(n_bnd)}

    def on_curve(i, j, p):
        ti, tj = theta_of[int(i)], theta_of[int(j)]
        if abs(tj - ti) > np.pi:  # wrap-around edge
            tj = tj + 2.0 * np.pi if tj < ti else tj
            ti = ti + 2.0 * np.pi if ti < tj - np.pi else ti
        tm = 0.5 * (ti + tj)
        return np.array([np.cos(tm), np.sin(tm)])

    nodes, tris, mid_of = _promote_quadratic(verts, tris_p1, ring, on_curve)
    nodes = nodes * np.array([a, b])

    edges = np.empty((n_bnd, 3), dtype=int)
    for i in range(n_bnd):
        v0, v1 = int(ring[i]), int(ring[(i + 1) % n_bnd])
        edges[i] = (v0, v1, mid_of[(min(v0, v1), max(v0, v1))])

    is_vertex = np.zeros(len(nodes), dtype=bool)
    is_vertex[: len(verts)] = True
    is_boundary = np.zeros(len(nodes), dtype=bool)
    is_boundary[edges.ravel()] = True

    mesh = Mesh(nodes, tris, edges, is_boundary, is_vertex)
    _validate(mesh)
    return mesh


# ---------------------------------------------------------------------------
# validation


def _corner_jacobians(mesh: Mesh) -> np.ndarray:
    p = mesh.nodes[mesh.triangles[:, :3]]
    return ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def _validate(mesh: Mesh) -> None:
    det = _corner_jacobians(mesh)
    bad = np.nonzero(det <= 0)[0]
    if bad.size:
        raise MeshError(f"inverted or degenerate triangle (element {bad[0]})")
    edges = mesh.boundary_edges
    if len(edges) < 4:
        raise MeshError("boundary loop shorter than 4 nodes")
    if not np.array_equal(np.roll(edges[:, 0], -1), edges[:, 1]):
        raise MeshError("boundary edges do not form a single closed loop")
    # counterclockwise check on the vertex polygon
    poly = mesh.nodes[edges[:, 0]]
    area2 = np.sum(poly[:, 0] * np.roll(poly[:, 1], -1)
                   - np.roll(poly[:, 0], -1) * poly[:, 1])
    if area2 <= 0:
        raise MeshError("boundary loop is not counterclockwise")


# ---------------------------------------------------------------------------
# Gmsh ASCII v2 subset


def write_msh(mesh: Mesh, path: str) -> None:
    """Emit the Gmsh ASCII v2 subset (types 9 and 8)."""
    with open(path, "w") as f:
        f.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        f.write(f"$Nodes\n{mesh.n_nodes}\n")
        for i, (x, y) in enumerate(mesh.nodes, start=1):
            f.write(f"{i} {float(x)!r} {float(y)!r} 0\n")
        f.write("$EndNodes\n")
        n_elem = mesh.n_triangles + len(mesh.boundary_edges)
        f.write(f"$Elements\n{n_elem}\n")
        eid = 1
        for row in mesh.boundary_edges:
            n0, n1, nm = (int(v) + 1 for v in row)
            f.write(f"{eid} 8 2 0 0 {n0} {n1} {nm}\n")
            eid += 1
        for row in mesh.triangles:
            conn = " ".join(str(int(v) + 1) for v in row)
            f.write(f"{eid} 9 2 0 0 {conn}\n")
            eid += 1
        f.write("$EndElements\n")


def load_msh(path: str) -> Mesh:
    """Read the Gmsh ASCII v2 subset; promote linear triangles to quadratic.

    Supported element types: 2 (3-node triangle), 9 (6-node triangle),
    8 (3-node line).  Anything else raises with the offending line number.
    """
    with open(path) as f:
        lines = f.read().splitlines()

    def fail(lineno, msg):
        raise MeshError(f"{path}:{lineno + 1}: {msg}")

    i = 0
    nodes = None
    tris6, tris3, blines = [], [], []
    while i < len(lines):
        tok = lines[i].strip()
        if tok == "$MeshFormat":
            parts = lines[i + 1].split()
            if not parts or parts[0] not in ("2", "2.2"):
                fail(i + 1, f"unsupported mesh format {lines[i + 1]!r}")
            i += 3
        elif tok == "$Nodes":
            n = int(lines[i + 1])
            nodes = np.empty((n, 2))
            for k in range(n):
                parts = lines[i + 2 + k].split()
                idx = int(parts[0]) - 1
                if idx != k:
                    fail(i + 2 + k, "nodes must be numbered consecutively")
                nodes[k] = (float(parts[1]), float(parts[2]))
            i += n + 3
        elif tok == "$Elements":
            n = int(lines[i + 1])
            for k in range(n):
                lineno = i + 2 + k
                parts = lines[lineno].split()
                etype = int(parts[1])
                ntags = int(parts[2])
                conn = [int(v) - 1 for v in parts[3 + ntags:]]
                if etype == 2:
                    if len(conn) != 3:
                        fail(lineno, "3-node triangle with wrong node count")
                    tris3.append(conn)
                elif etype == 9:
                    if len(conn) != 6:
                        fail(lineno, "6-node triangle with wrong node count")
                    tris6.append(conn)
                elif etype == 8:
                    if len(conn) != 3:
                        fail(lineno, "3-node line with wrong node count")
                    blines.append(conn)
                else:
                    fail(lineno, f"unsupported element type {etype}")
            i += n + 3
        elif tok.startswith("$"):  # skip unknown sections
            end = "$End" + tok[1:]
            j = i + 1
            while j < len(lines) and lines[j].strip() != end:
                j += 1
            i = j + 1
        else:
            i += 1
    if nodes is None or (not tris3 and not tris6):
        raise MeshError(f"{path}: no nodes or no triangles found")
    if tris3 and tris6:
        raise MeshError(f"{path}: mixed 3-node and 6-node triangles")

    if tris6:
        tris = np.array(tris6, dtype=int)
        all_nodes = nodes
    else:
        verts_used = np.array(tris3, dtype=int)
        ring = _boundary_vertices_p1(verts_used)
        all_nodes, tris, mid_of = _promote_quadratic(
            nodes, verts_used, ring)

    det = _corner_jacobians_raw(all_nodes, tris)
    bad = np.nonzero(det <= 0)[0]
    if bad.size:
        raise MeshError(f"{path}: inverted or degenerate triangle "
                        f"(element {bad[0]})")

    edges = _boundary_loop(all_nodes, tris, blines if tris6 else None)
    if not tris6:
        edges = np.array([(e[0], e[1], mid_of[(min(e[0], e[1]),
                                               max(e[0], e[1]))])
                          for e in edges[:, :2]], dtype=int)

    is_vertex = np.zeros(len(all_nodes), dtype=bool)
    is_vertex[tris[:, :3].ravel()] = True
    is_boundary = np.zeros(len(all_nodes), dtype=bool)
    is_boundary[edges.ravel()] = True
    mesh = Mesh(all_nodes, tris, edges, is_boundary, is_vertex)
    _validate(mesh)
    return mesh


def _corner_jacobians_raw(nodes, tris):
    p = nodes[tris[:, :3]]
    return ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def _boundary_vertices_p1(tris):
    count = {}
    for t in tris:
        for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(e), max(e))
            count[key] = count.get(key, 0) + 1
    ring_nodes = sorted({v for e, c in count.items() if c == 1 for v in e})
    return np.array(ring_nodes, dtype=int)


def _boundary_loop(nodes, tris, blines):
    """Ordered counterclockwise boundary edge loop [start, end, mid]."""
    # directed boundary edges from triangles keep the CCW orientation
    edge_mid = {}
    count = {}
    for t in tris:
        for va, vb, vm in ((t[0], t[1], t[3]), (t[1], t[2], t[4]),
                           (t[2], t[0], t[5])):
            key = (min(va, vb), max(va, vb))
            count[key] = count.get(key, 0) + 1
            edge_mid[(va, vb)] = vm
    nxt = {}
    for (va, vb), vm in edge_mid.items():
        if count[(min(va, vb), max(va, vb))] == 1:
            if va in nxt:
                raise MeshError("boundary is not a single simple loop")
            nxt[va] = (vb, vm)
    if not nxt:
        raise MeshError("mesh has no boundary")
    start = min(nxt)
    loop = []
    cur = start
    for _ in range(len(nxt)):
        vb, vm = nxt[cur]
        loop.append((cur, vb, vm))
        cur = vb
    if cur != start or len(loop) != len(nxt):
        raise MeshError("open boundary loop")
    return np.array(loop, dtype=int)


# ---------------------------------------------------------------------------
# boundary frames


def _ellipse_frame_at(x, y, a, b):
    # outward normal from the implicit curve, tangent CCW
    nx, ny = x / a**2, y / b**2
    nn = np.hypot(nx, ny)
    n = np.array([nx / nn, ny / nn])
    tau = np.array([-n[1], n[0]])
    # parametric angle and dn/ds on (a cos t, b sin t)
    t = np.arctan2(y / b, x / a)
    st, ct = np.sin(t), np.cos(t)
    w = np.hypot(a * st, b * ct)          # = ds/dt
    wp = (a * a - b * b) * st * ct / w
    n_t = np.array([b * ct, a * st]) / w  # normal as function of t
    dn_dt = (np.array([-b * st, a * ct]) - n_t * wp) / w
    g = 2.0 * dn_dt / w
    return n, tau, g


def boundary_frame(mesh: Mesh, spec: DomainSpec) -> BoundaryFrame:
    """Normals, tangents and g = 2 dn/ds for every boundary node.

    Ellipse: analytic from the implicit curve.  External meshes: tangent and
    g by second-order finite differences along the boundary polyline.
    """
    loop = mesh.boundary_loop
    if len(loop) < 4:
        raise MeshError("boundary loop shorter than 4 nodes")
    pts = mesh.nodes[loop]
    n_loop = len(loop)

    if spec.kind == "ellipse":
        normal = np.empty((n_loop, 2))
        tangent = np.empty((n_loop, 2))
        g = np.empty((n_loop, 2))
        for i, (x, y) in enumerate(pts):
            normal[i], tangent[i], g[i] = _ellipse_frame_at(
                x, y, spec.a, spec.b)
    else:
        seg = np.roll(pts, -1, axis=0) - pts
        ds_fwd = np.hypot(seg[:, 0], seg[:, 1])
        tangent = np.empty((n_loop, 2))
        normal = np.empty((n_loop, 2))
        for i in range(n_loop):
            dp = pts[(i + 1) % n_loop] - pts[i - 1]
            tangent[i] = dp / np.hypot(*dp)
            normal[i] = (tangent[i][1], -tangent[i][0])
        g = np.empty((n_loop, 2))
        for i in range(n_loop):
            h1 = ds_fwd[i - 1]
            h2 = ds_fwd[i]
            nm, n0, np_ = normal[i - 1], normal[i], normal[(i + 1) % n_loop]
            dn_ds = (h1 * h1 * np_ + (h2 * h2 - h1 * h1) * n0
                     - h2 * h2 * nm) / (h1 * h2 * (h1 + h2))
            g[i] = 2.0 * dn_ds

    index = {int(node): i for i, node in enumerate(loop)}
    return BoundaryFrame(loop, normal, tangent, g, index)
