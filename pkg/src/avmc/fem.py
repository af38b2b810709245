"""P1 finite elements on conforming triangle meshes with newest vertex bisection.

Triangles are stored as ``[newest, a, b]`` with counter-clockwise
orientation; the refinement edge of a triangle is ``(a, b)``, the edge
opposite its first vertex.  Refinement only ever bisects edges of the input
mesh, so every new vertex is the midpoint of two existing vertices.  The
parent pairs are kept and make interpolation between nested meshes exact.
"""
from __future__ import annotations

import hashlib
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DIRECT_SOLVER_LIMIT = 200_000
_lineages = itertools.count()


def _orient_and_label(vertices, triangles):
    """Counter-clockwise orientation with the longest edge as refinement edge.

    Ties between equally long edges go to the edge whose opposite vertex has
    the lowest index.
    """
    tri = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    x = vertices[tri]
    cross = ((x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1])
             - (x[:, 1, 1] - x[:, 0, 1]) * (x[:, 2, 0] - x[:, 0, 0]))
    if np.any(np.abs(cross) <= 1e-14):
        raise ValueError("degenerate triangle in input mesh")
    flip = cross < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    out = np.empty_like(tri)
    for t, (p0, p1, p2) in enumerate(tri):
        cyc = [(p0, p1, p2), (p1, p2, p0), (p2, p0, p1)]
        # candidate k: opposite vertex cyc[k][0], edge (cyc[k][1], cyc[k][2])
        lengths = [np.linalg.norm(vertices[c[1]] - vertices[c[2]]) for c in cyc]
        longest = max(lengths)
        tied = [k for k in range(3) if lengths[k] >= longest * (1 - 1e-12)]
        best = min(tied, key=lambda k: cyc[k][0])
        out[t] = cyc[best]
    return out


class TriMesh:
    """Conforming triangle mesh.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array in ``[newest, a, b]`` order.
    generation : int
        Number of refinement steps since the root mesh.
    vertex_parents : (nv, 2) int array, optional
        Endpoints of the edge a vertex bisects; ``-1`` for root vertices.
    vertex_generation : (nv,) int array, optional
    lineage : int, optional
        Identifier shared by all meshes refined from the same root.
    """

    def __init__(self, vertices, triangles, generation=0, vertex_parents=None,
                 vertex_generation=None, lineage=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        nv = len(self.vertices)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (nt, 3)")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=0) >= nv:
            raise ValueError("triangle references a missing vertex")
        self.generation = int(generation)
        if vertex_parents is None:
            vertex_parents = -np.ones((nv, 2), dtype=np.int64)
        if vertex_generation is None:
            vertex_generation = np.zeros(nv, dtype=np.int64)
        self.vertex_parents = np.asarray(vertex_parents, dtype=np.int64)
        self.vertex_generation = np.asarray(vertex_generation, dtype=np.int64)
        self.lineage = next(_lineages) if lineage is None else lineage

    @classmethod
    def from_arrays(cls, vertices, triangles) -> "TriMesh":
        """Root mesh; orientation and refinement edges are normalised."""
        vertices = np.asarray(vertices, dtype=float)
        return cls(vertices, _orient_and_label(vertices, triangles))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def mesh_id(self) -> str:
        h = hashlib.sha1()
        h.update(self.vertices.astype("<f8").tobytes())
        h.update(self.triangles.astype("<i8").tobytes())
        return h.hexdigest()[:16]

    @cached_property
    def _corners(self):
        return self.vertices[self.triangles]  # (nt, 3, 2)

    @cached_property
    def areas(self) -> np.ndarray:
        x = self._corners
        return 0.5 * ((x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1])
                      - (x[:, 1, 1] - x[:, 0, 1]) * (x[:, 2, 0] - x[:, 0, 0]))

    @cached_property
    def gradients(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape ``(nt, 3, 2)``."""
        x = self._corners
        opp = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)  # x_{i+2} - x_{i+1}
        grads = np.stack([-opp[..., 1], opp[..., 0]], axis=-1)
        return grads / (2.0 * self.areas)[:, None, None]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self._corners.mean(axis=1)

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        """Midpoint of the edge opposite each local vertex, ``(nt, 3, 2)``."""
        x = self._corners
        return 0.5 * (np.roll(x, -1, axis=1) + np.roll(x, -2, axis=1))

    @cached_property
    def _edge_data(self):
        tri = self.triangles
        # local edge k is opposite local vertex k, directed counter-clockwise
        start = tri[:, [1, 2, 0]]
        stop = tri[:, [2, 0, 1]]
        keys = np.stack([np.minimum(start, stop), np.maximum(start, stop)], axis=-1).reshape(-1, 2)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        tri_edges = inverse.reshape(-1, 3)
        ne = len(edges)
        owner = np.repeat(np.arange(len(tri)), 3)
        local = np.tile(np.arange(3), len(tri))
        order = np.argsort(inverse, kind="stable")
        counts = np.bincount(inverse, minlength=ne)
        if counts.max(initial=0) > 2:
            raise ValueError("non-manifold mesh: edge shared by more than two triangles")
        first = np.zeros(ne, dtype=np.int64)
        first[1:] = np.cumsum(counts)[:-1]
        edge_tris = -np.ones((ne, 2), dtype=np.int64)
        edge_local = -np.ones((ne, 2), dtype=np.int64)
        edge_tris[:, 0] = owner[order[first]]
        edge_local[:, 0] = local[order[first]]
        two = counts == 2
        edge_tris[two, 1] = owner[order[first[two] + 1]]
        edge_local[two, 1] = local[order[first[two] + 1]]
        # outward normal of the first triangle
        t0, k0 = edge_tris[:, 0], edge_local[:, 0]
        a = self.vertices[tri[t0, (k0 + 1) % 3]]
        b = self.vertices[tri[t0, (k0 + 2) % 3]]
        d = b - a
        lengths = np.hypot(d[:, 0], d[:, 1])
        normals = np.stack([d[:, 1], -d[:, 0]], axis=-1) / lengths[:, None]
        return edges, tri_edges, edge_tris, lengths, normals

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """Edge index opposite each local vertex, ``(nt, 3)``."""
        return self._edge_data[1]

    @property
    def edge_triangles(self) -> np.ndarray:
        """Adjacent triangles per edge; second entry ``-1`` on the boundary."""
        return self._edge_data[2]

    @property
    def edge_lengths(self) -> np.ndarray:
        return self._edge_data[3]

    @property
    def edge_normals(self) -> np.ndarray:
        """Fixed unit normal per edge.

        Points out of ``edge_triangles[:, 0]`` unless flipped with
        :meth:`flipped_edges`.
        """
        return self._edge_data[4]

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_triangles[:, 1] >= 0)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        bnd = self.edges[self.edge_triangles[:, 1] < 0]
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[bnd.ravel()] = True
        return mask

    @cached_property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertices)

    @cached_property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths[self.tri_edges].max(axis=1)

    @cached_property
    def element_stiffness(self) -> np.ndarray:
        """Unit-coefficient element matrices, ``(nt, 3, 3)``."""
        g = self.gradients
        return self.areas[:, None, None] * np.einsum("tik,tjk->tij", g, g)

    @cached_property
    def _free_pattern(self):
        """CSR pattern of the stiffness matrix restricted to free dofs."""
        free_index = -np.ones(self.n_vertices, dtype=np.int64)
        free_index[self.free_dofs] = np.arange(len(self.free_dofs))
        loc = free_index[self.triangles]
        rows = np.repeat(loc, 3, axis=1).ravel()
        cols = np.tile(loc, (1, 3)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        nf = len(self.free_dofs)
        keys = rows[keep] * max(nf, 1) + cols[keep]
        uniq, inverse = np.unique(keys, return_inverse=True)
        r = uniq // max(nf, 1)
        c = uniq % max(nf, 1)
        indptr = np.zeros(nf + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=nf), out=indptr[1:])
        return keep, inverse.reshape(-1), indptr, c, len(uniq)

    def triangle_of_points(self, points) -> np.ndarray:
        """Index of a triangle containing each point, ``-1`` if outside."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        x0 = self._corners[:, 0]
        g = self.gradients
        out = -np.ones(len(points), dtype=np.int64)
        for i, p in enumerate(points):
            lam1 = np.einsum("tk,tk->t", g[:, 1], p - x0)
            lam2 = np.einsum("tk,tk->t", g[:, 2], p - x0)
            lam0 = 1.0 - lam1 - lam2
            inside = np.flatnonzero((lam0 >= -1e-12) & (lam1 >= -1e-12) & (lam2 >= -1e-12))
            if inside.size:
                out[i] = inside[0]
        return out

    def evaluate(self, values, points) -> np.ndarray:
        """Evaluate a P1 function at arbitrary points inside the domain."""
        values = np.asarray(values, dtype=float)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tri = self.triangle_of_points(points)
        if np.any(tri < 0):
            raise ValueError("point outside the mesh")
        x0 = self._corners[tri, 0]
        g = self.gradients[tri]
        lam = np.empty((len(points), 3))
        lam[:, 1] = np.einsum("nk,nk->n", g[:, 1], points - x0)
        lam[:, 2] = np.einsum("nk,nk->n", g[:, 2], points - x0)
        lam[:, 0] = 1.0 - lam[:, 1] - lam[:, 2]
        return np.einsum("nk,nk->n", lam, values[self.triangles[tri]])

    def flipped_edges(self, edges) -> "TriMesh":
        """Copy with the normal sign of the given interior edges reversed."""
        other = TriMesh(self.vertices, self.triangles, self.generation, self.vertex_parents,
                        self.vertex_generation, self.lineage)
        e_list, tri_edges, edge_tris, lengths, normals = self._edge_data
        normals = normals.copy()
        edges = np.atleast_1d(edges)
        if np.any(edge_tris[edges, 1] < 0):
            raise ValueError("boundary edges cannot be re-oriented")
        normals[edges] *= -1.0
        other.__dict__["_edge_data"] = (e_list, tri_edges, edge_tris, lengths, normals)
        return other


def make_domain(kind: str, target_triangles: int = 2) -> TriMesh:
    """Build ``"unit-square"`` or ``"l-shape"`` and refine uniformly.

    The macro meshes have 2 and 6 triangles.  Whole-mesh bisection sweeps
    are applied until at least ``target_triangles`` triangles exist.
    """
    if kind in ("unit-square", "unit_square", "square"):
        verts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        tris = [[0, 1, 2], [0, 2, 3]]
    elif kind in ("l-shape", "l_shape", "lshape"):
        verts = np.array([[0, 0], [0.5, 0], [1, 0], [0, 0.5], [0.5, 0.5], [1, 0.5],
                          [0, 1], [0.5, 1]], dtype=float)
        tris = [[0, 1, 4], [0, 4, 3], [1, 2, 5], [1, 5, 4], [3, 4, 7], [3, 7, 6]]
    else:
        raise ValueError(f"unknown domain {kind!r}")
    if target_triangles < 1:
        raise ValueError("target must be positive")
    mesh = TriMesh.from_arrays(verts, tris)
    while mesh.n_triangles < target_triangles:
        mesh = refine_uniform(mesh)
    return mesh


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """One bisection sweep over every triangle."""
    return bisect(mesh, np.ones(mesh.n_triangles, dtype=bool))


def bisect(mesh: TriMesh, marked, split_all_edges: bool = False) -> TriMesh:
    """Newest vertex bisection of the marked triangles plus conforming closure.

    ``marked`` is a boolean mask or an index array.  By default every marked
    triangle is bisected once along its refinement edge.  With
    ``split_all_edges`` all three edges of a marked triangle are split, which
    yields four children (three bisections).
    """
    marked = np.asarray(marked)
    if marked.dtype != bool:
        marked = marked.astype(np.int64)
        mask = np.zeros(mesh.n_triangles, dtype=bool)
        if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_triangles):
            raise IndexError("marked triangle index out of range")
        mask[marked] = True
        marked = mask
    if marked.shape != (mesh.n_triangles,):
        raise ValueError("marker mask has the wrong length")
    if not marked.any():
        return mesh
    tri_edges = mesh.tri_edges
    ref = tri_edges[:, 0]
    edge_marked = np.zeros(len(mesh.edges), dtype=bool)
    edge_marked[(tri_edges[marked] if split_all_edges else ref[marked]).ravel()] = True
    while True:
        touched = edge_marked[tri_edges].any(axis=1) & ~edge_marked[ref]
        if not touched.any():
            break
        edge_marked[ref[touched]] = True

    nv = mesh.n_vertices
    split = np.flatnonzero(edge_marked)
    midpoint = -np.ones(len(mesh.edges), dtype=np.int64)
    midpoint[split] = nv + np.arange(len(split))
    parents = mesh.edges[split]
    new_vertices = 0.5 * (mesh.vertices[parents[:, 0]] + mesh.vertices[parents[:, 1]])

    tri = mesh.triangles
    ref_id, e1_id, e2_id = ref.copy(), tri_edges[:, 1].copy(), tri_edges[:, 2].copy()
    for _ in range(2):
        sel = np.zeros(len(tri), dtype=bool)
        valid = ref_id >= 0
        sel[valid] = edge_marked[ref_id[valid]]
        if not sel.any():
            break
        p0, p1, p2 = tri[sel].T
        m = midpoint[ref_id[sel]]
        child1 = np.stack([m, p0, p1], axis=1)
        child2 = np.stack([m, p2, p0], axis=1)
        neg = -np.ones(len(m), dtype=np.int64)
        tri = np.concatenate([tri[~sel], child1, child2])
        ref_id, e1_id, e2_id = (
            np.concatenate([ref_id[~sel], e2_id[sel], e1_id[sel]]),
            np.concatenate([e1_id[~sel], neg, neg]),
            np.concatenate([e2_id[~sel], neg, neg]),
        )
    gen = mesh.generation + 1
    return TriMesh(
        np.concatenate([mesh.vertices, new_vertices]),
        tri,
        generation=gen,
        vertex_parents=np.concatenate([mesh.vertex_parents, parents]),
        vertex_generation=np.concatenate([mesh.vertex_generation,
                                          np.full(len(split), gen, dtype=np.int64)]),
        lineage=mesh.lineage,
    )


def interpolate_nested(coarse: TriMesh, fine: TriMesh, values) -> np.ndarray:
    """Exact P1 interpolation of a coarse function onto a refined mesh.

    ``values`` may be ``(nv_coarse,)`` or ``(nv_coarse, k)``.
    """
    values = np.asarray(values, dtype=float)
    nc = coarse.n_vertices
    if values.shape[0] != nc:
        raise ValueError("value array does not match the coarse mesh")
    if (fine.lineage != coarse.lineage or fine.n_vertices < nc
            or fine.generation < coarse.generation
            or not np.array_equal(fine.vertices[:nc], coarse.vertices)):
        raise ValueError("meshes are not nested")
    out = np.empty((fine.n_vertices,) + values.shape[1:])
    out[:nc] = values
    for gen in range(coarse.generation + 1, fine.generation + 1):
        idx = np.flatnonzero(fine.vertex_generation == gen)
        par = fine.vertex_parents[idx]
        out[idx] = 0.5 * (out[par[:, 0]] + out[par[:, 1]])
    return out


def _triangle_coefficient(mesh: TriMesh, coeff) -> np.ndarray:
    coeff = np.asarray(coeff, dtype=float)
    if coeff.ndim == 0:
        return np.full(mesh.n_triangles, float(coeff))
    if coeff.shape == (mesh.n_vertices,):
        # exact integral of a P1 coefficient
        return coeff[mesh.triangles].mean(axis=1)
    if coeff.shape == (mesh.n_triangles,):
        return coeff
    raise ValueError("coefficient must be scalar, nodal or per triangle")


def assemble_stiffness(mesh: TriMesh, coeff=1.0, eliminate: bool = True,
                       check_positive: bool = True) -> sp.csr_matrix:
    """Stiffness matrix of ``-div(a grad u)``.

    ``coeff`` is a scalar, nodal P1 values or per-triangle means.  With
    ``eliminate`` the Dirichlet rows and columns are removed.
    """
    tri_coeff = _triangle_coefficient(mesh, coeff)
    if check_positive and (not np.all(np.isfinite(tri_coeff)) or tri_coeff.min() <= 0):
        raise ValueError("diffusion coefficient must be positive and finite")
    local = mesh.element_stiffness * tri_coeff[:, None, None]
    if not eliminate:
        rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
        cols = np.tile(mesh.triangles, (1, 3)).ravel()
        n = mesh.n_vertices
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    keep, inverse, indptr, indices, nnz = mesh._free_pattern
    data = np.bincount(inverse, weights=local.ravel()[keep], minlength=nnz)
    nf = len(mesh.free_dofs)
    return sp.csr_matrix((data, indices, indptr), shape=(nf, nf))


def assemble_load(mesh: TriMesh, f=1.0, eliminate: bool = True) -> np.ndarray:
    """Load vector for a constant or per-triangle source."""
    tri_f = _triangle_coefficient(mesh, f)
    load = np.bincount(mesh.triangles.ravel(), weights=np.repeat(tri_f * mesh.areas / 3.0, 3),
                       minlength=mesh.n_vertices)
    return load[mesh.free_dofs] if eliminate else load


def solve_spd(matrix, rhs) -> np.ndarray:
    """Sparse direct solve, or Jacobi-preconditioned CG for very large systems."""
    n = matrix.shape[0]
    if n == 0:
        return np.zeros_like(rhs)
    if n <= DIRECT_SOLVER_LIMIT:
        lu = spla.splu(sp.csc_matrix(matrix), permc_spec="MMD_AT_PLUS_A")
        return lu.solve(np.asarray(rhs, dtype=float))
    diag = matrix.diagonal()
    prec = spla.LinearOperator(matrix.shape, matvec=lambda v: v / diag)
    sol, info = spla.cg(matrix, rhs, rtol=1e-12, maxiter=20 * n, M=prec)
    if info != 0:
        raise RuntimeError("conjugate gradients did not converge")
    return sol


@dataclass
class FEVector:
    """Nodal values of a P1 function on a mesh."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.mesh.n_vertices:
            raise ValueError("value count does not match the mesh")


def solve_darcy(mesh: TriMesh, field, y, f=1.0) -> FEVector:
    """Solve ``-div(a(y) grad u) = f`` with homogeneous Dirichlet data.

    ``field`` must provide ``triangle_coefficients(mesh, params)`` returning
    per-triangle coefficient values for a batch of parameter vectors.
    """
    coeff = field.triangle_coefficients(mesh, np.atleast_2d(y))[0]
    if not np.all(np.isfinite(coeff)) or coeff.min() <= 0:
        raise ValueError("coefficient is not positive at this parameter")
    matrix = assemble_stiffness(mesh, coeff)
    values = np.zeros(mesh.n_vertices)
    values[mesh.free_dofs] = solve_spd(matrix, assemble_load(mesh, f))
    return FEVector(mesh, values)


def solve_batch(mesh: TriMesh, field, params, f=1.0, threads: int = 1) -> np.ndarray:
    """Snapshots for many parameters, shape ``(n, nv)``.

    Work is split across threads; each solve is independent, so the result
    does not depend on the thread count.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    out = np.zeros((len(params), mesh.n_vertices))
    if len(params) == 0:
        return out
    load = assemble_load(mesh, f)
    free = mesh.free_dofs

    def work(chunk):
        coeffs = field.triangle_coefficients(mesh, params[chunk])
        for i, c in zip(chunk, coeffs):
            if not np.all(np.isfinite(c)) or c.min() <= 0:
                raise ValueError(f"coefficient is not positive for sample {i}")
            out[i, free] = solve_spd(assemble_stiffness(mesh, c, check_positive=False), load)

    chunks = np.array_split(np.arange(len(params)), max(1, min(threads, len(params))))
    if threads <= 1:
        for chunk in chunks:
            work(chunk)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, chunks))
    return out


def _values(v):
    return v.values if isinstance(v, FEVector) else np.asarray(v, dtype=float)


def h1_inner(mesh: TriMesh, u, v) -> float:
    """``int grad u . grad v`` for P1 nodal vectors."""
    gu = np.einsum("tik,ti->tk", mesh.gradients, _values(u)[mesh.triangles])
    gv = np.einsum("tik,ti->tk", mesh.gradients, _values(v)[mesh.triangles])
    return float(np.sum(mesh.areas * np.einsum("tk,tk->t", gu, gv)))


def h1_seminorm(mesh: TriMesh, v) -> float:
    return float(np.sqrt(max(h1_inner(mesh, v, v), 0.0)))


def nodal_gradients(mesh: TriMesh, values) -> np.ndarray:
    """Per-triangle gradients of P1 functions.

    ``values`` of shape ``(nv,)`` or ``(nv, k)`` give ``(nt, 2)`` or
    ``(nt, 2, k)``.
    """
    values = np.asarray(values, dtype=float)
    return np.einsum("tid,ti...->td...", mesh.gradients, values[mesh.triangles])


def edge_jump(mesh: TriMesh, flux, edges=None) -> np.ndarray:
    """Normal jump ``(flux_T1 - flux_T2) . n_E`` of piecewise constant fields.

    ``flux`` has shape ``(nt, 2)`` or ``(nt, 2, k)``.  Boundary edges are
    rejected.
    """
    flux = np.asarray(flux, dtype=float)
    edges = mesh.interior_edges if edges is None else np.atleast_1d(edges)
    t = mesh.edge_triangles[edges]
    if np.any(t[:, 1] < 0):
        raise ValueError("jump requested on a boundary edge")
    diff = flux[t[:, 0]] - flux[t[:, 1]]
    return np.einsum("ed...,ed->e...", diff, mesh.edge_normals[edges])


def write_mesh(mesh: TriMesh, path) -> None:
    """Plain text: vertex count, coordinates, triangle count, index triples."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"{mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


def read_mesh(path) -> TriMesh:
    with open(path) as fh:
        nv = int(fh.readline())
        verts = np.array([list(map(float, fh.readline().split())) for _ in range(nv)])
        nt = int(fh.readline())
        tris = np.array([list(map(int, fh.readline().split())) for _ in range(nt)], dtype=np.int64)
    return TriMesh(verts.reshape(nv, 2), tris.reshape(nt, 3))
