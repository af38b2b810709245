"""Dense brute-force oracles shared by the estimator tests."""
from functools import reduce

import numpy as np

from avmc.basis import triple_tensor, weighted_gramian
from avmc.fem import assemble_load, assemble_stiffness, nodal_gradients


def kron3(tensors):
    """Triple tensor over multi-indices in row-major order."""
    out = tensors[0]
    for t in tensors[1:]:
        out = np.einsum("abc,def->adbecf", out, t)
        s = out.shape
        out = out.reshape(s[0] * s[1], s[2] * s[3], s[4] * s[5])
    return out


def dense_estimator(w, a, mesh, measure, f=1.0):
    """Estimator contributions by brute force over the full index set."""
    fam = measure.expansion_family()
    L = a.n_modes
    W = w.full()
    W = W.reshape(W.shape + (1,) * (L - w.n_modes))
    A = a.full()
    d, q = W.shape[1:], A.shape[1:]
    D = tuple(x + y - 1 for x, y in zip(d, q))
    J = mesh.n_vertices
    Ab, Wb = A.reshape(J, -1), W.reshape(J, -1)
    tau = kron3([triple_tensor(fam, D[m], q[m], d[m]) for m in range(L)])
    abar = Ab[mesh.triangles].mean(axis=1)
    flux = np.einsum("ta,tcn,man->tcm", abar, nodal_gradients(mesh, Wb), tau)
    div = np.einsum("tca,tcn,man->tm", nodal_gradients(mesh, Ab), nodal_gradients(mesh, Wb), tau)
    gram = reduce(np.kron, [weighted_gramian(measure, m, D[m], 2.0) for m in range(L)])
    active = np.zeros(D, dtype=bool)
    active[tuple(slice(0, x) for x in d)] = True
    active = active.ravel()
    res = div.copy()
    res[:, 0] += f
    res[:, ~active] = 0
    vol = mesh.diameters**2 * mesh.areas * np.einsum("tm,mn,tn->t", res, gram, res)
    ie = mesh.interior_edges
    t12 = mesh.edge_triangles[ie]
    jump = np.einsum("ecm,ec->em", flux[t12[:, 0]] - flux[t12[:, 1]], mesh.edge_normals[ie])
    jump[:, ~active] = 0
    jumps = mesh.edge_lengths[ie] ** 2 * np.einsum("em,mn,en->e", jump, gram, jump)
    det = np.sqrt(vol.sum() + jumps.sum())
    out = flux.copy()
    out[:, :, active] = 0
    sto = np.sqrt(np.einsum("t,tcm,mn,tcn->", mesh.areas, out, gram, out))
    base = reduce(np.kron, [weighted_gramian(measure, m, d[m], 0.0) for m in range(L)])
    tau_d = kron3([triple_tensor(fam, q[m], d[m], d[m]) for m in range(L)])
    free = mesh.free_dofs
    blocks = [assemble_stiffness(mesh, Ab[:, k], check_positive=False).toarray()
              for k in range(Ab.shape[1])]
    bw = sum(np.einsum("ij,jn,mn->im", blocks[k], Wb[free], tau_d[k]) for k in range(len(blocks)))
    bw[:, 0] -= assemble_load(mesh, f)
    k0 = assemble_stiffness(mesh, 1.0).toarray()
    alg = np.sqrt(np.einsum("im,ij,mn,jn->", bw, np.linalg.inv(k0), np.linalg.inv(base), bw))
    return det, sto, alg
