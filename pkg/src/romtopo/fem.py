"""Structured-grid plane-stress elasticity, density filters and material laws.

Elements are bilinear quadrilaterals on an ``nx`` by ``ny`` grid; an
``active`` mask removes elements to build non-rectangular domains such as the
L-bracket. Element ``e = iy * nx + ix`` has its lower-left node at grid
position ``(ix, iy)`` and ``y`` points up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .numerics import build_preconditioner

# Gauss points of the 2x2 rule on [-1, 1]
_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
# local node order: counter-clockwise from the lower-left corner
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])

# sigma_vm^2 = sigma^T VM sigma for sigma = (sxx, syy, txy)
VM_MATRIX = np.array([[1.0, -0.5, 0.0], [-0.5, 1.0, 0.0], [0.0, 0.0, 3.0]])


@dataclass(frozen=True)
class MaterialModel:
    E0: float = 1.0
    nu: float = 0.3
    simp_s: float = 3.0
    stress_q: float = 0.5
    E_min: float | None = None

    def __post_init__(self):
        if self.E_min is None:
            object.__setattr__(self, "E_min", 1e-6 * self.E0)
        if not self.simp_s > 1.0:
            raise ValueError("SIMP exponent must be > 1")
        if not 0.0 < self.stress_q < 1.0:
            raise ValueError("stress relaxation exponent must be in (0, 1)")
        if not 0.0 <= self.E_min < self.E0:
            raise ValueError("E_min must satisfy 0 <= E_min < E0")

    def constitutive(self) -> np.ndarray:
        """Plane-stress elasticity matrix of the solid material."""
        E, nu = self.E0, self.nu
        return E / (1.0 - nu * nu) * np.array(
            [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])


def simp_modulus(x, m: MaterialModel):
    """Modified SIMP: ``E_min + x**s * (E0 - E_min)``."""
    x = np.asarray(x, dtype=float)
    return m.E_min + x ** m.simp_s * (m.E0 - m.E_min)


def simp_modulus_derivative(x, m: MaterialModel):
    x = np.asarray(x, dtype=float)
    return m.simp_s * x ** (m.simp_s - 1.0) * (m.E0 - m.E_min)


def relaxed_stress(x, sigma_solid, m: MaterialModel):
    return np.asarray(x, dtype=float) ** m.stress_q * sigma_solid


def _shape_derivatives(xi, eta, hx, hy):
    """Physical derivatives (dN/dx, dN/dy) of the four shape functions."""
    dn_dxi = 0.25 * _XI * (1.0 + eta * _ETA)
    dn_deta = 0.25 * _ETA * (1.0 + xi * _XI)
    return dn_dxi * 2.0 / hx, dn_deta * 2.0 / hy


def strain_displacement(xi: float, eta: float, hx: float, hy: float) -> np.ndarray:
    """3x8 strain-displacement matrix at a reference point."""
    dx, dy = _shape_derivatives(xi, eta, hx, hy)
    B = np.zeros((3, 8))
    B[0, 0::2] = dx
    B[1, 1::2] = dy
    B[2, 0::2] = dy
    B[2, 1::2] = dx
    return B


def element_stiffness(hx: float, hy: float, nu: float, E: float = 1.0) -> np.ndarray:
    """Q4 plane-stress stiffness (unit thickness), 2x2 Gauss quadrature."""
    D = E / (1.0 - nu * nu) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])
    detJ = 0.25 * hx * hy
    Ke = np.zeros((8, 8))
    for xi in _GAUSS:
        for eta in _GAUSS:
            B = strain_displacement(xi, eta, hx, hy)
            Ke += B.T @ D @ B * detJ
    return 0.5 * (Ke + Ke.T)


@dataclass
class Mesh:
    """Structured quadrilateral mesh with an optional active-element mask.

    ``fixed`` lists Dirichlet constraints as ``(ix, iy, component)`` grid
    node references with component 0 for x and 1 for y.
    """

    nx: int
    ny: int
    hx: float = 1.0
    hy: float = 1.0
    active: np.ndarray | None = None
    fixed: list = field(default_factory=list)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("mesh needs at least one element per direction")
        if self.hx <= 0 or self.hy <= 0:
            raise ValueError("element sizes must be positive")
        if self.active is None:
            self.active = np.ones((self.ny, self.nx), dtype=bool)
        self.active = np.asarray(self.active, dtype=bool)
        if self.active.shape != (self.ny, self.nx):
            raise ValueError("active mask must have shape (ny, nx)")
        if not self.active.any():
            raise ValueError("mesh has no active element")
        self._build()

    def _build(self):
        nx, ny = self.nx, self.ny
        iy, ix = np.nonzero(self.active)
        self.elem_ij = np.column_stack([ix, iy])
        self.n_elem = ix.size
        grid = lambda i, j: j * (nx + 1) + i  # noqa: E731
        corners = np.column_stack([grid(ix, iy), grid(ix + 1, iy),
                                   grid(ix + 1, iy + 1), grid(ix, iy + 1)])
        used = np.unique(corners)
        self.node_of_grid = -np.ones((nx + 1) * (ny + 1), dtype=int)
        self.node_of_grid[used] = np.arange(used.size)
        self.grid_of_node = used
        self.n_nodes = used.size
        self.elem_nodes = self.node_of_grid[corners]
        self.n_dofs_total = 2 * self.n_nodes
        edofs = np.empty((self.n_elem, 8), dtype=int)
        edofs[:, 0::2] = 2 * self.elem_nodes
        edofs[:, 1::2] = 2 * self.elem_nodes + 1
        self.elem_dofs_total = edofs

        fixed = set()
        for i, j, comp in self.fixed:
            fixed.add(2 * self.node(i, j) + int(comp))
        self.fixed_dofs = np.array(sorted(fixed), dtype=int)
        is_free = np.ones(self.n_dofs_total, dtype=bool)
        is_free[self.fixed_dofs] = False
        self.free_dofs = np.nonzero(is_free)[0]
        self.free_index = -np.ones(self.n_dofs_total, dtype=int)
        self.free_index[self.free_dofs] = np.arange(self.free_dofs.size)
        self.elem_dofs = self.free_index[edofs]
        self.volumes = np.full(self.n_elem, self.hx * self.hy)

    @property
    def n_free(self) -> int:
        return self.free_dofs.size

    def node(self, i: int, j: int) -> int:
        if not (0 <= i <= self.nx and 0 <= j <= self.ny):
            raise ValueError(f"grid node ({i}, {j}) outside the mesh")
        n = self.node_of_grid[j * (self.nx + 1) + i]
        if n < 0:
            raise ValueError(f"grid node ({i}, {j}) is not on an active element")
        return int(n)

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        """Full nodal vector with zeros on Dirichlet DOFs."""
        u = np.zeros(self.n_dofs_total)
        u[self.free_dofs] = u_free
        return u

    def element_field(self, u_free: np.ndarray) -> np.ndarray:
        """Per-element 8-vectors of local displacements."""
        return self.expand(u_free)[self.elem_dofs_total]

    def to_grid(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Scatter per-element values into an (ny, nx) array."""
        out = np.full((self.ny, self.nx), fill, dtype=float)
        out[self.elem_ij[:, 1], self.elem_ij[:, 0]] = values
        return out


class StiffnessAssembler:
    """Assembles ``K(rho)`` on the free DOFs with a cached sparsity pattern.

    The per-entry slot map makes repeated assembly a single ``bincount``,
    which also fixes the accumulation order.
    """

    def __init__(self, mesh: Mesh, material: MaterialModel):
        self.mesh = mesh
        self.material = material
        self.Ke = element_stiffness(mesh.hx, mesh.hy, material.nu)
        edofs = mesh.elem_dofs
        rows = np.repeat(edofs, 8, axis=1)
        cols = np.tile(edofs, (1, 8))
        keep = (rows >= 0) & (cols >= 0)
        self._elem = np.nonzero(keep)[0]
        self._local = np.nonzero(keep)[1]
        r, c = rows[keep], cols[keep]
        n = mesh.n_free
        pattern = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n, n))
        pattern.sort_indices()
        self.indptr, self.indices = pattern.indptr, pattern.indices
        # slot of each (row, col) entry inside the CSR data array
        lookup = sp.csr_matrix((np.arange(pattern.nnz) + 1.0, self.indices, self.indptr),
                               shape=(n, n))
        self._slot = np.asarray(lookup[r, c]).ravel().astype(int) - 1
        self._ke_flat = self.Ke.ravel()

    def assemble(self, rho: np.ndarray) -> sp.csr_matrix:
        E = simp_modulus(rho, self.material)
        w = E[self._elem] * self._ke_flat[self._local]
        data = np.bincount(self._slot, weights=w, minlength=self.indices.size)
        n = self.mesh.n_free
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(n, n))

    def element_energies(self, u_free: np.ndarray, v_free: np.ndarray | None = None) -> np.ndarray:
        """``u_e^T Ke_unit v_e`` per element (``v = u`` by default)."""
        ue = self.mesh.element_field(u_free)
        ve = ue if v_free is None else self.mesh.element_field(v_free)
        return np.einsum("ei,ij,ej->e", ue, self.Ke, ve)


def assemble_stiffness(mesh: Mesh, rho: np.ndarray, m: MaterialModel) -> sp.csr_matrix:
    return StiffnessAssembler(mesh, m).assemble(rho)


def assemble_load(mesh: Mesh, loads) -> np.ndarray:
    """Point loads ``(ix, iy, component, magnitude)`` on the free DOFs."""
    b = np.zeros(mesh.n_free)
    for i, j, comp, mag in loads:
        dof = 2 * mesh.node(i, j) + int(comp)
        k = mesh.free_index[dof]
        if k < 0:
            raise ValueError(f"load on Dirichlet DOF at node ({i}, {j}) component {comp}")
        b[k] += mag
    return b


def von_mises(mesh: Mesh, u_free: np.ndarray, m: MaterialModel) -> np.ndarray:
    """Centroid von Mises stress of the solid material, per element."""
    sigma = centroid_stress(mesh, u_free, m)
    return np.sqrt(np.maximum(np.einsum("ei,ij,ej->e", sigma, VM_MATRIX, sigma), 0.0))


def centroid_stress(mesh: Mesh, u_free: np.ndarray, m: MaterialModel) -> np.ndarray:
    B0 = strain_displacement(0.0, 0.0, mesh.hx, mesh.hy)
    return mesh.element_field(u_free) @ (m.constitutive() @ B0).T


def relaxed_von_mises(mesh: Mesh, u_free, rho, m: MaterialModel) -> np.ndarray:
    return relaxed_stress(rho, von_mises(mesh, u_free, m), m)


# --------------------------------------------------------------------------
# density filters

@dataclass(frozen=True)
class FilterSpec:
    kind: str = "helmholtz"
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("helmholtz", "mass", "none"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.radius < 0:
            raise ValueError("filter radius must be >= 0")


def _element_adjacency(mesh: Mesh):
    """Horizontal and vertical neighbour pairs among active elements."""
    idx = -np.ones((mesh.ny, mesh.nx), dtype=int)
    idx[mesh.elem_ij[:, 1], mesh.elem_ij[:, 0]] = np.arange(mesh.n_elem)
    h = (idx[:, :-1] >= 0) & (idx[:, 1:] >= 0)
    v = (idx[:-1, :] >= 0) & (idx[1:, :] >= 0)
    horiz = np.column_stack([idx[:, :-1][h], idx[:, 1:][h]])
    vert = np.column_stack([idx[:-1, :][v], idx[1:, :][v]])
    return horiz, vert


def helmholtz_operator(mesh: Mesh, radius: float) -> sp.csr_matrix:
    """Cell-centred ``I - r^2 Laplacian`` with zero-flux boundaries."""
    n = mesh.n_elem
    horiz, vert = _element_adjacency(mesh)
    pairs = np.vstack([horiz, vert])
    w = np.concatenate([np.full(len(horiz), 1.0 / mesh.hx ** 2),
                        np.full(len(vert), 1.0 / mesh.hy ** 2)]) * radius ** 2
    off = sp.coo_matrix((np.concatenate([-w, -w]),
                         (np.concatenate([pairs[:, 0], pairs[:, 1]]),
                          np.concatenate([pairs[:, 1], pairs[:, 0]]))), shape=(n, n))
    deg = np.bincount(pairs.ravel(), weights=np.repeat(w, 2), minlength=n)
    A = sp.diags(1.0 + deg) + off
    A = sp.csr_matrix(A)
    A.sort_indices()
    return A


def mass_filter_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Element-space mass coupling through shared nodes.

    ``M = B^T diag(m_n)^-1 B`` with ``B[n, e] = v_e / 4`` for the nodes of
    element ``e`` and ``m_n`` the lumped nodal mass. Row sums equal the
    element volumes, so ``diag(lumped M) = diag(v)``.
    """
    ne = mesh.n_elem
    rows = mesh.elem_nodes.ravel()
    cols = np.repeat(np.arange(ne), 4)
    B = sp.csr_matrix((np.repeat(mesh.volumes / 4.0, 4), (rows, cols)),
                      shape=(mesh.n_nodes, ne))
    mn = np.asarray(B.sum(axis=1)).ravel()
    M = (B.T @ sp.diags(1.0 / mn) @ B).tocsr()
    M.sort_indices()
    return M


class DensityFilter:
    """Linear density filter ``rho = F x`` and its transpose.

    Helmholtz systems are solved by Jacobi-preconditioned CG to a relative
    tolerance of 1e-10; the operator is symmetric so ``F^T = F``.
    """

    cg_tol = 1e-10

    def __init__(self, mesh: Mesh, spec: FilterSpec):
        self.mesh = mesh
        self.spec = spec
        self.kind = spec.kind
        if spec.kind == "helmholtz" and spec.radius == 0.0:
            self.kind = "none"
        if self.kind == "helmholtz":
            self.A = helmholtz_operator(mesh, spec.radius)
            self.M = build_preconditioner(self.A, "jacobi")
        elif self.kind == "mass":
            self.Mmat = mass_filter_matrix(mesh)
            self.lumped = np.asarray(self.Mmat.sum(axis=1)).ravel()

    def _solve(self, rhs):
        from .krylov import PcgSettings, pcg

        settings = PcgSettings(eps_pcg=self.cg_tol, tol_abs=0.0,
                               maxit=10 * self.A.shape[0] + 100)
        return pcg(self.A, rhs, np.zeros_like(rhs), settings, self.M).x

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "none":
            return x.copy()
        if self.kind == "mass":
            return (self.Mmat @ x) / self.lumped
        return self._solve(x)

    def transpose(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if self.kind == "none":
            return g.copy()
        if self.kind == "mass":
            return self.Mmat.T @ (g / self.lumped)
        return self._solve(g)


def apply_filter(filt: DensityFilter, x):
    return filt.apply(x)


def filter_chain_rule(filt: DensityFilter, dJ_drho):
    return filt.transpose(dJ_drho)
