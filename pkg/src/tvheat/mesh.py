"""Spatial discretizations: interval, radial annulus and rectangle meshes.

The annulus is reduced to a weighted 1D problem in the radial variable; nodal
quadrature weights carry the r^(N-1) volume factor times the unit-sphere
surface measure, so that all volume integrals are integrals over the full
N-dimensional shell. The rectangle uses a structured triangulation with
piecewise-affine nodal basis. Quadrature is mass-lumped nodal (trapezoidal in
1D), which keeps the time-derivative term of the semi-discrete system diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

FORMAT_VERSION = 1


class MeshError(ValueError):
    """Invalid domain parameters or mismatched mesh data."""


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    """One-dimensional domain (0, length)."""

    length: float

    def __post_init__(self):
        if not self.length > 0:
            raise MeshError(f"interval length must be positive, got {self.length}")

    @property
    def measure(self) -> float:
        return self.length

    @property
    def diameter(self) -> float:
        return self.length


@dataclass(frozen=True)
class Annulus:
    """Radial shell a < |x| < b in R^N, N >= 2, reduced to [a, b]."""

    a: float
    b: float
    dim: int = 2

    def __post_init__(self):
        if not (0 < self.a < self.b < math.inf):
            raise MeshError(f"annulus requires 0 < a < b, got a={self.a}, b={self.b}")
        if self.dim < 2:
            raise MeshError(f"annulus requires dim >= 2, got {self.dim}")

    @property
    def sphere_measure(self) -> float:
        """Surface measure of the unit (dim-1)-sphere."""
        n = self.dim
        return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)

    @property
    def measure(self) -> float:
        n = self.dim
        return self.sphere_measure * (self.b ** n - self.a ** n) / n

    @property
    def diameter(self) -> float:
        return 2.0 * self.b


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle (0, lx) x (0, ly)."""

    lx: float
    ly: float

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise MeshError(f"rectangle sides must be positive, got {self.lx}, {self.ly}")

    @property
    def measure(self) -> float:
        return self.lx * self.ly

    @property
    def diameter(self) -> float:
        return math.hypot(self.lx, self.ly)


Domain = Interval | Annulus | Rectangle


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------

class Mesh:
    """Discretized domain with quadrature and boundary geometry.

    Attributes
    ----------
    domain : Domain
    nodes : ndarray, shape (n_nodes, dim_coord)
        Node coordinates (radial coordinate for the annulus).
    elements : ndarray, shape (n_el, dim_coord + 1)
        Node indices per element (segments in 1D, triangles in 2D).
    element_volumes : ndarray, shape (n_el,)
        Measure of each element, including the radial weight for the annulus.
    quad_weights : ndarray, shape (n_nodes,)
        Nodal quadrature weights; they sum to the domain measure exactly.
    boundary_nodes : ndarray of int
    boundary_normals : ndarray, shape (n_bnd, dim_coord)
        Unit outward normals.
    boundary_weights : ndarray, shape (n_bnd,)
        Discrete (N-1)-dimensional boundary measure per boundary node
        (counting measure in 1D).
    h : float
        Maximum element diameter.

    The mesh is immutable after construction; concurrent shared reads are safe.
    """

    def __init__(self, domain, nodes, elements, element_volumes, quad_weights,
                 boundary_nodes, boundary_normals, boundary_weights,
                 boundary_elements, grad_ops):
        self.domain = domain
        self.nodes = np.asarray(nodes, dtype=float)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.element_volumes = np.asarray(element_volumes, dtype=float)
        self.quad_weights = np.asarray(quad_weights, dtype=float)
        self.boundary_nodes = np.asarray(boundary_nodes, dtype=np.int64)
        self.boundary_normals = np.asarray(boundary_normals, dtype=float)
        self.boundary_weights = np.asarray(boundary_weights, dtype=float)
        # one incident element per boundary node, used for flux traces
        self.boundary_elements = np.asarray(boundary_elements, dtype=np.int64)
        # sparse gradient operators, one per spatial component of the
        # coordinate space (n_el x n_nodes); grad u|_e = [D @ u for D in ops]
        self.grad_ops = tuple(grad_ops)
        edges = self.nodes[self.elements]
        diffs = edges[:, :, None, :] - edges[:, None, :, :]
        self.h = float(np.sqrt((diffs ** 2).sum(axis=-1)).max())
        self._interior_mask = np.ones(self.n_nodes, dtype=bool)
        self._interior_mask[self.boundary_nodes] = False
        for arr in (self.nodes, self.elements, self.element_volumes,
                    self.quad_weights, self.boundary_nodes,
                    self.boundary_normals, self.boundary_weights):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def dim_coord(self) -> int:
        return self.nodes.shape[1]

    @property
    def interior_mask(self) -> np.ndarray:
        return self._interior_mask

    # -- operations --------------------------------------------------------

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Piecewise-constant gradient per element, shape (n_el, dim_coord).

        First-order consistent: exact on affine fields.
        """
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_nodes,):
            raise MeshError(
                f"field has {values.shape} values, mesh has {self.n_nodes} nodes")
        return np.stack([D @ values for D in self.grad_ops], axis=1)

    def integrate(self, samples: np.ndarray) -> float:
        """Quadrature of per-node or per-element samples over the domain."""
        samples = np.asarray(samples, dtype=float)
        if samples.shape == (self.n_nodes,):
            return float(self.quad_weights @ samples)
        if samples.shape == (self.n_elements,):
            return float(self.element_volumes @ samples)
        raise MeshError(
            f"samples sized {samples.shape}; expected ({self.n_nodes},) nodal "
            f"or ({self.n_elements},) elementwise")

    def boundary_integrate(self, boundary_samples: np.ndarray) -> float:
        """Integral against the discrete boundary measure."""
        boundary_samples = np.asarray(boundary_samples, dtype=float)
        if boundary_samples.shape != (len(self.boundary_nodes),):
            raise MeshError(
                f"boundary samples sized {boundary_samples.shape}; expected "
                f"({len(self.boundary_nodes)},)")
        return float(self.boundary_weights @ boundary_samples)

    def validate(self, rtol: float = 1e-12) -> None:
        """Check constructor invariants; raises MeshError on violation."""
        total = self.quad_weights.sum()
        if abs(total - self.domain.measure) > rtol * abs(self.domain.measure):
            raise MeshError("quadrature weights do not sum to |Omega|")
        if np.any(self.quad_weights <= 0):
            raise MeshError("non-positive quadrature weight")
        norms = np.sqrt((self.boundary_normals ** 2).sum(axis=1))
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise MeshError("boundary normal is not unit length")
        vol = self.element_volumes.sum()
        if abs(vol - self.domain.measure) > rtol * abs(self.domain.measure):
            raise MeshError("element volumes do not partition |Omega|")
        if np.any(np.sort(self.elements, axis=1)[:, :-1]
                  == np.sort(self.elements, axis=1)[:, 1:]):
            raise MeshError("degenerate element (repeated node)")

    # -- plain text dump ---------------------------------------------------

    def dump(self, path, values: np.ndarray | None = None) -> None:
        """Write the mesh (optionally with one value column) as plain text."""
        bset = set(int(i) for i in self.boundary_nodes)
        with open(path, "w") as fh:
            fh.write(f"# tvheat mesh format_version={FORMAT_VERSION}\n")
            fh.write(f"# {_domain_header(self.domain)}\n")
            fh.write(f"# nodes={self.n_nodes} dim={self.dim_coord}"
                     f" columns={'coords qw bnd value' if values is not None else 'coords qw bnd'}\n")
            for i in range(self.n_nodes):
                coords = " ".join(f"{c:.17g}" for c in self.nodes[i])
                line = f"{coords} {self.quad_weights[i]:.17g} {int(i in bset)}"
                if values is not None:
                    line += f" {values[i]:.17g}"
                fh.write(line + "\n")


def _domain_header(domain: Domain) -> str:
    if isinstance(domain, Interval):
        return f"kind=interval length={domain.length:.17g}"
    if isinstance(domain, Annulus):
        return f"kind=annulus a={domain.a:.17g} b={domain.b:.17g} dim={domain.dim}"
    return f"kind=rectangle lx={domain.lx:.17g} ly={domain.ly:.17g}"


# ---------------------------------------------------------------------------
# Field
# ---------------------------------------------------------------------------

@dataclass
class Field:
    """Nodal real values of u on a mesh at one time instant."""

    mesh: Mesh
    values: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise MeshError(
                f"field has {self.values.shape} values, mesh has "
                f"{self.mesh.n_nodes} nodes")

    @classmethod
    def zeros(cls, mesh: Mesh) -> "Field":
        return cls(mesh, np.zeros(mesh.n_nodes))

    @classmethod
    def from_function(cls, mesh: Mesh, fn, dirichlet: bool = False) -> "Field":
        vals = np.array([fn(*xy) for xy in mesh.nodes], dtype=float)
        f = cls(mesh, vals)
        return f.constrained() if dirichlet else f

    def constrained(self) -> "Field":
        """Copy with zero values on every boundary node."""
        vals = self.values.copy()
        vals[self.mesh.boundary_nodes] = 0.0
        return Field(self.mesh, vals)

    def is_dirichlet(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.values[self.mesh.boundary_nodes]) <= tol))

    def copy(self) -> "Field":
        return Field(self.mesh, self.values.copy())

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def l2(self) -> float:
        return math.sqrt(float(self.mesh.quad_weights @ self.values ** 2))


def load_field(path, mesh: Mesh) -> Field:
    """Read a field dumped by ``Mesh.dump``; node coordinates must match."""
    coords, vals = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            coords.append([float(x) for x in parts[:mesh.dim_coord]])
            vals.append(float(parts[-1]))
    coords = np.asarray(coords)
    if coords.shape != mesh.nodes.shape or not np.allclose(
            coords, mesh.nodes, rtol=1e-12, atol=1e-12):
        raise MeshError("field file does not match mesh node layout")
    return Field(mesh, np.asarray(vals))


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def build_mesh(domain: Domain, resolution) -> Mesh:
    """Build a mesh with the given per-axis resolution (element count).

    ``resolution`` is an integer for 1D domains, an integer or (nx, ny) pair
    for the rectangle.
    """
    if isinstance(domain, (Interval, Annulus)):
        n = int(resolution)
        if n < 2:
            raise MeshError(f"resolution must be >= 2, got {resolution}")
        return _build_1d(domain, n)
    if isinstance(domain, Rectangle):
        if np.isscalar(resolution):
            nx = ny = int(resolution)
        else:
            nx, ny = (int(r) for r in resolution)
        if nx < 2 or ny < 2:
            raise MeshError(f"resolution must be >= 2 per axis, got {resolution}")
        return _build_rectangle(domain, nx, ny)
    raise MeshError(f"unknown domain {domain!r}")


def _build_1d(domain, n: int) -> Mesh:
    """Interval or radial annulus: n elements on [s0, s1] with weight
    omega * r^(N-1) dr; the interval is the N=1, omega=1 case."""
    if isinstance(domain, Interval):
        s0, s1, N, omega = 0.0, domain.length, 1, 1.0
    else:
        s0, s1, N, omega = domain.a, domain.b, domain.dim, domain.sphere_measure

    r = np.linspace(s0, s1, n + 1)
    elements = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
    h = np.diff(r)

    # antiderivatives of r^(N-1) and r^N; exact hat-function moments
    P = r ** N / N
    Q = r ** (N + 1) / (N + 1)
    dP, dQ = np.diff(P), np.diff(Q)
    r0, r1 = r[:-1], r[1:]
    # int over element of (r1 - r)/h * r^(N-1) dr and (r - r0)/h * r^(N-1) dr
    w_left = omega * (r1 * dP - dQ) / h
    w_right = omega * (dQ - r0 * dP) / h
    quad_weights = np.zeros(n + 1)
    np.add.at(quad_weights, elements[:, 0], w_left)
    np.add.at(quad_weights, elements[:, 1], w_right)
    element_volumes = omega * dP

    rows = np.repeat(np.arange(n), 2)
    cols = elements.ravel()
    data = np.stack([-1.0 / h, 1.0 / h], axis=1).ravel()
    D = sp.csr_matrix((data, (rows, cols)), shape=(n, n + 1))

    boundary_nodes = np.array([0, n])
    boundary_normals = np.array([[-1.0], [1.0]])
    boundary_weights = omega * np.array([s0 ** (N - 1), s1 ** (N - 1)])
    boundary_elements = np.array([0, n - 1])

    return Mesh(domain, r[:, None], elements, element_volumes, quad_weights,
                boundary_nodes, boundary_normals, boundary_weights,
                boundary_elements, [D])


def _build_rectangle(domain: Rectangle, nx: int, ny: int) -> Mesh:
    xs = np.linspace(0.0, domain.lx, nx + 1)
    ys = np.linspace(0.0, domain.ly, ny + 1)
    hx, hy = domain.lx / nx, domain.ly / ny

    def nid(i, j):
        return i * (ny + 1) + j

    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    elements = np.array(tris, dtype=np.int64)
    n_el = len(elements)

    # P1 gradient coefficients per triangle
    v = nodes[elements]                       # (n_el, 3, 2)
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * np.abs(det)
    # grad of barycentric coords: rows of inv([[e1],[e2]])^T applied to nodal diffs
    gb = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]   # d lambda_1
    gc = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]   # d lambda_2
    ga = -gb - gc
    coeff = np.stack([ga, gb, gc], axis=1)    # (n_el, 3, 2)

    rows = np.repeat(np.arange(n_el), 3)
    cols = elements.ravel()
    ops = []
    for k in range(2):
        data = coeff[:, :, k].ravel()
        ops.append(sp.csr_matrix((data, (rows, cols)),
                                 shape=(n_el, nodes.shape[0])))

    quad_weights = np.zeros(nodes.shape[0])
    np.add.at(quad_weights, elements.ravel(), np.repeat(area / 3.0, 3))

    # boundary: nodes on the four edges, outward unit normals, edge measures
    bnodes, bnormals, bweights = [], [], []
    for i in range(nx + 1):
        for j in range(ny + 1):
            on_x0, on_x1 = i == 0, i == nx
            on_y0, on_y1 = j == 0, j == ny
            if not (on_x0 or on_x1 or on_y0 or on_y1):
                continue
            nrm = np.array([-1.0 if on_x0 else (1.0 if on_x1 else 0.0),
                            -1.0 if on_y0 else (1.0 if on_y1 else 0.0)])
            nrm /= np.linalg.norm(nrm)
            w = 0.0
            if on_x0 or on_x1:
                w += hy * (0.5 if (on_y0 or on_y1) else 1.0)
            if on_y0 or on_y1:
                w += hx * (0.5 if (on_x0 or on_x1) else 1.0)
            bnodes.append(nid(i, j))
            bnormals.append(nrm)
            bweights.append(w)
    bnodes = np.array(bnodes, dtype=np.int64)

    # one incident triangle per boundary node
    incident = {}
    for e, tri in enumerate(elements):
        for nidx in tri:
            incident.setdefault(int(nidx), e)
    belements = np.array([incident[int(i)] for i in bnodes], dtype=np.int64)

    return Mesh(domain, nodes, elements, area, quad_weights,
                bnodes, np.array(bnormals), np.array(bweights),
                belements, ops)


# convenience module-level wrappers mirroring the mesh methods

def gradient(field: Field) -> np.ndarray:
    return field.mesh.gradient(field.values)


def integrate(mesh: Mesh, samples) -> float:
    return mesh.integrate(samples)


def boundary_integrate(mesh: Mesh, boundary_samples) -> float:
    return mesh.boundary_integrate(boundary_samples)
