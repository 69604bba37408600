"""Structured quadrilateral meshes, bilinear shape functions and quadrature.

Meshes are plane-strain cross sections with unit out-of-plane thickness, so
"volume" and "area" are used interchangeably (m^3 per metre of thickness).
Element node ordering is counter-clockwise starting at the lower-left corner
of the reference square: (-1,-1), (1,-1), (1,1), (-1,1).
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError, MeshError

# supported Gauss-Legendre orders per axis
_GAUSS_ORDERS = (1, 2, 3, 4, 5)


def shape_functions(xi, eta):
    """Bilinear shape functions N_k at an isoparametric point.

    Raises ValueError outside the reference square.
    """
    if not (-1.0 <= xi <= 1.0 and -1.0 <= eta <= 1.0):
        raise ValueError(f"isoparametric point ({xi}, {eta}) outside [-1,1]^2")
    return 0.25 * np.array([
        (1.0 - xi) * (1.0 - eta),
        (1.0 + xi) * (1.0 - eta),
        (1.0 + xi) * (1.0 + eta),
        (1.0 - xi) * (1.0 + eta),
    ])


def shape_function_gradients(xi, eta):
    """Gradients dN_k/d(xi, eta), shape (4, 2)."""
    return 0.25 * np.array([
        [-(1.0 - eta), -(1.0 - xi)],
        [(1.0 - eta), -(1.0 + xi)],
        [(1.0 + eta), (1.0 + xi)],
        [-(1.0 + eta), (1.0 - xi)],
    ])


@dataclass(frozen=True)
class GaussRule:
    """Tensor-product Gauss-Legendre rule on the reference square."""

    order: int
    points_1d: np.ndarray
    weights_1d: np.ndarray

    @property
    def points(self):
        """All (xi_i, eta_j) pairs, shape (order^2, 2), x fastest."""
        xi, eta = np.meshgrid(self.points_1d, self.points_1d, indexing="xy")
        return np.column_stack([xi.ravel(), eta.ravel()])

    @property
    def weights(self):
        """Raw tensor weights w(xi_i)*w(eta_j); they sum to 4."""
        wx, wy = np.meshgrid(self.weights_1d, self.weights_1d, indexing="xy")
        return (wx * wy).ravel()

    @property
    def normalized_weights(self):
        """Tensor weights w(xi_i)/2 * w(eta_j)/2; they sum to 1."""
        return self.weights / 4.0


def gauss_rule(order):
    """Gauss-Legendre rule with `order` points per axis (1 to 5)."""
    if order not in _GAUSS_ORDERS:
        raise ConfigError(f"unsupported Gauss order {order}; pick one of {_GAUSS_ORDERS}")
    pts, wts = leggauss(order)
    return GaussRule(order=order, points_1d=pts, weights_1d=wts)


def _as_index_array(values, n_nodes, name):
    arr = np.asarray(values, dtype=np.intp)
    if arr.size and (arr.min() < 0 or arr.max() >= n_nodes):
        raise MeshError(f"{name} contains node indices outside [0, {n_nodes})")
    return arr


@dataclass
class QuadMesh:
    """4-node quadrilateral mesh with named boundary node sets.

    `node_coords` is the current geometry and is updated in place by the
    explicit solver; `reference_coords` is frozen at construction and is the
    basis for initial Jacobians, element masses and reference volumes.
    """

    node_coords: np.ndarray
    elements: np.ndarray
    boundary_sets: dict = field(default_factory=dict)
    reference_coords: np.ndarray = None

    def __post_init__(self):
        self.node_coords = np.array(self.node_coords, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.intp)
        if self.node_coords.ndim != 2 or self.node_coords.shape[1] != 2:
            raise MeshError("node_coords must have shape (n_nodes, 2)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 4:
            raise MeshError("elements must have shape (n_elements, 4)")
        n = self.n_nodes
        self.elements = _as_index_array(self.elements, n, "elements")
        self.boundary_sets = {
            name: _as_index_array(ids, n, f"boundary set '{name}'")
            for name, ids in self.boundary_sets.items()
        }
        if self.reference_coords is None:
            self.reference_coords = self.node_coords.copy()
        else:
            self.reference_coords = np.array(self.reference_coords, dtype=float)
        self.reference_coords.setflags(write=False)
        self._validate()

    def _validate(self):
        order = np.lexsort((self.reference_coords[:, 1], self.reference_coords[:, 0]))
        sorted_xy = self.reference_coords[order]
        dup = np.all(np.abs(np.diff(sorted_xy, axis=0)) < 1e-12, axis=1)
        if np.any(dup):
            i = int(np.argmax(dup))
            raise MeshError(
                f"coincident nodes {order[i]} and {order[i + 1]} break conformality"
            )
        det0 = det_jacobian(self.reference_coords[self.elements], 0.0, 0.0)
        if np.any(det0 <= 0.0):
            bad = int(np.argmin(det0))
            raise MeshError(
                f"element {bad} has non-positive reference Jacobian {det0[bad]:.3e}"
            )

    @property
    def n_nodes(self):
        return self.node_coords.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def element_coords(self, reference=False):
        """Per-element corner coordinates, shape (n_elements, 4, 2)."""
        coords = self.reference_coords if reference else self.node_coords
        return coords[self.elements]

    def element_volumes(self, reference=False):
        """Signed element areas (unit thickness) via the shoelace formula."""
        c = self.element_coords(reference=reference)
        x, y = c[:, :, 0], c[:, :, 1]
        xr, yr = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
        return 0.5 * np.sum(x * yr - xr * y, axis=1)

    def min_edge_length(self):
        c = self.element_coords()
        d = c - np.roll(c, -1, axis=1)
        return float(np.sqrt((d ** 2).sum(axis=2).min()))

    def copy(self):
        return QuadMesh(
            node_coords=self.node_coords.copy(),
            elements=self.elements.copy(),
            boundary_sets={k: v.copy() for k, v in self.boundary_sets.items()},
            reference_coords=self.reference_coords,
        )


def det_jacobian(element_coords, xi, eta):
    """Jacobian determinant at one isoparametric point.

    `element_coords` is (..., 4, 2); the determinant broadcasts over leading axes.
    """
    dn = shape_function_gradients(xi, eta)
    jac = np.einsum("ak,...ai->...ki", dn, np.asarray(element_coords, dtype=float))
    return jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]


def jacobian_ratio(mesh, element, at=(0.0, 0.0)):
    """Current-to-initial Jacobian determinant ratio for one element.

    Negative values signal an inverted element. The default sampling point is
    the element centroid.
    """
    xi, eta = at
    det0 = float(det_jacobian(mesh.reference_coords[mesh.elements[element]], xi, eta))
    if det0 == 0.0:
        raise MeshError(f"element {element} has a degenerate reference Jacobian")
    det_t = float(det_jacobian(mesh.node_coords[mesh.elements[element]], xi, eta))
    return det_t / det0


def jacobian_ratios(mesh, at=(0.0, 0.0)):
    """Centroid Jacobian ratios for every element, shape (n_elements,)."""
    xi, eta = at
    det0 = det_jacobian(mesh.element_coords(reference=True), xi, eta)
    if np.any(det0 == 0.0):
        raise MeshError("degenerate reference Jacobian in mesh")
    det_t = det_jacobian(mesh.element_coords(), xi, eta)
    return det_t / det0


def structured_grid(width, height, element_size, x0=0.0, y0=0.0):
    """Uniform rectangular grid with base/left/right/surface boundary sets."""
    if width <= 0 or height <= 0 or element_size <= 0:
        raise ConfigError("width, height and element_size must be positive")
    nx = max(1, round(width / element_size))
    ny = max(1, round(height / element_size))
    xs = np.linspace(x0, x0 + width, nx + 1)
    ys = np.linspace(y0, y0 + height, ny + 1)
    xv, yv = np.meshgrid(xs, ys, indexing="xy")
    coords = np.column_stack([xv.ravel(), yv.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    elems = np.empty((nx * ny, 4), dtype=np.intp)
    k = 0
    for j in range(ny):
        for i in range(nx):
            elems[k] = (nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1))
            k += 1

    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()
    sets = {
        "base": np.flatnonzero(jj == 0),
        "left": np.flatnonzero(ii == 0),
        "right": np.flatnonzero(ii == nx),
        "surface": np.flatnonzero(jj == ny),
    }
    return QuadMesh(node_coords=coords, elements=elems, boundary_sets=sets)


def slope_grid(height, run_per_rise, crest_length, element_size):
    """Slope cross section meshed as a stair-stepped subset of a uniform grid.

    The body is the polygon (0,0) -> (toe,0) -> (crest_length, height) -> (0, height)
    with the inclined face at `run_per_rise` horizontal per unit vertical.
    Elements whose centroid lies inside the polygon are kept, so the face is a
    one-element staircase. Boundary sets: base, left and the free "surface".
    """
    run = run_per_rise * height
    toe_x = crest_length + run
    full = structured_grid(toe_x, height, element_size)
    cent = full.element_coords().mean(axis=1)
    x_face = crest_length + run_per_rise * (height - cent[:, 1])
    keep = cent[:, 0] <= x_face
    if not np.any(keep):
        raise ConfigError("slope geometry keeps no elements; check dimensions")
    elems = full.elements[keep]

    used = np.unique(elems)
    remap = -np.ones(full.n_nodes, dtype=np.intp)
    remap[used] = np.arange(used.size)
    coords = full.node_coords[used]
    elems = remap[elems]

    # boundary edges occur in exactly one element
    edges = {}
    for quad in elems:
        for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
            key = (min(quad[a], quad[b]), max(quad[a], quad[b]))
            edges[key] = edges.get(key, 0) + 1
    boundary_nodes = sorted({n for e, cnt in edges.items() if cnt == 1 for n in e})
    boundary_nodes = np.asarray(boundary_nodes, dtype=np.intp)

    tol = 1e-9
    on_base = np.abs(coords[boundary_nodes, 1]) < tol
    on_left = np.abs(coords[boundary_nodes, 0]) < tol
    sets = {
        "base": boundary_nodes[on_base],
        "left": boundary_nodes[on_left],
        "surface": boundary_nodes[~(on_base | on_left)],
    }
    return QuadMesh(node_coords=coords, elements=elems, boundary_sets=sets)


def write_mesh_snapshot(mesh, path):
    """Columnar text dump: node rows, element rows, then the boundary sets."""
    with open(path, "w") as fh:
        fh.write(f"NODES {mesh.n_nodes}\n")
        for i, (x, y) in enumerate(mesh.node_coords):
            fh.write(f"{i} {x:.17g} {y:.17g}\n")
        fh.write(f"ELEMENTS {mesh.n_elements}\n")
        for i, quad in enumerate(mesh.elements):
            fh.write(f"{i} {quad[0]} {quad[1]} {quad[2]} {quad[3]}\n")
        fh.write(f"BOUNDARY_SETS {len(mesh.boundary_sets)}\n")
        for name in sorted(mesh.boundary_sets):
            ids = mesh.boundary_sets[name]
            fh.write(f"{name} {ids.size} " + " ".join(str(int(i)) for i in ids) + "\n")


def read_mesh_snapshot(path, reference_coords=None):
    """Inverse of write_mesh_snapshot. Reference geometry is optional."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    line = 0

    def expect(tag):
        nonlocal line
        parts = tokens[line].split()
        if not parts or parts[0] != tag:
            raise MeshError(f"malformed mesh snapshot: expected {tag} at line {line + 1}")
        line += 1
        return int(parts[1])

    n_nodes = expect("NODES")
    coords = np.empty((n_nodes, 2))
    for _ in range(n_nodes):
        i, x, y = tokens[line].split()
        coords[int(i)] = (float(x), float(y))
        line += 1
    n_elems = expect("ELEMENTS")
    elems = np.empty((n_elems, 4), dtype=np.intp)
    for _ in range(n_elems):
        parts = tokens[line].split()
        elems[int(parts[0])] = [int(p) for p in parts[1:5]]
        line += 1
    n_sets = expect("BOUNDARY_SETS")
    sets = {}
    for _ in range(n_sets):
        parts = tokens[line].split()
        sets[parts[0]] = np.asarray([int(p) for p in parts[2:]], dtype=np.intp)
        line += 1
    return QuadMesh(node_coords=coords, elements=elems, boundary_sets=sets,
                    reference_coords=reference_coords)
