"""Slab geometry, lateral truncation, uniform grids and boundary patches.

The working region is the slab ``0 < x3 < L`` in R^3.  Potentials live in the
cylinder ``|x'| <= R``; Neumann measurements are taken on plate discs of radius
``R_prime``; the computational domain truncates the slab laterally at radius
``R_lat`` (homogeneous Dirichlet data on the staircase approximation of the
lateral cylinder).  Everything downstream samples fields on the uniform
Cartesian grids built here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

MAX_NODES = 10**8


class GeometryError(ValueError):
    """Raised for inconsistent geometry parameters or grid requests."""


@dataclass(frozen=True)
class SlabGeometry:
    """Continuous region parameters.

    L        : slab thickness (> 0)
    R        : support radius of the potentials (> 0)
    R_prime  : Neumann patch radius, R < R_prime < 2R
    R_lat    : lateral truncation radius, R_prime < R_lat <= 2R
    eps_cutoff : half-gap of the cutoff annulus, 0 < eps and
                 R + eps < R_prime - eps
    """

    L: float
    R: float
    R_prime: float
    R_lat: float
    eps_cutoff: float

    def __post_init__(self):
        if not (self.L > 0):
            raise GeometryError(f"slab thickness must be positive, got L={self.L}")
        if not (0 < self.R < self.R_prime < self.R_lat <= 2 * self.R):
            raise GeometryError(
                "radii must satisfy 0 < R < R_prime < R_lat <= 2R, got "
                f"R={self.R}, R_prime={self.R_prime}, R_lat={self.R_lat}"
            )
        if not (self.eps_cutoff > 0):
            raise GeometryError("eps_cutoff must be positive")
        if not (self.R + self.eps_cutoff < self.R_prime - self.eps_cutoff):
            raise GeometryError(
                "eps_cutoff too large: need R + eps < R_prime - eps, got "
                f"R+eps={self.R + self.eps_cutoff}, R'-eps={self.R_prime - self.eps_cutoff}"
            )

    @property
    def annulus_bounds(self) -> tuple[float, float]:
        """Inner/outer radii of the cutoff annulus on a measurement plate."""
        return (self.R + self.eps_cutoff, self.R_prime - self.eps_cutoff)


_CONFIG_KEYS = ("L", "R", "R_prime", "R_lat", "eps_cutoff", "target_h")


def parse_geometry_config(path: str) -> tuple[SlabGeometry, float]:
    """Read a flat key=value text file; returns (geometry, target_h).

    Recognized keys: L, R, R_prime, R_lat, eps_cutoff, target_h.  Blank lines
    and '#' comments are ignored.  All lengths share one arbitrary unit.
    """
    values: dict[str, float] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise GeometryError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _CONFIG_KEYS:
                raise GeometryError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = float(val.strip())
    missing = [k for k in _CONFIG_KEYS if k not in values]
    if missing:
        raise GeometryError(f"{path}: missing keys {missing}")
    target_h = values.pop("target_h")
    return SlabGeometry(**values), target_h


class Plate(Enum):
    TOP = "top"        # x3 = L
    BOTTOM = "bottom"  # x3 = 0


class PatchKind(Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    ANNULUS = "annulus"


@dataclass(frozen=True)
class BoundaryPatch:
    """A radially bounded patch on one of the two plates.

    Membership convention: a plate point belongs to the patch iff
    ``r_inner <= |x'| < r_outer`` (points exactly on a radius go to the
    outer region).
    """

    plate: Plate
    kind: PatchKind
    r_inner: float
    r_outer: float

    def __post_init__(self):
        if not (0 <= self.r_inner < self.r_outer):
            raise GeometryError(
                f"patch radii must satisfy 0 <= r_inner < r_outer, got "
                f"[{self.r_inner}, {self.r_outer})"
            )


def dirichlet_patch(geom: SlabGeometry) -> BoundaryPatch:
    """Top-plate patch carrying Dirichlet data: the full truncated plate."""
    return BoundaryPatch(Plate.TOP, PatchKind.DIRICHLET, 0.0, geom.R_lat)


def neumann_patch(geom: SlabGeometry, plate: Plate) -> BoundaryPatch:
    """Measurement patch of radius R_prime on the requested plate."""
    return BoundaryPatch(plate, PatchKind.NEUMANN, 0.0, geom.R_prime)


def cutoff_annulus(geom: SlabGeometry, plate: Plate) -> BoundaryPatch:
    """The annulus R+eps <= |x'| < R'-eps inside the Neumann patch."""
    inner, outer = geom.annulus_bounds
    return BoundaryPatch(plate, PatchKind.ANNULUS, inner, outer)


@dataclass(frozen=True)
class Grid3:
    """Uniform Cartesian grid: nx, ny, nz cells of spacing h from `origin`.

    Non-periodic grids carry (n+1) nodes per axis.  Fully periodic grids
    (used for the probe construction boxes) carry n sample nodes per axis,
    node n being identified with node 0.
    """

    nx: int
    ny: int
    nz: int
    h: float
    origin: tuple[float, float, float]
    periodic: bool = False

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1 or self.h <= 0:
            raise GeometryError("grid needs positive cell counts and spacing")

    @property
    def node_shape(self) -> tuple[int, int, int]:
        if self.periodic:
            return (self.nx, self.ny, self.nz)
        return (self.nx + 1, self.ny + 1, self.nz + 1)

    @property
    def n_nodes(self) -> int:
        sx, sy, sz = self.node_shape
        return sx * sy * sz

    def axis_nodes(self, axis: int) -> np.ndarray:
        n = (self.nx, self.ny, self.nz)[axis]
        count = n if self.periodic else n + 1
        return self.origin[axis] + self.h * np.arange(count)

    def node_coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays X, Y, Z of shapes (sx,1,1), (1,sy,1), (1,1,sz)."""
        x = self.axis_nodes(0)[:, None, None]
        y = self.axis_nodes(1)[None, :, None]
        z = self.axis_nodes(2)[None, None, :]
        return x, y, z

    def lateral_radius(self) -> np.ndarray:
        """|x'| at every node, shape (sx, sy, 1)."""
        x, y, _ = self.node_coords()
        return np.hypot(x, y)

    def z_symmetric(self) -> bool:
        """True when the node set is invariant under x3 -> -x3."""
        if self.periodic:
            # sample nodes cover [o, o + n h); symmetric iff the reflection of
            # node j lands on node (-j) mod n, which needs 2*o/h integral.
            return abs(round(2 * self.origin[2] / self.h) - 2 * self.origin[2] / self.h) < 1e-9
        zmax = self.origin[2] + self.nz * self.h
        return abs(self.origin[2] + zmax) < 1e-12 * max(1.0, abs(zmax))


def build_domain(geom: SlabGeometry, target_h: float) -> Grid3:
    """Grid for the truncated slab: spacing h <= target_h with nz*h = L exactly.

    The grid covers {|x'| <= R_lat} x [0, L]; plate nodes sit exactly on
    x3 = 0 and x3 = L.  Requests producing more than ``MAX_NODES`` nodes are
    rejected.
    """
    if target_h <= 0:
        raise GeometryError("target_h must be positive")
    if target_h > geom.L / 3 * (1 + 1e-12):
        # the one-sided trace stencils need three node layers per plate
        raise GeometryError(f"target_h must not exceed L/3 = {geom.L / 3}")
    nz = math.ceil(geom.L / target_h - 1e-12)
    h = geom.L / nz
    m = math.ceil(geom.R_lat / h - 1e-12)
    nx = ny = 2 * m
    n_nodes = (nx + 1) * (ny + 1) * (nz + 1)
    if n_nodes > MAX_NODES:
        raise GeometryError(
            f"requested grid has {n_nodes} nodes, exceeding the {MAX_NODES} guard"
        )
    return Grid3(nx, ny, nz, h, (-m * h, -m * h, 0.0))


# Node labels produced by classify_boundary.
LABEL_INTERIOR = 0
LABEL_GAMMA1D_ONLY = 1   # top plate, Dirichlet-admissible but outside the Neumann disc
LABEL_GAMMA1N = 2        # top plate Neumann disc
LABEL_GAMMA2N = 3        # bottom plate Neumann disc
LABEL_GAMMA2_REST = 4    # bottom plate outside the Neumann disc
LABEL_LATERAL = 5        # staircase lateral boundary (|x'| >= R_lat), any height

LABEL_NAMES = {
    LABEL_INTERIOR: "interior",
    LABEL_GAMMA1D_ONLY: "gamma1D_only",
    LABEL_GAMMA1N: "gamma1N",
    LABEL_GAMMA2N: "gamma2N",
    LABEL_GAMMA2_REST: "gamma2_rest",
    LABEL_LATERAL: "lateral",
}


@dataclass(frozen=True)
class BoundaryLabels:
    grid: Grid3
    labels: np.ndarray  # int8, node_shape

    def label_of(self, ix: int, iy: int, iz: int) -> str:
        return LABEL_NAMES[int(self.labels[ix, iy, iz])]

    def mask(self, label: int) -> np.ndarray:
        return self.labels == label

    def counts(self) -> dict[str, int]:
        return {
            name: int(np.count_nonzero(self.labels == lab))
            for lab, name in LABEL_NAMES.items()
        }


def classify_boundary(grid: Grid3, geom: SlabGeometry) -> BoundaryLabels:
    """Label every node of a conforming slab grid.

    Nodes with |x'| >= R_lat are lateral (Dirichlet zero) at any height,
    including the plates; remaining plate nodes split by the Neumann radius.
    The labels partition the node set; the top plate inside the truncation is
    entirely Dirichlet-admissible, so gamma1N is contained in the admissible
    set by construction.
    """
    if grid.periodic:
        raise GeometryError("classify_boundary expects a non-periodic slab grid")
    if abs(grid.nz * grid.h - geom.L) > 1e-12 * geom.L:
        raise GeometryError("grid does not conform to the slab thickness")
    sx, sy, sz = grid.node_shape
    r2d = grid.lateral_radius()[:, :, 0]  # (sx, sy)
    lateral2d = r2d >= geom.R_lat
    in_neumann2d = (r2d < geom.R_prime) & ~lateral2d
    labels = np.zeros(grid.node_shape, dtype=np.int8)
    labels[lateral2d, :] = LABEL_LATERAL
    labels[:, :, sz - 1] = np.where(
        lateral2d, LABEL_LATERAL,
        np.where(in_neumann2d, LABEL_GAMMA1N, LABEL_GAMMA1D_ONLY),
    )
    labels[:, :, 0] = np.where(
        lateral2d, LABEL_LATERAL,
        np.where(in_neumann2d, LABEL_GAMMA2N, LABEL_GAMMA2_REST),
    )
    return BoundaryLabels(grid, labels)


def interior_mask(grid: Grid3, geom: SlabGeometry) -> np.ndarray:
    """Boolean node mask of the solver unknowns: 0 < x3 < L and |x'| < R_lat."""
    labels = classify_boundary(grid, geom)
    return labels.labels == LABEL_INTERIOR


def patch_plate_mask(grid: Grid3, patch: BoundaryPatch) -> np.ndarray:
    """Patch membership of the plate nodes, shape (sx, sy)."""
    r = grid.lateral_radius()[:, :, 0]
    return (r >= patch.r_inner) & (r < patch.r_outer)
