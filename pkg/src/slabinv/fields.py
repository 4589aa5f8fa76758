"""Grid-sampled complex fields, compactly supported potentials, reflections.

Fields are stored node-wise as complex128 arrays of shape ``grid.node_shape``
indexed ``values[ix, iy, iz]``.  The Fourier transform convention throughout
is

    FT(f)(xi) = integral of exp(+i x . xi) f(x) dx

with no 2*pi normalization in the forward direction; Plancherel-type formulas
downstream carry the matching (2*pi)^-3 factor explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .geometry import Grid3, SlabGeometry


class FieldError(ValueError):
    """Raised for shape/support/grid-compatibility violations."""


@dataclass(frozen=True)
class GridField:
    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.complex128)
        if vals.shape != self.grid.node_shape:
            raise FieldError(
                f"values shape {vals.shape} does not match grid nodes {self.grid.node_shape}"
            )
        if not np.all(np.isfinite(vals.view(np.float64))):
            raise FieldError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    def copy_with(self, values: np.ndarray) -> "GridField":
        return GridField(self.grid, values)

    @property
    def real_part(self) -> np.ndarray:
        return self.values.real


def field_from_function(grid: Grid3, func) -> GridField:
    """Sample ``func(x, y, z)`` (broadcastable) at the grid nodes."""
    x, y, z = grid.node_coords()
    vals = np.broadcast_to(np.asarray(func(x, y, z), dtype=np.complex128),
                           grid.node_shape).copy()
    return GridField(grid, vals)


def quadrature_weights(grid: Grid3) -> np.ndarray:
    """Trapezoidal node weights for volume integrals over the grid box.

    Periodic grids use the uniform weight h^3 (exact for periodic sums);
    node grids halve the weight on each outermost layer per axis.
    """
    h3 = grid.h ** 3
    if grid.periodic:
        return np.full(grid.node_shape, h3)
    w = np.ones(grid.node_shape)
    for axis in range(3):
        edge = [slice(None)] * 3
        for idx in (0, -1):
            edge[axis] = idx
            w[tuple(edge)] *= 0.5
    return w * h3


def reflect(field: GridField) -> GridField:
    """Pullback under x -> x* = (x1, x2, -x3); requires a z-symmetric grid."""
    grid = field.grid
    if not grid.z_symmetric():
        raise FieldError("grid is not symmetric under reflection in the x3 axis")
    if grid.periodic:
        nz = grid.nz
        # node j at z_j maps to node (shift - j) mod nz where shift fixes z=-origin.
        shift = round(-2 * grid.origin[2] / grid.h) % nz
        idx = (shift - np.arange(nz)) % nz
        return field.copy_with(field.values[:, :, idx])
    return field.copy_with(field.values[:, :, ::-1])


@dataclass(frozen=True)
class Potential:
    """Real potential supported in {|x'| <= R, 0 <= x3 <= L}.

    ``sobolev_s`` and ``bound_M`` record the a-priori smoothness class; the
    discrete Sobolev norm of the samples must not exceed bound_M by more than
    5 percent.
    """

    field: GridField
    geom: SlabGeometry
    sobolev_s: float
    bound_M: float

    def __post_init__(self):
        vals = self.field.values
        if np.max(np.abs(vals.imag)) > 0:
            raise FieldError("potential must be real-valued")
        r = self.field.grid.lateral_radius()
        _, _, z = self.field.grid.node_coords()
        outside = (r > self.geom.R) | (z < -1e-12) | (z > self.geom.L + 1e-12)
        if np.any(vals[np.broadcast_to(outside, vals.shape)] != 0):
            raise FieldError("potential support violates {|x'| <= R} x [0, L]")
        if self.sobolev_s <= 1.5:
            raise FieldError("smoothness index must exceed 3/2")
        norm = sobolev_norm(self.field, self.sobolev_s)
        if norm > 1.05 * self.bound_M:
            raise FieldError(
                f"discrete H^s norm {norm:.6g} exceeds bound M={self.bound_M:.6g} by >5%"
            )

    @property
    def grid(self) -> Grid3:
        return self.field.grid


def smooth_bump(t: np.ndarray) -> np.ndarray:
    """C-infinity bump exp(-1/(1-t^2)) on |t|<1, zero outside; peak value exp(-1)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti * ti))
    return out


def radial_bump_potential(grid: Grid3, geom: SlabGeometry, amplitude: float,
                          s: float = 2.0, r_width: float | None = None,
                          z_margin: float = 0.0, z_profile: str = "interior") -> Potential:
    """Smooth bump potential: radial bump in x' times a vertical profile.

    z_profile "interior" vanishes to all orders at both plates; "bottom"
    peaks on the bottom plate (smooth inside the slab, jump across x3 = 0
    under extension by zero, the class the quantified transform-decay
    arguments are designed for).  bound_M is set to the measured discrete
    Sobolev norm, so the a-priori class is tight by construction.
    """
    rw = geom.R if r_width is None else r_width
    if rw > geom.R:
        raise FieldError("r_width must not exceed the support radius R")
    x, y, z = grid.node_coords()
    r = np.hypot(x, y)
    if z_profile == "interior":
        zc = (z - geom.L / 2) / (geom.L / 2 - z_margin)
        prof = smooth_bump(zc)
    elif z_profile == "bottom":
        prof = np.where(z >= 0, smooth_bump(z / geom.L), 0.0)
    else:
        raise FieldError(f"unknown z_profile {z_profile!r}")
    vals = amplitude * smooth_bump(r / rw) * prof
    fld = GridField(grid, np.broadcast_to(vals, grid.node_shape).astype(np.complex128))
    m = sobolev_norm(fld, s)
    return Potential(fld, geom, s, max(m, np.finfo(float).tiny))


def zero_potential(grid: Grid3, geom: SlabGeometry, s: float = 2.0) -> Potential:
    fld = GridField(grid, np.zeros(grid.node_shape, dtype=np.complex128))
    return Potential(fld, geom, s, np.finfo(float).tiny)


def _box_to_slab_index(box_grid: Grid3, slab_grid: Grid3) -> tuple:
    """Map box nodes onto slab nodes; needs h_box = c*h_slab with aligned offsets.

    Returns (inside_mask, ix, iy, iz) where the index arrays address the slab
    nodes under each inside box node.
    """
    c = box_grid.h / slab_grid.h
    ci = round(c)
    if abs(c - ci) > 1e-9 or ci < 1:
        raise FieldError(
            f"box spacing {box_grid.h} is not an integer multiple of slab spacing {slab_grid.h}"
        )
    idx = []
    for axis in range(3):
        off = (box_grid.origin[axis] - slab_grid.origin[axis]) / slab_grid.h
        offi = round(off)
        if abs(off - offi) > 1e-9:
            raise FieldError(f"box grid is not node-aligned with the slab grid on axis {axis}")
        n_box = box_grid.node_shape[axis]
        idx.append(offi + ci * np.arange(n_box))
    sx, sy, sz = slab_grid.node_shape
    ix = idx[0][:, None, None]
    iy = idx[1][None, :, None]
    iz = idx[2][None, None, :]
    inside = (
        (ix >= 0) & (ix < sx) & (iy >= 0) & (iy < sy) & (iz >= 0) & (iz < sz)
    )
    return inside, np.clip(ix, 0, sx - 1), np.clip(iy, 0, sy - 1), np.clip(iz, 0, sz - 1)


def extend_trivial(q: Potential, box_grid: Grid3) -> GridField:
    """Extension of q by zero: equals q on slab nodes, zero elsewhere."""
    inside, ix, iy, iz = _box_to_slab_index(box_grid, q.grid)
    vals = np.where(inside, q.field.values[ix, iy, iz], 0.0 + 0.0j)
    out = np.broadcast_to(vals, box_grid.node_shape).copy()
    return GridField(box_grid, out)


def extend_even(q: Potential, box_grid: Grid3) -> GridField:
    """Even extension about x3 = 0: q(x) on the slab plus q(x*) on its mirror.

    Equals extend_trivial(q) + reflect(extend_trivial(q)) node-exactly; the
    x3 = 0 layer picks up both contributions.
    """
    triv = extend_trivial(q, box_grid)
    return GridField(box_grid, triv.values + reflect(triv).values)


class FourierTransform:
    """Evaluator for FT(f)(xi) by separable trapezoidal quadrature.

    The per-axis factorization of exp(i x . xi) makes each evaluation O(N)
    with small constants; `batch` chunks over many frequencies.
    """

    def __init__(self, field: GridField):
        grid = field.grid
        self._wf = field.values * quadrature_weights(grid)
        self._coords = [grid.axis_nodes(a) for a in range(3)]

    def __call__(self, xi) -> complex:
        return complex(self.batch(np.asarray(xi, dtype=float).reshape(1, 3))[0])

    def batch(self, xis: np.ndarray, chunk: int = 64) -> np.ndarray:
        xis = np.asarray(xis, dtype=float)
        if xis.ndim != 2 or xis.shape[1] != 3:
            raise FieldError("expected an (n, 3) array of frequencies")
        out = np.empty(len(xis), dtype=np.complex128)
        for lo in range(0, len(xis), chunk):
            hi = min(lo + chunk, len(xis))
            sub = xis[lo:hi]
            ex = np.exp(1j * np.outer(sub[:, 0], self._coords[0]))  # (m, sx)
            ey = np.exp(1j * np.outer(sub[:, 1], self._coords[1]))  # (m, sy)
            ez = np.exp(1j * np.outer(sub[:, 2], self._coords[2]))  # (m, sz)
            t1 = np.tensordot(ex, self._wf, axes=(1, 0))      # (m, sy, sz)
            t2 = np.einsum("myz,my->mz", t1, ey)              # (m, sz)
            out[lo:hi] = np.einsum("mz,mz->m", t2, ez)
        return out


def fourier_transform(field: GridField) -> FourierTransform:
    return FourierTransform(field)


def sobolev_norm(field: GridField, s: float, pad_factor: int = 2) -> float:
    """Discrete H^s norm via zero-padded FFT with weight (1+|xi|^2)^(s/2).

    Uses ||f||^2 = (2 pi)^-3 * sum (1+|xi_m|^2)^s |FT(f)(xi_m)|^2 dxi over the
    padded frequency lattice, FT approximated by the rectangle rule h^3*FFT.
    """
    grid = field.grid
    vals = field.values
    shape = [pad_factor * n for n in vals.shape]
    spec = scipy.fft.fftn(vals, s=shape)
    h = grid.h
    freqs = [2 * np.pi * scipy.fft.fftfreq(n, d=h) for n in shape]
    w2 = (
        1.0
        + freqs[0][:, None, None] ** 2
        + freqs[1][None, :, None] ** 2
        + freqs[2][None, None, :] ** 2
    )
    dxi = np.prod([2 * np.pi / (n * h) for n in shape])
    total = np.sum(w2 ** s * np.abs(spec * h ** 3) ** 2) * dxi
    return float(np.sqrt(total / (2 * np.pi) ** 3))


# --- field file format -----------------------------------------------------
#
# One ASCII header line: "nx ny nz h ox oy oz", then raw little-endian
# float64 data: all real parts followed by all imaginary parts, x-fastest
# ordering.  Cell counts follow the grid convention (node counts are +1 on
# each axis for non-periodic grids; only non-periodic fields are serialized).


def write_field(path: str, field: GridField) -> None:
    grid = field.grid
    if grid.periodic:
        raise FieldError("field files store non-periodic node grids only")
    header = "%d %d %d %.17g %.17g %.17g %.17g\n" % (
        grid.nx, grid.ny, grid.nz, grid.h, *grid.origin
    )
    re = np.ascontiguousarray(field.values.real.ravel(order="F"), dtype="<f8")
    im = np.ascontiguousarray(field.values.imag.ravel(order="F"), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(re.tobytes())
        fh.write(im.tobytes())


def read_field(path: str) -> GridField:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 7:
            raise FieldError(f"{path}: malformed field header")
        nx, ny, nz = (int(v) for v in header[:3])
        h = float(header[3])
        origin = tuple(float(v) for v in header[4:7])
        grid = Grid3(nx, ny, nz, h, origin)
        count = grid.n_nodes
        raw = np.frombuffer(fh.read(16 * count), dtype="<f8")
        if raw.size != 2 * count:
            raise FieldError(f"{path}: truncated field data")
    re = raw[:count].reshape(grid.node_shape, order="F")
    im = raw[count:].reshape(grid.node_shape, order="F")
    return GridField(grid, re + 1j * im)


def read_potential(path: str, geom: SlabGeometry, s: float = 2.0) -> Potential:
    """Load a field file as a potential; bound M is the measured H^s norm."""
    fld = read_field(path)
    m = sobolev_norm(fld, s)
    return Potential(fld, geom, s, max(m, np.finfo(float).tiny))
