"""Grids, wavepackets, and split-operator spectral propagation.

Natural units hbar = m = 1 throughout; masses enter only as explicit
divisors in kinetic phases.  Grids are periodic (spectral method), so
scenarios must keep packets well away from the edges; a boundary-leak
monitor emits a warning when amplitude reaches the outermost cells.

The propagator is symmetric Strang splitting,

    exp(-i K dt/2) . exp(-i V dt) . exp(-i K dt/2)

with the kinetic factor applied in Fourier space.  It is unitary per
factor and second-order accurate in dt.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Axis",
    "Grid",
    "ComplexField",
    "PacketSpec",
    "DisjointnessReport",
    "BoundaryLeakWarning",
    "make_grid",
    "product_grid",
    "gaussian_packet",
    "split_step",
    "inner",
    "norm2",
    "normalize",
    "support_overlap",
    "probe_amplitude",
    "spectral_gradient",
    "shift_field",
    "position_expectation",
    "position_variance",
    "momentum_expectation",
    "boundary_leak",
]

# Edge monitor: amplitude within this many cells of the boundary above
# this threshold indicates the periodic topology is being abused.
_LEAK_CELLS = 3
_LEAK_AMPLITUDE = 1e-6


class BoundaryLeakWarning(UserWarning):
    """Amplitude has reached the outer cells of a periodic grid."""


@dataclass(frozen=True)
class Axis:
    n: int
    x_min: float
    x_max: float

    def __post_init__(self):
        if self.n < 16 or self.n & (self.n - 1) != 0:
            raise ValueError(f"axis size must be a power of two >= 16, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError(f"degenerate interval [{self.x_min}, {self.x_max}]")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n

    def coords(self) -> np.ndarray:
        # x_j = x_min + j*dx; x_max itself is the wrap point and not stored
        return self.x_min + self.dx * np.arange(self.n)

    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @property
    def span(self) -> float:
        return self.x_max - self.x_min


@dataclass(frozen=True)
class Grid:
    axes: tuple[Axis, ...]

    def __post_init__(self):
        if len(self.axes) not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")

    @property
    def dims(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.n for ax in self.axes)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(ax.dx for ax in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod([ax.dx for ax in self.axes]))

    def coords(self, axis: int = 0) -> np.ndarray:
        return self.axes[axis].coords()

    def meshes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[ax.coords() for ax in self.axes], indexing="ij"))

    def contains(self, point) -> bool:
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        if pt.size != self.dims:
            return False
        return all(ax.x_min <= p < ax.x_max for ax, p in zip(self.axes, pt))


def make_grid(dims: int, n: int, x_min: float, x_max: float) -> Grid:
    """Uniform periodic grid with the same axis replicated over `dims`."""
    if dims not in (1, 2):
        raise ValueError("dims must be 1 or 2")
    ax = Axis(n, float(x_min), float(x_max))
    return Grid((ax,) * dims)


def product_grid(a: Grid, b: Grid) -> Grid:
    """Joint 2D grid from two 1D grids (first axis from `a`)."""
    if a.dims != 1 or b.dims != 1:
        raise ValueError("product_grid expects two 1D grids")
    return Grid((a.axes[0], b.axes[0]))


@dataclass(frozen=True)
class ComplexField:
    """Complex amplitudes sampled on a grid.  Treated as immutable."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals.view(np.float64))):
            raise ValueError("field values must be finite")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def norm2(field: ComplexField) -> float:
    """Total probability sum(|psi|^2) * dx^dims."""
    v = field.values
    return float(np.sum(v.real**2 + v.imag**2) * field.grid.cell_volume)


def normalize(field: ComplexField) -> ComplexField:
    n2 = norm2(field)
    if n2 <= 0.0:
        raise ValueError("cannot normalize a null field")
    return ComplexField(field.grid, field.values / np.sqrt(n2))


@dataclass(frozen=True)
class PacketSpec:
    """Gaussian packet parameters; scalars in 1D, per-axis tuples in 2D."""

    center: float | tuple[float, ...]
    sigma: float | tuple[float, ...]
    momentum: float | tuple[float, ...] = 0.0
    mass: float = 1.0

    def per_axis(self, dims: int):
        def expand(v):
            if np.isscalar(v):
                return (float(v),) * dims
            t = tuple(float(x) for x in v)
            if len(t) != dims:
                raise ValueError(f"expected {dims} components, got {len(t)}")
            return t

        c, s, k = expand(self.center), expand(self.sigma), expand(self.momentum)
        if any(sig <= 0 for sig in s):
            raise ValueError("sigma must be positive")
        return c, s, k


def gaussian_packet(grid: Grid, spec: PacketSpec) -> ComplexField:
    """Normalized Gaussian packet (2 pi s^2)^(-1/4) exp(-(x-c)^2/4s^2 + i k x).

    Raises if the packet does not fit the grid: centers must sit 5 sigma
    inside the box and the sampled tail amplitude at the boundary must be
    below 1e-8 of the peak.
    """
    centers, sigmas, ks = spec.per_axis(grid.dims)
    for ax, c, s in zip(grid.axes, centers, sigmas):
        if not (ax.x_min <= c - 5 * s and c + 5 * s <= ax.x_max):
            raise ValueError(
                f"packet (center={c}, sigma={s}) does not fit axis [{ax.x_min}, {ax.x_max}]"
            )
    meshes = grid.meshes()
    psi = np.ones(grid.shape, dtype=np.complex128)
    for mesh, c, s, k in zip(meshes, centers, sigmas, ks):
        psi = psi * (2.0 * np.pi * s * s) ** (-0.25) * np.exp(
            -((mesh - c) ** 2) / (4.0 * s * s) + 1j * k * mesh
        )
    peak = np.max(np.abs(psi))
    for axis in range(grid.dims):
        edge = np.abs(np.take(psi, [0, -1], axis=axis))
        if np.max(edge) > 1e-8 * peak:
            raise ValueError("packet leaks off grid: boundary amplitude above 1e-8 of peak")
    psi = psi / np.sqrt(np.sum(np.abs(psi) ** 2) * grid.cell_volume)
    return ComplexField(grid, psi)


def _kinetic_phase(grid: Grid, dt: float, mass) -> np.ndarray:
    masses = (mass,) * grid.dims if np.isscalar(mass) else tuple(mass)
    if len(masses) != grid.dims:
        raise ValueError("mass must be scalar or one value per axis")
    ksq = 0.0
    for axis, (ax, m) in enumerate(zip(grid.axes, masses)):
        k = ax.wavenumbers()
        shape = [1] * grid.dims
        shape[axis] = ax.n
        with np.errstate(over="ignore"):
            term = k.reshape(shape) ** 2 / (2.0 * m)
        ksq = ksq + term
    return np.exp(-1j * dt * ksq)


def _sample_potential(potential, grid: Grid, t: float):
    if potential is None:
        return None
    if callable(potential):
        v = np.asarray(potential(t), dtype=float)
    else:
        v = np.asarray(potential, dtype=float)
    if v.shape != grid.shape:
        raise ValueError(f"potential shape {v.shape} does not match grid {grid.shape}")
    return v


def split_step(
    field: ComplexField,
    potential,
    dt: float,
    n_steps: int,
    mass=1.0,
    t0: float = 0.0,
) -> ComplexField:
    """Advance a field by n_steps of size dt under -del^2/2m + V.

    `potential` may be None (free), an array on the grid, or a callable
    t -> array evaluated once per step at the step midpoint.  dt = 0 or
    n_steps = 0 returns the field unchanged.
    """
    if n_steps == 0 or dt == 0.0:
        return field
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    grid = field.grid
    psi = field.values.copy()

    if potential is None:
        # pure kinetic evolution collapses to a single spectral phase
        phase = _kinetic_phase(grid, dt * n_steps, mass)
        psi = np.fft.ifftn(phase * np.fft.fftn(psi))
    else:
        half = _kinetic_phase(grid, 0.5 * dt, mass)
        full = half * half
        static_v = None if callable(potential) else _sample_potential(potential, grid, t0)
        psi = np.fft.ifftn(half * np.fft.fftn(psi))
        for i in range(n_steps):
            v = static_v if static_v is not None else _sample_potential(
                potential, grid, t0 + (i + 0.5) * dt
            )
            psi = np.exp(-1j * dt * v) * psi
            # merge trailing and leading kinetic half-steps between iterations
            phase = half if i == n_steps - 1 else full
            psi = np.fft.ifftn(phase * np.fft.fftn(psi))
        if not np.all(np.isfinite(psi.view(np.float64))):
            raise FloatingPointError("split_step produced non-finite amplitudes")

    if not np.all(np.isfinite(psi.view(np.float64))):
        raise FloatingPointError("split_step produced non-finite amplitudes")
    out = ComplexField(grid, psi)
    if boundary_leak(out):
        warnings.warn(
            "amplitude within 3 cells of the grid edge exceeds 1e-6; "
            "periodic wrap-around may contaminate the run",
            BoundaryLeakWarning,
            stacklevel=2,
        )
    return out


def boundary_leak(field: ComplexField, cells: int = _LEAK_CELLS, threshold: float = _LEAK_AMPLITUDE) -> bool:
    """True when |psi| within `cells` of any edge exceeds `threshold`."""
    v = np.abs(field.values)
    for axis in range(field.grid.dims):
        idx = list(range(cells)) + list(range(-cells, 0))
        if np.max(np.take(v, idx, axis=axis)) > threshold:
            return True
    return False


def inner(f: ComplexField, g: ComplexField) -> complex:
    """Riemann-sum inner product sum(conj(f) g) dx^dims."""
    if f.grid != g.grid:
        raise ValueError("inner product requires matching grids")
    return complex(np.sum(np.conj(f.values) * g.values) * f.grid.cell_volume)


@dataclass(frozen=True)
class DisjointnessReport:
    overlap_mass: float
    disjoint: bool


def support_overlap(f: ComplexField, g: ComplexField, eps: float = 1e-6) -> DisjointnessReport:
    """Overlap mass sum(|f||g|) dx^dims; disjoint iff below eps."""
    if f.grid != g.grid:
        raise ValueError("support_overlap requires matching grids")
    mass = float(np.sum(np.abs(f.values) * np.abs(g.values)) * f.grid.cell_volume)
    return DisjointnessReport(overlap_mass=mass, disjoint=mass < eps)


def prepare_interp(grid: Grid, points: np.ndarray, check: bool = True):
    """Multilinear interpolation stencil for a block of points.

    Returns per-axis (lower index, upper index, fraction); the upper
    neighbour wraps periodically, consistent with the spectral topology.
    The stencil can be applied to any array sampled on the same grid.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[1] != grid.dims:
        raise ValueError(f"expected points with {grid.dims} components")
    out = []
    for axis, ax in enumerate(grid.axes):
        x = pts[:, axis]
        if check and (np.any(x < ax.x_min) or np.any(x >= ax.x_max)):
            raise ValueError("point outside grid")
        u = (x - ax.x_min) / ax.dx
        j0 = np.floor(u).astype(np.intp)
        frac = u - j0
        j0 = np.minimum(j0, ax.n - 1)
        j1 = (j0 + 1) % ax.n
        out.append((j0, j1, frac))
    return out


def apply_interp(values: np.ndarray, stencil) -> np.ndarray:
    if len(stencil) == 1:
        j0, j1, f = stencil[0]
        return values[j0] * (1.0 - f) + values[j1] * f
    (j0, j1, fx), (k0, k1, fy) = stencil
    n1 = values.shape[1]
    flat = values.reshape(-1)
    v00 = flat[j0 * n1 + k0]
    v01 = flat[j0 * n1 + k1]
    v10 = flat[j1 * n1 + k0]
    v11 = flat[j1 * n1 + k1]
    gx = 1.0 - fx
    gy = 1.0 - fy
    return v00 * (gx * gy) + v01 * (gx * fy) + v10 * (fx * gy) + v11 * (fx * fy)


def interpolate_values(values: np.ndarray, grid: Grid, points: np.ndarray, check: bool = True) -> np.ndarray:
    """Multilinear interpolation of an array sampled on `grid` at `points`."""
    return apply_interp(values, prepare_interp(grid, points, check=check))


def probe_amplitude(field: ComplexField, point) -> complex:
    """Field amplitude at a point, multilinear between neighbouring nodes."""
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    return complex(interpolate_values(field.values, field.grid, pt[None, :])[0])


def spectral_gradient(field: ComplexField) -> tuple[np.ndarray, ...]:
    """Per-axis derivative arrays via ik multiplication in Fourier space."""
    grid = field.grid
    ft = np.fft.fftn(field.values)
    grads = []
    for axis, ax in enumerate(grid.axes):
        k = ax.wavenumbers()
        shape = [1] * grid.dims
        shape[axis] = ax.n
        grads.append(np.fft.ifftn(1j * k.reshape(shape) * ft))
    return tuple(grads)


def shift_field(field: ComplexField, delta: float, axis: int = 0) -> ComplexField:
    """Exact spectral translation psi(x) -> psi(x - delta) along one axis."""
    grid = field.grid
    k = grid.axes[axis].wavenumbers()
    shape = [1] * grid.dims
    shape[axis] = grid.axes[axis].n
    ft = np.fft.fftn(field.values)
    shifted = np.fft.ifftn(np.exp(-1j * k.reshape(shape) * delta) * ft)
    return ComplexField(grid, shifted)


def _density_1d(field: ComplexField, axis: int) -> np.ndarray:
    rho = field.values.real**2 + field.values.imag**2
    if field.grid.dims == 2:
        other = 1 - axis
        rho = np.sum(rho, axis=other) * field.grid.axes[other].dx
    return rho


def position_expectation(field: ComplexField, axis: int = 0) -> float:
    rho = _density_1d(field, axis)
    x = field.grid.coords(axis)
    dx = field.grid.axes[axis].dx
    total = np.sum(rho) * dx
    return float(np.sum(x * rho) * dx / total)


def position_variance(field: ComplexField, axis: int = 0) -> float:
    rho = _density_1d(field, axis)
    x = field.grid.coords(axis)
    dx = field.grid.axes[axis].dx
    total = np.sum(rho) * dx
    mean = np.sum(x * rho) * dx / total
    return float(np.sum((x - mean) ** 2 * rho) * dx / total)


def momentum_expectation(field: ComplexField, axis: int = 0) -> float:
    """<p> along one axis from the spectral power distribution."""
    ft = np.fft.fftn(field.values)
    power = ft.real**2 + ft.imag**2
    k = field.grid.axes[axis].wavenumbers()
    if field.grid.dims == 2:
        other = 1 - axis
        power = np.sum(power, axis=other)
    total = np.sum(power)
    return float(np.sum(k * power) / total)


def momentum_spread(field: ComplexField, axis: int = 0) -> float:
    """Standard deviation of momentum along one axis."""
    ft = np.fft.fftn(field.values)
    power = ft.real**2 + ft.imag**2
    k = field.grid.axes[axis].wavenumbers()
    if field.grid.dims == 2:
        other = 1 - axis
        power = np.sum(power, axis=other)
    total = np.sum(power)
    mean = np.sum(k * power) / total
    return float(np.sqrt(np.sum((k - mean) ** 2 * power) / total))
