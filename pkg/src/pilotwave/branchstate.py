"""Configuration-space wavefunctions as sums of weighted product branches.

A BranchState is  Psi = sum_b c_b * prod_f field_f  where each factor f
covers one or two named subsystems and the factor sets of a branch
partition the subsystem registry.  Factors are kept normalized so the
coefficients carry all the weight.  Cross terms between branches are
retained everywhere (Gram-matrix norms, probe expectations, marginal
densities), so overlapping branches are handled exactly.

States are immutable snapshots; evolution and interactions return new
states, which makes them safe to share across trajectory workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fields import (
    ComplexField,
    Grid,
    interpolate_values,
    norm2,
    split_step,
    support_overlap,
)

__all__ = [
    "MIXED",
    "SubsystemId",
    "Factor",
    "Branch",
    "BranchState",
    "NodeConfigurationError",
    "total_amplitude",
    "gradient_amplitude",
    "occupied_branch",
    "occupied_branch_block",
    "evolve_free",
    "branch_weights",
    "prune",
    "probe_expectation",
    "marginal_density",
    "pairwise_disjoint",
]

# Sentinel occupancy index when no branch dominates at a configuration.
MIXED = -1

# Overlap mass below which two branches count as disjoint in a subsystem.
EPS_DISJOINT = 1e-6

# Dominance threshold for occupied_branch: the winning branch must carry
# (1 - eps) of the local branch-summed density.
EPS_OCCUPANCY = 1e-3

# A configuration is a node when the local density falls below this
# fraction of the state's density scale.
EPS_NODE = 1e-12


class NodeConfigurationError(RuntimeError):
    """Local density too small to resolve amplitudes at a configuration."""


@dataclass(frozen=True)
class SubsystemId:
    name: str
    grid: Grid
    mass: float = 1.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")


class Factor:
    """A normalized field over the product grid of 1 or 2 subsystems."""

    __slots__ = ("subsystems", "field", "_grads")

    def __init__(self, subsystems, field: ComplexField):
        subsystems = tuple(subsystems)
        if len(subsystems) not in (1, 2):
            raise ValueError("factors cover one or two subsystems")
        self.subsystems = subsystems
        self.field = field
        self._grads = None

    @property
    def dims(self) -> int:
        return self.field.grid.dims


@dataclass(frozen=True)
class Branch:
    coeff: complex
    factors: tuple[Factor, ...]
    label: str = ""

    def factor_of(self, name: str) -> Factor:
        for f in self.factors:
            if name in f.subsystems:
                return f
        raise KeyError(f"subsystem {name!r} not in branch")


def _normalized_branch(coeff, factors, label="") -> Branch:
    """Fold factor norms into the coefficient so every factor is unit-norm."""
    c = complex(coeff)
    fs = []
    for f in factors:
        n2 = norm2(f.field)
        if n2 <= 0:
            raise ValueError("null factor")
        scale = np.sqrt(n2)
        c *= scale
        if abs(scale - 1.0) > 1e-14:
            f = Factor(f.subsystems, ComplexField(f.field.grid, f.field.values / scale))
        fs.append(f)
    return Branch(coeff=c, factors=tuple(fs), label=label)


@dataclass(frozen=True)
class BranchState:
    subsystems: dict[str, SubsystemId]
    branches: tuple[Branch, ...]
    t: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.branches:
            raise ValueError("a state needs at least one branch")
        names = set(self.subsystems)
        axis_count = {}
        for name, sub in self.subsystems.items():
            if sub.name != name:
                raise ValueError("registry key must equal the subsystem name")
            axis_count[name] = sub.grid.dims
        for b in self.branches:
            covered = []
            for f in b.factors:
                covered.extend(f.subsystems)
                expected = sum(axis_count[s] for s in f.subsystems)
                if f.field.grid.dims != expected:
                    raise ValueError(
                        f"factor over {f.subsystems} has {f.field.grid.dims} dims, expected {expected}"
                    )
            if sorted(covered) != sorted(names):
                raise ValueError(
                    f"branch factors cover {sorted(covered)}, registry has {sorted(names)}"
                )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.subsystems)

    def norm2(self) -> float:
        """Total norm including cross terms via the branch Gram matrix."""
        total = 0.0 + 0.0j
        for i, bi in enumerate(self.branches):
            for j, bj in enumerate(self.branches):
                total += np.conj(bi.coeff) * bj.coeff * _pair_contract(self, bi, bj)
        return float(total.real)

    def density_scale(self) -> float:
        """Upper bound on the branch-summed density, used for node thresholds."""
        key = "density_scale"
        if key not in self._cache:
            best = 0.0
            for b in self.branches:
                peak = abs(b.coeff) ** 2
                for f in b.factors:
                    peak *= float(np.max(np.abs(f.field.values))) ** 2
                best = max(best, peak)
            self._cache[key] = best
        return self._cache[key]

    def with_branches(self, branches, t=None) -> "BranchState":
        return BranchState(
            subsystems=self.subsystems,
            branches=tuple(branches),
            t=self.t if t is None else t,
        )


# ---------------------------------------------------------------------------
# contraction kernel
#
# Inner products, probe expectations and marginal densities between two
# branches are all contractions of a small tensor network: every factor is
# a tensor with one index per subsystem axis, bra-side tensors conjugated.
# Each subsystem axis is either summed against the other branch (weight dx),
# evaluated at a probe point (contracted with interpolation weights on each
# side separately), or kept open (marginal diagonal).
# ---------------------------------------------------------------------------


def _axis_names(state: BranchState):
    """Stable list of (subsystem, axis_index_within_subsystem)."""
    out = []
    for name, sub in state.subsystems.items():
        for a in range(sub.grid.dims):
            out.append((name, a))
    return out


def _point_weight_vectors(grid: Grid, point) -> list[np.ndarray]:
    """Per-axis interpolation weight vectors representing evaluation at point."""
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    vecs = []
    for axis, ax in enumerate(grid.axes):
        x = pt[axis]
        if not (ax.x_min <= x < ax.x_max):
            raise ValueError("probe point outside grid")
        u = (x - ax.x_min) / ax.dx
        j0 = int(np.floor(u))
        frac = u - j0
        j0 = min(j0, ax.n - 1)
        w = np.zeros(ax.n)
        w[j0] += 1.0 - frac
        w[(j0 + 1) % ax.n] += frac
        vecs.append(w)
    return vecs


def _pair_contract(state, bra: Branch, ket: Branch, probe=None, keep=None):
    """Contract conj(bra) x ket over all subsystem axes.

    probe: optional {name: weight-vector-list} evaluating those subsystems
    at a point on each side separately (no dx weight).
    keep: optional subsystem name whose axes stay open (shared between the
    two sides), returning an array; used for marginal densities.
    """
    probe = probe or {}
    axes = _axis_names(state)
    shared = {}   # (name, axis) -> einsum index for summed/kept axes
    next_idx = 0
    operands = []
    subscripts = []
    out_indices = []

    def factor_indices(factor: Factor, side: str):
        nonlocal next_idx
        idx = []
        pos = 0
        for s in factor.subsystems:
            sub_dims = state.subsystems[s].grid.dims
            for a in range(sub_dims):
                key = (s, a)
                if s in probe:
                    # evaluated axis: independent index per side, tied to weights
                    idx_val = next_idx
                    next_idx += 1
                    operands.append(probe[s][a])
                    subscripts.append([idx_val])
                    idx.append(idx_val)
                elif keep is not None and s == keep:
                    if key not in shared:
                        shared[key] = next_idx
                        out_indices.append(next_idx)
                        next_idx += 1
                    idx.append(shared[key])
                else:
                    if key not in shared:
                        shared[key] = next_idx
                        next_idx += 1
                    idx.append(shared[key])
                pos += 1
        return idx

    for f in bra.factors:
        operands.append(np.conj(f.field.values))
        subscripts.append(factor_indices(f, "bra"))
    for f in ket.factors:
        operands.append(f.field.values)
        subscripts.append(factor_indices(f, "ket"))

    args = []
    for op, sub in zip(operands, subscripts):
        args.extend([op, sub])
    args.append(out_indices)
    result = np.einsum(*args, optimize=True)

    # one dx per summed axis; kept and probed axes carry no measure weight
    weight = 1.0
    for (s, a), _ in shared.items():
        if keep is not None and s == keep:
            continue
        weight *= state.subsystems[s].grid.axes[a].dx
    return result * weight


# ---------------------------------------------------------------------------
# amplitude evaluation
# ---------------------------------------------------------------------------


def _positions_block(state: BranchState, config) -> dict[str, np.ndarray]:
    """Normalize a configuration (or block of m configurations) to arrays (m, dims)."""
    out = {}
    for name, sub in state.subsystems.items():
        if name not in config:
            raise KeyError(f"configuration missing subsystem {name!r}")
        pos = np.atleast_1d(np.asarray(config[name], dtype=float))
        if pos.ndim == 1:
            if sub.grid.dims == 1:
                pos = pos[:, None]
            else:
                pos = pos[None, :]
        if pos.shape[1] != sub.grid.dims:
            raise ValueError(f"subsystem {name!r} expects {sub.grid.dims} coordinates")
        out[name] = pos
    sizes = {v.shape[0] for v in out.values()}
    if len(sizes) != 1:
        raise ValueError("inconsistent block sizes across subsystems")
    return out


def _factor_points(factor: Factor, positions: dict[str, np.ndarray]) -> np.ndarray:
    cols = [positions[s] for s in factor.subsystems]
    return cols[0] if len(cols) == 1 else np.concatenate(cols, axis=1)


def branch_amplitudes_block(
    state: BranchState, positions: dict[str, np.ndarray], check: bool = True
) -> np.ndarray:
    """Array (n_branches, m) of c_b * prod_f f(points)."""
    from .fields import apply_interp, prepare_interp

    m = next(iter(positions.values())).shape[0]
    amps = np.empty((len(state.branches), m), dtype=np.complex128)
    for i, b in enumerate(state.branches):
        acc = np.full(m, b.coeff, dtype=np.complex128)
        for f in b.factors:
            pts = _factor_points(f, positions)
            acc = acc * apply_interp(f.field.values, prepare_interp(f.field.grid, pts, check=check))
        amps[i] = acc
    return amps


def amplitudes_and_gradients_block(state: BranchState, positions: dict[str, np.ndarray]):
    """One-pass evaluation of Psi and its per-subsystem gradients at a block.

    Returns (psi (m,), grads {name: (m, dims)}).  Each factor is stenciled
    once and its value/derivative arrays share the stencil; the product
    rule is applied with explicit prod-excluding-one products so factor
    zeros never divide.
    """
    from .fields import apply_interp, prepare_interp

    m = next(iter(positions.values())).shape[0]
    psi = np.zeros(m, dtype=np.complex128)
    grads = {
        name: np.zeros((m, sub.grid.dims), dtype=np.complex128)
        for name, sub in state.subsystems.items()
    }
    for b in state.branches:
        vals, gvals = [], []
        for f in b.factors:
            pts = _factor_points(f, positions)
            st = prepare_interp(f.field.grid, pts, check=False)
            vals.append(apply_interp(f.field.values, st))
            gvals.append([apply_interp(g, st) for g in _factor_gradients(f)])
        amp = b.coeff * np.prod(vals, axis=0) if vals else np.full(m, b.coeff)
        psi += amp
        for fi, f in enumerate(b.factors):
            rest = np.full(m, b.coeff, dtype=np.complex128)
            for fj, v in enumerate(vals):
                if fj != fi:
                    rest = rest * v
            axis0 = 0
            for s in f.subsystems:
                sub_dims = state.subsystems[s].grid.dims
                for a in range(sub_dims):
                    grads[s][:, a] += rest * gvals[fi][axis0 + a]
                axis0 += sub_dims
    return psi, grads


def total_amplitude(state: BranchState, config) -> complex:
    """Psi evaluated at one configuration point."""
    positions = _positions_block(state, config)
    return complex(np.sum(branch_amplitudes_block(state, positions)[:, 0]))


def _factor_gradients(factor: Factor) -> tuple[np.ndarray, ...]:
    if factor._grads is None:
        from .fields import spectral_gradient

        factor._grads = spectral_gradient(factor.field)
    return factor._grads


def gradient_amplitude_block(state: BranchState, positions: dict[str, np.ndarray], name: str) -> np.ndarray:
    """(m, dims) array of d(Psi)/d(subsystem axes) via per-factor spectral derivatives."""
    sub = state.subsystems[name]
    m = next(iter(positions.values())).shape[0]
    grad = np.zeros((m, sub.grid.dims), dtype=np.complex128)
    for b in state.branches:
        target = b.factor_of(name)
        rest = np.full(m, b.coeff, dtype=np.complex128)
        for f in b.factors:
            if f is target:
                continue
            rest = rest * interpolate_values(f.field.values, f.field.grid, _factor_points(f, positions))
        pts = _factor_points(target, positions)
        offset = target.subsystems.index(name)
        axis0 = sum(state.subsystems[s].grid.dims for s in target.subsystems[:offset])
        grads = _factor_gradients(target)
        for a in range(sub.grid.dims):
            gvals = interpolate_values(grads[axis0 + a], target.field.grid, pts)
            grad[:, a] += rest * gvals
    return grad


def gradient_amplitude(state: BranchState, config, subsystem: str) -> np.ndarray:
    """Gradient of Psi with respect to one subsystem's coordinates at a point."""
    positions = _positions_block(state, config)
    return gradient_amplitude_block(state, positions, subsystem)[0]


def occupied_branch_block(state: BranchState, positions: dict[str, np.ndarray], eps: float = EPS_OCCUPANCY) -> np.ndarray:
    """Occupancy index per configuration; MIXED where no branch dominates.

    A configuration sitting below the node threshold of the whole state
    gets MIXED as well (callers that need a hard error use occupied_branch).
    """
    amps = branch_amplitudes_block(state, positions)
    dens = amps.real**2 + amps.imag**2
    total = np.sum(dens, axis=0)
    winner = np.argmax(dens, axis=0)
    best = np.take_along_axis(dens, winner[None, :], axis=0)[0]
    out = np.where(best > (1.0 - eps) * total, winner, MIXED).astype(np.int64)
    node = total < EPS_NODE * state.density_scale()
    out[node] = MIXED
    return out


def occupied_branch(state: BranchState, config, eps: float = EPS_OCCUPANCY):
    """Index of the branch holding the configuration, or MIXED.

    Raises NodeConfigurationError when the local density is below the node
    threshold of the state (a global node; emptiness is then undefined).
    """
    positions = _positions_block(state, config)
    amps = branch_amplitudes_block(state, positions)[:, 0]
    dens = amps.real**2 + amps.imag**2
    total = float(np.sum(dens))
    if total < EPS_NODE * state.density_scale():
        raise NodeConfigurationError("node configuration: local density below threshold")
    best = int(np.argmax(dens))
    if dens[best] > (1.0 - eps) * total:
        return best
    return MIXED


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------


def _factor_potential(factor: Factor, state: BranchState, potentials, t: float):
    """Assemble the sampled potential for one factor (None when free)."""
    if not potentials:
        return None
    grid = factor.field.grid
    parts = []
    for axis_offset, s in enumerate(factor.subsystems):
        v = potentials.get(s)
        if v is None:
            continue
        sub_grid = state.subsystems[s].grid
        arr = np.asarray(v(t) if callable(v) else v, dtype=float)
        if arr.shape != sub_grid.shape:
            raise ValueError(f"potential for {s!r} does not match its grid")
        if factor.dims == 2 and sub_grid.dims == 1:
            shape = [1, 1]
            shape[axis_offset] = arr.shape[0]
            arr = arr.reshape(shape)
        parts.append(np.broadcast_to(arr, grid.shape))
    if len(factor.subsystems) == 2:
        joint = potentials.get(tuple(factor.subsystems))
        if joint is not None:
            arr = np.asarray(joint(t) if callable(joint) else joint, dtype=float)
            if arr.shape != grid.shape:
                raise ValueError("joint potential does not match the factor grid")
            parts.append(arr)
    if not parts:
        return None
    total = parts[0].copy()
    for p in parts[1:]:
        total = total + p
    return total


def _factor_masses(factor: Factor, state: BranchState):
    masses = []
    for s in factor.subsystems:
        sub = state.subsystems[s]
        masses.extend([sub.mass] * sub.grid.dims)
    return tuple(masses)


def evolve_free(state: BranchState, dt: float, n_steps: int, potentials=None) -> BranchState:
    """Advance every factor of every branch under its own Hamiltonian.

    `potentials` is keyed by subsystem name (array or callable t->array) and
    optionally by a 2-subsystem tuple for a joint term.  Coefficients are
    unchanged.  Identical factor objects shared between branches are
    propagated once and stay shared.
    """
    if n_steps == 0 or dt == 0.0:
        return state
    cache: dict[int, Factor] = {}
    new_branches = []
    for b in state.branches:
        fs = []
        for f in b.factors:
            key = id(f)
            if key not in cache:
                v = _factor_potential(f, state, potentials or {}, state.t)
                vt = None
                if potentials and any(
                    callable(potentials.get(s)) for s in f.subsystems
                ):
                    # re-sample per step for time-dependent potentials
                    vt = lambda t, f=f: _factor_potential(f, state, potentials, t)
                new_field = split_step(
                    f.field,
                    vt if vt is not None else v,
                    dt,
                    n_steps,
                    mass=_factor_masses(f, state),
                    t0=state.t,
                )
                cache[key] = Factor(f.subsystems, new_field)
            fs.append(cache[key])
        new_branches.append(Branch(coeff=b.coeff, factors=tuple(fs), label=b.label))
    return state.with_branches(new_branches, t=state.t + dt * n_steps)


# ---------------------------------------------------------------------------
# branch structure queries
# ---------------------------------------------------------------------------


def subsystem_profile(state: BranchState, branch: Branch, name: str) -> np.ndarray:
    """Nonnegative amplitude profile of one subsystem within a branch.

    For a lone 1D/2D factor this is |field|; for a subsystem inside a
    2-subsystem factor it is the square root of the marginal density.
    """
    f = branch.factor_of(name)
    if len(f.subsystems) == 1:
        return np.abs(f.field.values)
    axis = f.subsystems.index(name)
    other = 1 - axis
    rho = f.field.values.real**2 + f.field.values.imag**2
    marg = np.sum(rho, axis=other) * f.field.grid.axes[other].dx
    return np.sqrt(marg)


def _branches_disjoint(state: BranchState, b1: Branch, b2: Branch, eps: float = EPS_DISJOINT) -> bool:
    """True when the two branches are disjoint in at least one subsystem."""
    for name, sub in state.subsystems.items():
        p1 = subsystem_profile(state, b1, name)
        p2 = subsystem_profile(state, b2, name)
        mass = float(np.sum(p1 * p2) * sub.grid.cell_volume)
        if mass < eps:
            return True
    return False


def pairwise_disjoint(state: BranchState, eps: float = EPS_DISJOINT) -> bool:
    n = len(state.branches)
    for i in range(n):
        for j in range(i + 1, n):
            if not _branches_disjoint(state, state.branches[i], state.branches[j], eps):
                return False
    return True


def branch_weights(state: BranchState) -> list[float]:
    """|c_b|^2 normalized to 1; requires pairwise disjoint branches."""
    if len(state.branches) > 1 and not pairwise_disjoint(state):
        raise ValueError(
            "branch weights undefined: branches overlap in every subsystem (cross terms matter)"
        )
    w = np.array([abs(b.coeff) ** 2 for b in state.branches])
    return list(w / np.sum(w))


def prune(state: BranchState, eta: float, config=None, renormalize: bool = False) -> BranchState:
    """Drop branches with |c|^2 below eta; refuses to drop the occupied branch."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    occupied = None
    if config is not None:
        occupied = occupied_branch(state, config)
    keep, dropped = [], 0.0
    for i, b in enumerate(state.branches):
        w = abs(b.coeff) ** 2
        if w < eta:
            if occupied is not None and i == occupied:
                raise ValueError("refusing to prune the occupied branch")
            dropped += w
            continue
        keep.append(b)
    if not keep:
        raise ValueError("pruning removed every branch")
    if dropped > 0:
        import logging

        logging.getLogger(__name__).info("prune dropped %d branch(es), mass %.3e", len(state.branches) - len(keep), dropped)
    if renormalize and dropped > 0:
        total = np.sqrt(sum(abs(b.coeff) ** 2 for b in keep))
        keep = [replace(b, coeff=b.coeff / total) for b in keep]
    return state.with_branches(keep)


# ---------------------------------------------------------------------------
# expectations
# ---------------------------------------------------------------------------


def probe_expectation(state: BranchState, probe_point: dict[str, float], convention: str = "full") -> float:
    """Density expectation of the point projector at probe_point.

    probe_point maps a subset of subsystem names to coordinates.  The
    "full" convention is the expectation in the whole state (coefficients
    and cross terms included, unprobed subsystems traced out); "bare" sums
    |prod_f f(point)|^2 over branches without coefficients, which requires
    every probed factor to lie entirely inside the probed subsystem set.
    """
    weights = {}
    for name, pt in probe_point.items():
        sub = state.subsystems[name]
        weights[name] = _point_weight_vectors(sub.grid, pt)

    if convention == "bare":
        total = 0.0
        for b in state.branches:
            amp = 1.0 + 0.0j
            for f in b.factors:
                probed = [s in probe_point for s in f.subsystems]
                if not any(probed):
                    continue
                if not all(probed):
                    raise ValueError(
                        "bare convention undefined: a factor straddles probed and unprobed subsystems"
                    )
                pts = np.array([[probe_point[s] for s in f.subsystems]], dtype=float).reshape(1, -1)
                amp *= interpolate_values(f.field.values, f.field.grid, pts)[0]
            total += abs(amp) ** 2
        return float(total)

    if convention != "full":
        raise ValueError(f"unknown convention {convention!r}")
    total = 0.0 + 0.0j
    for bi in state.branches:
        for bj in state.branches:
            total += np.conj(bi.coeff) * bj.coeff * _pair_contract(state, bi, bj, probe=weights)
    return float(total.real)


def marginal_density(state: BranchState, name: str) -> np.ndarray:
    """Position density of one subsystem with all others traced out."""
    sub = state.subsystems[name]
    out = np.zeros(sub.grid.shape, dtype=np.complex128)
    for bi in state.branches:
        for bj in state.branches:
            out += np.conj(bi.coeff) * bj.coeff * _pair_contract(state, bi, bj, keep=name)
    return np.maximum(out.real, 0.0)
