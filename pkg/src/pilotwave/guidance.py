"""Bohmian guidance: velocity fields, trajectory integration, ensembles.

The particle velocity is v_i = Im(grad_i Psi / Psi) / m_i, evaluated by
interpolating per-factor spectral derivatives.  Ensembles are integrated
with classical RK4 through a rolling sequence of state snapshots at
half-step resolution, so every trajectory sees identical fields and the
result is independent of how the work is scheduled.

Near wavefunction nodes the velocity is regularized (density floor and a
speed cap) and the step is retried at recursively halved dt; affected
trajectories carry a node_events count so they can be excluded in
sensitivity checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .branchstate import (
    EPS_NODE,
    MIXED,
    BranchState,
    NodeConfigurationError,
    amplitudes_and_gradients_block,
    occupied_branch_block,
    _positions_block,
)

__all__ = [
    "Configuration",
    "Trajectory",
    "EnsembleStats",
    "EnsembleResult",
    "ScheduledEvent",
    "ProtectiveWindow",
    "MeasurementHook",
    "CompiledScenario",
    "velocity",
    "step_trajectory",
    "sample_initial",
    "run_ensemble",
    "no_crossing_check",
    "StateTriple",
]

_NODE_MAX_DEPTH = 8
_SPEED_CAP_FACTOR = 10.0


@dataclass(frozen=True)
class Configuration:
    """Positions of all subsystem coordinates at one instant."""

    positions: dict[str, np.ndarray]
    t: float = 0.0


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (n_times, total_dims), packed in registry order
    layout: tuple[tuple[str, int], ...]
    node_events: int = 0
    boundary: bool = False

    def coordinate(self, name: str) -> np.ndarray:
        off = 0
        for nm, d in self.layout:
            if nm == name:
                return self.positions[:, off : off + d]
            off += d
        raise KeyError(name)


@dataclass
class EnsembleStats:
    n: int
    seed: int
    arrival_counts: dict[str, int]
    path_counts: dict[str, dict[str, int]]
    node_events: int
    boundary_count: int
    mixed_final: int
    histograms: dict[str, tuple[list[float], list[int]]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# velocity evaluation
# ---------------------------------------------------------------------------


def _layout(state: BranchState):
    return tuple((name, sub.grid.dims) for name, sub in state.subsystems.items())


def _pack(layout, positions: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([positions[name] for name, _ in layout], axis=1)


def _unpack(layout, packed: np.ndarray) -> dict[str, np.ndarray]:
    out, off = {}, 0
    for name, d in layout:
        out[name] = packed[:, off : off + d]
        off += d
    return out


def _clip_to_grids(state: BranchState, packed: np.ndarray) -> np.ndarray:
    """Clamp positions just inside each axis so stage evaluations stay legal."""
    out = packed.copy()
    off = 0
    for name, sub in state.subsystems.items():
        for a, ax in enumerate(sub.grid.axes):
            hi = ax.x_max - 1e-9 * ax.span
            out[:, off + a] = np.clip(out[:, off + a], ax.x_min, hi)
        off += sub.grid.dims
    return out


def velocity_block(state: BranchState, packed: np.ndarray):
    """Velocities for a block of packed configurations.

    Returns (velocities (m, D), node_mask (m,)).  Node points get a
    density-floored, finite velocity; the caller decides how to react.
    """
    layout = _layout(state)
    positions = _unpack(layout, packed)
    psi, grads = amplitudes_and_gradients_block(state, positions)
    dens = psi.real**2 + psi.imag**2
    floor = EPS_NODE * state.density_scale()
    node = dens < floor
    denom = (dens + floor)[:, None]
    conj_psi = np.conj(psi)[:, None]
    vel = np.empty_like(packed)
    off = 0
    for name, sub in state.subsystems.items():
        # Im(grad/psi) = Im(grad * conj(psi)) / |psi|^2
        num = grads[name] * conj_psi
        vel[:, off : off + sub.grid.dims] = num.imag / denom / sub.mass
        off += sub.grid.dims
    return vel, node


def velocity(state: BranchState, config) -> dict[str, np.ndarray]:
    """Guidance velocity at one configuration; raises at a node."""
    positions = _positions_block(state, config)
    layout = _layout(state)
    packed = _pack(layout, positions)
    vel, node = velocity_block(state, packed)
    if node[0]:
        raise NodeConfigurationError("node configuration: velocity undefined")
    return {name: vel[0, off : off + d] for (name, d), off in zip(layout, _offsets(layout))}


def _offsets(layout):
    offs, off = [], 0
    for _, d in layout:
        offs.append(off)
        off += d
    return offs


def _speed_caps(state: BranchState, dt_scenario: float) -> np.ndarray:
    caps = []
    for name, sub in state.subsystems.items():
        span = max(ax.span for ax in sub.grid.axes)
        caps.extend([_SPEED_CAP_FACTOR * span / dt_scenario] * sub.grid.dims)
    return np.asarray(caps)


def _capped(vel: np.ndarray, caps: np.ndarray) -> np.ndarray:
    return np.clip(vel, -caps, caps)


# ---------------------------------------------------------------------------
# RK4 stepping through snapshots
# ---------------------------------------------------------------------------


@dataclass
class StateTriple:
    """States at the start, midpoint, and end of one integrator step."""

    t0: float
    dt: float
    states: tuple[BranchState, BranchState, BranchState]

    def nearest(self, t: float) -> BranchState:
        h = self.dt / 2.0
        idx = int(round((t - self.t0) / h))
        return self.states[min(max(idx, 0), 2)]


def _rk4_block(triple: StateTriple, packed: np.ndarray, t0: float, dt: float, caps):
    """One RK4 step for a block.

    Returns (new packed, node-seen mask, dead mask).  "Dead" trajectories
    hit the density floor at every stage (a region with no wave at all,
    e.g. after a control run removed their branch); halving dt cannot help
    there, so they are excluded from refinement.
    """
    s_for = triple.nearest
    node_any = np.zeros(packed.shape[0], dtype=bool)
    node_all = np.ones(packed.shape[0], dtype=bool)

    def stage(state, pts):
        nonlocal node_any, node_all
        v, node = velocity_block(state, _clip_to_grids(state, pts))
        node_any |= node
        node_all &= node
        return _capped(v, caps)

    k1 = stage(s_for(t0), packed)
    k2 = stage(s_for(t0 + dt / 2), packed + (dt / 2) * k1)
    k3 = stage(s_for(t0 + dt / 2), packed + (dt / 2) * k2)
    k4 = stage(s_for(t0 + dt), packed + dt * k3)
    return packed + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), node_any, node_all


def _rk4_refined(triple: StateTriple, packed: np.ndarray, t0: float, dt: float, caps, depth: int):
    """Recursive dt-halving for node passages (capped velocities at the floor)."""
    new, node, dead = _rk4_block(triple, packed, t0, dt, caps)
    mask = node & ~dead
    if not np.any(mask) or depth >= _NODE_MAX_DEPTH:
        return new
    half = dt / 2.0
    sub = packed[mask]
    sub = _rk4_refined(triple, sub, t0, half, caps, depth + 1)
    sub = _rk4_refined(triple, sub, t0 + half, half, caps, depth + 1)
    out = new.copy()
    out[mask] = sub
    return out


def step_trajectory(series, config: Configuration, dt: float) -> Configuration:
    """Advance one configuration by dt through a StateTriple (or provider).

    `series` is a StateTriple covering [t, t+dt], or any object with a
    window(t, dt) method returning one.
    """
    triple = series if isinstance(series, StateTriple) else series.window(config.t, dt)
    state = triple.states[0]
    lay = _layout(state)
    packed = _pack(lay, _positions_block(state, config.positions))
    caps = _speed_caps(state, dt)
    new, node, dead = _rk4_block(triple, packed, config.t, dt, caps)
    if np.any(node & ~dead):
        new = _rk4_refined(triple, packed, config.t, dt, caps, depth=1)
    positions = {name: new[0, off : off + d].copy() for (name, d), off in zip(lay, _offsets(lay))}
    return Configuration(positions=positions, t=config.t + dt)


# ---------------------------------------------------------------------------
# initial-ensemble sampling
# ---------------------------------------------------------------------------


def _trapezoid_cdf(density: np.ndarray, dx: float) -> np.ndarray:
    seg = 0.5 * (density[1:] + density[:-1]) * dx
    cdf = np.concatenate([[0.0], np.cumsum(seg)])
    return cdf / cdf[-1]


def _invert_cdf(cdf: np.ndarray, coords: np.ndarray, u: float) -> float:
    k = int(np.searchsorted(cdf, u, side="right")) - 1
    k = min(max(k, 0), len(cdf) - 2)
    width = cdf[k + 1] - cdf[k]
    frac = 0.0 if width <= 0 else (u - cdf[k]) / width
    return float(coords[k] + frac * (coords[k + 1] - coords[k]))


def _sampling_densities(state: BranchState) -> dict[str, np.ndarray]:
    """Per-subsystem densities when the initial wavefunction factorizes.

    Allowed forms: a single all-product branch, or several branches whose
    factors agree everywhere except in one subsystem (the total state then
    factorizes with a coherent sum on that subsystem).
    """
    for b in state.branches:
        for f in b.factors:
            if len(f.subsystems) > 1:
                raise ValueError("sampling requires product initial state")
    names = list(state.subsystems)
    if len(state.branches) == 1:
        b = state.branches[0]
        return {s: np.abs(b.factor_of(s).field.values) ** 2 for s in names}
    varying = []
    for s in names:
        ref = state.branches[0].factor_of(s).field.values
        if not all(np.array_equal(b.factor_of(s).field.values, ref) for b in state.branches[1:]):
            varying.append(s)
    if len(varying) > 1:
        raise ValueError("sampling requires product initial state")
    out = {}
    for s in names:
        if varying and s == varying[0]:
            acc = sum(b.coeff * b.factor_of(s).field.values for b in state.branches)
            rho = np.abs(acc) ** 2
        else:
            rho = np.abs(state.branches[0].factor_of(s).field.values) ** 2
        total = np.sum(rho) * state.subsystems[s].grid.cell_volume
        out[s] = rho / total
    return out


def _draw_subsystem(density: np.ndarray, grid, rng) -> np.ndarray:
    if grid.dims == 1:
        cdf = _trapezoid_cdf(density, grid.axes[0].dx)
        return np.array([_invert_cdf(cdf, grid.coords(0), rng.random())])
    # 2D: marginal along axis 0, then the conditional slice blended
    # linearly between the two neighbouring grid columns.
    dx0, dx1 = grid.axes[0].dx, grid.axes[1].dx
    marg = np.trapz(density, dx=dx1, axis=1)
    cdf0 = _trapezoid_cdf(marg, dx0)
    x0 = _invert_cdf(cdf0, grid.coords(0), rng.random())
    u = (x0 - grid.axes[0].x_min) / dx0
    j = min(int(np.floor(u)), grid.axes[0].n - 2)
    a = u - j
    cond = (1.0 - a) * density[j, :] + a * density[j + 1, :]
    if np.sum(cond) <= 0:
        cond = marg * 0 + 1.0
    cdf1 = _trapezoid_cdf(cond, dx1)
    x1 = _invert_cdf(cdf1, grid.coords(1), rng.random())
    return np.array([x0, x1])


def sample_initial(state: BranchState, n: int, seed: int) -> dict[str, np.ndarray]:
    """n configurations drawn from the initial-state density.

    Each subsystem is sampled by inverse-CDF on its grid (trapezoid
    cumulative, linear inversion).  Trajectory i uses its own generator
    seeded with seed ^ i, so the draw is independent of batching.
    """
    densities = _sampling_densities(state)
    layout = _layout(state)
    out = {name: np.empty((n, d)) for name, d in layout}
    for i in range(n):
        rng = np.random.default_rng(seed ^ i)
        for name, sub in state.subsystems.items():
            out[name][i] = _draw_subsystem(densities[name], sub.grid, rng)
    return out


# ---------------------------------------------------------------------------
# compiled-scenario execution
# ---------------------------------------------------------------------------


@dataclass
class ScheduledEvent:
    """State transformation applied at a step boundary.

    `transform` maps state -> state; `kick` optionally moves trajectory
    coordinates in the impulsive limit of the same interaction (positions
    dict mutated in place, given the pre-event state).
    """

    step: int
    transform: object
    kick: object = None
    label: str = ""


@dataclass
class ProtectiveWindow:
    """Half-open step interval [start, end) driven by protective_phase."""

    start: int
    end: int
    coupling: object
    key: str = "protective"


@dataclass
class MeasurementHook:
    step: int
    name: str
    fn: object


@dataclass
class CompiledScenario:
    name: str
    state0: BranchState
    dt: float
    n_steps: int
    potentials: dict | None = None
    events: list[ScheduledEvent] = field(default_factory=list)
    windows: list[ProtectiveWindow] = field(default_factory=list)
    hooks: list[MeasurementHook] = field(default_factory=list)
    snapshot_steps: tuple[int, ...] = ()


@dataclass
class EnsembleResult:
    times: np.ndarray
    layout: tuple[tuple[str, int], ...]
    positions: np.ndarray      # (n, n_steps+1, total_dims)
    occupancy: np.ndarray      # (n, n_steps+1), MIXED where undecided
    branch_labels: tuple[str, ...]
    node_events: np.ndarray
    boundary: np.ndarray
    final_state: BranchState
    measurements: dict[str, float]
    quadratures: dict[str, float]
    snapshots: dict[int, BranchState]
    initial_state: BranchState
    sampled_positions: np.ndarray = None  # (n, total_dims) pre-event draw

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def coordinate(self, name: str) -> np.ndarray:
        off = 0
        for nm, d in self.layout:
            if nm == name:
                return self.positions[:, :, off : off + d]
            off += d
        raise KeyError(name)

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            times=self.times,
            positions=self.positions[i],
            layout=self.layout,
            node_events=int(self.node_events[i]),
            boundary=bool(self.boundary[i]),
        )


def _advance_half(compiled: CompiledScenario, state: BranchState, half_index: int, quadratures):
    """One half-step of state propagation, protective windows included."""
    from .interactions import protective_phase

    h = compiled.dt / 2.0
    for w in compiled.windows:
        if 2 * w.start <= half_index < 2 * w.end:
            state, rec = protective_phase(state, w.coupling, h)
            quadratures[w.key] = quadratures.get(w.key, 0.0) + rec.increment
            return state
    from .branchstate import evolve_free

    return evolve_free(state, h, 1, compiled.potentials)


def _check_boundaries(state: BranchState, packed: np.ndarray) -> np.ndarray:
    exited = np.zeros(packed.shape[0], dtype=bool)
    off = 0
    for name, sub in state.subsystems.items():
        for a, ax in enumerate(sub.grid.axes):
            col = packed[:, off + a]
            exited |= (col < ax.x_min) | (col >= ax.x_max)
        off += sub.grid.dims
    return exited


def run_ensemble(
    compiled: CompiledScenario,
    n: int,
    seed: int,
    initial_positions: dict[str, np.ndarray] | None = None,
) -> EnsembleResult:
    """Integrate an n-trajectory ensemble through a compiled scenario.

    Deterministic given (scenario, n, seed): sampling uses per-trajectory
    generators, the state sequence is shared by every trajectory, and
    reductions are by trajectory index.  n = 0 runs the state propagation
    (hooks, protective quadratures, snapshots) with no trajectories.
    """
    state = compiled.state0
    layout = _layout(state)
    total_dims = sum(d for _, d in layout)
    n_steps = compiled.n_steps
    times = compiled.dt * np.arange(n_steps + 1)

    if n > 0:
        positions = initial_positions if initial_positions is not None else sample_initial(state, n, seed)
        packed = _pack(layout, {k: np.asarray(v, dtype=float) for k, v in positions.items()})
        if packed.shape != (n, total_dims):
            raise ValueError("initial positions have the wrong shape")
        packed = packed.copy()
    else:
        packed = np.zeros((0, total_dims))
    sampled = packed.copy()

    pos_store = np.empty((n, n_steps + 1, total_dims))
    occ_store = np.full((n, n_steps + 1), MIXED, dtype=np.int16)
    node_events = np.zeros(n, dtype=np.int64)
    boundary = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    measurements: dict[str, float] = {}
    quadratures: dict[str, float] = {}
    snapshots: dict[int, BranchState] = {}

    events = sorted(compiled.events, key=lambda e: e.step)
    hooks = sorted(compiled.hooks, key=lambda h: h.step)
    caps = _speed_caps(state, compiled.dt)

    def apply_step_items(step, state, packed):
        for ev in events:
            if ev.step == step:
                pre = state
                state = ev.transform(state)
                if ev.kick is not None and n > 0:
                    live = _unpack(layout, packed)
                    ev.kick(live, pre)
        for hk in hooks:
            if hk.step == step:
                measurements[hk.name] = hk.fn(state)
        if step in compiled.snapshot_steps:
            snapshots[step] = state
        return state, packed

    state, packed = apply_step_items(0, state, packed)
    if n > 0:
        pos_store[:, 0] = packed
        occ_store[:, 0] = occupied_branch_block(state, _unpack(layout, packed))

    for s in range(n_steps):
        t0 = s * compiled.dt
        s0 = state
        sh = _advance_half(compiled, s0, 2 * s, quadratures)
        s1 = _advance_half(compiled, sh, 2 * s + 1, quadratures)
        if n > 0 and np.any(alive):
            triple = StateTriple(t0=t0, dt=compiled.dt, states=(s0, sh, s1))
            new, node, dead = _rk4_block(triple, packed, t0, compiled.dt, caps)
            flagged = node & ~dead & alive
            if np.any(flagged):
                refined = _rk4_refined(triple, packed[flagged], t0, compiled.dt, caps, depth=1)
                new[flagged] = refined
                node_events[flagged] += 1
            exited = _check_boundaries(state, new) & alive
            if np.any(exited):
                boundary[exited] = True
                alive[exited] = False
                new[exited] = packed[exited]
            packed = np.where(alive[:, None], new, packed)
        state = s1
        state, packed = apply_step_items(s + 1, state, packed)
        if n > 0:
            pos_store[:, s + 1] = packed
            occ_store[:, s + 1] = occupied_branch_block(state, _unpack(layout, packed))

    return EnsembleResult(
        times=times,
        layout=layout,
        positions=pos_store,
        occupancy=occ_store,
        branch_labels=tuple(b.label for b in state.branches),
        node_events=node_events,
        boundary=boundary,
        final_state=state,
        measurements=measurements,
        quadratures=quadratures,
        snapshots=snapshots,
        initial_state=compiled.state0,
        sampled_positions=sampled,
    )


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def _count_inversions(seq: np.ndarray) -> int:
    """Number of ordered pairs out of order, O(n log n) merge count."""
    if np.all(np.diff(seq) >= 0):
        return 0

    def rec(a):
        if len(a) <= 1:
            return a, 0
        mid = len(a) // 2
        left, nl = rec(a[:mid])
        right, nr = rec(a[mid:])
        # elements of `right` strictly smaller than left entries are inversions
        cross = int(np.sum(len(left) - np.searchsorted(left, right, side="right")))
        merged = np.concatenate([left, right])
        merged.sort(kind="mergesort")
        return merged, nl + nr + cross

    _, count = rec(np.asarray(seq, dtype=float))
    return count


def no_crossing_check(positions: np.ndarray) -> int:
    """Total order inversions in a 1D single-coordinate ensemble.

    `positions` has shape (n_trajectories, n_times).  Trajectories are
    ranked by their initial position; at each stored time the inversions
    of the ranked sequence are counted and summed.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 3:
        if pos.shape[2] != 1:
            raise ValueError("no_crossing_check expects a single 1D coordinate")
        pos = pos[:, :, 0]
    order = np.argsort(pos[:, 0], kind="stable")
    ranked = pos[order]
    violations = 0
    for t in range(pos.shape[1]):
        violations += _count_inversions(ranked[:, t])
    return violations
