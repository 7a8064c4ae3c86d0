"""Interaction primitives acting on branch states.

Four kinds of transformation cover every interaction used by the
scenario catalog:

* impulsive pointer measurement: each branch splits into one branch per
  eigenvalue, the object factor is replaced by the eigenfunction and the
  pointer factor is translated by coupling * eigenvalue * duration
  (exact spectral shift; free motion during the impulse is neglected);
* collapse: the comparator model that deletes all but one branch;
* detector coupling: branches whose object factor sits inside a spatial
  window have their detector factor swapped for a displaced excited
  packet, disjoint from the ground packet;
* pairwise entanglement: two 1D factors of one branch merge into a joint
  2D factor under a unitary kernel (default: w -> w + lam * x shift);
* protective phase: per time step the meter factor is multiplied by
  exp(-i g(t) y <B> dt) where <B> is the probe-point density of the
  probed subsystems, leaving every probed factor untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .branchstate import (
    Branch,
    BranchState,
    Factor,
    _branches_disjoint,
    _normalized_branch,
    evolve_free,
    pairwise_disjoint,
    probe_expectation,
    subsystem_profile,
)
from .fields import (
    ComplexField,
    boundary_leak,
    inner,
    momentum_expectation,
    norm2,
    probe_amplitude,
    product_grid,
    shift_field,
    support_overlap,
)

__all__ = [
    "ImpulsiveMeasurement",
    "PathWindow",
    "ProtectiveCoupling",
    "PhaseStepRecord",
    "MeterShift",
    "impulsive_measure",
    "collapse",
    "detector_couple",
    "pairwise_entangle",
    "shift_kernel",
    "protective_phase",
    "meter_momentum",
]

# minimum |<eigenfunction|object>| kept as a branch after a measurement split
_SPLIT_FLOOR = 1e-12

_JOINT_BUDGET = 2048 * 2048


@dataclass(frozen=True)
class ImpulsiveMeasurement:
    """Strong brief coupling correlating eigenstates with pointer shifts."""

    object_name: str
    pointer_name: str
    eigenvalues: tuple[float, ...]
    coupling: float
    duration: float
    eigenfunctions: tuple[ComplexField, ...]

    def __post_init__(self):
        if len(self.eigenvalues) != len(self.eigenfunctions):
            raise ValueError("one eigenfunction per eigenvalue")
        for i, fi in enumerate(self.eigenfunctions):
            for j, fj in enumerate(self.eigenfunctions):
                ip = inner(fi, fj)
                expect = 1.0 if i == j else 0.0
                if abs(ip - expect) > 1e-8:
                    raise ValueError("eigenfunctions not orthonormal within 1e-8")
        shifts = [self.coupling * a * self.duration for a in self.eigenvalues]
        if len(set(np.round(shifts, 12))) != len(shifts):
            raise ValueError("pointer shifts must be distinct across eigenvalues")

    def shift(self, a: float) -> float:
        return self.coupling * a * self.duration


def impulsive_measure(state: BranchState, meas: ImpulsiveMeasurement) -> BranchState:
    """Split every branch into eigenvalue branches with shifted pointers."""
    pointer_fields = []
    for b in state.branches:
        pf = b.factor_of(meas.pointer_name)
        if len(pf.subsystems) != 1:
            raise ValueError("pointer must live in its own 1D factor")
        pointer_fields.append(pf.field.values)
    for v in pointer_fields[1:]:
        if not np.array_equal(v, pointer_fields[0]):
            raise ValueError("pointer factor must be identical across branches (fresh apparatus)")

    # pre-shift pointer copies, one per eigenvalue
    base_pointer = state.branches[0].factor_of(meas.pointer_name).field
    shifted = {}
    for a in meas.eigenvalues:
        out = shift_field(base_pointer, meas.shift(a))
        if boundary_leak(out):
            raise ValueError(f"pointer shift {meas.shift(a)} pushes the packet off-grid")
        shifted[a] = out

    new_branches = []
    for b in state.branches:
        obj = b.factor_of(meas.object_name)
        if len(obj.subsystems) != 1:
            raise ValueError("object must live in its own factor to be measured")
        coeffs = [inner(eig, obj.field) for eig in meas.eigenfunctions]
        recon = sum(c * eig.values for c, eig in zip(coeffs, meas.eigenfunctions))
        residual = obj.field.values - recon
        res_norm = np.sqrt(float(np.sum(np.abs(residual) ** 2) * obj.field.grid.cell_volume))
        if res_norm > 1e-6:
            raise ValueError(
                f"object factor not in the measured subspace (residual {res_norm:.2e})"
            )
        others = [f for f in b.factors if f is not obj and f is not b.factor_of(meas.pointer_name)]
        for a, c, eig in zip(meas.eigenvalues, coeffs, meas.eigenfunctions):
            if abs(c) <= _SPLIT_FLOOR:
                continue
            factors = [Factor((meas.object_name,), eig), Factor((meas.pointer_name,), shifted[a])] + others
            label = b.label if len([x for x in coeffs if abs(x) > _SPLIT_FLOOR]) == 1 else f"{b.label}/a={a:g}"
            new_branches.append(_normalized_branch(b.coeff * c, factors, label=label))
    return state.with_branches(new_branches)


def collapse(state: BranchState, surviving_branch: int) -> BranchState:
    """Comparator model: delete all branches but one, renormalize to |c| = 1."""
    if not (0 <= surviving_branch < len(state.branches)):
        raise IndexError(f"no branch {surviving_branch}")
    if len(state.branches) > 1 and not pairwise_disjoint(state):
        raise ValueError("collapse requires pairwise disjoint branches")
    b = state.branches[surviving_branch]
    return state.with_branches([replace(b, coeff=1.0 + 0.0j)])


@dataclass(frozen=True)
class PathWindow:
    """Half-open coordinate window [lo, hi) on one subsystem axis."""

    subsystem: str
    lo: float
    hi: float
    axis: int = 0

    def contains(self, x: np.ndarray) -> np.ndarray:
        return (x >= self.lo) & (x < self.hi)


def _window_mass(state: BranchState, branch: Branch, window: PathWindow) -> float:
    sub = state.subsystems[window.subsystem]
    profile = subsystem_profile(state, branch, window.subsystem)
    if sub.grid.dims != 1:
        raise ValueError("path windows are defined on 1D subsystems")
    x = sub.grid.coords(0)
    rho = profile**2
    mask = window.contains(x)
    return float(np.sum(rho[mask]) * sub.grid.axes[0].dx / (np.sum(rho) * sub.grid.axes[0].dx))


def detector_couple(
    state: BranchState,
    window: PathWindow,
    detector_name: str,
    excited_field: ComplexField,
) -> BranchState:
    """Excite the detector factor of branches localized inside the window.

    Branches whose object-subsystem density mass inside the window exceeds
    1 - 1e-3 get their detector factor replaced by `excited_field`; the
    rest keep the ground factor.  Ground and excited fields must be
    disjoint so the reading is unambiguous.
    """
    det_fields = []
    for b in state.branches:
        df = b.factor_of(detector_name)
        if len(df.subsystems) != 1:
            raise ValueError("detector must live in its own 1D factor")
        det_fields.append(df.field)
    for f in det_fields[1:]:
        if not np.array_equal(f.values, det_fields[0].values):
            raise ValueError("detector factor must be identical across branches")
    ground = det_fields[0]
    rep = support_overlap(ground, excited_field, eps=1e-6)
    if not rep.disjoint:
        raise ValueError(
            f"excited and ground detector states overlap (mass {rep.overlap_mass:.2e})"
        )

    masses = [_window_mass(state, b, window) for b in state.branches]
    selected = [m > 1.0 - 1e-3 for m in masses]
    if not any(selected):
        raise ValueError("no branch coupled: selector window matches nothing")
    import warnings

    for m, sel in zip(masses, selected):
        if not sel and m > 1e-3:
            warnings.warn(
                f"branch partially inside detector window (mass {m:.3f}); "
                "coupling treats it as unselected",
                stacklevel=2,
            )
    excited_factor = Factor((detector_name,), excited_field)
    new_branches = []
    for b, sel in zip(state.branches, selected):
        if not sel:
            new_branches.append(b)
            continue
        factors = [excited_factor if detector_name in f.subsystems else f for f in b.factors]
        new_branches.append(_normalized_branch(b.coeff, factors, label=b.label))
    return state.with_branches(new_branches)


def shift_kernel(lam: float):
    """Unitary impulsive coupling exp(-i lam x p_w): shifts w by lam * x."""

    def apply(joint: ComplexField) -> ComplexField:
        if lam == 0.0:
            return joint
        x = joint.grid.coords(0)
        kw = joint.grid.axes[1].wavenumbers()
        ft = np.fft.fft(joint.values, axis=1)
        ft = ft * np.exp(-1j * lam * x[:, None] * kw[None, :])
        return ComplexField(joint.grid, np.fft.ifft(ft, axis=1))

    return apply


def pairwise_entangle(
    state: BranchState,
    subsystems: tuple[str, str],
    kernel,
    window: PathWindow | None = None,
) -> BranchState:
    """Merge two 1D factors of the target branch into one joint factor.

    Target branches hold both subsystems in separate 1D factors; when a
    window is given, the first subsystem's factor must also be localized
    inside it (the interaction region).  Other branches are untouched.
    """
    name_a, name_b = subsystems
    targets = []
    for i, b in enumerate(state.branches):
        try:
            fa, fb = b.factor_of(name_a), b.factor_of(name_b)
        except KeyError:
            continue
        if len(fa.subsystems) != 1 or len(fb.subsystems) != 1 or fa is fb:
            continue
        if window is not None and _window_mass(state, b, window) <= 1.0 - 1e-3:
            continue
        targets.append(i)
    if not targets:
        raise ValueError("no branch eligible for pairwise entanglement")
    if window is None and len(targets) > 1:
        raise ValueError("ambiguous target branch; pass a window to select one")

    new_branches = list(state.branches)
    for i in targets:
        b = state.branches[i]
        fa, fb = b.factor_of(name_a), b.factor_of(name_b)
        ga, gb = fa.field.grid, fb.field.grid
        if ga.shape[0] * gb.shape[0] > _JOINT_BUDGET:
            raise MemoryError("joint grid exceeds the memory budget (2048^2 points)")
        joint = ComplexField(
            product_grid(ga, gb), np.outer(fa.field.values, fb.field.values)
        )
        before = norm2(joint)
        out = kernel(joint)
        if abs(norm2(out) - before) > 1e-6:
            raise ValueError("entangling kernel is not unitary (norm changed)")
        others = [f for f in b.factors if f is not fa and f is not fb]
        new_branches[i] = _normalized_branch(
            b.coeff, [Factor((name_a, name_b), out)] + others, label=b.label
        )
    return state.with_branches(new_branches)


@dataclass(frozen=True)
class ProtectiveCoupling:
    """Adiabatic meter coupling H = g(t) * y * B with B the probe projector.

    `schedule` is g(t) >= 0 on [t_start, t_start + duration]; its discrete
    midpoint quadrature at the step size actually used must equal 1 within
    1e-10.  `probe_point` fixes the probed subsystems' coordinates; the
    coefficient convention is "full" (whole-state expectation, includes
    branch weights) or "bare" (branch amplitudes only).
    """

    meter_name: str
    probe_point: dict[str, float]
    schedule: object
    t_start: float
    duration: float
    convention: str = "full"

    def g(self, t: float) -> float:
        rel = t - self.t_start
        if rel < 0 or rel > self.duration:
            return 0.0
        val = float(self.schedule(rel)) if callable(self.schedule) else float(self.schedule)
        if val < 0:
            raise ValueError("schedule must be nonnegative")
        return val

    def validate_quadrature(self, dt: float):
        n = int(round(self.duration / dt))
        if abs(n * dt - self.duration) > 1e-9 * max(1.0, self.duration):
            raise ValueError("window duration must be a whole number of steps")
        mids = self.t_start + (np.arange(n) + 0.5) * dt
        total = sum(self.g(t) for t in mids) * dt
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"schedule quadrature is {total!r}, expected 1 within 1e-10")


def sin2_schedule(duration: float):
    """Smooth ramp g(t) = (2/T) sin^2(pi t / T); midpoint sums are exact."""

    def g(rel: float) -> float:
        return 2.0 / duration * np.sin(np.pi * rel / duration) ** 2

    return g


@dataclass(frozen=True)
class PhaseStepRecord:
    t: float
    b_expect: float
    weight: float       # g(t_mid) * dt
    increment: float    # g(t_mid) * <B> * dt


@dataclass(frozen=True)
class MeterShift:
    expected: float        # -integral g <B> dt
    before: float
    after: float
    momentum_spread: float = float("nan")

    @property
    def measured(self) -> float:
        return self.after - self.before

    @property
    def z_score(self) -> float:
        return abs(self.measured) / self.momentum_spread


def protective_phase(state: BranchState, coupling: ProtectiveCoupling, dt: float):
    """One protective step: imprint the probe density on the meter phase.

    The probe expectation is evaluated on the incoming state, the meter
    factor of every branch is multiplied by exp(-i g y <B> dt), and the
    whole state then advances freely by dt, so probed factors follow
    exactly the same operations as an uncoupled run.
    Returns (new state, PhaseStepRecord).
    """
    for name in coupling.probe_point:
        if name not in state.subsystems:
            raise KeyError(f"probe subsystem {name!r} not in state")
    g_mid = coupling.g(state.t + dt / 2.0)
    b_expect = probe_expectation(state, coupling.probe_point, convention=coupling.convention)
    record = PhaseStepRecord(
        t=state.t, b_expect=b_expect, weight=g_mid * dt, increment=g_mid * b_expect * dt
    )

    if g_mid != 0.0:
        meter_sub = state.subsystems[coupling.meter_name]
        if meter_sub.grid.dims != 1:
            raise ValueError("meter must be one-dimensional")
        y = meter_sub.grid.coords(0)
        phase = np.exp(-1j * g_mid * b_expect * dt * y)
        cache: dict[int, Factor] = {}
        new_branches = []
        for b in state.branches:
            mf = b.factor_of(coupling.meter_name)
            if len(mf.subsystems) != 1:
                raise ValueError("meter must live in its own 1D factor")
            if id(mf) not in cache:
                cache[id(mf)] = Factor(
                    mf.subsystems, ComplexField(mf.field.grid, mf.field.values * phase)
                )
            factors = [cache[id(mf)] if f is mf else f for f in b.factors]
            new_branches.append(Branch(coeff=b.coeff, factors=tuple(factors), label=b.label))
        state = state.with_branches(new_branches)

    state = evolve_free(state, dt, 1)
    return state, record


def meter_momentum(state: BranchState, meter_name: str) -> float:
    """<p> of the meter coordinate, branch-weighted when factors differ."""
    factors = [b.factor_of(meter_name) for b in state.branches]
    for f in factors:
        if len(f.subsystems) != 1 or f.field.grid.dims != 1:
            raise ValueError("meter momentum requires a 1D meter factor")
    ref = factors[0].field.values
    if all(np.array_equal(f.field.values, ref) for f in factors[1:]):
        return momentum_expectation(factors[0].field)
    # distinct meter factors per branch: well-defined per outcome only if
    # the branches are disjoint somewhere else
    for i in range(len(state.branches)):
        for j in range(i + 1, len(state.branches)):
            if not _branches_disjoint(state, state.branches[i], state.branches[j]):
                raise ValueError(
                    "meter expectation ill-defined: branches overlap and meter factors differ"
                )
    weights = np.array([abs(b.coeff) ** 2 for b in state.branches])
    weights = weights / np.sum(weights)
    return float(sum(w * momentum_expectation(f.field) for w, f in zip(weights, factors)))
