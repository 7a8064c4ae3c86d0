"""Shared machinery for compiling and executing scenario plans.

A scenario builds one or more runs (main plus controls), each a
CompiledScenario for the guidance integrator: an initial branch state, a
time grid, scheduled events (state transform plus the matching impulsive
trajectory kick), protective windows, and measurement hooks.  Assertions
are evaluated on the finished EnsembleResults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _sstats

from ..branchstate import (
    Branch,
    BranchState,
    Factor,
    SubsystemId,
    _normalized_branch,
    marginal_density,
    subsystem_profile,
)
from ..fields import ComplexField, Grid, gaussian_packet, make_grid, PacketSpec, shift_field
from ..guidance import (
    CompiledScenario,
    EnsembleResult,
    MeasurementHook,
    ProtectiveWindow,
    ScheduledEvent,
    run_ensemble,
)
from ..interactions import (
    ImpulsiveMeasurement,
    PathWindow,
    ProtectiveCoupling,
    detector_couple,
    impulsive_measure,
    meter_momentum,
    pairwise_entangle,
    shift_kernel,
)

__all__ = [
    "AssertionResult",
    "ScenarioOutcome",
    "RunPlan",
    "build_state",
    "measurement_event",
    "detector_event",
    "entangle_event",
    "collapse_event",
    "zero_branch",
    "execute_runs",
    "equivariance_pvalue",
    "coordinate_support_labels",
    "sign_labels",
    "find_density_nodes",
    "check",
]


@dataclass
class AssertionResult:
    name: str
    description: str
    passed: bool
    measured: object
    tolerance: str = ""


def check(name: str, description: str, passed: bool, measured, tolerance: str = "") -> AssertionResult:
    if isinstance(measured, (np.floating, np.integer)):
        measured = measured.item()
    return AssertionResult(name, description, bool(passed), measured, tolerance)


@dataclass
class ScenarioOutcome:
    name: str
    params: dict
    n: int
    seed: int
    assertions: list[AssertionResult]
    results: dict[str, EnsembleResult]
    measurements: dict[str, float] = field(default_factory=dict)
    quadratures: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    @property
    def main(self) -> EnsembleResult:
        return self.results["main"]


@dataclass
class RunPlan:
    compiled: CompiledScenario
    n: int
    inherit_from: str | None = None


def execute_runs(plans: dict[str, RunPlan], seed: int) -> dict[str, EnsembleResult]:
    results: dict[str, EnsembleResult] = {}
    for label, plan in plans.items():
        init = None
        if plan.inherit_from is not None:
            src = results[plan.inherit_from]
            init = _unpack_initial(src)
        results[label] = run_ensemble(plan.compiled, plan.n, seed, initial_positions=init)
    return results


def _unpack_initial(result: EnsembleResult) -> dict[str, np.ndarray]:
    out, off = {}, 0
    for name, d in result.layout:
        out[name] = result.sampled_positions[:, off : off + d].copy()
        off += d
    return out


# ---------------------------------------------------------------------------
# state construction
# ---------------------------------------------------------------------------


def build_state(subsystem_defs, branch_defs) -> BranchState:
    """Assemble a BranchState from plain definitions.

    subsystem_defs: list of (name, grid, mass).
    branch_defs: list of (coeff, {name: ComplexField}, label); every branch
    assigns one 1D/2D field per subsystem.
    """
    registry = {name: SubsystemId(name, grid, mass) for name, grid, mass in subsystem_defs}
    branches = []
    for coeff, fields_by_name, label in branch_defs:
        factors = [Factor((name,), fields_by_name[name]) for name in registry]
        branches.append(_normalized_branch(coeff, factors, label=label))
    return BranchState(subsystems=registry, branches=tuple(branches))


# ---------------------------------------------------------------------------
# events: state transform + impulsive trajectory kick
# ---------------------------------------------------------------------------


def _steps_at(t: float, dt: float) -> int:
    s = round(t / dt)
    if abs(s * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"event time {t} is not on the step grid (dt={dt})")
    return int(s)


def _interp_abs(field: ComplexField, x: np.ndarray) -> np.ndarray:
    from ..fields import interpolate_values

    return np.abs(interpolate_values(field.values, field.grid, x))


def measurement_event(
    t: float,
    dt: float,
    object_name: str,
    pointer_name: str,
    eigenvalues,
    coupling: float,
    duration: float,
    eigenfunctions=None,
) -> ScheduledEvent:
    """Impulsive measurement event; kicks each trajectory's pointer by the
    shift of the eigenpacket its object coordinate sits in.

    With eigenfunctions=None the eigenbasis is taken from the branches'
    object factors at event time (one eigenvalue per branch, in order),
    which realizes a which-region measurement of already-split packets.
    """
    eigenvalues = tuple(float(a) for a in eigenvalues)

    def resolve(state: BranchState):
        if eigenfunctions is not None:
            return eigenvalues, tuple(eigenfunctions)
        fields, seen = [], []
        for b in state.branches:
            f = b.factor_of(object_name).field
            if not any(f is s or np.array_equal(f.values, s.values) for s in seen):
                seen.append(f)
                fields.append(f)
        return eigenvalues[: len(fields)], tuple(fields)

    def transform(state: BranchState) -> BranchState:
        evals, eigs = resolve(state)
        meas = ImpulsiveMeasurement(
            object_name, pointer_name, evals, coupling, duration, eigs
        )
        return impulsive_measure(state, meas)

    def kick(positions: dict[str, np.ndarray], state: BranchState):
        evals, eigs = resolve(state)
        x = positions[object_name]
        amps = np.stack([_interp_abs(e, x) for e in eigs])
        which = np.argmax(amps, axis=0)
        shifts = coupling * duration * np.asarray(evals)[which]
        positions[pointer_name][:, 0] += shifts

    return ScheduledEvent(step=_steps_at(t, dt), transform=transform, kick=kick, label="measure")


def detector_event(
    t: float,
    dt: float,
    window: PathWindow,
    detector_name: str,
    displacement: float,
) -> ScheduledEvent:
    """Which-path detector: excite (displace) the detector factor of
    branches inside the window; trajectories inside the window carry their
    detector coordinate along with the displaced packet."""

    def transform(state: BranchState) -> BranchState:
        ground = state.branches[0].factor_of(detector_name).field
        excited = shift_field(ground, displacement)
        return detector_couple(state, window, detector_name, excited)

    def kick(positions: dict[str, np.ndarray], state: BranchState):
        mask = window.contains(positions[window.subsystem][:, window.axis])
        positions[detector_name][mask, 0] += displacement

    return ScheduledEvent(step=_steps_at(t, dt), transform=transform, kick=kick, label="detector")


def entangle_event(
    t: float,
    dt: float,
    subsystems: tuple[str, str],
    lam: float,
    window: PathWindow,
    optional: bool = True,
) -> ScheduledEvent:
    """Impulsive x-w coupling on the branch localized in the window;
    trajectories there get w -> w + lam * x.  When no branch qualifies
    (control runs with the target branch removed) nothing happens, to the
    state or to the trajectories."""

    def transform(state: BranchState) -> BranchState:
        try:
            return pairwise_entangle(state, subsystems, shift_kernel(lam), window=window)
        except ValueError:
            if optional:
                return state
            raise

    def kick(positions: dict[str, np.ndarray], state: BranchState):
        coupled = transform(state) is not state
        if not coupled:
            return
        mask = window.contains(positions[window.subsystem][:, window.axis])
        positions[subsystems[1]][mask, 0] += lam * positions[subsystems[0]][mask, 0]

    return ScheduledEvent(step=_steps_at(t, dt), transform=transform, kick=kick, label="entangle")


def collapse_event(t: float, dt: float, surviving: int) -> ScheduledEvent:
    from ..interactions import collapse

    def transform(state: BranchState) -> BranchState:
        return collapse(state, surviving)

    return ScheduledEvent(step=_steps_at(t, dt), transform=transform, kick=None, label="collapse")


def zero_branch(state: BranchState, label: str) -> BranchState:
    """Control-run helper: remove one branch by label and renormalize."""
    keep = [b for b in state.branches if b.label != label]
    if len(keep) == len(state.branches):
        raise KeyError(f"no branch labelled {label!r}")
    total = np.sqrt(sum(abs(b.coeff) ** 2 for b in keep))
    from dataclasses import replace

    return state.with_branches([replace(b, coeff=b.coeff / total) for b in keep])


def meter_momentum_hook(t: float, dt: float, name: str, meter_name: str) -> MeasurementHook:
    return MeasurementHook(step=_steps_at(t, dt), name=name, fn=lambda s: meter_momentum(s, meter_name))


# ---------------------------------------------------------------------------
# diagnostics on finished runs
# ---------------------------------------------------------------------------


def _axis_marginal(state: BranchState, name: str, axis: int = 0):
    sub = state.subsystems[name]
    rho = marginal_density(state, name)
    if sub.grid.dims == 2:
        other = 1 - axis
        rho = np.sum(rho, axis=other) * sub.grid.axes[other].dx
    coords = sub.grid.coords(axis)
    dx = sub.grid.axes[axis].dx
    return coords, rho, dx


def equivariance_pvalue(samples: np.ndarray, state: BranchState, name: str, axis: int = 0, n_bins: int = 40) -> float:
    """Chi-square p-value of samples against the state's marginal density.

    Bins are equal-probability under the theoretical distribution, so the
    expected count is n/n_bins in each.
    """
    coords, rho, dx = _axis_marginal(state, name, axis)
    seg = 0.5 * (rho[1:] + rho[:-1]) * dx
    cdf = np.concatenate([[0.0], np.cumsum(seg)])
    cdf /= cdf[-1]
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    edges = np.interp(qs, cdf, coords)
    counts = np.bincount(np.searchsorted(edges, samples), minlength=n_bins)
    expected = len(samples) / n_bins
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    return float(_sstats.chi2.sf(chi2, n_bins - 1))


def coordinate_support_labels(state: BranchState, name: str, coords: np.ndarray) -> np.ndarray:
    """Branch index whose subsystem profile dominates at each coordinate.

    Returns -1 where no branch carries at least (1 - 1e-3) of the local
    profile-squared mass (ambiguous support).
    """
    sub = state.subsystems[name]
    if sub.grid.dims != 1:
        raise ValueError("support labels need a 1D subsystem")
    x = sub.grid.coords(0)
    profs = np.stack([
        np.interp(coords, x, subsystem_profile(state, b, name)) for b in state.branches
    ])
    dens = profs**2
    total = np.sum(dens, axis=0)
    win = np.argmax(dens, axis=0)
    best = np.take_along_axis(dens, win[None, :], axis=0)[0]
    ok = (total > 0) & (best > (1.0 - 1e-3) * total)
    return np.where(ok, win, -1)


def sign_labels(result: EnsembleResult, name: str, t: float, axis: int = 0) -> np.ndarray:
    """Path labels 1/2 from the sign of a coordinate at a designated time."""
    idx = int(round(t / (result.times[1] - result.times[0])))
    coord = result.coordinate(name)[:, idx, axis]
    return np.where(coord > 0.0, 1, 2)


def spectral_upsample(values: np.ndarray, factor: int = 8) -> np.ndarray:
    """Exact band-limited refinement of periodic samples by zero-padding."""
    n = len(values)
    ft = np.fft.fft(values)
    out = np.zeros(n * factor, dtype=complex)
    h = n // 2
    out[:h] = ft[:h]
    out[-h:] = ft[-h:]
    return np.fft.ifft(out) * factor


def find_density_nodes(profile: np.ndarray, contrast: float = 100.0) -> int:
    """Count interior minima at least `contrast` times below both of the
    local maxima that bracket them."""
    p = np.asarray(profile, dtype=float)
    d = np.diff(p)
    minima = np.where((d[:-1] < 0) & (d[1:] >= 0))[0] + 1
    maxima = np.where((d[:-1] > 0) & (d[1:] <= 0))[0] + 1
    nodes = 0
    tiny = np.max(p) * 1e-300 + 1e-300
    for i in minima:
        left = maxima[maxima < i]
        right = maxima[maxima > i]
        if len(left) and len(right):
            bracket = min(p[left[-1]], p[right[0]])
            if bracket / (p[i] + tiny) >= contrast:
                nodes += 1
    return nodes
