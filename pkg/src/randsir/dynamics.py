"""Long-time analyses built on the integrator.

Pullback runs start at ``tau - T`` on the realization seen from that time
and are read at ``tau``; as ``T`` grows the endpoints approach the pullback
attractor at ``tau``. The helpers here sample that attractor, trace the
heteroclinic connection of the autonomous model, measure endemic floors,
split the disease-free linearization into stable and unstable parts and
check the temperedness of the noise factor in its bound.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from .errors import (
    InvalidParameter,
    NonConvergence,
    NoUnstableDirection,
    NonHyperbolicMatrix,
)
from .integrator import DEFAULT_DT, Trajectory, integrate, integrate_many
from .model import (
    HYPERBOLIC_TOL,
    ModelParams,
    ModelVariant,
    NoiseBounds,
    SirState,
    Variant,
    disease_free_equilibrium,
    endemic_equilibrium,
    equilibria,
    jacobian,
)
from .noise import SamplePath, bounded_transform, path_integral, shift

DEFAULT_PULLBACK_T = 40.0
DEDUP_RADIUS = 1e-4
PULLBACK_MONITOR_TOL = 1e-6


class PullbackConvergenceWarning(UserWarning):
    """Endpoints for horizons T and T/2 differ by more than the monitor tolerance."""


@dataclass(frozen=True)
class PullbackRun:
    tau: float
    T: float
    endpoint: SirState


@dataclass(frozen=True)
class AttractorSample:
    points: np.ndarray
    tau: float
    T: float
    initial_grid: np.ndarray

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class DichotomyReport:
    stable_projection: np.ndarray
    unstable_projection: np.ndarray
    decay_rate: float
    growth_rate: Optional[float]
    unstable_rank: int
    eigenvalues: np.ndarray


@dataclass(frozen=True)
class TemperedReport:
    times: np.ndarray
    rates: np.ndarray
    tempered: bool

    @property
    def verdict(self) -> str:
        return "Tempered" if self.tempered else "NotTempered"


@dataclass(frozen=True)
class ContinuityRow:
    eta: float
    dist_semi: float
    dist_sym: float


# ------------------------------------------------------------ pullback


def _shifted(variant: ModelVariant, s: float) -> ModelVariant:
    if not variant.tag.is_random:
        return variant
    return replace(variant,
                   phi=shift(variant.phi, s),
                   q=None if variant.q is None else shift(variant.q, s))


def pullback_endpoints(variants, params: ModelParams, tau: float, T: float, u0s,
                       dt: float = DEFAULT_DT) -> np.ndarray:
    """States at ``tau`` of runs started at ``tau - T`` from each of ``u0s``.

    Each member integrates over [0, T] on its noise shifted to origin
    ``tau - T``; ``variants`` is one variant or one per member.
    """
    if T < 0:
        raise InvalidParameter(f"pullback horizon must be >= 0, got {T}")
    U0 = np.atleast_2d(np.asarray(u0s if not isinstance(u0s, SirState) else u0s.as_array(), dtype=float))
    if T == 0:
        return U0.copy()
    if isinstance(variants, ModelVariant):
        variants = [variants]
    shifted = [_shifted(v, tau - T) for v in variants]
    trajs = integrate_many(shifted, params, U0, (0.0, T), dt, dt_out=T)
    return np.array([tr.states[-1] for tr in trajs])


def pullback_endpoint(variant: ModelVariant, params: ModelParams, tau: float, T: float, u0,
                      dt: float = DEFAULT_DT, monitor: bool = True) -> SirState:
    """The solution started at ``tau - T`` from ``u0``, evaluated at ``tau``.

    With ``monitor`` the horizon ``T/2`` run is compared against ``T`` and a
    :class:`PullbackConvergenceWarning` is issued above 1e-6.
    """
    end = pullback_endpoints(variant, params, tau, T, u0, dt)[0]
    if monitor and T > 0:
        half_T = dt * round(0.5 * T / dt)
        half = pullback_endpoints(variant, params, tau, half_T, u0, dt)[0]
        gap = float(np.linalg.norm(end - half))
        if gap > PULLBACK_MONITOR_TOL:
            warnings.warn(f"pullback endpoints for T={T:g} and T={half_T:g} differ by {gap:.2e}",
                          PullbackConvergenceWarning, stacklevel=2)
    return SirState.from_array(end)


# ------------------------------------------------------------ attractor sampling


def unstable_direction(params: ModelParams) -> np.ndarray:
    """Unit eigenvector of the disease-free Jacobian for gamma - (a+b+c), with I > 0."""
    growth = params.gamma - params.removal_rate
    if growth <= 0:
        raise NoUnstableDirection(f"gamma={params.gamma:g} <= a+b+c={params.removal_rate:g}")
    A = jacobian(params, disease_free_equilibrium(params))
    eigs, vecs = np.linalg.eig(A)
    k = int(np.argmin(np.abs(eigs - growth)))
    v = np.real(vecs[:, k])
    v = v / np.linalg.norm(v)
    return v if v[1] > 0 else -v


def default_initial_grid(params: ModelParams, T: float = DEFAULT_PULLBACK_T, n: int = 5) -> np.ndarray:
    """Lattice over [0, 2q/a]^3, the equilibria, and unstable-direction seeds.

    The seeds sit at E0 + delta v_u with delta spread around exp(-lambda_u T)
    so that after T they land at different places along the connecting orbit.
    """
    side = np.linspace(0.0, 2.0 * params.q / params.a, n)
    lattice = np.array(np.meshgrid(side, side, side, indexing="ij")).reshape(3, -1).T
    extra = [p.as_array() for p in equilibria(params)]
    growth = params.gamma - params.removal_rate
    if growth > 0:
        v = unstable_direction(params)
        e0 = disease_free_equilibrium(params).as_array()
        base = math.exp(-growth * T)
        for j in np.arange(-6.0, 1.01, 0.5):
            extra.append(e0 + base * 10.0 ** j * v)
    return np.vstack([lattice, np.array(extra)])


def deduplicate(points: np.ndarray, radius: float = DEDUP_RADIUS) -> np.ndarray:
    kept: list[np.ndarray] = []
    for p in np.asarray(points, dtype=float):
        if all(np.linalg.norm(p - k) > radius for k in kept):
            kept.append(p)
    return np.array(kept).reshape(-1, 3)


def attractor_sample(variant: ModelVariant, params: ModelParams, tau: float = 0.0,
                     T: float = DEFAULT_PULLBACK_T, initial_grid: Optional[np.ndarray] = None,
                     dt: float = DEFAULT_DT) -> AttractorSample:
    """Pullback images of a grid of initial states, deduplicated at 1e-4."""
    grid = default_initial_grid(params, T) if initial_grid is None else np.asarray(initial_grid, float)
    ends = pullback_endpoints(variant, params, tau, T, grid, dt)
    return AttractorSample(deduplicate(ends), tau, T, grid)


# ------------------------------------------------------------ disease-free solution


def disease_free_state(params: ModelParams, q_path: Optional[SamplePath] = None, tau: float = 0.0,
                       horizon: Optional[float] = None, dt: Optional[float] = None) -> tuple[float, float]:
    """S* at ``tau``: the integral over s >= 0 of exp(-a s) (q + Phi_q(tau - s)).

    The integral is truncated at ``horizon`` (default: the smallest H with
    exp(-aH) < 1e-12) and evaluated by trapezoidal product integration, which
    is exact for the piecewise-linear interpolant of the path.

    Returns:
        (S*, truncation bound q1 exp(-aH) / a), with q1 the largest recruitment
        rate seen on the window.
    """
    a = params.a
    if horizon is None:
        horizon = math.ceil(12.0 * math.log(10.0) / a) + 1.0
    if math.exp(-a * horizon) >= 1e-12:
        raise InvalidParameter(f"horizon {horizon:g} too short: need exp(-a H) < 1e-12")
    if dt is None:
        dt = q_path.dt if q_path is not None else 1e-3
    n = int(math.ceil(horizon / dt - 1e-9))
    s = np.linspace(0.0, horizon, n + 1)
    h = s[1] - s[0]
    if q_path is None:
        f = np.full(s.size, params.q)
    else:
        q_path.require(tau - horizon, tau)
        f = params.q + q_path(tau - s)
    decay = math.exp(-a * h)
    one_minus = -math.expm1(-a * h)
    w1 = (one_minus - a * h * decay) / (a * a * h)
    w0 = one_minus / a - w1
    weights = np.exp(-a * s[:-1])
    value = float(np.sum(weights * (w0 * f[:-1] + w1 * f[1:])))
    bound = float(np.max(f)) * math.exp(-a * horizon) / a
    return value, bound


# ------------------------------------------------------------ heteroclinic orbit


def heteroclinic_trace(params: ModelParams, delta: float = 1e-5, t_max: float = 200.0,
                       dt: float = DEFAULT_DT, dt_out: float = 1e-2, tol: float = 1e-6) -> Trajectory:
    """Orbit leaving E0 along ``delta * v_u``, cut where it comes within ``tol`` of E1.

    A negative ``delta`` points out of the octant and fails in the positivity
    guard on the first step.
    """
    v = unstable_direction(params)
    e0 = disease_free_equilibrium(params).as_array()
    e1 = endemic_equilibrium(params).as_array()
    traj = integrate(ModelVariant.deterministic(), params, e0 + delta * v, (0.0, t_max), dt, dt_out)
    dist = np.linalg.norm(traj.states - e1, axis=1)
    hit = np.flatnonzero(dist < tol)
    if hit.size == 0:
        raise NonConvergence(f"trace ended {dist[-1]:.2e} from the endemic equilibrium at t={t_max:g}")
    k = int(hit[0]) + 1
    return Trajectory(traj.t[:k], traj.states[:k], traj.gamma_eff[:k], traj.q_eff[:k])


# ------------------------------------------------------------ endemic floor


def endemic_floor(trajectories: Iterable[Trajectory], t1: float, t2: float) -> float:
    """min of I over the ensemble and the window [t1, t2]."""
    floor = math.inf
    for traj in trajectories:
        mask = traj.window(t1, t2)
        if not mask.any():
            mask = np.zeros(len(traj), dtype=bool)
            mask[int(np.argmin(np.abs(traj.t - t1)))] = True
        floor = min(floor, float(traj.I[mask].min()))
    return floor


def reenters_below(traj: Trajectory, t1: float, level: float) -> bool:
    """True if I drops to ``level`` or below at any sample with t >= t1."""
    mask = traj.window(t1, traj.t[-1])
    return bool(np.any(traj.I[mask] <= level))


# ------------------------------------------------------------ linearization


def disease_free_linearization(params: ModelParams) -> np.ndarray:
    """Jacobian at (q/a, 0, 0) with no noise."""
    a, b, c, g = params.a, params.b, params.c, params.gamma
    return np.array([
        [-a, b - g, 0.0],
        [0.0, g - a - b - c, 0.0],
        [0.0, c, -a],
    ])


def dichotomy_projections(A: np.ndarray) -> DichotomyReport:
    """Spectral projections onto the stable and unstable invariant subspaces of ``A``.

    Built from an ordered real Schur form, so defective eigenvalues are fine:
    with ``A = Q [[T11, T12], [0, T22]] Q^T`` (T11 stable) and ``X`` solving
    ``T11 X - X T22 = T12``, the stable projection is ``Q [[I, X], [0, 0]] Q^T``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    eigs = np.linalg.eigvals(A)
    if np.any(np.abs(eigs.real) < HYPERBOLIC_TOL):
        raise NonHyperbolicMatrix(f"eigenvalues {eigs} touch the imaginary axis")
    n_stable = int(np.sum(eigs.real < 0))
    if n_stable == n:
        P_s = np.eye(n)
    elif n_stable == 0:
        P_s = np.zeros((n, n))
    else:
        T, Q, sdim = linalg.schur(A, output="real", sort="lhp")
        k = sdim
        X = linalg.solve_sylvester(T[:k, :k], -T[k:, k:], T[:k, k:])
        block = np.zeros((n, n))
        block[:k, :k] = np.eye(k)
        block[:k, k:] = X
        P_s = Q @ block @ Q.T
    P_u = np.eye(n) - P_s
    stable = eigs.real[eigs.real < 0]
    unstable = eigs.real[eigs.real > 0]
    return DichotomyReport(
        stable_projection=P_s,
        unstable_projection=P_u,
        decay_rate=float(-stable.max()) if stable.size else math.nan,
        growth_rate=float(unstable.min()) if unstable.size else None,
        unstable_rank=n - n_stable,
        eigenvalues=eigs,
    )


def format_dichotomy(report: DichotomyReport) -> str:
    def block(name, M):
        rows = [" ".join(f"{x:.17g}" for x in row) for row in M]
        return [f"{name}:"] + ["  " + r for r in rows]

    lines = ["dichotomy report", f"unstable_rank: {report.unstable_rank}",
             f"decay_rate: {report.decay_rate:.17g}",
             f"growth_rate: {'none' if report.growth_rate is None else format(report.growth_rate, '.17g')}"]
    lines += block("stable_projection", report.stable_projection)
    lines += block("unstable_projection", report.unstable_projection)
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ tempered bound


def tempered_check(phi: SamplePath, horizon: float, n_points: int = 200, t_first: float = 1.0) -> TemperedReport:
    """Series ln K(t)/t = (1/t) * integral_0^t Phi on a log grid up to ``horizon``.

    Tempered when |series(horizon)| < 0.05 and the median of |series| over
    the last decade is below the median over the decade before it (or the
    series has already collapsed to 0).
    """
    phi.require(0.0, horizon)
    times = np.geomspace(t_first, horizon, n_points)
    # cumulative integral on the grid, then interpolate at the log times
    nodes = phi.times
    mask = (nodes >= 0.0) & (nodes <= horizon)
    grid_t = np.concatenate(([0.0], nodes[mask & (nodes > 0)]))
    vals = phi(grid_t)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(grid_t) * (vals[1:] + vals[:-1]))))
    integral = np.interp(times, grid_t, cum)
    if times[-1] > grid_t[-1]:
        integral[-1] = path_integral(phi, 0.0, horizon)
    rates = integral / times
    mag = np.abs(rates)
    last = mag[times >= horizon / 10.0]
    prev = mag[(times >= horizon / 100.0) & (times < horizon / 10.0)]
    final_ok = mag[-1] < 0.05
    if prev.size == 0:
        decreasing = True
    else:
        med_last, med_prev = np.median(last), np.median(prev)
        decreasing = med_last < med_prev or med_last <= 1e-14
    return TemperedReport(times, rates, bool(final_ok and decreasing))


# ------------------------------------------------------------ continuity scan


def semi_distance(A: np.ndarray, B: np.ndarray) -> float:
    """sup over a in A of the distance from a to the set B."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    return float(d.min(axis=1).max())


def hausdorff_distance(A: np.ndarray, B: np.ndarray) -> float:
    return max(semi_distance(A, B), semi_distance(B, A))


def default_phi(z):
    """A bounded function with |phi| < 1."""
    return bounded_transform(z, 1.0)


def perturbation_continuity_scan(params: ModelParams, z: SamplePath, etas: Sequence[float],
                                 phi: Callable = default_phi, tau: float = 0.0,
                                 T: float = DEFAULT_PULLBACK_T, initial_grid: Optional[np.ndarray] = None,
                                 dt: float = 1e-2) -> list[ContinuityRow]:
    """Distance between attractor samples of gamma + eta*phi(z) and of gamma.

    ``dist_semi`` measures the perturbed sample against the unperturbed one
    augmented with a dense trace of the heteroclinic orbit when
    gamma > a+b+c, so the reference resolves the whole connecting curve.
    ``dist_sym`` is the symmetric distance between the two grid samples;
    against the dense trace it would only measure how sparsely a finite
    grid covers the curve.
    """
    grid = default_initial_grid(params, T) if initial_grid is None else np.asarray(initial_grid, float)
    base_sample = attractor_sample(ModelVariant.deterministic(), params, tau, T, grid, dt).points
    reference = base_sample
    if params.gamma > params.removal_rate:
        trace = heteroclinic_trace(params, delta=1e-8, dt=dt, dt_out=dt, tol=1e-8)
        reference = np.vstack([reference, trace.states])

    phi_values = np.asarray(phi(z.values), dtype=float)
    if np.max(np.abs(phi_values)) > 1.0:
        raise InvalidParameter("phi must satisfy |phi| <= 1")
    etas = [float(e) for e in etas]
    active = [e for e in etas if e > 0]
    if active:
        variants = []
        for eta in active:
            path = SamplePath(z.t0, z.dt, eta * phi_values, z.kind)
            variants.extend([ModelVariant(Variant.RANDOM_GAMMA, phi=path)] * grid.shape[0])
        ends = pullback_endpoints(variants, params, tau, T, np.tile(grid, (len(active), 1)), dt)
        ends = ends.reshape(len(active), grid.shape[0], 3)
    rows = []
    j = 0
    for eta in etas:
        if eta == 0:
            rows.append(ContinuityRow(0.0, 0.0, 0.0))
            continue
        sample = deduplicate(ends[j])
        j += 1
        rows.append(ContinuityRow(eta, semi_distance(sample, reference), hausdorff_distance(sample, base_sample)))
    return rows


# ------------------------------------------------------------ report files


def write_continuity_csv(rows: Sequence[ContinuityRow], dest: Union[str, Path]) -> Path:
    dest = Path(dest)
    lines = ["eta,dist_semi,dist_sym"]
    lines += [f"{r.eta:.17g},{r.dist_semi:.17g},{r.dist_sym:.17g}" for r in rows]
    dest.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return dest


def write_floor_csv(floors: Sequence[tuple[int, float]], dest: Union[str, Path]) -> Path:
    dest = Path(dest)
    lines = ["seed,floor"] + [f"{int(s)},{f:.17g}" for s, f in floors]
    dest.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return dest
