"""Pathwise fixed-step RK4 for the (noise-forced) SIR systems.

The noise is a continuous forcing read off a fixed realization, so every
run is an ordinary nonautonomous ODE. Stage times ``t``, ``t + dt/2`` and
``t + dt`` are served by linear interpolation of the grid paths. The inner
loop is compiled with numba and runs a whole ensemble at once; members may
carry different noise paths and initial states but share one model tag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from numba import njit

from .errors import (
    DegeneratePopulation,
    InvalidParameter,
    NonFiniteState,
    PositivityViolation,
)
from .model import ModelParams, ModelVariant, SirState, Variant

DEFAULT_DT = 1e-3
DEFAULT_DT_OUT = 1e-2
NEG_TOL = 1e-9

_OK, _NEGATIVE, _NONFINITE, _DEGENERATE = 0, 1, 2, 3


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution with the effective rates seen at each sample."""

    t: np.ndarray
    states: np.ndarray
    gamma_eff: np.ndarray
    q_eff: np.ndarray

    def __post_init__(self) -> None:
        for name in ("t", "states", "gamma_eff", "q_eff"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.t.size

    @property
    def S(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def I(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def R(self) -> np.ndarray:
        return self.states[:, 2]

    @property
    def N(self) -> np.ndarray:
        return self.states.sum(axis=1)

    @property
    def final(self) -> SirState:
        return SirState.from_array(self.states[-1])

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.t - t)))
        step = self.t[1] - self.t[0] if self.t.size > 1 else 1.0
        if abs(self.t[k] - t) > 1e-6 * abs(step):
            raise InvalidParameter(f"t={t:g} is not an output time of this trajectory")
        return k

    def at(self, t: float) -> SirState:
        return SirState.from_array(self.states[self.index_of(t)])

    def window(self, t1: float, t2: float) -> np.ndarray:
        """Boolean mask of samples with t1 <= t <= t2 (rounding-tolerant)."""
        slack = 1e-9 * max(1.0, abs(t1), abs(t2))
        return (self.t >= t1 - slack) & (self.t <= t2 + slack)


@dataclass(frozen=True)
class FundamentalMatrixTrajectory:
    """Solutions M(t) of the variational equation with M(t0) = identity."""

    t: np.ndarray
    states: np.ndarray
    matrices: np.ndarray

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.t - t)))
        return self.matrices[k]


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _field(classical, q_eff, a, b, c, g, S, I, R):
    if I == 0.0:
        flux = 0.0
    else:
        flux = S * I / (S + I + R)
    if classical:
        return -g * flux, g * flux - c * I, c * I
    return q_eff - a * S + b * I - g * flux, -(a + b + c) * I + g * flux, c * I - a * R


@njit(cache=True)
def _jac(classical, a, b, c, g, S, I, R):
    N = S + I + R
    N2 = N * N
    dS = I * (I + R) / N2
    dI = S * (S + R) / N2
    dR = -S * I / N2
    if classical:
        aa, bb, removal = 0.0, 0.0, c
    else:
        aa, bb, removal = a, b, a + b + c
    return (-aa - g * dS, bb - g * dI, -g * dR,
            g * dS, -removal + g * dI, g * dR,
            0.0, c, -aa)


@njit(cache=True)
def _interp(vals, t0, h, n, t):
    pos = (t - t0) / h
    if pos <= 0.0:
        return vals[0]
    last = n - 1
    if pos >= last:
        return vals[last]
    i = int(pos)
    frac = pos - i
    return vals[i] * (1.0 - frac) + vals[i + 1] * frac


@njit(cache=True)
def _guard(x, tol):
    """Returns (value, status)."""
    if not np.isfinite(x):
        return x, _NONFINITE
    if x < 0.0:
        if x < -tol:
            return x, _NEGATIVE
        return 0.0, _OK
    return x, _OK


@njit(cache=True)
def _guard_state(S, I, R, neg_tol):
    tol = neg_tol * max(1.0, S + I + R)
    S, s1 = _guard(S, tol)
    I, s2 = _guard(I, tol)
    R, s3 = _guard(R, tol)
    return S, I, R, max(s1, max(s2, s3))


@njit(cache=True)
def _rk4_kernel(classical, use_phi, use_q, q, a, b, c, gamma, u0, t_start, dt, nsteps, every,
                phi_vals, phi_t0, phi_dt, phi_len, q_vals, q_t0, q_dt, q_len,
                neg_tol, out, status):
    m = u0.shape[0]
    half = 0.5 * dt
    for k in range(m):
        S, I, R, st = _guard_state(u0[k, 0], u0[k, 1], u0[k, 2], neg_tol)
        if st != _OK:
            status[k, 0] = st
            status[k, 1] = t_start
            continue
        out[k, 0, 0] = S
        out[k, 0, 1] = I
        out[k, 0, 2] = R
        j = 1
        for n in range(nsteps):
            t = t_start + n * dt
            g1 = gamma
            g2 = gamma
            g3 = gamma
            q1 = q
            q2 = q
            q3 = q
            if use_phi:
                g1 += _interp(phi_vals[k], phi_t0[k], phi_dt[k], phi_len[k], t)
                g2 += _interp(phi_vals[k], phi_t0[k], phi_dt[k], phi_len[k], t + half)
                g3 += _interp(phi_vals[k], phi_t0[k], phi_dt[k], phi_len[k], t + dt)
            if use_q:
                q1 += _interp(q_vals[k], q_t0[k], q_dt[k], q_len[k], t)
                q2 += _interp(q_vals[k], q_t0[k], q_dt[k], q_len[k], t + half)
                q3 += _interp(q_vals[k], q_t0[k], q_dt[k], q_len[k], t + dt)
            a1, b1, c1 = _field(classical, q1, a, b, c, g1, S, I, R)
            a2, b2, c2 = _field(classical, q2, a, b, c, g2, S + half * a1, I + half * b1, R + half * c1)
            a3, b3, c3 = _field(classical, q2, a, b, c, g2, S + half * a2, I + half * b2, R + half * c2)
            a4, b4, c4 = _field(classical, q3, a, b, c, g3, S + dt * a3, I + dt * b3, R + dt * c3)
            S = S + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            I = I + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            R = R + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            S, I, R, st = _guard_state(S, I, R, neg_tol)
            if st != _OK:
                status[k, 0] = st
                status[k, 1] = t + dt
                status[k, 2] = min(S, min(I, R))
                break
            if (n + 1) % every == 0 or n + 1 == nsteps:
                out[k, j, 0] = S
                out[k, j, 1] = I
                out[k, j, 2] = R
                j += 1


@njit(cache=True)
def _var_rhs(classical, q_eff, a, b, c, g, y, dy):
    S, I, R = y[0], y[1], y[2]
    f0, f1, f2 = _field(classical, q_eff, a, b, c, g, S, I, R)
    dy[0] = f0
    dy[1] = f1
    dy[2] = f2
    J = _jac(classical, a, b, c, g, S, I, R)
    for r in range(3):
        for col in range(3):
            acc = 0.0
            for s in range(3):
                acc += J[3 * r + s] * y[3 + 3 * s + col]
            dy[3 + 3 * r + col] = acc


@njit(cache=True)
def _variational_kernel(classical, use_phi, use_q, q, a, b, c, gamma, u0, t_start, dt, nsteps,
                        every, phi_vals, phi_t0, phi_dt, phi_len, q_vals, q_t0, q_dt, q_len,
                        neg_tol, out, status):
    half = 0.5 * dt
    y = np.zeros(12)
    tmp = np.zeros(12)
    k1 = np.zeros(12)
    k2 = np.zeros(12)
    k3 = np.zeros(12)
    k4 = np.zeros(12)
    y[0], y[1], y[2] = u0[0], u0[1], u0[2]
    y[3] = 1.0
    y[7] = 1.0
    y[11] = 1.0
    for i in range(12):
        out[0, i] = y[i]
    j = 1
    for n in range(nsteps):
        if y[0] + y[1] + y[2] == 0.0:
            status[0] = _DEGENERATE
            status[1] = t_start + n * dt
            return
        t = t_start + n * dt
        g1 = gamma
        g2 = gamma
        g3 = gamma
        q1 = q
        q2 = q
        q3 = q
        if use_phi:
            g1 += _interp(phi_vals, phi_t0, phi_dt, phi_len, t)
            g2 += _interp(phi_vals, phi_t0, phi_dt, phi_len, t + half)
            g3 += _interp(phi_vals, phi_t0, phi_dt, phi_len, t + dt)
        if use_q:
            q1 += _interp(q_vals, q_t0, q_dt, q_len, t)
            q2 += _interp(q_vals, q_t0, q_dt, q_len, t + half)
            q3 += _interp(q_vals, q_t0, q_dt, q_len, t + dt)
        _var_rhs(classical, q1, a, b, c, g1, y, k1)
        for i in range(12):
            tmp[i] = y[i] + half * k1[i]
        _var_rhs(classical, q2, a, b, c, g2, tmp, k2)
        for i in range(12):
            tmp[i] = y[i] + half * k2[i]
        _var_rhs(classical, q2, a, b, c, g2, tmp, k3)
        for i in range(12):
            tmp[i] = y[i] + dt * k3[i]
        _var_rhs(classical, q3, a, b, c, g3, tmp, k4)
        for i in range(12):
            y[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        S, I, R, st = _guard_state(y[0], y[1], y[2], neg_tol)
        if st == _OK:
            for i in range(9):
                if not np.isfinite(y[3 + i]):
                    st = _NONFINITE
        if st != _OK:
            status[0] = st
            status[1] = t + dt
            return
        y[0], y[1], y[2] = S, I, R
        if (n + 1) % every == 0 or n + 1 == nsteps:
            for i in range(12):
                out[j, i] = y[i]
            j += 1


# ---------------------------------------------------------------- wrappers


def _step_counts(t_span, dt, dt_out):
    t_start, t_end = float(t_span[0]), float(t_span[1])
    if not dt > 0:
        raise InvalidParameter(f"dt must be > 0, got {dt}")
    if t_end < t_start:
        raise InvalidParameter(f"t_span must be increasing, got {t_span}")
    nsteps = int(round((t_end - t_start) / dt))
    if abs(nsteps * dt - (t_end - t_start)) > 1e-9 * max(1.0, abs(t_end - t_start)):
        raise InvalidParameter(f"t_span length {t_end - t_start:g} is not a multiple of dt={dt:g}")
    if dt_out is None:
        every = 1
    else:
        every = int(round(dt_out / dt))
        if every < 1 or abs(every * dt - dt_out) > 1e-9 * dt_out:
            raise InvalidParameter(f"dt_out={dt_out:g} is not an integer multiple of dt={dt:g}")
    idx = np.arange(0, nsteps + 1, every)
    if idx[-1] != nsteps:
        idx = np.append(idx, nsteps)
    return t_start, t_end, nsteps, every, idx


def _stack_paths(paths, t_start, t_end):
    for p in paths:
        p.require(t_start, t_end)
    lens = np.array([len(p) for p in paths], dtype=np.int64)
    vals = np.zeros((len(paths), int(lens.max())))
    for k, p in enumerate(paths):
        vals[k, : len(p)] = p.values
    t0 = np.array([p.t0 for p in paths], dtype=float)
    h = np.array([p.dt for p in paths], dtype=float)
    return vals, t0, h, lens


_EMPTY = (np.zeros((1, 1)), np.zeros(1), np.ones(1), np.ones(1, dtype=np.int64))


def _raise_status(code, where, value=None, member=None):
    who = "" if member is None else f" (member {member})"
    if code == _NEGATIVE:
        raise PositivityViolation(f"state left the nonnegative octant at t={where:g}{who}: {value:.3e}")
    if code == _NONFINITE:
        raise NonFiniteState(f"non-finite state at t={where:g}{who}")
    if code == _DEGENERATE:
        raise DegeneratePopulation(f"S+I+R reached 0 at t={where:g}{who}")


def _normalize_inputs(variants, u0s):
    if isinstance(variants, ModelVariant):
        variants = [variants]
    variants = list(variants)
    if isinstance(u0s, SirState):
        u0s = [u0s]
    rows = [u.as_array() if isinstance(u, SirState) else u for u in u0s] if not isinstance(u0s, np.ndarray) else u0s
    U0 = np.atleast_2d(np.asarray(rows, dtype=float))
    if U0.ndim != 2 or U0.shape[1] != 3:
        raise InvalidParameter("initial states must have shape (m, 3)")
    if len(variants) == 1 and U0.shape[0] > 1:
        variants = variants * U0.shape[0]
    if U0.shape[0] == 1 and len(variants) > 1:
        U0 = np.repeat(U0, len(variants), axis=0)
    if len(variants) != U0.shape[0]:
        raise InvalidParameter(f"{len(variants)} variants for {U0.shape[0]} initial states")
    tags = {v.tag for v in variants}
    if len(tags) != 1:
        raise InvalidParameter(f"one batch must share a model tag, got {sorted(t.value for t in tags)}")
    if not np.all(np.isfinite(U0)):
        raise NonFiniteState("initial state is not finite")
    return variants, U0, tags.pop()


def _forcing_arrays(tag, variants, t_start, t_end):
    phi = _stack_paths([v.phi for v in variants], t_start, t_end) if tag.is_random else _EMPTY
    if tag is Variant.RANDOM_GAMMA_RANDOM_Q:
        qf = _stack_paths([v.q for v in variants], t_start, t_end)
    else:
        qf = _EMPTY
    return phi, qf


def _effective_rates(tag, variant, params, t):
    gamma_eff = params.gamma + variant.phi_at(t)
    if tag is Variant.CLASSICAL:
        q_eff = np.zeros_like(t)
    else:
        q_eff = params.q + variant.q_fluctuation_at(t)
    return np.broadcast_to(gamma_eff, t.shape).copy(), np.broadcast_to(q_eff, t.shape).copy()


def integrate_many(variants, params: ModelParams, u0s, t_span, dt: float = DEFAULT_DT,
                   dt_out: Optional[float] = DEFAULT_DT_OUT) -> list[Trajectory]:
    """Integrate an ensemble in one compiled pass.

    ``variants`` is a single :class:`ModelVariant` (broadcast over the initial
    states) or one per member; ``u0s`` is a single state or an (m, 3) array.
    All members share ``t_span``, ``dt`` and the output grid.
    """
    variants, U0, tag = _normalize_inputs(variants, u0s)
    t_start, t_end, nsteps, every, idx = _step_counts(t_span, dt, dt_out)
    phi, qf = _forcing_arrays(tag, variants, t_start, t_end)
    m = U0.shape[0]
    out = np.full((m, idx.size, 3), np.nan)
    status = np.zeros((m, 3))
    _rk4_kernel(tag is Variant.CLASSICAL, tag.is_random, tag is Variant.RANDOM_GAMMA_RANDOM_Q,
                params.q, params.a, params.b, params.c, params.gamma, U0, t_start, float(dt),
                nsteps, every, *phi, *qf, NEG_TOL, out, status)
    bad = np.flatnonzero(status[:, 0])
    if bad.size:
        k = int(bad[0])
        _raise_status(int(status[k, 0]), status[k, 1], status[k, 2], member=k if m > 1 else None)
    t_out = t_start + idx * float(dt)
    t_out[-1] = t_end
    trajectories = []
    for k, variant in enumerate(variants):
        gamma_eff, q_eff = _effective_rates(tag, variant, params, t_out)
        trajectories.append(Trajectory(t_out, out[k], gamma_eff, q_eff))
    return trajectories


def integrate(variant: ModelVariant, params: ModelParams, u0, t_span, dt: float = DEFAULT_DT,
              dt_out: Optional[float] = DEFAULT_DT_OUT) -> Trajectory:
    """Integrate one realization from ``u0`` over ``t_span`` with classical RK4.

    Raises:
        PositivityViolation: a component fell below ``-1e-9 * max(1, N)``.
        NonFiniteState: overflow or NaN.
        OutOfWindow: a noise path does not cover ``t_span``.
    """
    u = u0.as_array() if isinstance(u0, SirState) else np.asarray(u0, dtype=float)
    return integrate_many([variant], params, u.reshape(1, 3), t_span, dt, dt_out)[0]


def flow_map(variant: ModelVariant, params: ModelParams, u0, t_span, dt: float = DEFAULT_DT) -> np.ndarray:
    """Final state of :func:`integrate`."""
    span = float(t_span[1]) - float(t_span[0])
    return integrate(variant, params, u0, t_span, dt, dt_out=span if span > 0 else None).states[-1].copy()


def integrate_variational(variant: ModelVariant, params: ModelParams, base: Trajectory,
                          t_span=None, dt: float = DEFAULT_DT,
                          dt_out: Optional[float] = None) -> FundamentalMatrixTrajectory:
    """Fundamental matrix of the linearization along ``base``.

    The base state is re-propagated together with M at every RK4 stage, so
    J(t) is evaluated exactly where the scheme needs it rather than
    interpolated from the sampled base.
    """
    if t_span is None:
        t_span = (base.t[0], base.t[-1])
    t_start, t_end, nsteps, every, idx = _step_counts(t_span, dt, dt_out)
    if t_start < base.t[0] - 1e-9 or t_end > base.t[-1] + 1e-9:
        raise InvalidParameter("base trajectory does not cover t_span")
    u0 = base.states[base.index_of(t_start)]
    tag = variant.tag
    phi, qf = _forcing_arrays(tag, [variant], t_start, t_end)
    out = np.full((idx.size, 12), np.nan)
    status = np.zeros(3)
    _variational_kernel(tag is Variant.CLASSICAL, tag.is_random, tag is Variant.RANDOM_GAMMA_RANDOM_Q,
                        params.q, params.a, params.b, params.c, params.gamma, np.asarray(u0, float),
                        t_start, float(dt), nsteps, every,
                        phi[0][0], phi[1][0], phi[2][0], phi[3][0],
                        qf[0][0], qf[1][0], qf[2][0], qf[3][0], NEG_TOL, out, status)
    if status[0]:
        _raise_status(int(status[0]), status[1], 0.0)
    t_out = t_start + idx * float(dt)
    t_out[-1] = t_end
    return FundamentalMatrixTrajectory(t_out, out[:, :3].copy(), out[:, 3:].reshape(-1, 3, 3).copy())


def positivity_guard(u, tol_neg: Optional[float] = None) -> SirState:
    """Clamp roundoff negatives to 0; anything below ``-tol_neg`` is an error.

    ``tol_neg`` defaults to ``1e-9 * max(1, N)``.
    """
    arr = u.as_array() if isinstance(u, SirState) else np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteState(f"non-finite state {arr}")
    if tol_neg is None:
        tol_neg = NEG_TOL * max(1.0, float(arr.sum()))
    if np.any(arr < -tol_neg):
        raise PositivityViolation(f"state {arr} is below -{tol_neg:g}")
    return SirState.from_array(np.where(arr < 0, 0.0, arr))


def population_closed_form(t: np.ndarray, N0: float, params: ModelParams, t0: float = 0.0) -> np.ndarray:
    """N(t) = exp(-a (t - t0)) N0 + (q/a) (1 - exp(-a (t - t0))) for constant q."""
    decay = np.exp(-params.a * (np.asarray(t) - t0))
    return decay * N0 + params.q / params.a * (1.0 - decay)


def population_quadrature(t: np.ndarray, N0: float, params: ModelParams, q_path, refine: int = 4) -> np.ndarray:
    """N(t) for a path-driven recruitment q + Phi_q(t) by trapezoidal quadrature.

    Propagates ``N(t+h) = e^{-ah} N(t) + (h/2) (e^{-ah} q(t) + q(t+h))`` on a grid
    ``refine`` times finer than the noise grid.
    """
    t = np.asarray(t, dtype=float)
    h_target = q_path.dt / refine
    result = np.empty(t.size)
    result[0] = N0
    a = params.a
    for k in range(1, t.size):
        lo, hi = t[k - 1], t[k]
        n_sub = max(1, int(math.ceil((hi - lo) / h_target - 1e-9)))
        nodes = np.linspace(lo, hi, n_sub + 1)
        h = nodes[1] - nodes[0]
        f = params.q + q_path(nodes)
        decay = math.exp(-a * h)
        N = result[k - 1]
        for i in range(n_sub):
            N = decay * N + 0.5 * h * (decay * f[i] + f[i + 1])
        result[k] = N
    return result


def total_population_check(traj: Trajectory, params: ModelParams,
                           variant: Optional[ModelVariant] = None) -> float:
    """sup_t |N(t) - reference| along ``traj``.

    The reference is N(t0) for the classical model, the exponential closed
    form for constant recruitment and the convolution quadrature when the
    recruitment follows a noise path.
    """
    tag = Variant.DETERMINISTIC if variant is None else variant.tag
    N = traj.N
    if tag is Variant.CLASSICAL:
        reference = np.full_like(N, N[0])
    elif tag is Variant.RANDOM_GAMMA_RANDOM_Q:
        reference = population_quadrature(traj.t, N[0], params, variant.q)
    else:
        reference = population_closed_form(traj.t, N[0], params, t0=traj.t[0])
    return float(np.max(np.abs(N - reference)))


def write_trajectory_csv(traj: Trajectory, dest: Union[str, Path]) -> Path:
    dest = Path(dest)
    rows = ["t,S,I,R,N,gamma_eff,q_eff"]
    N = traj.N
    for k in range(len(traj)):
        S, I, R = traj.states[k]
        rows.append(",".join(f"{x:.17g}" for x in (traj.t[k], S, I, R, N[k], traj.gamma_eff[k], traj.q_eff[k])))
    dest.write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
    return dest


def read_trajectory_csv(src: Union[str, Path]) -> Trajectory:
    data = np.loadtxt(src, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(data[:, 0], data[:, 1:4], data[:, 5], data[:, 6])
