"""Two-sided noise paths on a uniform grid.

The driving process is the stationary Ornstein-Uhlenbeck solution of
``dz + z dt = dW``. Paths are realized once on a window ``[t_min, t_max]``
and then read, never extended: the shift ``theta_s`` is a re-indexing of
the same realization, which is what makes pullback runs (start at
``tau - T``, stop at ``tau``) see consistent noise for every ``T``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.signal import lfilter

from .errors import GridOverflow, InvalidParameter, OutOfWindow
from .model import ModelParams, ModelVariant, NoiseBounds, Variant

MAX_GRID_NODES = 200_000_000
# grid times within this fraction of dt of the window edge are accepted
_EDGE_TOL = 1e-9


class PathKind(str, enum.Enum):
    WIENER = "Wiener"
    OU = "OU"
    TRANSFORMED = "Transformed"


@dataclass(frozen=True)
class SamplePath:
    """Samples ``values[k]`` of a scalar process at ``t0 + k*dt``.

    Calling the path evaluates it with linear interpolation between nodes;
    evaluation outside the generated window raises :class:`OutOfWindow`.
    """

    t0: float
    dt: float
    values: np.ndarray
    kind: PathKind = PathKind.OU

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidParameter(f"dt must be positive and finite, got {self.dt!r}")
        if not math.isfinite(self.t0):
            raise InvalidParameter(f"t0 must be finite, got {self.t0!r}")
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise InvalidParameter("values must be a nonempty 1-d array")
        if not np.all(np.isfinite(values)):
            raise InvalidParameter("path values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", PathKind(self.kind))

    def __len__(self) -> int:
        return self.values.size

    @property
    def t_end(self) -> float:
        return self.t0 + (self.values.size - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    def covers(self, t_a: float, t_b: float) -> bool:
        slack = _EDGE_TOL * self.dt
        lo, hi = min(t_a, t_b), max(t_a, t_b)
        return lo >= self.t0 - slack and hi <= self.t_end + slack

    def require(self, t_a: float, t_b: float) -> None:
        if not self.covers(t_a, t_b):
            raise OutOfWindow(
                f"[{t_a:g}, {t_b:g}] is outside the generated window [{self.t0:g}, {self.t_end:g}]")

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        pos = (t_arr - self.t0) / self.dt
        last = self.values.size - 1
        if np.any(pos < -_EDGE_TOL) or np.any(pos > last + _EDGE_TOL):
            raise OutOfWindow(
                f"time outside the generated window [{self.t0:g}, {self.t_end:g}]")
        pos = np.clip(pos, 0.0, last)
        if last == 0:
            out = np.full(pos.shape, self.values[0])
        else:
            idx = np.minimum(np.floor(pos).astype(np.int64), last - 1)
            frac = pos - idx
            out = self.values[idx] * (1.0 - frac) + self.values[idx + 1] * frac
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class OUConfig:
    """Grid and seed for one noise realization."""

    t_min: float
    t_max: float
    dt: float
    seed: int

    def __post_init__(self) -> None:
        if not self.t_min < self.t_max:
            raise InvalidParameter(f"need t_min < t_max, got {self.t_min} >= {self.t_max}")
        if not self.dt > 0:
            raise InvalidParameter(f"dt must be > 0, got {self.dt}")

    @property
    def n_steps(self) -> int:
        n = math.ceil((self.t_max - self.t_min) / self.dt - 1e-9)
        if n + 1 > MAX_GRID_NODES:
            raise GridOverflow(f"{n + 1} grid nodes exceed the limit of {MAX_GRID_NODES}")
        return n


def derive_seed(master_seed: int, index: int) -> int:
    """Independent 64-bit seed for ensemble member ``index``.

    Uses the SeedSequence spawn tree, so member k's stream depends only on
    (master_seed, k) and not on how many members run or in which order.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def ou_path(cfg: OUConfig) -> SamplePath:
    """Stationary OU path via its exact AR(1) discretization.

    ``z(t_min) ~ N(0, 1/2)`` and ``z(t+dt) = exp(-dt) z(t) + N(0, (1 - exp(-2 dt))/2)``,
    so the grid values carry no discretization error.
    """
    n = cfg.n_steps
    rng = np.random.default_rng(cfg.seed)
    rho = math.exp(-cfg.dt)
    innovation_sd = math.sqrt(-math.expm1(-2.0 * cfg.dt) / 2.0)
    z0 = rng.normal(0.0, math.sqrt(0.5))
    shocks = innovation_sd * rng.standard_normal(n)
    values = np.empty(n + 1)
    values[0] = z0
    if n:
        values[1:], _ = lfilter([1.0], [1.0, -rho], shocks, zi=[rho * z0])
    return SamplePath(cfg.t_min, cfg.dt, values, PathKind.OU)


def wiener_path(cfg: OUConfig) -> SamplePath:
    """Two-sided Brownian path pinned to W(0) = 0 when 0 lies in the window."""
    n = cfg.n_steps
    rng = np.random.default_rng(cfg.seed)
    values = np.concatenate(([0.0], np.cumsum(math.sqrt(cfg.dt) * rng.standard_normal(n))))
    path = SamplePath(cfg.t_min, cfg.dt, values, PathKind.WIENER)
    if path.covers(0.0, 0.0):
        values = values - path(0.0)
        path = SamplePath(cfg.t_min, cfg.dt, values, PathKind.WIENER)
    return path


def shift(path: SamplePath, s: float) -> SamplePath:
    """The realization seen from time origin ``s``: ``shift(p, s)(t) == p(s + t)``.

    Wiener paths use the Wiener shift ``omega(s + t) - omega(s)`` so the result
    again vanishes at 0. ``s`` must lie inside the generated window.
    """
    if not path.covers(s, s):
        raise OutOfWindow(f"shift origin {s:g} outside [{path.t0:g}, {path.t_end:g}]")
    values = path.values
    if path.kind is PathKind.WIENER:
        values = values - path(s)
    return SamplePath(path.t0 - s, path.dt, values, path.kind)


def bounded_transform(z, amplitude: float):
    """``(2 A / pi) arctan(z)``: odd, increasing, strictly inside (-A, A) for finite z."""
    if not amplitude > 0:
        raise InvalidParameter(f"amplitude must be > 0, got {amplitude!r}")
    out = (2.0 * amplitude / math.pi) * np.arctan(z)
    # arctan rounds to pi/2 for |z| beyond ~1e16; keep the bound strict
    inner = np.nextafter(amplitude, 0.0)
    z_arr = np.asarray(z, dtype=float)
    out = np.where(np.isfinite(z_arr), np.clip(out, -inner, inner), out)
    return float(out) if np.ndim(out) == 0 else out


def transform_path(path: SamplePath, amplitude: float) -> SamplePath:
    return SamplePath(path.t0, path.dt, bounded_transform(path.values, amplitude), PathKind.TRANSFORMED)


def build_variant(tag, z: SamplePath | None = None, bounds: NoiseBounds | None = None) -> ModelVariant:
    """Bind a model tag to the transforms of one OU path.

    Both fluctuations are driven by the same ``z`` so that switching on the
    random recruitment does not change the transmission noise.
    """
    tag = Variant(tag)
    if not tag.is_random:
        return ModelVariant(tag)
    if z is None or bounds is None:
        raise InvalidParameter(f"{tag.value} needs an OU path and noise bounds")
    phi = transform_path(z, bounds.d)
    if tag is Variant.RANDOM_GAMMA:
        return ModelVariant(tag, phi=phi)
    if bounds.e is None:
        raise InvalidParameter("random_gamma_random_q needs the q amplitude e")
    return ModelVariant(tag, phi=phi, q=transform_path(z, bounds.e))


def path_integral(path: SamplePath, t_a: float, t_b: float) -> float:
    """Exact integral of the piecewise-linear interpolant over [t_a, t_b]."""
    if t_a == t_b:
        return 0.0
    sign = 1.0
    if t_b < t_a:
        t_a, t_b, sign = t_b, t_a, -1.0
    path.require(t_a, t_b)
    k_lo = math.ceil((t_a - path.t0) / path.dt)
    k_hi = math.floor((t_b - path.t0) / path.dt)
    inner = path.t0 + path.dt * np.arange(k_lo, k_hi + 1)
    inner = inner[(inner > t_a) & (inner < t_b)]
    nodes = np.concatenate(([t_a], inner, [t_b]))
    return sign * float(np.trapezoid(path(nodes), nodes))


def ergodic_average(path: SamplePath, t: float) -> float:
    """Time average ``(1/t) * integral_0^t path``; the limit ``path(0)`` at t = 0."""
    if t == 0:
        return path(0.0)
    return path_integral(path, 0.0, t) / t


def effective_gamma(params: ModelParams, bounds: NoiseBounds, z: SamplePath, t):
    """gamma + Phi_gamma(z(t)), always inside (gamma - d, gamma + d)."""
    return params.gamma + bounded_transform(z(t), bounds.d)


def effective_q(params: ModelParams, bounds: NoiseBounds, z: SamplePath, t):
    """q + Phi_q(z(t)), always inside (q - e, q + e)."""
    if bounds.e is None:
        raise InvalidParameter("effective_q needs the q amplitude e")
    return params.q + bounded_transform(z(t), bounds.e)


def write_path_csv(path: SamplePath, dest: Union[str, Path]) -> Path:
    dest = Path(dest)
    lines = ["t,value"]
    lines.extend(f"{t:.17g},{v:.17g}" for t, v in zip(path.times, path.values))
    dest.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return dest


def read_path_csv(src: Union[str, Path], kind: PathKind = PathKind.OU) -> SamplePath:
    data = np.loadtxt(src, delimiter=",", skiprows=1, ndmin=2)
    t, v = data[:, 0], data[:, 1]
    dt = (t[-1] - t[0]) / (len(t) - 1) if len(t) > 1 else 1.0
    return SamplePath(float(t[0]), float(dt), v, kind)
