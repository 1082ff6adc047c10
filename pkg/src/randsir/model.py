"""SIR model variants with vital dynamics and reinfection.

Four right-hand sides share one state space (S, I, R):

* ``CLASSICAL``: Kermack-McKendrick, no births or deaths, total population conserved.
* ``DETERMINISTIC``: recruitment ``q``, natural death ``a``, reinfection without
  immunity ``b``, recovery ``c`` and transmission ``gamma``.
* ``RANDOM_GAMMA``: transmission ``gamma + Phi(theta_t omega)`` along a noise path.
* ``RANDOM_GAMMA_RANDOM_Q``: additionally recruitment ``q + Phi_q(theta_t omega)``.

All functions here are pure; the noise enters through plain scalars
(``phi_value``, ``q_value``) so the same code serves pathwise integration and
pointwise analysis.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .errors import (
    ClassificationDisagreement,
    DegeneratePopulation,
    InvalidParameter,
    NonFiniteInput,
    NotAnEquilibrium,
)

if TYPE_CHECKING:
    from .noise import SamplePath

EQUILIBRIUM_TOL = 1e-10
HYPERBOLIC_TOL = 1e-9


class Variant(str, enum.Enum):
    CLASSICAL = "classical"
    DETERMINISTIC = "deterministic"
    RANDOM_GAMMA = "random_gamma"
    RANDOM_GAMMA_RANDOM_Q = "random_gamma_random_q"

    @property
    def is_random(self) -> bool:
        return self in (Variant.RANDOM_GAMMA, Variant.RANDOM_GAMMA_RANDOM_Q)


class Stability(str, enum.Enum):
    EXPONENTIALLY_STABLE = "ExponentiallyStable"
    SADDLE_UNSTABLE_DIM1 = "SaddleUnstableDim1"
    NON_HYPERBOLIC = "NonHyperbolic"
    # more than one unstable direction; never reached by this model's equilibria
    UNSTABLE = "Unstable"


class Verdict(str, enum.Enum):
    ERADICATION = "EradicationGuaranteed"
    ENDEMIC = "EndemicGuaranteed"
    INDETERMINATE = "Indeterminate"


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteInput(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class ModelParams:
    """Rates of the SIR system with vital dynamics and reinfection.

    Attributes:
        q: Recruitment rate (individuals per unit time).
        a: Natural death rate.
        b: Rate of recovery without immunity (back to S).
        c: Recovery rate.
        gamma: Transmission coefficient.
    """

    q: float
    a: float
    b: float
    c: float
    gamma: float

    def __post_init__(self) -> None:
        for name in ("q", "a", "b", "c", "gamma"):
            value = _check_finite(name, getattr(self, name))
            if value <= 0:
                raise InvalidParameter(f"{name} must be > 0, got {value!r}")
            object.__setattr__(self, name, value)

    @property
    def removal_rate(self) -> float:
        """a + b + c, the total exit rate from the infected class."""
        return self.a + self.b + self.c

    @property
    def r0(self) -> float:
        return self.gamma / self.removal_rate

    @property
    def disease_free_population(self) -> float:
        return self.q / self.a

    def replace(self, **changes: float) -> "ModelParams":
        values = {k: getattr(self, k) for k in ("q", "a", "b", "c", "gamma")}
        values.update(changes)
        return ModelParams(**values)


class NoiseBoundWarning(UserWarning):
    """The transmission amplitude d exceeds gamma."""


@dataclass(frozen=True)
class NoiseBounds:
    """Amplitudes of the bounded fluctuations on gamma (``d``) and q (``e``)."""

    d: float
    e: Optional[float] = None

    def __post_init__(self) -> None:
        d = _check_finite("d", self.d)
        if d <= 0:
            raise InvalidParameter(f"d must be > 0, got {d!r}")
        object.__setattr__(self, "d", d)
        if self.e is not None:
            e = _check_finite("e", self.e)
            if e <= 0:
                raise InvalidParameter(f"e must be > 0, got {e!r}")
            object.__setattr__(self, "e", e)

    def validate_against(self, params: ModelParams) -> None:
        """Check the amplitudes against the rates they perturb.

        ``e > q`` is rejected: negative recruitment breaks the population
        bounds. ``d > gamma`` only warns, since a transiently negative
        effective transmission still leaves the octant invariant (the
        eradication presets use gamma=1.25 with d=1.5).
        """
        if self.d > params.gamma:
            warnings.warn(f"d={self.d} exceeds gamma={params.gamma}; gamma + Phi may turn negative",
                          NoiseBoundWarning, stacklevel=2)
        if self.e is not None and self.e > params.q:
            raise InvalidParameter(f"e must satisfy 0 < e <= q={params.q}, got {self.e}")

    def gamma_floor(self, params: ModelParams) -> float:
        return params.gamma - self.d

    def q_range(self, params: ModelParams) -> tuple[float, float]:
        e = 0.0 if self.e is None else self.e
        return params.q - e, params.q + e


@dataclass(frozen=True)
class SirState:
    """One point (S, I, R).

    Finiteness is enforced here; membership in the nonnegative octant is
    enforced by the integrator's positivity guard, which needs to see
    slightly negative roundoff values before clamping them.
    """

    S: float
    I: float
    R: float

    def __post_init__(self) -> None:
        for name in ("S", "I", "R"):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))

    @classmethod
    def from_array(cls, u: Sequence[float]) -> "SirState":
        S, I, R = (float(x) for x in u)
        return cls(S, I, R)

    @property
    def N(self) -> float:
        return self.S + self.I + self.R

    @property
    def in_octant(self) -> bool:
        return self.S >= 0 and self.I >= 0 and self.R >= 0

    def as_array(self) -> np.ndarray:
        return np.array([self.S, self.I, self.R], dtype=float)

    def __iter__(self):
        return iter((self.S, self.I, self.R))


@dataclass(frozen=True)
class ModelVariant:
    """A model tag plus the noise paths it is driven by.

    ``phi`` holds the transmission fluctuation Phi(theta_t omega) and ``q``
    the recruitment fluctuation Phi_q(theta_t omega); both are added to the
    nominal rates in :class:`ModelParams`.
    """

    tag: Variant
    phi: Optional["SamplePath"] = field(default=None, compare=False)
    q: Optional["SamplePath"] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tag", Variant(self.tag))
        if self.tag.is_random and self.phi is None:
            raise InvalidParameter(f"{self.tag.value} requires a Phi path")
        if self.tag is Variant.RANDOM_GAMMA_RANDOM_Q and self.q is None:
            raise InvalidParameter(f"{self.tag.value} requires a q path")

    @classmethod
    def classical(cls) -> "ModelVariant":
        return cls(Variant.CLASSICAL)

    @classmethod
    def deterministic(cls) -> "ModelVariant":
        return cls(Variant.DETERMINISTIC)

    def phi_at(self, t):
        if self.tag.is_random:
            return self.phi(t)
        return np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else 0.0

    def q_fluctuation_at(self, t):
        if self.tag is Variant.RANDOM_GAMMA_RANDOM_Q:
            return self.q(t)
        return np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else 0.0


def _as_tag(variant) -> Variant:
    return variant.tag if isinstance(variant, ModelVariant) else Variant(variant)


def _as_state(u) -> SirState:
    return u if isinstance(u, SirState) else SirState.from_array(u)


def interaction(S: float, I: float, R: float) -> float:
    """S*I/(S+I+R), defined as 0 on the invariant plane I = 0."""
    if I == 0:
        return 0.0
    N = S + I + R
    if N == 0:
        raise DegeneratePopulation("S+I+R = 0 with I != 0")
    return S * I / N


def vector_field(variant, params: ModelParams, t: float, u, phi_value: float = 0.0,
                 q_value: Optional[float] = None) -> np.ndarray:
    """Right-hand side (dS/dt, dI/dt, dR/dt).

    ``q_value`` is the effective recruitment rate and defaults to ``params.q``.
    It is only read by ``RANDOM_GAMMA_RANDOM_Q``; ``phi_value`` is only read by
    the two random variants. ``t`` is accepted for signature uniformity; the
    time dependence is carried entirely by ``phi_value`` and ``q_value``.
    """
    tag = _as_tag(variant)
    state = _as_state(u)
    _check_finite("t", t)
    phi_value = _check_finite("phi_value", phi_value)
    S, I, R = state.S, state.I, state.R
    flux = interaction(S, I, R)

    if tag is Variant.CLASSICAL:
        g = params.gamma
        return np.array([-g * flux, g * flux - params.c * I, params.c * I])

    g = params.gamma + (phi_value if tag.is_random else 0.0)
    if tag is Variant.RANDOM_GAMMA_RANDOM_Q:
        q_eff = params.q if q_value is None else _check_finite("q_value", q_value)
    else:
        q_eff = params.q
    a, b, c = params.a, params.b, params.c
    return np.array([
        q_eff - a * S + b * I - g * flux,
        -(a + b + c) * I + g * flux,
        c * I - a * R,
    ])


def jacobian(params: ModelParams, u, phi_value: float = 0.0,
             variant=Variant.DETERMINISTIC) -> np.ndarray:
    """Jacobian of the vector field with gamma replaced by gamma + phi_value.

    Rows and columns are ordered (S, I, R). For ``CLASSICAL`` the vital
    dynamics and reinfection terms are dropped.
    """
    tag = _as_tag(variant)
    S, I, R = _as_state(u)
    phi_value = _check_finite("phi_value", phi_value)
    N = S + I + R
    if N == 0:
        raise DegeneratePopulation("Jacobian undefined at S+I+R = 0")
    N2 = N * N
    dS = I * (I + R) / N2
    dI = S * (S + R) / N2
    dR = -S * I / N2

    if tag is Variant.CLASSICAL:
        g, a, b = params.gamma, 0.0, 0.0
        removal = params.c
    else:
        g = params.gamma + phi_value
        a, b = params.a, params.b
        removal = params.removal_rate
    c = params.c
    return np.array([
        [-a - g * dS, b - g * dI, -g * dR],
        [g * dS, -removal + g * dI, g * dR],
        [0.0, c, -a],
    ])


def disease_free_equilibrium(params: ModelParams) -> SirState:
    return SirState(params.q / params.a, 0.0, 0.0)


def endemic_equilibrium(params: ModelParams) -> Optional[SirState]:
    """The endemic fixed point, or None when gamma <= a+b+c."""
    q, a, b, c, g = params.q, params.a, params.b, params.c, params.gamma
    excess = g - (a + b + c)
    if excess <= 0:
        return None
    I_star = q * excess / (g * (a + c))
    return SirState(q * (a + b + c) / (g * a), I_star, c / a * I_star)


def equilibria(params: ModelParams) -> list[SirState]:
    points = [disease_free_equilibrium(params)]
    endemic = endemic_equilibrium(params)
    if endemic is not None:
        points.append(endemic)
    return points


def characteristic_coefficients(J: np.ndarray) -> tuple[float, float, float]:
    """Coefficients (c2, c1, c0) of det(lambda I - J) = lambda^3 + c2 lambda^2 + c1 lambda + c0."""
    J = np.asarray(J, dtype=float)
    trace = J[0, 0] + J[1, 1] + J[2, 2]
    minors = (
        J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        + J[0, 0] * J[2, 2] - J[0, 2] * J[2, 0]
        + J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1]
    )
    det = (
        J[0, 0] * (J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1])
        - J[0, 1] * (J[1, 0] * J[2, 2] - J[1, 2] * J[2, 0])
        + J[0, 2] * (J[1, 0] * J[2, 1] - J[1, 1] * J[2, 0])
    )
    return -trace, minors, -det


def routh_hurwitz_stable(J: np.ndarray) -> bool:
    """Routh-Hurwitz test for a real cubic: all roots in the open left half-plane."""
    c2, c1, c0 = characteristic_coefficients(J)
    return c2 > 0 and c0 > 0 and c2 * c1 > c0


def _classify_eigenvalues(eigs: np.ndarray) -> Stability:
    real = np.real(eigs)
    if np.any(np.abs(real) < HYPERBOLIC_TOL):
        return Stability.NON_HYPERBOLIC
    n_unstable = int(np.sum(real > 0))
    if n_unstable == 0:
        return Stability.EXPONENTIALLY_STABLE
    if n_unstable == 1:
        return Stability.SADDLE_UNSTABLE_DIM1
    return Stability.UNSTABLE


def classify_equilibrium(params: ModelParams, point, variant=Variant.DETERMINISTIC) -> Stability:
    """Classify an equilibrium via its Jacobian spectrum.

    Hyperbolic points are cross-checked with the Routh-Hurwitz criterion on
    the expanded characteristic cubic; a mismatch raises
    :class:`ClassificationDisagreement` instead of trusting either path.
    """
    state = _as_state(point)
    residual = np.linalg.norm(vector_field(variant, params, 0.0, state))
    if residual > EQUILIBRIUM_TOL:
        raise NotAnEquilibrium(f"residual {residual:.3e} exceeds {EQUILIBRIUM_TOL:g} at {state}")
    J = jacobian(params, state, variant=variant)
    eigs = np.linalg.eigvals(J)
    stability = _classify_eigenvalues(eigs)
    if stability is not Stability.NON_HYPERBOLIC:
        rh = routh_hurwitz_stable(J)
        if rh != (stability is Stability.EXPONENTIALLY_STABLE):
            raise ClassificationDisagreement(
                f"eigenvalues {eigs} give {stability.value}, Routh-Hurwitz says stable={rh}")
    return stability


@dataclass(frozen=True)
class EquilibriumInfo:
    point: SirState
    eigenvalues: np.ndarray
    stability: Stability


@dataclass(frozen=True)
class RegimeReport:
    """Threshold ratios and long-run verdict for one parameter set.

    ``r1`` and ``r2`` are only filled for the random variants that use them;
    ``endemic_floor`` is left for empirical estimates from ensembles.
    """

    variant: Variant
    equilibria: list[EquilibriumInfo]
    r0: float
    verdict: Verdict
    r1: Optional[float] = None
    r2: Optional[float] = None
    endemic_floor: Optional[float] = None


def regime_report(params: ModelParams, bounds: Optional[NoiseBounds], variant) -> RegimeReport:
    tag = _as_tag(variant)
    if tag.is_random and bounds is None:
        raise InvalidParameter(f"{tag.value} needs noise bounds")
    if not tag.is_random and bounds is not None:
        raise InvalidParameter(f"{tag.value} takes no noise bounds")
    removal = params.removal_rate
    if tag is Variant.CLASSICAL:
        # R is monotone and bounded by the conserved N, so the integral of I
        # is finite and I(t) -> 0 from every initial state; the equilibria
        # form the continuum I = 0 and are not listed.
        return RegimeReport(tag, [], params.gamma / params.c, Verdict.ERADICATION)

    infos = []
    for point in equilibria(params):
        J = jacobian(params, point)
        infos.append(EquilibriumInfo(point, np.linalg.eigvals(J), classify_equilibrium(params, point)))

    r0 = params.gamma / removal
    r1 = r2 = None

    endemic = params.gamma > removal
    if tag.is_random:
        bounds.validate_against(params)
        gamma0 = bounds.gamma_floor(params)
        r1 = gamma0 / removal
        endemic = gamma0 > removal
        if tag is Variant.RANDOM_GAMMA_RANDOM_Q:
            if bounds.e is None:
                raise InvalidParameter("random_gamma_random_q needs the q amplitude e")
            q0, q1 = bounds.q_range(params)
            r2 = gamma0 * q0 / (q1 * removal)
            endemic = gamma0 * q0 / q1 > removal

    if params.gamma < removal:
        verdict = Verdict.ERADICATION
    elif endemic:
        verdict = Verdict.ENDEMIC
    else:
        verdict = Verdict.INDETERMINATE
    return RegimeReport(tag, infos, r0, verdict, r1=r1, r2=r2)
