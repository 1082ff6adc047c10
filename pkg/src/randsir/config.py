"""Experiment configuration files and the six figure presets.

The file format is flat ``key = value`` text; ``#`` starts a comment.
Every key is required except the noise amplitudes ``d``/``e`` (needed only
by the random variants), ``tau`` and ``out_dir``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

from .errors import ConfigError, InvalidParameter
from .model import ModelParams, NoiseBounds, SirState, Variant
from .noise import OUConfig, build_variant, derive_seed, ou_path

REQUIRED_KEYS = (
    "variant", "q", "a", "b", "c", "gamma", "S0", "I0", "R0",
    "t_start", "t_end", "dt", "dt_out", "seed", "realizations", "pullback_horizon",
)
OPTIONAL_KEYS = ("d", "e", "tau", "out_dir")
FLOAT_KEYS = {"q", "a", "b", "c", "gamma", "d", "e", "S0", "I0", "R0", "t_start", "t_end",
              "dt", "dt_out", "pullback_horizon", "tau"}
INT_KEYS = {"seed", "realizations"}


@dataclass(frozen=True)
class ExperimentConfig:
    variant: Variant
    params: ModelParams
    bounds: Optional[NoiseBounds]
    u0: SirState
    t_span: tuple[float, float]
    dt: float
    dt_out: float
    seed: int
    realizations: int = 1
    pullback_horizon: float = 40.0
    tau: float = 0.0
    out_dir: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.realizations < 1:
            raise ConfigError(f"realizations must be >= 1, got {self.realizations}")
        if self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed}")
        if not self.t_span[0] < self.t_span[1]:
            raise ConfigError(f"need t_start < t_end, got {self.t_span}")
        if not self.dt > 0 or not self.dt_out > 0:
            raise ConfigError("dt and dt_out must be > 0")
        if self.pullback_horizon < 0:
            raise ConfigError("pullback_horizon must be >= 0")
        if not self.u0.in_octant:
            raise ConfigError(f"initial state must be nonnegative, got {self.u0}")
        if self.variant.is_random:
            if self.bounds is None:
                raise ConfigError(f"variant {self.variant.value} requires d")
            if self.variant is Variant.RANDOM_GAMMA_RANDOM_Q and self.bounds.e is None:
                raise ConfigError(f"variant {self.variant.value} requires e")
            try:
                self.bounds.validate_against(self.params)
            except InvalidParameter as exc:
                raise ConfigError(str(exc)) from exc

    # ---------------------------------------------------------- noise
    def noise_window(self, extra_horizon: float = 0.0) -> tuple[float, float]:
        horizon = max(self.pullback_horizon, extra_horizon)
        return min(self.t_span[0], self.tau - horizon), max(self.t_span[1], self.tau)

    def member_seed(self, k: int) -> int:
        return derive_seed(self.seed, k)

    def ou_for(self, k: int, extra_horizon: float = 0.0):
        lo, hi = self.noise_window(extra_horizon)
        return ou_path(OUConfig(lo, hi, self.dt, self.member_seed(k)))

    def variant_for(self, k: int, extra_horizon: float = 0.0):
        if not self.variant.is_random:
            return build_variant(self.variant)
        return build_variant(self.variant, self.ou_for(k, extra_horizon), self.bounds)

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    # ---------------------------------------------------------- text form
    def to_text(self) -> str:
        p = self.params
        lines = [
            f"variant = {self.variant.value}",
            f"q = {p.q!r}", f"a = {p.a!r}", f"b = {p.b!r}", f"c = {p.c!r}", f"gamma = {p.gamma!r}",
        ]
        if self.bounds is not None:
            lines.append(f"d = {self.bounds.d!r}")
            if self.bounds.e is not None:
                lines.append(f"e = {self.bounds.e!r}")
        lines += [
            f"S0 = {self.u0.S!r}", f"I0 = {self.u0.I!r}", f"R0 = {self.u0.R!r}",
            f"t_start = {self.t_span[0]!r}", f"t_end = {self.t_span[1]!r}",
            f"dt = {self.dt!r}", f"dt_out = {self.dt_out!r}",
            f"seed = {self.seed}", f"realizations = {self.realizations}",
            f"pullback_horizon = {self.pullback_horizon!r}", f"tau = {self.tau!r}",
        ]
        if self.out_dir is not None:
            lines.append(f"out_dir = {self.out_dir}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in REQUIRED_KEYS and key not in OPTIONAL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")

    values: dict[str, object] = {}
    for key, value in raw.items():
        try:
            if key in FLOAT_KEYS:
                values[key] = float(value)
                if not math.isfinite(values[key]):
                    raise ValueError
            elif key in INT_KEYS:
                values[key] = int(value)
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None

    try:
        variant = Variant(values["variant"])
    except ValueError:
        choices = ", ".join(v.value for v in Variant)
        raise ConfigError(f"variant: {values['variant']!r} is not one of {choices}") from None
    try:
        params = ModelParams(*(values[k] for k in ("q", "a", "b", "c", "gamma")))
        bounds = None
        if variant.is_random and "d" in values:
            bounds = NoiseBounds(values["d"], values.get("e"))
        u0 = SirState(values["S0"], values["I0"], values["R0"])
    except InvalidParameter as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        variant=variant, params=params, bounds=bounds, u0=u0,
        t_span=(values["t_start"], values["t_end"]), dt=values["dt"], dt_out=values["dt_out"],
        seed=values["seed"], realizations=values["realizations"],
        pullback_horizon=values["pullback_horizon"], tau=values.get("tau", 0.0),
        out_dir=values.get("out_dir"),
    )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)


FIGURE_IDS = (3, 4, 5, 6, 7, 8)
_PRESET_VARIANT = {3: Variant.DETERMINISTIC, 4: Variant.DETERMINISTIC,
                   5: Variant.RANDOM_GAMMA, 6: Variant.RANDOM_GAMMA,
                   7: Variant.RANDOM_GAMMA_RANDOM_Q, 8: Variant.RANDOM_GAMMA_RANDOM_Q}


def figure_preset(fig_id: int, seed: int = 0, realizations: int = 5) -> ExperimentConfig:
    """Parameter set of one of the six published experiments.

    a=1.5, b=0.5, c=0.7, q=5, u0=(25, 1, 0); gamma=1.25 for the eradication
    panels (3, 5, 7) and 5 for the endemic ones (4, 6, 8); d=1.5 from 5 on
    and e=0.5 from 7 on.
    """
    if fig_id not in FIGURE_IDS:
        raise ConfigError(f"figure id must be one of {FIGURE_IDS}, got {fig_id}")
    variant = _PRESET_VARIANT[fig_id]
    gamma = 1.25 if fig_id % 2 == 1 else 5.0
    bounds = None
    if variant is Variant.RANDOM_GAMMA:
        bounds = NoiseBounds(1.5)
    elif variant is Variant.RANDOM_GAMMA_RANDOM_Q:
        bounds = NoiseBounds(1.5, 0.5)
    return ExperimentConfig(
        variant=variant,
        params=ModelParams(q=5.0, a=1.5, b=0.5, c=0.7, gamma=gamma),
        bounds=bounds,
        u0=SirState(25.0, 1.0, 0.0),
        t_span=(0.0, 40.0),
        dt=1e-3,
        dt_out=1e-2,
        seed=seed,
        realizations=realizations,
        pullback_horizon=40.0,
    )
