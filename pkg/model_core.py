# model_core.py
#  Neyman-Scott generative model:
#    x_it = mu_t + eps_it,  eps_it ~ NIID(0, sigma2),  i = 1..m, t = 1..n
#  Panels are stored as (m, n) arrays: row i = replicate, column t = group.
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from utils import ConfigError, read_json

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


# ================= MEAN SCHEMES =================

@dataclass(frozen=True)
class Constant:
    c: float = 0.0


@dataclass(frozen=True)
class Linear:
    a: float = 0.0
    b: float = 1.0


@dataclass(frozen=True)
class Explicit:
    values: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


@dataclass(frozen=True)
class RandomWalk:
    step_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.step_sd > 0:
            raise ValueError(f"random walk step_sd must be > 0, got {self.step_sd}")


MeanScheme = Union[Constant, Linear, Explicit, RandomWalk]


def materialize_means(scheme: MeanScheme, n: int) -> np.ndarray:
    """The group means (mu_1, ..., mu_n) a scheme produces for n groups."""
    t = np.arange(1, n + 1, dtype=float)
    if isinstance(scheme, Constant):
        return np.full(n, float(scheme.c))
    if isinstance(scheme, Linear):
        return scheme.a + scheme.b * t
    if isinstance(scheme, Explicit):
        if len(scheme.values) != n:
            raise ValueError(
                f"explicit mean sequence has length {len(scheme.values)}, expected n={n}"
            )
        return np.asarray(scheme.values, dtype=float)
    if isinstance(scheme, RandomWalk):
        steps = make_rng(scheme.seed).standard_normal(n) * scheme.step_sd
        return np.cumsum(steps)
    raise TypeError(f"unknown mean scheme: {scheme!r}")


def scheme_to_dict(scheme: MeanScheme) -> dict:
    if isinstance(scheme, Constant):
        return {"kind": "constant", "c": scheme.c}
    if isinstance(scheme, Linear):
        return {"kind": "linear", "a": scheme.a, "b": scheme.b}
    if isinstance(scheme, Explicit):
        return {"kind": "explicit", "values": list(scheme.values)}
    if isinstance(scheme, RandomWalk):
        return {"kind": "randomwalk", "step_sd": scheme.step_sd, "seed": scheme.seed}
    raise TypeError(f"unknown mean scheme: {scheme!r}")


def scheme_from_dict(d: dict) -> MeanScheme:
    try:
        kind = d["kind"]
        if kind == "constant":
            return Constant(float(d["c"]))
        if kind == "linear":
            return Linear(float(d["a"]), float(d["b"]))
        if kind == "explicit":
            return Explicit(tuple(d["values"]))
        if kind == "randomwalk":
            return RandomWalk(float(d["step_sd"]), int(d.get("seed", 0)))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid scheme object {d!r}: {e}") from e
    raise ConfigError(f"unknown scheme kind {kind!r}")


def parse_scheme(text: str) -> MeanScheme:
    """
    Parses the scheme flag grammar:
      constant:<c> | linear:<a>,<b> | explicit:@file | explicit:<v1>,<v2>,...
      | randomwalk:<sd>[,<seed>]
    An explicit file holds whitespace or comma separated numbers, or a JSON list.
    """
    kind, sep, body = text.partition(":")
    kind = kind.strip().lower()
    if not sep or not body.strip():
        raise ConfigError(f"scheme '{text}' must look like <kind>:<args>")
    try:
        if kind == "constant":
            return Constant(float(body))
        if kind == "linear":
            a, b = body.split(",")
            return Linear(float(a), float(b))
        if kind == "explicit":
            if body.startswith("@"):
                return Explicit(tuple(_read_mean_file(body[1:])))
            return Explicit(tuple(float(v) for v in body.split(",")))
        if kind == "randomwalk":
            parts = body.split(",")
            if len(parts) > 2:
                raise ValueError("expected <sd>[,<seed>]")
            seed = int(parts[1]) if len(parts) == 2 else 0
            return RandomWalk(float(parts[0]), seed)
    except (ValueError, OSError) as e:
        raise ConfigError(f"invalid scheme '{text}': {e}") from e
    raise ConfigError(
        f"unknown scheme kind '{kind}' (expected constant, linear, explicit or randomwalk)"
    )


def _read_mean_file(path):
    if path.endswith(".json"):
        return [float(v) for v in read_json(path)]
    with open(path, "r") as f:
        tokens = f.read().replace(",", " ").split()
    return [float(v) for v in tokens]


# ================= MODEL SPEC =================

@dataclass(frozen=True)
class ModelSpec:
    m: int
    n: int
    sigma2: float
    mu: Tuple[float, ...]
    scheme: Optional[MeanScheme] = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(
                f"m must be >= 2 (within-group variance is unidentifiable from one replicate), got {self.m}"
            )
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        mu = tuple(float(v) for v in self.mu)
        if len(mu) != self.n:
            raise ValueError(f"mu has length {len(mu)}, expected n={self.n}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "mu", mu)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "sigma2": self.sigma2,
            "mu": list(self.mu),
            "scheme": scheme_to_dict(self.scheme) if self.scheme is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        scheme = d.get("scheme")
        return cls(
            m=d["m"],
            n=d["n"],
            sigma2=d["sigma2"],
            mu=tuple(d["mu"]),
            scheme=scheme_from_dict(scheme) if scheme else None,
        )


def make_spec(m: int, n: int, sigma2: float, scheme: MeanScheme = Linear(0.0, 1.0)) -> ModelSpec:
    """Instantiates the model with mu materialized from `scheme`."""
    if int(m) != m or m < 2:
        raise ValueError(
            f"m must be >= 2 (within-group variance is unidentifiable from one replicate), got {m}"
        )
    if int(n) != n or n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    mu = materialize_means(scheme, int(n))
    return ModelSpec(m=int(m), n=int(n), sigma2=float(sigma2), mu=tuple(mu.tolist()), scheme=scheme)


# ================= PANELS =================

@dataclass(frozen=True, eq=False)
class PanelData:
    """An (m, n) panel. `spec` and `seed` are None for externally loaded data."""

    values: np.ndarray
    spec: Optional[ModelSpec] = None
    seed: Optional[int] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"panel values must be a 2-d (m, n) array, got shape {values.shape}")
        if values.shape[0] < 2:
            raise ValueError(f"m must be >= 2, panel has {values.shape[0]} replicate row(s)")
        if values.shape[1] < 1:
            raise ValueError("panel has no groups")
        if self.spec is not None and values.shape != (self.spec.m, self.spec.n):
            raise ValueError(
                f"panel shape {values.shape} does not match spec (m={self.spec.m}, n={self.spec.n})"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("panel contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def panel_from_array(values, spec: Optional[ModelSpec] = None, seed: Optional[int] = None) -> PanelData:
    return PanelData(np.asarray(values, dtype=float), spec=spec, seed=seed)


# ================= RANDOM NUMBERS =================
#  Normal draws: numpy Generator over the Philox counter-based bit generator,
#  standard_normal (Ziggurat). A panel is one (m, n) block drawn row-major.

def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & _MASK64))


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, *indices: int) -> int:
    """
    Mixes a master seed with integer indices into a 64-bit seed (SplitMix64
    chaining). Every (master_seed, indices) pair maps to its own seed without
    reference to any other replication, so draws can be made in any order.
    """
    h = _splitmix64(int(master_seed) & _MASK64)
    for idx in indices:
        h = _splitmix64(h ^ (int(idx) & _MASK64))
    return h


def generate_panel(spec: ModelSpec, seed: int) -> PanelData:
    """x_it = mu_t + eps_it; identical (spec, seed) pairs give identical panels."""
    logger.debug("generating panel m=%d n=%d seed=%d", spec.m, spec.n, seed)
    rng = make_rng(seed)
    eps = rng.standard_normal((spec.m, spec.n))
    values = np.asarray(spec.mu)[None, :] + np.sqrt(spec.sigma2) * eps
    return PanelData(values, spec=spec, seed=int(seed) & _MASK64)


def default_scheme() -> MeanScheme:
    # constant means would let pooled estimators recover mu_t by accident
    return Linear(0.0, 1.0)


def as_scheme(value: Union[str, dict, MeanScheme, None]) -> MeanScheme:
    if value is None:
        return default_scheme()
    if isinstance(value, str):
        return parse_scheme(value)
    if isinstance(value, dict):
        return scheme_from_dict(value)
    if isinstance(value, (Constant, Linear, Explicit, RandomWalk)):
        return value
    raise ConfigError(f"cannot interpret scheme {value!r}")


def scheme_label(scheme: MeanScheme) -> str:
    """Inverse of parse_scheme for the non-file forms."""
    if isinstance(scheme, Constant):
        return f"constant:{scheme.c!r}"
    if isinstance(scheme, Linear):
        return f"linear:{scheme.a!r},{scheme.b!r}"
    if isinstance(scheme, Explicit):
        return "explicit:" + ",".join(repr(v) for v in scheme.values)
    return f"randomwalk:{scheme.step_sd!r},{scheme.seed}"


