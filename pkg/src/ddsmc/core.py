"""Core domain types, schedules, and numerically safe primitives.

Shared vocabulary for the whole package: token states are 1-D integer
arrays over a finite vocabulary, per-position distributions are 1-D float
arrays on the probability simplex, and particle weights live in log space
until a caller explicitly asks for linear weights.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

# Floor applied before taking the log of a kernel mass that is known to be
# positive (it was sampled under a proposal with matching support).  Exact
# zeros are never floored: impossible states keep -inf log mass.
PROB_FLOOR = 1e-12

# Tolerance for "weights are normalized" contracts.
WEIGHT_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid configuration value, schedule parameter, or config file."""


class DegeneracyError(ArithmeticError):
    """Every particle weight collapsed to zero mass."""


class GuardError(RuntimeError):
    """A computation was refused because an enumeration guard tripped."""


def safe_log(p):
    """Elementwise log of nonnegative masses.

    Exact zeros map to -inf; positive values are floored at PROB_FLOOR so
    that a mass which underflowed to a subnormal cannot produce -inf for a
    state that was actually sampled.
    """
    arr = np.asarray(p, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr < 0.0):
        raise ValueError("safe_log requires nonnegative input")
    out = np.full(arr.shape, -np.inf)
    pos = arr > 0.0
    np.log(np.maximum(arr, PROB_FLOOR), out=out, where=pos)
    return float(out[0]) if scalar else out


def logsumexp(a, axis=None):
    """Stable log(sum(exp(a))); rows of all -inf give -inf."""
    a = np.asarray(a, dtype=np.float64)
    m = np.amax(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(-1)[0])
    return np.squeeze(out, axis=axis)


def log_normalize(log_values):
    """Normalize a vector of log masses.

    Returns ``(log_probs, log_norm)`` with ``log_norm = logsumexp(log_values)``
    and ``log_probs = log_values - log_norm``.  Entries may be -inf; raises
    DegeneracyError when every entry is -inf, ValueError on NaN or +inf.
    """
    v = np.asarray(log_values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_normalize requires at least one entry")
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise ValueError("log_normalize requires entries in [-inf, inf)")
    log_norm = logsumexp(v)
    if not np.isfinite(log_norm):
        raise DegeneracyError("all log masses are -inf")
    return v - log_norm, float(log_norm)


@dataclasses.dataclass(frozen=True)
class Vocab:
    """Token vocabulary: total size and the optional mask index."""

    size_total: int
    mask_index: int | None = None

    def __post_init__(self):
        if self.size_total < 2:
            raise ValueError("vocabulary needs at least two tokens")
        if self.mask_index is not None and not (
            0 <= self.mask_index < self.size_total
        ):
            raise ValueError("mask_index out of range")

    @property
    def data_size(self) -> int:
        return self.size_total - (1 if self.mask_index is not None else 0)

    def data_categories(self) -> np.ndarray:
        """Vocabulary indices of the data categories, in order."""
        cats = np.arange(self.size_total, dtype=np.int64)
        if self.mask_index is not None:
            cats = np.delete(cats, self.mask_index)
        return cats


def check_token_state(tokens, vocab: Vocab) -> np.ndarray:
    """Validate and return a 1-D int64 token state."""
    arr = np.asarray(tokens)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("token state must be a nonempty 1-D array")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("token state must be integer valued")
    if np.any(arr < 0) or np.any(arr >= vocab.size_total):
        raise ValueError("token out of vocabulary range")
    return arr.astype(np.int64)


def is_distribution(vec, tol: float = WEIGHT_TOL) -> bool:
    v = np.asarray(vec, dtype=np.float64)
    return bool(v.ndim == 1 and np.all(v >= 0.0) and abs(v.sum() - 1.0) <= tol)


@dataclasses.dataclass(frozen=True)
class NoiseSchedule:
    """Continuous-time noise level alpha(t): alpha(0)=1, alpha(1)=0, strictly
    decreasing."""

    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise ConfigError(f"unknown noise schedule kind: {self.kind!r}")

    def alpha(self, t: float) -> float:
        if not 0.0 <= t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        return 1.0 - t


def noise_alpha(schedule: NoiseSchedule, t: float) -> float:
    return schedule.alpha(t)


@dataclasses.dataclass(frozen=True)
class TemperSchedule:
    """Tempering strength lambda(t).

    Kinds:

    * ``linear``: lambda = 1 - t.
    * ``exp_capped``: lambda = min(base**(T*(1-t)) - 1, 1); requires
      base**T >= 2 so that lambda(0) reaches 1.
    * ``zero``: lambda identically 0.  Diagnostic mode for untwisted runs;
      exempt from the lambda(0) = 1 endpoint contract of the tempering kinds.
    """

    kind: str = "linear"
    total_steps: int = 100
    base: float = 1.05

    def __post_init__(self):
        if self.kind not in ("linear", "exp_capped", "zero"):
            raise ConfigError(f"unknown tempering kind: {self.kind!r}")
        if self.kind == "exp_capped":
            if self.base <= 1.0:
                raise ConfigError("exp_capped tempering requires base > 1")
            if self.total_steps < 1:
                raise ConfigError("exp_capped tempering requires steps >= 1")
            if self.total_steps * math.log(self.base) < math.log(2.0):
                raise ConfigError(
                    "exp_capped tempering cannot reach lambda=1: "
                    "need base**steps >= 2"
                )

    def lam(self, t: float) -> float:
        if not 0.0 <= t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        if self.kind == "zero":
            return 0.0
        if self.kind == "linear":
            return 1.0 - t
        exponent = self.total_steps * (1.0 - t) * math.log(self.base)
        if exponent >= math.log(2.0):
            return 1.0
        return math.expm1(exponent)


def temper_lambda(schedule: TemperSchedule, t: float) -> float:
    return schedule.lam(t)


@dataclasses.dataclass
class ParticleSet:
    """A weighted population of token states.

    ``log_weights`` are kept normalized (logsumexp == 0 within WEIGHT_TOL).
    ``substream_ids`` records the RNG lane of each slot; resampled copies
    inherit the lane of the slot they land in, which is what keeps clones
    statistically independent afterwards.
    """

    states: np.ndarray
    log_weights: np.ndarray
    substream_ids: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.log_weights = np.asarray(self.log_weights, dtype=np.float64)
        self.substream_ids = np.asarray(self.substream_ids, dtype=np.int64)
        if self.states.ndim != 2:
            raise ValueError("states must be (n, length)")
        n = self.states.shape[0]
        if n < 1:
            raise ValueError("particle set must be nonempty")
        if self.log_weights.shape != (n,) or self.substream_ids.shape != (n,):
            raise ValueError("weights/substream_ids must be shape (n,)")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def length(self) -> int:
        return self.states.shape[1]

    def weights(self) -> np.ndarray:
        """Linear normalized weights."""
        log_probs, _ = log_normalize(self.log_weights)
        return np.exp(log_probs)

    def validate(self, vocab: Vocab | None = None):
        if abs(logsumexp(self.log_weights)) > WEIGHT_TOL:
            raise ValueError("particle weights are not normalized")
        if vocab is not None:
            if np.any(self.states < 0) or np.any(self.states >= vocab.size_total):
                raise ValueError("particle state out of vocabulary range")


def uniform_log_weights(n: int) -> np.ndarray:
    return np.full(n, -math.log(n))


def encode_states(states, size_total: int) -> np.ndarray:
    """Row-major integer codes for a batch of token states (n, length)."""
    arr = np.asarray(states, dtype=np.int64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    length = arr.shape[1]
    if size_total**length > 2**62:
        raise GuardError("state space too large to encode as int64")
    powers = size_total ** np.arange(length - 1, -1, -1, dtype=np.int64)
    codes = arr @ powers
    return int(codes[0]) if single else codes


def decode_state(code: int, size_total: int, length: int) -> np.ndarray:
    tokens = np.empty(length, dtype=np.int64)
    for pos in range(length - 1, -1, -1):
        tokens[pos] = code % size_total
        code //= size_total
    return tokens
