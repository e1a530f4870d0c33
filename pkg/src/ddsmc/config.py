"""Flat key = value run configuration.

The format is deliberately plain: one `key = value` per line, `#` starts a
comment, blank lines ignored.  Unknown keys are errors (typos must not be
silently absorbed into defaults), and every parse error carries the line
number it came from.
"""

from __future__ import annotations

import dataclasses

from .core import ConfigError
from .diffusion import FAMILIES
from .proposal import PROPOSALS
from .smc import RESAMPLE_SCHEMES

REQUIRED_KEYS = ("proposal", "reward")

REWARD_SELECTORS = ("gmm_top", "gmm_bottom", "quadratic", "zero")

TEMPER_KINDS = ("linear", "exp_capped", "zero")

_DEFAULTS = {
    "family": "masked",
    "particles": "2000",
    "steps": "100",
    "alpha": "1.0",
    "temper": "linear",
    "temper_base": "1.05",
    "noise": "linear",
    "ess_min": "",
    "resample": "full_systematic",
    "eta_cap": "0.1",
    "gumbel_tau": "0.5",
    "gumbel_samples": "100",
    "seed": "0",
    "grid_size": "64",
    "gmm_components": "",
    "model_file": "",
    "reward_wx": "0.01",
    "reward_wy": "1.0",
    "reward_ox": "0.0",
    "reward_oy": "0.0",
    "workers": "1",
    "final_resample": "false",
    "out": "out",
    "proposals": "reverse,locally_optimal,taylor,approx_guidance",
}

_KNOWN_KEYS = frozenset(_DEFAULTS) | set(REQUIRED_KEYS)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated experiment configuration."""

    family: str
    proposal: str
    particles: int
    steps: int
    alpha: float
    temper: str
    temper_base: float
    noise: str
    ess_min: float
    resample: str
    eta_cap: float
    gumbel_tau: float
    gumbel_samples: int
    seed: int
    grid_size: int
    gmm_components: tuple
    model_file: str
    reward: str
    reward_wx: float
    reward_wy: float
    reward_ox: float
    reward_oy: float
    workers: int
    final_resample: bool
    out: str
    proposals: tuple


def _parse_bool(raw: str, key: str, line: int) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"line {line}: {key} expects a boolean, got {raw!r}")


def _parse_num(raw: str, key: str, line: int, kind):
    try:
        return kind(raw)
    except ValueError:
        name = "an integer" if kind is int else "a number"
        raise ConfigError(
            f"line {line}: {key} expects {name}, got {raw!r}"
        ) from None


def _parse_components(raw: str, line: int) -> tuple:
    """Semicolon-separated components 'mean_i, mean_j, sigma, weight'."""
    comps = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 4:
            raise ConfigError(
                f"line {line}: gmm component needs 4 numbers "
                f"(mean_i, mean_j, sigma, weight), got {chunk!r}"
            )
        try:
            mi, mj, sigma, weight = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(
                f"line {line}: gmm component has a non-numeric entry: {chunk!r}"
            ) from None
        comps.append((mi, mj, sigma, weight))
    return tuple(comps)


def parse_config(path) -> RunConfig:
    """Parse and validate; raises ConfigError with a line number on any
    problem."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw_lines = fh.readlines()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from None
    values = dict(_DEFAULTS)
    seen_lines: dict = {}
    for num, raw in enumerate(raw_lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {num}: expected 'key = value', got {text!r}")
        key, _, val = text.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {num}: unknown key {key!r}")
        if key in seen_lines:
            raise ConfigError(
                f"line {num}: duplicate key {key!r} (first set on line "
                f"{seen_lines[key]})"
            )
        seen_lines[key] = num
        values[key] = val

    missing = [k for k in REQUIRED_KEYS if k not in seen_lines]
    if missing:
        raise ConfigError(
            "missing required keys: " + ", ".join(sorted(missing))
        )

    def line_of(key):
        return seen_lines.get(key, 0)

    family = values["family"]
    if family not in FAMILIES:
        raise ConfigError(
            f"line {line_of('family')}: family must be one of {FAMILIES}"
        )
    proposal = values["proposal"]
    if proposal not in PROPOSALS:
        raise ConfigError(
            f"line {line_of('proposal')}: proposal must be one of {PROPOSALS}"
        )
    reward = values["reward"]
    if reward not in REWARD_SELECTORS:
        raise ConfigError(
            f"line {line_of('reward')}: reward must be one of {REWARD_SELECTORS}"
        )
    temper = values["temper"]
    if temper not in TEMPER_KINDS:
        raise ConfigError(
            f"line {line_of('temper')}: temper must be one of {TEMPER_KINDS}"
        )
    noise = values["noise"]
    if noise != "linear":
        raise ConfigError(f"line {line_of('noise')}: noise must be 'linear'")
    resample = values["resample"]
    if resample not in RESAMPLE_SCHEMES:
        raise ConfigError(
            f"line {line_of('resample')}: resample must be one of "
            f"{RESAMPLE_SCHEMES}"
        )

    particles = _parse_num(values["particles"], "particles", line_of("particles"), int)
    steps = _parse_num(values["steps"], "steps", line_of("steps"), int)
    alpha = _parse_num(values["alpha"], "alpha", line_of("alpha"), float)
    temper_base = _parse_num(
        values["temper_base"], "temper_base", line_of("temper_base"), float
    )
    eta_cap = _parse_num(values["eta_cap"], "eta_cap", line_of("eta_cap"), float)
    gumbel_tau = _parse_num(
        values["gumbel_tau"], "gumbel_tau", line_of("gumbel_tau"), float
    )
    gumbel_samples = _parse_num(
        values["gumbel_samples"], "gumbel_samples", line_of("gumbel_samples"), int
    )
    seed = _parse_num(values["seed"], "seed", line_of("seed"), int)
    grid_size = _parse_num(values["grid_size"], "grid_size", line_of("grid_size"), int)
    workers = _parse_num(values["workers"], "workers", line_of("workers"), int)
    final_resample = _parse_bool(
        values["final_resample"], "final_resample", line_of("final_resample")
    )
    ess_min_raw = values["ess_min"]
    ess_min = (
        particles / 2.0
        if ess_min_raw == ""
        else _parse_num(ess_min_raw, "ess_min", line_of("ess_min"), float)
    )
    reward_wx = _parse_num(values["reward_wx"], "reward_wx", line_of("reward_wx"), float)
    reward_wy = _parse_num(values["reward_wy"], "reward_wy", line_of("reward_wy"), float)
    reward_ox = _parse_num(values["reward_ox"], "reward_ox", line_of("reward_ox"), float)
    reward_oy = _parse_num(values["reward_oy"], "reward_oy", line_of("reward_oy"), float)
    gmm_components = _parse_components(
        values["gmm_components"], line_of("gmm_components")
    )
    model_file = values["model_file"]
    if model_file and gmm_components:
        raise ConfigError(
            f"line {line_of('model_file')}: model_file and gmm_components "
            "are mutually exclusive"
        )
    proposals = tuple(
        p.strip() for p in values["proposals"].split(",") if p.strip()
    )
    for p in proposals:
        if p not in PROPOSALS:
            raise ConfigError(
                f"line {line_of('proposals')}: unknown proposal {p!r} in list"
            )
    if not proposals:
        raise ConfigError(f"line {line_of('proposals')}: proposals list is empty")

    if particles < 1:
        raise ConfigError(f"line {line_of('particles')}: particles must be >= 1")
    if steps < 1:
        raise ConfigError(f"line {line_of('steps')}: steps must be >= 1")
    if alpha <= 0.0:
        raise ConfigError(f"line {line_of('alpha')}: alpha must be > 0")
    if not 1.0 <= ess_min <= particles:
        raise ConfigError(
            f"line {line_of('ess_min')}: ess_min must lie in [1, particles]"
        )
    if eta_cap < 0.0:
        raise ConfigError(f"line {line_of('eta_cap')}: eta_cap must be >= 0")
    if gumbel_tau <= 0.0:
        raise ConfigError(f"line {line_of('gumbel_tau')}: gumbel_tau must be > 0")
    if gumbel_samples < 1:
        raise ConfigError(
            f"line {line_of('gumbel_samples')}: gumbel_samples must be >= 1"
        )
    if seed < 0 or seed >= 2**63:
        raise ConfigError(f"line {line_of('seed')}: seed must lie in [0, 2^63)")
    if grid_size < 2:
        raise ConfigError(f"line {line_of('grid_size')}: grid_size must be >= 2")
    if workers < 1:
        raise ConfigError(f"line {line_of('workers')}: workers must be >= 1")

    return RunConfig(
        family=family,
        proposal=proposal,
        particles=particles,
        steps=steps,
        alpha=alpha,
        temper=temper,
        temper_base=temper_base,
        noise=noise,
        ess_min=ess_min,
        resample=resample,
        eta_cap=eta_cap,
        gumbel_tau=gumbel_tau,
        gumbel_samples=gumbel_samples,
        seed=seed,
        grid_size=grid_size,
        gmm_components=gmm_components,
        model_file=model_file,
        reward=reward,
        reward_wx=reward_wx,
        reward_wy=reward_wy,
        reward_ox=reward_ox,
        reward_oy=reward_oy,
        workers=workers,
        final_resample=final_resample,
        out=values["out"],
        proposals=proposals,
    )
