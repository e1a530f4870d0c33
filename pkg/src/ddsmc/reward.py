"""Reward functions on relaxed token states, estimated intermediate
rewards, and the two gradient routes used by the factorized proposal.

A reward is a scalar function of relaxed rows (L, V): one simplex row per
position.  Hard states are the special case of one-hot rows.  Rewards that
declare linearity expose their coefficient table, which makes the
estimated intermediate reward exact (expectation of a linear function is
the function of the expectation) and makes its gradient the coefficients
themselves; everything else goes through Gumbel-Softmax Monte Carlo.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np

from .core import GuardError, Vocab, safe_log
from .diffusion import TabularModel, denoiser_jacobian, denoiser_rows

EXPECTATION_GUARD = 2**20


@dataclasses.dataclass(frozen=True)
class RewardFn:
    """Scalar reward on relaxed rows (L, V).

    ``declared_linear`` means value(rows) = sum(coeffs * rows); such rewards
    must carry their coefficient table.  ``grad`` (rows -> (L, V)) is
    optional for nonlinear rewards; central finite differences fill in when
    it is absent.
    """

    value: Callable[[np.ndarray], float]
    declared_linear: bool = False
    coeffs: np.ndarray | None = None
    grad: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.declared_linear and self.coeffs is None:
            raise ValueError("linear rewards must carry their coefficients")


def linear_reward(coeffs) -> RewardFn:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2:
        raise ValueError("coefficients must be (length, size_total)")

    def value(rows):
        return float(np.sum(coeffs * rows))

    def grad(rows):
        return np.array(coeffs, copy=True)

    return RewardFn(value=value, declared_linear=True, coeffs=coeffs, grad=grad)


# Axis weights and offsets of the two benchmark quadratic rewards: the
# first selects the low-|y| mixture row, the second the y=1 row.
GMM_TOP = ((0.01, 1.0), (0.0, 0.0))
GMM_BOTTOM = ((1.0, 0.1), (0.0, 1.0))


def gmm_reward(
    axis_weights=(0.01, 1.0), offsets=(0.0, 0.0), vocab: Vocab | None = None,
    grid_size: int = 64,
) -> RewardFn:
    """Separable quadratic reward on the 2-D grid.

    Grid index i maps to the coordinate ihat = 12 * (i / (grid_size - 1) - 1/2),
    and r(x, y) = -w_x * (xhat - o_x)^2 - w_y * (yhat - o_y)^2, extended
    linearly to relaxed rows.  The mask coordinate (when present) carries
    coefficient 0, consistent with zero-mask denoiser outputs.
    """
    if vocab is None:
        vocab = Vocab(grid_size + 1, mask_index=grid_size)
    if vocab.data_size != grid_size:
        raise ValueError("vocab data size must equal grid_size")
    ihat = 12.0 * (np.arange(grid_size) / (grid_size - 1.0) - 0.5)
    coeffs = np.zeros((2, vocab.size_total))
    cats = vocab.data_categories()
    for axis in range(2):
        w = axis_weights[axis]
        o = offsets[axis]
        coeffs[axis, cats] = -w * (ihat - o) ** 2
    return linear_reward(coeffs)


def reward_grad(reward: RewardFn, rows: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d value / d rows, via the declared gradient or central differences."""
    if reward.grad is not None:
        return np.asarray(reward.grad(rows), dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    out = np.empty_like(rows)
    work = np.array(rows, copy=True)
    for l in range(rows.shape[0]):
        for j in range(rows.shape[1]):
            orig = work[l, j]
            work[l, j] = orig + h
            hi = reward.value(work)
            work[l, j] = orig - h
            lo = reward.value(work)
            work[l, j] = orig
            out[l, j] = (hi - lo) / (2.0 * h)
    return out


@dataclasses.dataclass(frozen=True)
class GumbelConfig:
    """Monte Carlo settings for nonlinear rewards."""

    tau: float = 0.5
    n_samples: int = 100

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def gumbel_softmax(probs, tau: float, rng, gumbels=None) -> np.ndarray:
    """Relaxed categorical sample: softmax((log p + g) / tau) with standard
    Gumbel noise g.  Zero-probability categories stay exactly zero."""
    probs = np.asarray(probs, dtype=np.float64)
    if gumbels is None:
        gumbels = rng.gumbel(size=probs.shape)
    logits = safe_log(probs)
    pos = probs > 0.0
    scores = np.where(pos, (logits + gumbels) / tau, -np.inf)
    scores -= scores.max()
    out = np.exp(scores)
    out /= out.sum()
    return out


def hard_rows(tokens, size_total: int) -> np.ndarray:
    """One-hot rows (L, V) of a hard token state."""
    tokens = np.asarray(tokens, dtype=np.int64)
    rows = np.zeros((tokens.size, size_total))
    rows[np.arange(tokens.size), tokens] = 1.0
    return rows


def sample_hard_rows(rows: np.ndarray, rng, n: int) -> np.ndarray:
    """n hard token draws (n, L) sampled row-wise from simplex rows."""
    length, size = rows.shape
    cdf = np.cumsum(rows, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random((n, length))
    out = np.empty((n, length), dtype=np.int64)
    for l in range(length):
        out[:, l] = np.searchsorted(cdf[l], u[:, l], side="right")
    return np.minimum(out, size - 1)


def estimated_reward(
    model: TabularModel,
    family: str,
    tokens,
    reward: RewardFn,
    *,
    alpha_t: float | None = None,
    cfg: GumbelConfig = GumbelConfig(),
    rng=None,
) -> float:
    """Estimated intermediate reward: expected terminal reward under the
    denoiser's predicted clean-data distribution at ``tokens``.

    Linear rewards evaluate exactly on the denoiser rows; otherwise the
    mean of the reward over ``cfg.n_samples`` hard categorical draws from
    the rows (which requires an rng).
    """
    rows = denoiser_rows(model, family, tokens, alpha_t)
    if reward.declared_linear:
        return reward.value(rows)
    if rng is None:
        raise ValueError("Monte Carlo estimated reward requires an rng")
    draws = sample_hard_rows(rows, rng, cfg.n_samples)
    size = rows.shape[1]
    total = 0.0
    for k in range(cfg.n_samples):
        total += reward.value(hard_rows(draws[k], size))
    return total / cfg.n_samples


def expected_reward_exact(rows: np.ndarray, reward: RewardFn) -> float:
    """Exact expectation of the reward over independent per-position draws
    from ``rows``.  Linear rewards short-circuit; otherwise enumerate the
    joint support (guarded)."""
    if reward.declared_linear:
        return reward.value(rows)
    rows = np.asarray(rows, dtype=np.float64)
    length, size = rows.shape
    supports = [np.nonzero(rows[l] > 0.0)[0] for l in range(length)]
    count = 1
    for sup in supports:
        count *= len(sup)
        if count > EXPECTATION_GUARD:
            raise GuardError("exact reward expectation support too large")
    total = 0.0
    tokens = np.zeros(length, dtype=np.int64)

    def recurse(l, w):
        nonlocal total
        if l == length:
            total += w * reward.value(hard_rows(tokens, size))
            return
        for j in supports[l]:
            tokens[l] = j
            recurse(l + 1, w * rows[l, j])

    recurse(0, 1.0)
    return total


def taylor_gradient(
    model: TabularModel,
    family: str,
    tokens,
    reward: RewardFn,
    *,
    alpha_t: float | None = None,
    cfg: GumbelConfig = GumbelConfig(),
    rng=None,
) -> np.ndarray:
    """Gradient g (L, V) of the estimated reward with respect to the relaxed
    state, evaluated at the hard state ``tokens``.

    The chain runs reward-gradient -> (Gumbel-Softmax relaxation when the
    reward is nonlinear) -> analytic denoiser Jacobian.  For masked-style
    families the result is reported in the mask-anchored gauge: entry
    (l, j) = d rhat / d z[l, j] - d rhat / d z[l, mask], with the mask
    column identically 0.  Per-position constant shifts do not change the
    tilted proposal, and this gauge makes the linear-reward entries equal
    the coordinate differences of rhat exactly.
    """
    rows = denoiser_rows(model, family, tokens, alpha_t)
    if reward.declared_linear:
        gbar = reward.coeffs
    else:
        if rng is None:
            raise ValueError("Monte Carlo taylor gradient requires an rng")
        length, size = rows.shape
        gumbels = rng.gumbel(size=(cfg.n_samples, length, size))
        logits = safe_log(rows)
        pos = rows > 0.0
        gbar = np.zeros_like(rows)
        for k in range(cfg.n_samples):
            scores = np.where(pos, (logits + gumbels[k]) / cfg.tau, -np.inf)
            scores -= scores.max(axis=1, keepdims=True)
            y = np.exp(scores)
            y /= y.sum(axis=1, keepdims=True)
            gy = reward_grad(reward, y)
            # Backprop through the per-row softmax and the log.
            inner = (gy * y).sum(axis=1, keepdims=True)
            dlogit = y * (gy - inner)
            dp = np.zeros_like(rows)
            np.divide(dlogit, cfg.tau * rows, out=dp, where=pos)
            gbar += dp
        gbar /= cfg.n_samples
    jac = denoiser_jacobian(model, tokens, family, alpha_t)
    raw = np.einsum("ab,abcd->cd", gbar, jac)
    mask = model.vocab.mask_index
    if mask is not None:
        raw = raw - raw[:, mask][:, None]
        raw[:, mask] = 0.0
    return raw


def coordinate_difference_gradient(
    model: TabularModel,
    family: str,
    tokens,
    reward: RewardFn,
    *,
    alpha_t: float | None = None,
) -> np.ndarray:
    """Oracle gradient: entry (l, j) = rhat(tokens with position l set to j)
    - rhat(tokens), with rhat evaluated exactly (linear fast path or guarded
    enumeration), so the comparison against ``taylor_gradient`` carries no
    Monte Carlo noise."""
    tokens = np.asarray(tokens, dtype=np.int64)
    size = model.vocab.size_total

    def rhat(state):
        rows = denoiser_rows(model, family, state, alpha_t)
        return expected_reward_exact(rows, reward)

    base = rhat(tokens)
    out = np.zeros((model.length, size))
    for l in range(model.length):
        for j in range(size):
            if j == tokens[l]:
                continue
            state = np.array(tokens, copy=True)
            state[l] = j
            out[l, j] = rhat(state) - base
    return out
