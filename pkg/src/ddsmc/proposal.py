"""Transition proposals for the twisted SMC sampler.

Four mechanisms share one categorical-sampling convention (a uniform draw
falling in half-open cumulative intervals [lo, hi)):

* ``reverse``: sample straight from the reverse kernel; the importance
  ratio of the two masses is then exactly 1.
* ``locally_optimal``: enumerate the joint successor support, score every
  candidate by joint reverse log-mass plus the scaled estimated reward,
  normalize, sample.  The resulting incremental weight depends only on
  the current state, which is what makes this proposal zero-variance.
* ``taylor``: tilt each position's kernel row independently by a
  first-order expansion of the estimated reward around the current
  state.  Factorized, so it never enumerates the joint space.
* ``approx_guidance``: the Taylor tilt with constant strength 1/alpha,
  used by the guidance-only sampler that never reweights or resamples.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import GuardError, logsumexp, safe_log
from .diffusion import reverse_kernel
from .reward import GumbelConfig, estimated_reward, taylor_gradient

PROPOSALS = ("reverse", "locally_optimal", "taylor", "approx_guidance")

JOINT_GUARD = 2**20


@dataclasses.dataclass(frozen=True)
class TransitionResult:
    """One sampled transition and the two log-masses of its importance
    ratio.  ``r_hat_next`` and ``log_normalizer`` are filled only when the
    proposal computed them on the way."""

    next_state: np.ndarray
    log_proposal_mass: float
    log_reverse_mass: float
    r_hat_next: float | None = None
    log_normalizer: float | None = None


@dataclasses.dataclass(frozen=True)
class JointTable:
    """Enumerated successor table of the locally optimal proposal for one
    current state: candidates in lexicographic token order with their
    reverse log-masses, estimated rewards, normalized proposal log-masses,
    and sampling CDF."""

    cands: np.ndarray
    log_reverse: np.ndarray
    rhat: np.ndarray
    log_proposal: np.ndarray
    cum: np.ndarray
    log_normalizer: float


def _pick(cdf: np.ndarray, u: float) -> int:
    """Index of the half-open cumulative interval containing u."""
    return int(np.searchsorted(cdf, u, side="right"))


def _sample_positions(probs: np.ndarray, draws: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``probs`` (L, V)."""
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    return (draws[:, None] >= cdf).sum(axis=1)


def propose_reverse(kernel_rows: np.ndarray, rng) -> TransitionResult:
    """Sample each position independently from its reverse-kernel row."""
    rows = np.asarray(kernel_rows, dtype=np.float64)
    idx = _sample_positions(rows, rng.random(rows.shape[0]))
    mass = float(np.sum(safe_log(rows[np.arange(rows.shape[0]), idx])))
    return TransitionResult(
        next_state=idx.astype(np.int64),
        log_proposal_mass=mass,
        log_reverse_mass=mass,
    )


def joint_candidate_table(
    kernel_rows: np.ndarray,
    lam_s: float,
    alpha: float,
    rhat_fn,
    *,
    guard: int = JOINT_GUARD,
) -> JointTable:
    """Enumerate the joint successor support of a factorized kernel and
    score it for the locally optimal proposal.

    ``rhat_fn`` maps a (n, L) batch of candidate states to their estimated
    rewards; the caller owns any memoization.
    """
    rows = np.asarray(kernel_rows, dtype=np.float64)
    length = rows.shape[0]
    supports = [np.nonzero(rows[l] > 0.0)[0] for l in range(length)]
    total = 1
    for sup in supports:
        total *= sup.size
        if total > guard:
            raise GuardError(
                f"joint successor space exceeds {guard} candidates; "
                "use the taylor proposal for this instance"
            )
    grids = np.meshgrid(*supports, indexing="ij")
    cands = np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.int64)
    log_rows = safe_log(rows)
    log_rev = np.zeros(cands.shape[0])
    for l in range(length):
        log_rev += log_rows[l, cands[:, l]]
    rhat = np.asarray(rhat_fn(cands), dtype=np.float64)
    scores = log_rev + (lam_s / alpha) * rhat
    log_norm = float(logsumexp(scores))
    log_prop = scores - log_norm
    probs = np.exp(log_prop)
    cum = np.cumsum(probs)
    cum /= cum[-1]
    return JointTable(
        cands=cands,
        log_reverse=log_rev,
        rhat=rhat,
        log_proposal=log_prop,
        cum=cum,
        log_normalizer=log_norm,
    )


def propose_locally_optimal(
    model,
    family: str,
    reward,
    tokens,
    s: float,
    t: float,
    lam_s: float,
    alpha: float,
    rng,
    *,
    alpha_s: float | None = None,
    alpha_t: float | None = None,
    eta_cap: float = 0.1,
    cfg: GumbelConfig = GumbelConfig(),
    rhat_memo: dict | None = None,
    guard: int = JOINT_GUARD,
) -> TransitionResult:
    """Exhaustive reward-tilted proposal over the joint successor space.

    ``rhat_memo`` (keyed by successor token tuple) lets callers share
    estimated-reward evaluations across particles at the same step.
    """
    from .core import NoiseSchedule

    sched = NoiseSchedule()
    if alpha_s is None:
        alpha_s = sched.alpha(s)
    if alpha_t is None:
        alpha_t = sched.alpha(t)
    rows = reverse_kernel(
        family, model, tokens, s, t, alpha_s=alpha_s, alpha_t=alpha_t, eta_cap=eta_cap
    )

    def rhat_fn(cands):
        out = np.empty(cands.shape[0])
        for i in range(cands.shape[0]):
            key = tuple(int(v) for v in cands[i])
            if rhat_memo is not None and key in rhat_memo:
                out[i] = rhat_memo[key]
                continue
            val = estimated_reward(
                model, family, cands[i], reward,
                alpha_t=alpha_s, cfg=cfg, rng=rng,
            )
            if rhat_memo is not None:
                rhat_memo[key] = val
            out[i] = val
        return out

    table = joint_candidate_table(rows, lam_s, alpha, rhat_fn, guard=guard)
    pick = _pick(table.cum, float(rng.random()))
    pick = min(pick, table.cands.shape[0] - 1)
    return TransitionResult(
        next_state=table.cands[pick],
        log_proposal_mass=float(table.log_proposal[pick]),
        log_reverse_mass=float(table.log_reverse[pick]),
        r_hat_next=float(table.rhat[pick]),
        log_normalizer=table.log_normalizer,
    )


def _tilted_transition(
    model, family, reward, tokens, s, t, scale, cfg, rng, alpha_s, alpha_t, eta_cap
) -> TransitionResult:
    """Shared body of the Taylor and guidance proposals: factorized
    sampling from kernel rows tilted by exp(scale * gradient)."""
    from .core import NoiseSchedule

    sched = NoiseSchedule()
    if alpha_s is None:
        alpha_s = sched.alpha(s)
    if alpha_t is None:
        alpha_t = sched.alpha(t)
    rows = reverse_kernel(
        family, model, tokens, s, t, alpha_s=alpha_s, alpha_t=alpha_t, eta_cap=eta_cap
    )
    grad = taylor_gradient(
        model, family, tokens, reward, alpha_t=alpha_t, cfg=cfg, rng=rng
    )
    log_rows = safe_log(rows)
    logits = log_rows + scale * grad
    logits[np.isneginf(log_rows)] = -np.inf
    log_norm = logsumexp(logits, axis=1)
    log_tilted = logits - log_norm[:, None]
    idx = _sample_positions(np.exp(log_tilted), rng.random(rows.shape[0]))
    pos = np.arange(rows.shape[0])
    return TransitionResult(
        next_state=idx.astype(np.int64),
        log_proposal_mass=float(np.sum(log_tilted[pos, idx])),
        log_reverse_mass=float(np.sum(log_rows[pos, idx])),
    )


def propose_taylor(
    model,
    family: str,
    reward,
    tokens,
    s: float,
    t: float,
    lam_s: float,
    alpha: float,
    cfg: GumbelConfig,
    rng,
    *,
    alpha_s: float | None = None,
    alpha_t: float | None = None,
    eta_cap: float = 0.1,
) -> TransitionResult:
    """Factorized proposal tilting each kernel row by the first-order
    expansion of the estimated reward around the current state."""
    return _tilted_transition(
        model, family, reward, tokens, s, t, lam_s / alpha,
        cfg, rng, alpha_s, alpha_t, eta_cap,
    )


def propose_guidance(
    model,
    family: str,
    reward,
    tokens,
    s: float,
    t: float,
    alpha: float,
    cfg: GumbelConfig,
    rng,
    *,
    alpha_s: float | None = None,
    alpha_t: float | None = None,
    eta_cap: float = 0.1,
) -> TransitionResult:
    """Taylor mechanics at constant strength 1/alpha (no tempering); the
    caller must not reweight or resample when using this proposal."""
    return _tilted_transition(
        model, family, reward, tokens, s, t, 1.0 / alpha,
        cfg, rng, alpha_s, alpha_t, eta_cap,
    )


def taylor_marginal_tv(
    model,
    family: str,
    reward,
    tokens,
    s: float,
    t: float,
    lam_s: float,
    alpha: float,
    *,
    cfg: GumbelConfig = GumbelConfig(),
    rng=None,
    alpha_s: float | None = None,
    alpha_t: float | None = None,
    eta_cap: float = 0.1,
) -> np.ndarray:
    """Per-position total variation between the Taylor proposal's
    factorized distribution and the exact per-position marginals of the
    locally optimal proposal.  Diagnostic only: the Taylor proposal is an
    approximation and the gap is generally nonzero."""
    from .core import NoiseSchedule

    sched = NoiseSchedule()
    if alpha_s is None:
        alpha_s = sched.alpha(s)
    if alpha_t is None:
        alpha_t = sched.alpha(t)
    rows = reverse_kernel(
        family, model, tokens, s, t, alpha_s=alpha_s, alpha_t=alpha_t, eta_cap=eta_cap
    )

    def rhat_fn(cands):
        return np.array(
            [
                estimated_reward(
                    model, family, c, reward, alpha_t=alpha_s, cfg=cfg, rng=rng
                )
                for c in cands
            ]
        )

    table = joint_candidate_table(rows, lam_s, alpha, rhat_fn)
    joint = np.exp(table.log_proposal)
    grad = taylor_gradient(
        model, family, tokens, reward, alpha_t=alpha_t, cfg=cfg, rng=rng
    )
    log_rows = safe_log(rows)
    logits = log_rows + (lam_s / alpha) * grad
    logits[np.isneginf(log_rows)] = -np.inf
    log_tilted = logits - logsumexp(logits, axis=1)[:, None]
    length, size = rows.shape
    tvs = np.empty(length)
    for l in range(length):
        marg = np.zeros(size)
        np.add.at(marg, table.cands[:, l], joint)
        tvs[l] = 0.5 * np.sum(np.abs(marg - np.exp(log_tilted[l])))
    return tvs
