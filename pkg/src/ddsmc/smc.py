"""Twisted sequential Monte Carlo over tabular discrete diffusion models.

The engine anneals from the corruption prior at t=1 to a reward-tilted
terminal target at t=0 through intermediate targets proportional to
p_t(z) * exp(lambda_t * rhat(z) / alpha).  Each step proposes successors
per particle, reweights with

    w_s = w_t * [p_theta(z_s | z_t) / F(z_s | z_t)]
              * exp((lambda_s * rhat(z_s) - lambda_t * rhat(z_t)) / alpha),

normalizes, records the log-normalizer increment, and resamples when the
effective sample size falls below the configured floor.  The
approximate-guidance mode drives the same propagation machinery with
constant strength 1/alpha but never reweights or resamples.

Propagation is vectorized across particles by grouping them on their
current state: every per-state quantity (kernel rows, tilt gradients,
joint candidate tables, estimated rewards) is computed once per distinct
state per step.  All per-particle randomness comes from counter-addressed
RNG lanes, so results are bit-identical for any worker count.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import (
    DegeneracyError,
    GuardError,
    NoiseSchedule,
    ParticleSet,
    TemperSchedule,
    WEIGHT_TOL,
    encode_states,
    log_normalize,
    logsumexp,
    safe_log,
    uniform_log_weights,
)
from .diffusion import (
    TabularModel,
    denoiser_table,
    reverse_rows_batch,
)
from .proposal import PROPOSALS, joint_candidate_table
from .reward import GumbelConfig, RewardFn, estimated_reward, taylor_gradient
from .rng import (
    DOMAIN_INIT,
    DOMAIN_PROPAGATE,
    PURPOSE_GRAD_MC,
    PURPOSE_RESAMPLE,
    PURPOSE_REWARD_MC,
    RngStream,
)

RESAMPLE_SCHEMES = ("full_systematic", "partial_systematic")

# Per-state memo tables are rebuilt when they outgrow this bound.
_CACHE_CAP = 65536


def weight_update(
    log_w_t, log_reverse_mass, log_proposal_mass, rhat_s, rhat_t, lam_s, lam_t, alpha
):
    """One incremental weight update in log space.

    Returns log_w_t + (log_reverse_mass - log_proposal_mass)
                    + (lam_s * rhat_s - lam_t * rhat_t) / alpha.

    A tilt term with lambda exactly 0 is dropped without touching the
    corresponding rhat, which therefore may be unevaluated (None/NaN).
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    term_s = np.multiply(lam_s, rhat_s) if lam_s != 0.0 else 0.0
    term_t = np.multiply(lam_t, rhat_t) if lam_t != 0.0 else 0.0
    return (
        np.asarray(log_w_t, dtype=np.float64)
        + (np.asarray(log_reverse_mass) - np.asarray(log_proposal_mass))
        + (term_s - term_t) / alpha
    )


def effective_sample_size(weights) -> float:
    """ESS = 1 / sum(w_i^2) for normalized weights."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0.0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError("effective_sample_size requires normalized weights")
    return float(1.0 / np.sum(w * w))


def _systematic_pick(weights: np.ndarray, u: float) -> np.ndarray:
    """Indices selected at cumulative positions u + k/n, u in [0, 1/n)."""
    n = weights.size
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    positions = u / n + np.arange(n) / n
    return np.searchsorted(cdf, positions, side="right")


def systematic_resample(particles: ParticleSet, rng) -> ParticleSet:
    """Full systematic resampling: returns n particles with uniform weights;
    the copy count of particle i is floor(n w_i) or ceil(n w_i)."""
    w = particles.weights()
    u = float(rng.random())
    idx = _systematic_pick(w, u)
    return ParticleSet(
        particles.states[idx],
        uniform_log_weights(particles.n),
        np.arange(particles.n, dtype=np.int64),
    )


def partial_resample(particles: ParticleSet, rng) -> ParticleSet:
    """Resample only the floor(n/2) smallest-weight particles among
    themselves (systematic draws within the subset); each resampled slot
    receives the subset mean weight, so total weight is conserved."""
    if particles.n < 2:
        raise ValueError("partial resampling needs at least two particles")
    w = particles.weights()
    order = np.argsort(w, kind="stable")
    m = particles.n // 2
    subset = order[:m]
    sub_w = w[subset]
    subtotal = sub_w.sum()
    probs = sub_w / subtotal if subtotal > 0.0 else np.full(m, 1.0 / m)
    u = float(rng.random())
    picks = subset[_systematic_pick(probs, u)]
    new_states = np.array(particles.states, copy=True)
    new_states[subset] = particles.states[picks]
    new_w = np.array(w, copy=True)
    new_w[subset] = subtotal / m
    return ParticleSet(
        new_states,
        safe_log(new_w),
        np.arange(particles.n, dtype=np.int64),
    )


@dataclasses.dataclass(frozen=True)
class StepTrace:
    """Per-step diagnostics.  ``t`` and ``lam`` refer to the post-step time
    s = (step - 1) / steps; ``ess`` is measured before any resampling."""

    step: int
    t: float
    lam: float
    mean_rhat: float
    ess: float
    resampled: bool
    logz_increment: float


TRACE_HEADER = "step,t,lambda,mean_rhat,ess,resampled,logz_increment"


def traces_to_csv(traces, path):
    lines = ["# ddsmc trace v1", TRACE_HEADER]
    for tr in traces:
        lines.append(
            f"{tr.step},{tr.t!r},{tr.lam!r},{tr.mean_rhat!r},"
            f"{tr.ess!r},{int(tr.resampled)},{tr.logz_increment!r}"
        )
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclasses.dataclass
class SmcResult:
    particles: ParticleSet
    traces: list
    log_z: float


class SmcSampler:
    """A prepared sampler: schedules and per-state tables are computed once
    and shared across ``run`` calls (all memoized values depend only on the
    state and step, never on the seed)."""

    def __init__(
        self,
        model: TabularModel,
        reward: RewardFn,
        *,
        family: str = "masked",
        proposal: str = "reverse",
        particles: int = 2000,
        steps: int = 100,
        alpha: float = 1.0,
        temper: TemperSchedule | None = None,
        noise: NoiseSchedule | None = None,
        ess_min: float | None = None,
        resample: str = "full_systematic",
        eta_cap: float = 0.1,
        gumbel: GumbelConfig = GumbelConfig(),
        workers: int = 1,
        final_resample: bool = False,
    ):
        if proposal not in PROPOSALS:
            raise ValueError(f"unknown proposal: {proposal!r}")
        if resample not in RESAMPLE_SCHEMES:
            raise ValueError(f"unknown resample scheme: {resample!r}")
        if particles < 1 or steps < 1 or workers < 1:
            raise ValueError("particles, steps, and workers must be >= 1")
        if alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if ess_min is None:
            ess_min = max(1.0, particles / 2.0)
        if not 1.0 <= ess_min <= particles:
            raise ValueError("ess_min must lie in [1, particles]")
        if family in ("masked", "remdm") and model.vocab.mask_index is None:
            raise ValueError(f"family {family!r} requires a masked vocabulary")
        if family == "udlm" and model.vocab.mask_index is not None:
            raise ValueError("family 'udlm' requires a maskless vocabulary")
        self.model = model
        self.reward = reward
        self.family = family
        self.proposal = proposal
        self.n = int(particles)
        self.steps = int(steps)
        self.alpha = float(alpha)
        self.temper = temper or TemperSchedule("linear", int(steps))
        self.noise = noise or NoiseSchedule()
        self.ess_min = float(ess_min)
        self.resample = resample
        self.eta_cap = float(eta_cap)
        self.gumbel = gumbel
        self.workers = int(workers)
        self.final_resample = bool(final_resample)

        self.size = model.vocab.size_total
        self.length = model.length
        self.mask = model.vocab.mask_index
        taus = np.arange(self.steps, -1, -1)
        times = taus / self.steps
        self._alpha_at = {
            int(k): self.noise.alpha(k / self.steps) for k in range(self.steps + 1)
        }
        self._lam_at = {
            int(k): self.temper.lam(k / self.steps) for k in range(self.steps + 1)
        }
        del taus, times

        self._linear = reward.declared_linear
        self._masked_like = family in ("masked", "remdm")
        self._table_ok = self.size**self.length <= _CACHE_CAP
        self._den_table = None
        self._rhat_table = None
        self._grad_table: dict = {}
        self._rhat_memo: dict = {}
        self._lo_memo: dict = {}

    # ---- per-state tables ------------------------------------------------

    def _ensure_den_table(self):
        """Dense denoiser table over every extended state (masked-like
        families only; the masked Bayes denoiser is time-free)."""
        if self._den_table is not None:
            return
        self._den_table = denoiser_table(self.model)
        if self._linear:
            self._rhat_table = np.einsum(
                "clv,lv->c", self._den_table, self.reward.coeffs
            )
            self._rhat_table.setflags(write=False)

    def _rhat_fast_table(self):
        if self._masked_like and self._linear and self._table_ok:
            self._ensure_den_table()
            return self._rhat_table
        return None

    def _rhat_batch(self, codes, states, tau_next):
        """Estimated rewards for a batch of states at step tau_next (the
        states live at time tau_next / steps).  Deterministic per
        (state, step): Monte Carlo modes draw from a substream keyed by
        exactly that pair."""
        fast = self._rhat_fast_table()
        if fast is not None:
            return fast[codes]
        out = np.empty(codes.shape[0])
        alpha_here = self._alpha_at[tau_next]
        time_key = tau_next if (self.family == "udlm" or not self._linear) else -1
        if len(self._rhat_memo) > _CACHE_CAP:
            self._rhat_memo.clear()
        uniq, first, inv = np.unique(codes, return_index=True, return_inverse=True)
        vals = np.empty(uniq.shape[0])
        for i, code in enumerate(uniq):
            key = (int(code), time_key)
            got = self._rhat_memo.get(key)
            if got is None:
                rng = (
                    None
                    if self._linear
                    else self._stream.generator(
                        PURPOSE_REWARD_MC, tau_next, int(code)
                    )
                )
                got = estimated_reward(
                    self.model,
                    self.family,
                    states[first[i]],
                    self.reward,
                    alpha_t=alpha_here,
                    cfg=self.gumbel,
                    rng=rng,
                )
                self._rhat_memo[key] = got
            vals[i] = got
        out[:] = vals[inv]
        return out

    def _grad_batch(self, codes, states, tau):
        """Tilt gradients (U, L, V) for unique states at step tau."""
        out = np.empty((codes.shape[0], self.length, self.size))
        time_key = tau if (self.family == "udlm" or not self._linear) else -1
        alpha_here = self._alpha_at[tau]
        if len(self._grad_table) > _CACHE_CAP:
            self._grad_table.clear()
        for i, code in enumerate(codes):
            key = (int(code), time_key)
            got = self._grad_table.get(key)
            if got is None:
                rng = (
                    None
                    if self._linear
                    else self._stream.generator(PURPOSE_GRAD_MC, tau, int(code))
                )
                got = taylor_gradient(
                    self.model,
                    self.family,
                    states[i],
                    self.reward,
                    alpha_t=alpha_here,
                    cfg=self.gumbel,
                    rng=rng,
                )
                self._grad_table[key] = got
            out[i] = got
        return out

    def _kernel_rows_batch(self, states_u, tau):
        """Reverse kernel rows (U, L, V) for unique states at step tau
        (transition from time tau/steps to (tau-1)/steps)."""
        if self._masked_like and self._table_ok:
            self._ensure_den_table()
        return reverse_rows_batch(
            self.family,
            self.model,
            states_u,
            self._alpha_at[tau - 1],
            self._alpha_at[tau],
            eta_cap=self.eta_cap,
            den_table=self._den_table,
        )

    def _lo_table(self, code, tokens, tau):
        """Joint candidate table of the locally optimal proposal for one
        state at one step."""
        key = (int(code), tau)
        got = self._lo_memo.get(key)
        if got is not None:
            return got
        if len(self._lo_memo) > _CACHE_CAP:
            self._lo_memo.clear()
        rows = self._kernel_rows_batch(tokens[None, :], tau)[0]
        lam_s = self._lam_at[tau - 1]

        def rhat_fn(cands):
            cand_codes = encode_states(cands, self.size)
            return self._rhat_batch(cand_codes, cands, tau - 1)

        table = joint_candidate_table(
            rows, lam_s, self.alpha, rhat_fn, guard=2**20
        )
        self._lo_memo[key] = table
        return table

    # ---- driver -----------------------------------------------------------

    def _init_states(self, stream: RngStream, ids) -> np.ndarray:
        states = np.empty((self.n, self.length), dtype=np.int64)
        if self._masked_like:
            states[:] = self.mask
            return states
        for l in range(self.length):
            u = stream.lane_uniforms(DOMAIN_INIT, 0, l, ids)
            states[:, l] = np.minimum(
                (u * self.size).astype(np.int64), self.size - 1
            )
        return states

    def _chunks(self):
        if self.workers == 1 or self.n < 2 * self.workers:
            return [np.arange(self.n)]
        return np.array_split(np.arange(self.n), self.workers)

    def run(self, seed: int) -> SmcResult:
        stream = RngStream(seed)
        self._stream = stream
        if not self._linear:
            # Monte Carlo memo values are keyed substreams of the run seed;
            # they must not leak into a run with a different seed.
            self._rhat_memo.clear()
            self._grad_table.clear()
            self._lo_memo.clear()
        ids = np.arange(self.n, dtype=np.int64)
        states = self._init_states(stream, ids)
        log_w = uniform_log_weights(self.n)
        rhat_curr = np.full(self.n, np.nan)
        traces: list[StepTrace] = []
        log_z = 0.0
        guidance = self.proposal == "approx_guidance"
        chunks = self._chunks()
        pool = (
            ThreadPoolExecutor(max_workers=self.workers)
            if len(chunks) > 1
            else None
        )
        try:
            for tau in range(self.steps, 0, -1):
                lam_s = self._lam_at[tau - 1]
                lam_t = self._lam_at[tau]
                codes = encode_states(states, self.size)
                uniq, first, inv = np.unique(
                    codes, return_index=True, return_inverse=True
                )
                states_u = states[first]
                prep = self._prepare_step(uniq, states_u, tau, guidance)

                def work(sel):
                    return self._propagate_chunk(
                        stream, ids, sel, inv, prep, tau
                    )

                if pool is not None:
                    parts = list(pool.map(work, chunks))
                else:
                    parts = [work(chunks[0])]
                new_states = np.concatenate([p[0] for p in parts], axis=0)
                log_rev = np.concatenate([p[1] for p in parts])
                log_prop = np.concatenate([p[2] for p in parts])
                rhat_s = np.concatenate([p[3] for p in parts])

                resampled = False
                if guidance:
                    inc = 0.0
                    ess = float(self.n)
                else:
                    unnorm = weight_update(
                        log_w, log_rev, log_prop, rhat_s, rhat_curr,
                        lam_s, lam_t, self.alpha,
                    )
                    try:
                        log_w, inc = log_normalize(unnorm)
                    except DegeneracyError as err:
                        failure = DegeneracyError(
                            f"particle weights degenerated at step {tau}"
                        )
                        failure.traces = traces
                        raise failure from err
                    log_z += inc
                    w = np.exp(log_w)
                    ess = float(1.0 / np.sum(w * w))
                    if ess < self.ess_min:
                        resampled = True
                        gen = stream.generator(PURPOSE_RESAMPLE, tau)
                        if self.resample == "full_systematic":
                            idx = _systematic_pick(w, float(gen.random()))
                            new_states = new_states[idx]
                            rhat_s = rhat_s[idx]
                            log_w = uniform_log_weights(self.n)
                        else:
                            order = np.argsort(w, kind="stable")
                            m = self.n // 2
                            subset = order[:m]
                            sub_w = w[subset]
                            subtotal = sub_w.sum()
                            probs = (
                                sub_w / subtotal
                                if subtotal > 0.0
                                else np.full(m, 1.0 / m)
                            )
                            picks = subset[
                                _systematic_pick(probs, float(gen.random()))
                            ]
                            new_states[subset] = new_states[picks]
                            rhat_s[subset] = rhat_s[picks]
                            w = np.array(w, copy=True)
                            w[subset] = subtotal / m
                            log_w = safe_log(w)
                mean_rhat = float(np.sum(np.exp(log_w) * rhat_s))
                traces.append(
                    StepTrace(
                        step=tau,
                        t=(tau - 1) / self.steps,
                        lam=1.0 if guidance else lam_s,
                        mean_rhat=mean_rhat,
                        ess=ess,
                        resampled=resampled,
                        logz_increment=float(inc),
                    )
                )
                states = new_states
                rhat_curr = rhat_s
        finally:
            if pool is not None:
                pool.shutdown()
            self._stream = None
        particles = ParticleSet(states, log_w, ids)
        if self.final_resample and not guidance:
            particles = systematic_resample(
                particles, stream.generator(PURPOSE_RESAMPLE, 0)
            )
        return SmcResult(particles=particles, traces=traces, log_z=log_z)

    # ---- step internals ----------------------------------------------------

    def _prepare_step(self, uniq, states_u, tau, guidance):
        lam_s = self._lam_at[tau - 1]
        prep = {"kind": self.proposal}
        if self.proposal == "locally_optimal":
            tables = [
                self._lo_table(code, states_u[i], tau)
                for i, code in enumerate(uniq)
            ]
            prep["tables"] = tables
            return prep
        rows = self._kernel_rows_batch(states_u, tau)
        log_rows = safe_log(rows)
        prep["log_rows"] = log_rows
        if self.proposal == "reverse":
            cdf = np.cumsum(rows, axis=2)
            cdf /= cdf[:, :, -1:]
            prep["cdf"] = cdf
            prep["log_prop_rows"] = log_rows
        else:
            scale = (1.0 if guidance else lam_s) / self.alpha
            grads = self._grad_batch(uniq, states_u, tau)
            logits = np.where(np.isneginf(log_rows), -np.inf, log_rows + scale * grads)
            lognorm = logsumexp(logits, axis=2)
            logits -= lognorm[:, :, None]
            probs = np.exp(logits)
            cdf = np.cumsum(probs, axis=2)
            cdf /= cdf[:, :, -1:]
            prep["cdf"] = cdf
            prep["log_prop_rows"] = logits
        return prep

    def _propagate_chunk(self, stream, ids, sel, inv, prep, tau):
        n_sel = sel.size
        new_states = np.empty((n_sel, self.length), dtype=np.int64)
        if prep["kind"] == "locally_optimal":
            u = stream.lane_uniforms(DOMAIN_PROPAGATE, tau, 0, ids[sel])
            log_rev = np.empty(n_sel)
            log_prop = np.empty(n_sel)
            rhat_s = np.empty(n_sel)
            inv_sel = inv[sel]
            for ui in np.unique(inv_sel):
                table = prep["tables"][ui]
                here = np.nonzero(inv_sel == ui)[0]
                picks = np.searchsorted(table.cum, u[here], side="right")
                picks = np.minimum(picks, table.cands.shape[0] - 1)
                new_states[here] = table.cands[picks]
                log_rev[here] = table.log_reverse[picks]
                log_prop[here] = table.log_proposal[picks]
                rhat_s[here] = table.rhat[picks]
            return new_states, log_rev, log_prop, rhat_s
        log_rows = prep["log_rows"]
        log_prop_rows = prep["log_prop_rows"]
        cdf = prep["cdf"]
        inv_sel = inv[sel]
        log_rev = np.zeros(n_sel)
        log_prop = np.zeros(n_sel)
        for l in range(self.length):
            u = stream.lane_uniforms(DOMAIN_PROPAGATE, tau, l, ids[sel])
            gathered = cdf[inv_sel, l, :]
            idx = (u[:, None] >= gathered).sum(axis=1)
            new_states[:, l] = idx
            log_rev += log_rows[inv_sel, l, idx]
            log_prop += log_prop_rows[inv_sel, l, idx]
        new_codes = encode_states(new_states, self.size)
        rhat_s = self._rhat_batch(new_codes, new_states, tau - 1)
        return new_states, log_rev, log_prop, rhat_s


def run_smc(model: TabularModel, reward: RewardFn, *, seed: int = 0, **kwargs):
    """One-shot convenience wrapper around SmcSampler."""
    return SmcSampler(model, reward, **kwargs).run(seed)
