"""Tabular discrete diffusion: forward corruption, exact posteriors, and
reverse kernels for three corruption families.

Families
--------
* ``masked``: absorbing corruption into a dedicated mask token.  The exact
  Bayes denoiser is time-independent and obeys two structural constraints:
  zero mass on the mask category, and carry-over of already-unmasked tokens.
* ``remdm``: masked corruption with a remasking reverse posterior, so
  previously unmasked tokens may return to the mask state.  Reuses the
  masked-family denoiser.
* ``udlm``: uniform corruption without a mask token.

The "pre-trained model" is an exact tabular Bayes denoiser over a known
joint data distribution, which is what makes every downstream quantity
enumerable.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import (
    GuardError,
    Vocab,
    WEIGHT_TOL,
    check_token_state,
    decode_state,
    encode_states,
)

FAMILIES = ("masked", "remdm", "udlm")

# Construction guard: the joint data table must stay enumerable.
MODEL_GUARD = 2**24

# Guard on the number of hard patterns the relaxed denoiser may mix over.
RELAXED_PATTERN_GUARD = 2**16


@dataclasses.dataclass
class TabularModel:
    """Known joint data distribution plus vocabulary; immutable after
    construction (the dict attributes are internal memo tables)."""

    vocab: Vocab
    length: int
    data_dist: np.ndarray

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        d = self.vocab.data_size
        if d**self.length > MODEL_GUARD:
            raise GuardError("data state space exceeds the enumeration guard")
        table = np.asarray(self.data_dist, dtype=np.float64)
        if table.shape != (d,) * self.length:
            raise ValueError(
                f"data_dist must have shape {(d,) * self.length}, got {table.shape}"
            )
        if np.any(table < 0.0):
            raise ValueError("data_dist entries must be nonnegative")
        total = table.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError("data_dist must sum to 1 within 1e-9")
        self.data_dist = table / total
        self.zero_conditioning_events = 0
        self._cond_cache: dict = {}
        self._denoiser_cache: dict = {}
        self._udlm_cache: dict = {}

    @property
    def data_size(self) -> int:
        return self.vocab.data_size

    def with_vocab(self, vocab: Vocab) -> "TabularModel":
        """Same data distribution under another vocabulary (e.g. maskless
        for udlm).  Data size must match."""
        if vocab.data_size != self.data_size:
            raise ValueError("vocabulary data size mismatch")
        return TabularModel(vocab, self.length, self.data_dist)

    def cond_row(self, l: int, observed: tuple) -> np.ndarray:
        """P(x_l | x_j = v for (j, v) in observed), a (data_size,) vector
        over data-axis indices.

        ``observed`` is a sorted tuple of (position, data-axis value) pairs
        not containing l.  Conditioning on a zero-probability event returns
        uniform and bumps ``zero_conditioning_events``.
        """
        key = (l, observed)
        cached = self._cond_cache.get(key)
        if cached is not None:
            return cached
        index = [slice(None)] * self.length
        for pos, val in observed:
            index[pos] = val
        sub = self.data_dist[tuple(index)]
        # Remaining axes: all unobserved positions in order; find l's axis.
        free = [p for p in range(self.length) if p not in {o[0] for o in observed}]
        axis = free.index(l)
        other_axes = tuple(a for a in range(sub.ndim) if a != axis)
        row = sub.sum(axis=other_axes) if other_axes else np.array(sub, copy=True)
        total = row.sum()
        if total <= 0.0:
            self.zero_conditioning_events += 1
            row = np.full(self.data_size, 1.0 / self.data_size)
        else:
            row = row / total
        self._cond_cache[key] = row
        return row


def save_tabular_model(model: TabularModel, path):
    """Plain-text format: header ``V L mask_index`` (mask_index -1 when
    absent), then one probability per line in row-major order."""
    mask = model.vocab.mask_index
    lines = [f"{model.vocab.size_total} {model.length} {-1 if mask is None else mask}"]
    lines.extend(repr(float(v)) for v in model.data_dist.ravel())
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tabular_model(path) -> TabularModel:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError("model file header must be 'V L mask_index'")
        size_total, length, mask = (int(x) for x in header)
        vocab = Vocab(size_total, None if mask < 0 else mask)
        values = np.loadtxt(fh, dtype=np.float64, ndmin=1)
    expected = vocab.data_size**length
    if values.size != expected:
        raise ValueError(
            f"model file has {values.size} probabilities, expected {expected}"
        )
    table = values.reshape((vocab.data_size,) * length)
    return TabularModel(vocab, length, table)


def _check_family(family: str, vocab: Vocab):
    if family not in FAMILIES:
        raise ValueError(f"unknown model family: {family!r}")
    if family in ("masked", "remdm") and vocab.mask_index is None:
        raise ValueError(f"family {family!r} requires a mask token")
    if family == "udlm" and vocab.mask_index is not None:
        raise ValueError("family 'udlm' must not have a mask token")


def forward_marginal(x_row: np.ndarray, alpha_t: float, vocab: Vocab, family: str):
    """Forward corruption marginal: alpha_t * x + (1 - alpha_t) * prior,
    where the prior is the mask point mass (masked/remdm) or uniform (udlm).
    ``x_row`` may be a one-hot or any simplex row."""
    _check_family(family, vocab)
    x_row = np.asarray(x_row, dtype=np.float64)
    if x_row.shape != (vocab.size_total,):
        raise ValueError("x_row must have vocabulary length")
    if family == "udlm":
        prior = np.full(vocab.size_total, 1.0 / vocab.size_total)
    else:
        prior = np.zeros(vocab.size_total)
        prior[vocab.mask_index] = 1.0
    return alpha_t * x_row + (1.0 - alpha_t) * prior


def _check_times(alpha_s: float, alpha_t: float):
    if not (0.0 <= alpha_t < alpha_s <= 1.0):
        raise ValueError("posterior requires 0 <= alpha_t < alpha_s <= 1")


def masked_posterior(
    x_row: np.ndarray, token: int, alpha_s: float, alpha_t: float, mask_index: int
) -> np.ndarray:
    """Masked-family reverse posterior for one position.

    token != mask: point mass at token (carry-over).
    token == mask: [(1 - alpha_s) * mask + (alpha_s - alpha_t) * x] / (1 - alpha_t).

    ``x_row`` is the denoiser output row (mask entry 0); relaxed rows are
    accepted directly.
    """
    _check_times(alpha_s, alpha_t)
    x_row = np.asarray(x_row, dtype=np.float64)
    out = np.zeros_like(x_row)
    if token != mask_index:
        out[token] = 1.0
        return out
    denom = 1.0 - alpha_t
    out = ((alpha_s - alpha_t) / denom) * x_row
    out[mask_index] = (1.0 - alpha_s) / denom
    return out


def remdm_sigma(alpha_s: float, alpha_t: float, eta_cap: float) -> float:
    """Max-capped remasking schedule: sigma_t = min(eta_cap, sigma_max) with
    sigma_max = min(1, (1 - alpha_s) / alpha_t)."""
    if eta_cap < 0.0:
        raise ValueError("eta_cap must be nonnegative")
    sigma_max = 1.0 if alpha_t == 0.0 else min(1.0, (1.0 - alpha_s) / alpha_t)
    return min(eta_cap, sigma_max)


def remdm_posterior(
    x_row: np.ndarray,
    token: int,
    alpha_s: float,
    alpha_t: float,
    sigma_t: float,
    mask_index: int,
) -> np.ndarray:
    """Remasking reverse posterior for one position.

    token != mask: (1 - sigma_t) * x + sigma_t * mask.
    token == mask: [(alpha_s - (1 - sigma_t) * alpha_t) * x
                    + (1 - alpha_s - sigma_t * alpha_t) * mask] / (1 - alpha_t).

    Valid for 0 <= sigma_t <= min(1, (1 - alpha_s) / alpha_t); sigma_t = 0
    recovers the masked-family posterior exactly.
    """
    _check_times(alpha_s, alpha_t)
    sigma_hi = 1.0 if alpha_t == 0.0 else min(1.0, (1.0 - alpha_s) / alpha_t)
    if not 0.0 <= sigma_t <= sigma_hi + 1e-12:
        raise ValueError("sigma_t outside its validity interval")
    x_row = np.asarray(x_row, dtype=np.float64)
    out = np.zeros_like(x_row)
    if token != mask_index:
        out = (1.0 - sigma_t) * x_row
        out[mask_index] = sigma_t
        return out
    denom = 1.0 - alpha_t
    out = ((alpha_s - (1.0 - sigma_t) * alpha_t) / denom) * x_row
    out[mask_index] = (1.0 - alpha_s - sigma_t * alpha_t) / denom
    return out


def udlm_posterior(
    x_row: np.ndarray, token: int, alpha_s: float, alpha_t: float
) -> np.ndarray:
    """Uniform-noise reverse posterior for one position (no mask token).

    Cat(z_s; [V*a_t*(z_t . x)_elementwise + (a_t/a_s - a_t)*z_t + (a_s - a_t)*x
              + (a_s - a_t)*(1 - a_s)/(V*a_s) * 1]
             / [V*a_t*<z_t, x> + 1 - a_t])

    with z_t the one-hot of ``token`` and x the denoiser row.
    """
    if not (0.0 <= alpha_t < alpha_s <= 1.0):
        raise ValueError("posterior requires 0 <= alpha_t < alpha_s <= 1")
    x_row = np.asarray(x_row, dtype=np.float64)
    size = x_row.shape[0]
    numer = np.full(size, (alpha_s - alpha_t) * (1.0 - alpha_s) / (size * alpha_s))
    numer += (alpha_s - alpha_t) * x_row
    numer[token] += size * alpha_t * x_row[token] + (alpha_t / alpha_s - alpha_t)
    denom = size * alpha_t * x_row[token] + 1.0 - alpha_t
    return numer / denom


def bayes_denoiser(model: TabularModel, tokens) -> np.ndarray:
    """Exact masked-family denoiser: rows (L, V) of conditionals of each
    position's clean token given the unmasked positions.

    Time-independent for masked corruption.  Unmasked positions carry over
    as one-hots; the mask column is exactly zero everywhere.
    """
    vocab = model.vocab
    if vocab.mask_index is None:
        raise ValueError("bayes_denoiser requires a masked vocabulary")
    tokens = check_token_state(tokens, vocab)
    key = tuple(int(v) for v in tokens)
    cached = model._denoiser_cache.get(key)
    if cached is not None:
        return cached
    mask = vocab.mask_index
    cats = vocab.data_categories()
    axis_of = {int(tok): i for i, tok in enumerate(cats)}
    observed = tuple(
        (pos, axis_of[int(tok)]) for pos, tok in enumerate(tokens) if tok != mask
    )
    rows = np.zeros((model.length, vocab.size_total))
    for l, tok in enumerate(tokens):
        if tok != mask:
            rows[l, tok] = 1.0
        else:
            obs = tuple(o for o in observed if o[0] != l)
            rows[l, cats] = model.cond_row(l, obs)
    rows.setflags(write=False)
    model._denoiser_cache[key] = rows
    return rows


def udlm_denoiser(model: TabularModel, tokens, alpha_t: float) -> np.ndarray:
    """Exact uniform-noise denoiser: posterior over clean tokens given the
    full noisy state, via per-position likelihoods
    alpha_t * [x == z] + (1 - alpha_t) / V."""
    vocab = model.vocab
    if vocab.mask_index is not None:
        raise ValueError("udlm_denoiser requires a maskless vocabulary")
    tokens = check_token_state(tokens, vocab)
    key = (tuple(int(v) for v in tokens), float(alpha_t))
    cached = model._udlm_cache.get(key)
    if cached is not None:
        return cached
    size = vocab.size_total
    base = (1.0 - alpha_t) / size
    post = np.array(model.data_dist, copy=True)
    for l, tok in enumerate(tokens):
        w = np.full(size, base)
        w[tok] += alpha_t
        shape = [1] * model.length
        shape[l] = size
        post = post * w.reshape(shape)
    total = post.sum()
    if total <= 0.0:
        rows = np.full((model.length, size), 1.0 / size)
    else:
        post /= total
        rows = np.empty((model.length, size))
        for l in range(model.length):
            axes = tuple(a for a in range(model.length) if a != l)
            rows[l] = post.sum(axis=axes) if axes else post
    rows.setflags(write=False)
    model._udlm_cache[key] = rows
    return rows


def _pattern_mix(model: TabularModel, l: int, supports, weights) -> np.ndarray:
    """Mix exact conditionals of position l over hard patterns of the other
    positions.  ``supports[j]``/``weights[j]`` give the pattern values and
    weights for position j (mask sentinel -1 means unobserved)."""
    cats = model.vocab.data_categories()
    axis_of = {int(tok): i for i, tok in enumerate(cats)}
    others = [j for j in range(model.length) if j != l]
    total = 1
    for j in others:
        total *= len(supports[j])
        if total > RELAXED_PATTERN_GUARD:
            raise GuardError("relaxed denoiser pattern enumeration too large")
    mix = np.zeros(model.data_size)
    stack = [(0, 1.0, ())]
    while stack:
        idx, w, obs = stack.pop()
        if w == 0.0:
            continue
        if idx == len(others):
            mix += w * model.cond_row(l, tuple(sorted(obs)))
            continue
        j = others[idx]
        for val, wj in zip(supports[j], weights[j]):
            if wj == 0.0:
                continue
            if val < 0:
                stack.append((idx + 1, w * wj, obs))
            else:
                stack.append((idx + 1, w * wj, obs + ((j, axis_of[val]),)))
    return mix


def relaxed_denoiser(model: TabularModel, rows_in: np.ndarray) -> np.ndarray:
    """Masked-family denoiser extended to relaxed (simplex-row) inputs.

    For each position l with input row z_l:

        gamma_l = 1 - sum_{k != mask} z_l[k]
        out_l   = gamma_l * xbar_l + (z_l with mask entry zeroed)

    where xbar_l mixes the exact conditionals of position l over the hard
    observed/unobserved patterns of the OTHER positions (own position always
    treated as unobserved), weighted by the other rows' masses.  Agrees with
    ``bayes_denoiser`` exactly on hard one-hot inputs.
    """
    vocab = model.vocab
    if vocab.mask_index is None:
        raise ValueError("relaxed_denoiser requires a masked vocabulary")
    rows_in = np.asarray(rows_in, dtype=np.float64)
    if rows_in.shape != (model.length, vocab.size_total):
        raise ValueError("rows_in must be (length, size_total)")
    if np.any(rows_in < -1e-12) or np.any(
        np.abs(rows_in.sum(axis=1) - 1.0) > 1e-6
    ):
        raise ValueError("rows_in must be simplex rows")
    mask = vocab.mask_index
    cats = vocab.data_categories()
    supports = []
    weights = []
    for l in range(model.length):
        sup = [-1] if rows_in[l, mask] > 0.0 else []
        wts = [rows_in[l, mask]] if rows_in[l, mask] > 0.0 else []
        for tok in cats:
            if rows_in[l, tok] > 0.0:
                sup.append(int(tok))
                wts.append(rows_in[l, tok])
        supports.append(sup)
        weights.append(wts)
    out = np.zeros_like(rows_in)
    for l in range(model.length):
        gamma = 1.0 - rows_in[l, cats].sum()
        carry = np.array(rows_in[l], copy=True)
        carry[mask] = 0.0
        out[l] = carry
        if gamma > 0.0:
            out[l, cats] += gamma * _pattern_mix(model, l, supports, weights)
    return out


def denoiser_jacobian(
    model: TabularModel, tokens, family: str = "masked", alpha_t: float | None = None
) -> np.ndarray:
    """Jacobian J[l, i, m, j] = d rows[l, i] / d z[m, j] of the relaxed
    denoiser at a hard state, under the continuous carry-over formulation.

    masked/remdm (time-free):
        own block:   J[l, i, l, j] = [i == j] - xbar_l[i]   for j != mask,
                     and exactly 0 for j == mask (gamma_l ignores the mask
                     coordinate by construction).
        cross block: J[l, :, m, j] = gamma_l * cond_l(others hard, m := j),
                     where j == mask means position m becomes unobserved.
    udlm: quotient rule through the joint posterior table (requires alpha_t).
    """
    _check_family(family, model.vocab)
    if family == "udlm":
        if alpha_t is None:
            raise ValueError("udlm jacobian requires alpha_t")
        return _udlm_jacobian(model, tokens, alpha_t)
    vocab = model.vocab
    tokens = check_token_state(tokens, vocab)
    mask = vocab.mask_index
    cats = vocab.data_categories()
    size = vocab.size_total
    length = model.length
    jac = np.zeros((length, size, length, size))
    for l in range(length):
        masked_self = np.array(tokens, copy=True)
        masked_self[l] = mask
        xbar = bayes_denoiser(model, masked_self)[l]
        gamma = 1.0 if tokens[l] == mask else 0.0
        for j in cats:
            own = -xbar.copy()
            own[j] += 1.0
            jac[l, :, l, j] = own
        for m in range(length):
            if m == l:
                continue
            base = np.array(tokens, copy=True)
            base[l] = mask
            for j in range(size):
                if gamma == 0.0:
                    break
                state = np.array(base, copy=True)
                state[m] = j
                jac[l, :, m, j] = gamma * bayes_denoiser(model, state)[l]
    return jac


def _udlm_jacobian(model: TabularModel, tokens, alpha_t: float) -> np.ndarray:
    vocab = model.vocab
    if vocab.mask_index is not None:
        raise ValueError("udlm jacobian requires a maskless vocabulary")
    tokens = check_token_state(tokens, vocab)
    size = vocab.size_total
    length = model.length
    base = (1.0 - alpha_t) / size
    w = np.empty((length, size))
    for l, tok in enumerate(tokens):
        w[l] = base
        w[l, tok] += alpha_t
    post = np.array(model.data_dist, copy=True)
    for l in range(length):
        shape = [1] * length
        shape[l] = size
        post = post * w[l].reshape(shape)
    z = post.sum()
    if z <= 0.0:
        return np.zeros((length, size, length, size))
    post /= z
    jac = np.empty((length, size, length, size))
    rows = np.empty((length, size))
    for l in range(length):
        axes = tuple(a for a in range(length) if a != l)
        rows[l] = post.sum(axis=axes) if axes else post
    for m in range(length):
        shape = [1] * length
        shape[m] = size
        ratio = post * (alpha_t / w[m].reshape(shape))
        s_m = ratio.sum(
            axis=tuple(a for a in range(length) if a != m)
        )  # S[m, j] marginal
        for l in range(length):
            if l == m:
                diag = s_m  # sum over x with x_m = j of ratio
                block = np.zeros((size, size))
                block[np.arange(size), np.arange(size)] = diag
            else:
                axes = tuple(a for a in range(length) if a not in (l, m))
                pair = ratio.sum(axis=axes) if axes else ratio
                if l > m:
                    # remaining axes come out in increasing position order
                    pair = pair.T
                block = pair
            jac[l, :, m, :] = block - rows[l][:, None] * s_m[None, :]
    return jac


def reverse_kernel(
    family: str,
    model: TabularModel,
    tokens,
    s: float,
    t: float,
    *,
    alpha_s: float | None = None,
    alpha_t: float | None = None,
    eta_cap: float = 0.1,
) -> np.ndarray:
    """Factorized reverse kernel rows (L, V): per-position distributions of
    z_s given z_t = tokens, using the exact Bayes denoiser of ``family``.

    Noise levels default to the linear schedule (alpha = 1 - time); callers
    may pass precomputed alpha values directly.
    """
    _check_family(family, model.vocab)
    if not 0.0 <= s < t <= 1.0:
        raise ValueError("reverse kernel requires 0 <= s < t <= 1")
    if alpha_s is None:
        alpha_s = 1.0 - s
    if alpha_t is None:
        alpha_t = 1.0 - t
    tokens = check_token_state(tokens, model.vocab)
    rows = np.empty((model.length, model.vocab.size_total))
    if family == "masked":
        x_rows = bayes_denoiser(model, tokens)
        for l, tok in enumerate(tokens):
            rows[l] = masked_posterior(
                x_rows[l], int(tok), alpha_s, alpha_t, model.vocab.mask_index
            )
    elif family == "remdm":
        x_rows = bayes_denoiser(model, tokens)
        sigma = remdm_sigma(alpha_s, alpha_t, eta_cap)
        for l, tok in enumerate(tokens):
            rows[l] = remdm_posterior(
                x_rows[l], int(tok), alpha_s, alpha_t, sigma, model.vocab.mask_index
            )
    else:
        x_rows = udlm_denoiser(model, tokens, alpha_t)
        for l, tok in enumerate(tokens):
            rows[l] = udlm_posterior(x_rows[l], int(tok), alpha_s, alpha_t)
    return rows


def denoiser_rows(
    model: TabularModel, family: str, tokens, alpha_t: float | None = None
) -> np.ndarray:
    """Family dispatch for the exact denoiser."""
    _check_family(family, model.vocab)
    if family == "udlm":
        if alpha_t is None:
            raise ValueError("udlm denoiser requires alpha_t")
        return udlm_denoiser(model, tokens, alpha_t)
    return bayes_denoiser(model, tokens)


def denoiser_table(model: TabularModel) -> np.ndarray:
    """Masked-family denoiser rows for every extended state, indexed by
    state code: table (size_total**length, length, size_total).  Read-only.
    Valid for masked and remdm families (their denoiser is shared and
    time-free)."""
    if model.vocab.mask_index is None:
        raise ValueError("denoiser_table requires a masked vocabulary")
    states = all_states(model.vocab, model.length)
    table = np.empty((states.shape[0], model.length, model.vocab.size_total))
    for code in range(states.shape[0]):
        table[code] = bayes_denoiser(model, states[code])
    table.setflags(write=False)
    return table


def reverse_rows_batch(
    family: str,
    model: TabularModel,
    states: np.ndarray,
    alpha_s: float,
    alpha_t: float,
    *,
    eta_cap: float = 0.1,
    den_table: np.ndarray | None = None,
) -> np.ndarray:
    """Reverse kernel rows for a batch of states: (n, length, size_total).

    For masked-like families a precomputed ``denoiser_table`` turns the
    whole batch into a handful of array operations; without it (or for
    udlm) each state goes through ``reverse_kernel``.
    """
    _check_family(family, model.vocab)
    states = np.asarray(states, dtype=np.int64)
    count = states.shape[0]
    size = model.vocab.size_total
    if family in ("masked", "remdm") and den_table is not None:
        codes = encode_states(states, size)
        den = den_table[codes]
        mask = model.vocab.mask_index
        rows = np.zeros((count, model.length, size))
        is_mask = states == mask
        denom = 1.0 - alpha_t
        if family == "masked":
            rows[is_mask] = ((alpha_s - alpha_t) / denom) * den[is_mask]
            rows[is_mask, mask] = (1.0 - alpha_s) / denom
            ui, li = np.nonzero(~is_mask)
            rows[ui, li, states[ui, li]] = 1.0
        else:
            sigma = remdm_sigma(alpha_s, alpha_t, eta_cap)
            rows[is_mask] = ((alpha_s - (1.0 - sigma) * alpha_t) / denom) * den[
                is_mask
            ]
            rows[is_mask, mask] = (1.0 - alpha_s - sigma * alpha_t) / denom
            ui, li = np.nonzero(~is_mask)
            rows[ui, li, states[ui, li]] = 1.0 - sigma
            rows[ui, li, mask] += sigma
        return rows
    rows = np.empty((count, model.length, size))
    s = 1.0 - alpha_s
    t = 1.0 - alpha_t
    for i in range(count):
        rows[i] = reverse_kernel(
            family,
            model,
            states[i],
            s,
            t,
            alpha_s=alpha_s,
            alpha_t=alpha_t,
            eta_cap=eta_cap,
        )
    return rows


def all_states(vocab: Vocab, length: int) -> np.ndarray:
    """All extended states (size_total**length, length) in code order."""
    size = vocab.size_total
    if size**length > 2**20:
        raise GuardError("extended state space exceeds the enumeration guard")
    n = size**length
    return np.stack(
        [decode_state(code, size, length) for code in range(n)], axis=0
    )
