"""Contrastive objectives, per-sample and as exact expectations.

Five members of the family, all of the form -log(h+ / (h+ + D)) with
h+ = exp(s+) and a denominator D built from negative-sample exponentials:

* biased:      D = (Q/N) sum_i exp(s_i), negatives drawn from the marginal.
* unbiased:    same form, negatives drawn from the anchor's complement
               classes; computed here as an exact expectation by enumeration.
* debiased:    D = N * g where g is the clamped correction estimator that
               reweights unlabeled and positive exponentials.
* asymptotic debiased: the large-N limit of the debiased loss, exactly
               enumerable on discrete mixtures (no clamp; a nonpositive
               inner difference is reported, never silently floored).
* inclusion-exclusion oracle: the alternating binomial rewriting of the
               unbiased loss in terms of marginal and positive samples only;
               numerically delicate, so terms are sorted by magnitude,
               summed with compensated arithmetic, and the condition number
               is reported.

Everything is evaluated with a max-subtraction shift so small temperatures
cannot overflow, and all expectations over discrete mixtures are exact
finite sums (multisets of i.i.d. draws are enumerated with multinomial
weights, which regroups the tuple sum without changing its value).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BatchTooSmall,
    BudgetExceeded,
    DegenerateClass,
    EmptyNegatives,
    NegativeDenominator,
    OracleRangeExceeded,
)
from .worldmodel import DiscreteClassMixture, marginal, negative_dist, positive_dist

EXP_FLOOR = "exp_floor"
ZERO_FLOOR = "zero_floor"
FLOOR_MODES = (EXP_FLOOR, ZERO_FLOOR)

KIND_BIASED = "biased"
KIND_UNBIASED = "unbiased"
KIND_DEBIASED_FIN = "debiased_fin"
KIND_DEBIASED_ASYM = "debiased_asym"
KIND_ORACLE = "oracle"
KIND_SUPERVISED_MU = "supervised_mu"
KIND_SOFTMAX_CE = "softmax_ce"

DEFAULT_ENUM_BUDGET = 1e7
ORACLE_MAX_N = 8

# Internal cap on materialized multiset rows, independent of the user budget.
_MAX_MULTISETS = 2_000_000


@dataclass(frozen=True)
class LossValue:
    """A nonnegative loss with its family tag."""

    value: float
    kind: str

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"loss value must be finite, got {self.value!r}")
        # All kinds are -log of a ratio in (0, 1]; absorb negative roundoff.
        if self.value < 0.0:
            if self.value < -1e-12:
                raise ValueError(f"loss value must be >= 0, got {self.value!r}")
            object.__setattr__(self, "value", 0.0)


@dataclass(frozen=True)
class GEstimate:
    """Clamped denominator estimator with its floor metadata.

    ``floored`` records whether the raw reweighted estimate fell strictly
    below the floor (exp(-1/t) for normalized embeddings, 0 for the
    unnormalized-feature variant).
    """

    value: float
    floored: bool
    floor_used: float

    def __post_init__(self) -> None:
        if self.value < self.floor_used:
            raise ValueError("estimator value below its floor")


@dataclass(frozen=True)
class OracleResult:
    """Inclusion-exclusion oracle value with its cancellation diagnostics."""

    loss: LossValue
    condition_number: float
    terms: tuple[float, ...]


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d sequence")
    return arr


def _check_floor_mode(floor_mode: str) -> None:
    if floor_mode not in FLOOR_MODES:
        raise ValueError(f"floor_mode must be one of {FLOOR_MODES}, got {floor_mode!r}")


def _neumaier_sum(values: np.ndarray) -> float:
    """Compensated (error-free-transformation) summation."""
    total = 0.0
    comp = 0.0
    for v in values:
        v = float(v)
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
    return total + comp


def biased_loss_point(sim_pos: float, sims_neg, q: float | None = None) -> LossValue:
    """Per-sample loss with marginal-drawn negatives.

    value = -log[ exp(s+) / (exp(s+) + (Q/N) sum_i exp(s_i)) ], Q default N.
    Strictly decreasing in s+ and strictly increasing in every s_i.
    """
    sims_neg = _as_float_array(sims_neg, "sims_neg")
    n = sims_neg.shape[0]
    if n == 0:
        raise EmptyNegatives("biased loss needs at least one negative similarity")
    if q is None:
        q = float(n)
    if q < 0.0:
        raise ValueError("q must be nonnegative")
    c = max(float(sim_pos), float(sims_neg.max()))
    denom_tail = (q / n) * float(np.exp(sims_neg - c).sum())
    if denom_tail == 0.0:
        return LossValue(0.0, KIND_BIASED)
    value = math.log(math.exp(sim_pos - c) + denom_tail) + c - sim_pos
    return LossValue(value, KIND_BIASED)


def g_estimator(sims_u, sims_v, tau_plus: float, t: float = 1.0,
                floor_mode: str = EXP_FLOOR) -> GEstimate:
    """Clamped estimator of the mean true-negative exponential.

    g = max{ (1/tau-) [ mean_i exp(s_u_i) - tau+ mean_i exp(s_v_i) ], floor }
    with floor = exp(-1/t) (exp_floor) or 0 (zero_floor, for unnormalized
    features).  Inputs are similarity scores, i.e. already scaled by 1/t.
    """
    _check_floor_mode(floor_mode)
    if not (0.0 <= tau_plus < 1.0):
        raise ValueError("tau_plus must lie in [0, 1)")
    if t <= 0.0:
        raise ValueError("temperature must be positive")
    sims_u = _as_float_array(sims_u, "sims_u")
    sims_v = _as_float_array(sims_v, "sims_v")
    if sims_u.shape[0] < 1 or sims_v.shape[0] < 1:
        raise EmptyNegatives("g estimator needs N >= 1 and M >= 1 samples")

    c = max(float(sims_u.max()), float(sims_v.max()))
    mean_u = float(np.exp(sims_u - c).mean())
    mean_v = float(np.exp(sims_v - c).mean())
    raw_scaled = (mean_u - tau_plus * mean_v) / (1.0 - tau_plus)
    floor_used = math.exp(-1.0 / t) if floor_mode == EXP_FLOOR else 0.0
    floor_scaled = floor_used * math.exp(-c)
    floored = raw_scaled < floor_scaled
    if floored or raw_scaled <= 0.0:
        value = floor_used
    else:
        value = math.exp(math.log(raw_scaled) + c)
    return GEstimate(value=max(value, floor_used), floored=floored, floor_used=floor_used)


def debiased_loss_point(sim_pos: float, sims_u, sims_v, tau_plus: float,
                        t: float = 1.0, floor_mode: str = EXP_FLOOR) -> LossValue:
    """Per-sample debiased loss: -log[ exp(s+) / (exp(s+) + N g) ].

    With tau_plus = 0 and the floor not binding this reduces exactly to
    :func:`biased_loss_point` with Q = N.
    """
    _check_floor_mode(floor_mode)
    if not (0.0 <= tau_plus < 1.0):
        raise ValueError("tau_plus must lie in [0, 1)")
    if t <= 0.0:
        raise ValueError("temperature must be positive")
    sims_u = _as_float_array(sims_u, "sims_u")
    sims_v = _as_float_array(sims_v, "sims_v")
    if sims_u.shape[0] < 1:
        raise EmptyNegatives("debiased loss needs at least one unlabeled similarity")
    if sims_v.shape[0] < 1:
        raise EmptyNegatives("debiased loss needs at least one positive similarity")
    n = sims_u.shape[0]
    c = max(float(sim_pos), float(sims_u.max()), float(sims_v.max()))
    mean_u = float(np.exp(sims_u - c).mean())
    mean_v = float(np.exp(sims_v - c).mean())
    raw_scaled = (mean_u - tau_plus * mean_v) / (1.0 - tau_plus)
    floor_scaled = math.exp(-1.0 / t - c) if floor_mode == EXP_FLOOR else 0.0
    g_scaled = max(raw_scaled, floor_scaled)
    if g_scaled <= 0.0:
        return LossValue(0.0, KIND_DEBIASED_FIN)
    value = math.log(math.exp(sim_pos - c) + n * g_scaled) + c - sim_pos
    return LossValue(value, KIND_DEBIASED_FIN)


@dataclass(frozen=True)
class BatchTerms:
    """Per-anchor-role pieces of a two-view batch loss.

    The layout has V = (M+1) B + P rows: the B first views, the B second
    views, (M-1) groups of B extra positive views, then an optional pool of
    P fresh negative views (used only by the true-negative loss).  Role r's
    partner is (r + B) mod 2B; its negatives are the other 2(B-1) primary
    views (or the different-class pool views), so N = 2(B-1); its positive
    set is the partner plus its own identity's extra views.  Everything is
    shifted by a per-role max c so small temperatures cannot overflow.
    """

    losses: np.ndarray        # (2B,) per-role loss value
    floored: np.ndarray       # (2B,) raw estimate strictly below the floor
    grad_active: np.ndarray   # (2B,) gradient flows through the estimator
    sims: np.ndarray          # (V, V) similarity matrix
    shift: np.ndarray         # (2B,) per-role max-subtraction constant
    h_pos: np.ndarray         # (2B,) exp(s+ - c)
    denom: np.ndarray         # (2B,) shifted denominator h + N g (or h + T)
    exp_shift: np.ndarray     # (2B, V) exp(s - c)
    neg_mask: np.ndarray      # (2B, V) negative columns per role
    neg_scale: np.ndarray     # (2B,) weight on each negative exponential
    partner: np.ndarray       # (2B,) partner column per role
    extra_cols: np.ndarray    # (2B, M-1) extra-positive columns per role
    n_negatives: int
    kind: str
    tau_plus: float
    temperature: float
    m_positives: int


def batch_terms(f: np.ndarray, batch_size: int, m_positives: int, kind: str,
                tau_plus: float, t: float, floor_mode: str = EXP_FLOOR,
                labels: np.ndarray | None = None,
                neg_pool_labels: np.ndarray | None = None) -> BatchTerms:
    """Shared forward pass for all two-view batch losses.

    ``kind`` selects the denominator: "debiased" uses the clamped estimator
    with the partner as first positive sample, and "biased" is the tau+ = 0
    special case of the same arithmetic.  "unbiased" draws on true
    negatives instead (requires ``labels``): different-class views from the
    fresh pool when one is stacked below the extras (``neg_pool_labels``
    gives the pool's classes), otherwise the different-class primary views;
    either way the sum is reweighted by N / N_available so the denominator
    still estimates N times the mean true-negative exponential.
    """
    _check_floor_mode(floor_mode)
    f = np.asarray(f, dtype=np.float64)
    b = int(batch_size)
    m = int(m_positives)
    if b < 2:
        raise BatchTooSmall("need at least two anchors per batch")
    if m < 1:
        raise ValueError("m_positives must be >= 1")
    pool = 0 if neg_pool_labels is None else len(neg_pool_labels)
    if f.shape[0] != (m + 1) * b + pool:
        raise ValueError(f"expected {(m + 1) * b + pool} view rows, got {f.shape[0]}")
    if kind not in (KIND_BIASED, KIND_DEBIASED_FIN, KIND_UNBIASED, "debiased"):
        raise ValueError(f"unknown batch loss kind {kind!r}")
    kind = KIND_DEBIASED_FIN if kind == "debiased" else kind
    if pool and kind != KIND_UNBIASED:
        raise ValueError("a negative pool is only meaningful for the unbiased loss")
    if kind == KIND_BIASED:
        tau_plus, floor_mode = 0.0, ZERO_FLOOR
    if not (0.0 <= tau_plus < 1.0):
        raise ValueError("tau_plus must lie in [0, 1)")
    if t <= 0.0:
        raise ValueError("temperature must be positive")

    twob = 2 * b
    n_views = f.shape[0]
    n_neg = twob - 2
    sims = (f @ f.T) / t
    roles = np.arange(twob)
    partner = (roles + b) % twob

    # Columns of this role's extra positive views: 2B + j*B + (r mod B).
    extra_cols = (twob + np.arange(m - 1)[None, :] * b + (roles % b)[:, None]).astype(np.intp)

    if kind == KIND_UNBIASED:
        if labels is None:
            raise ValueError("unbiased batch loss needs anchor labels")
        lab = np.asarray(labels)[roles % b]
        neg_mask = np.zeros((twob, n_views), dtype=bool)
        if pool:
            neg_mask[:, n_views - pool:] = lab[:, None] != np.asarray(neg_pool_labels)[None, :]
        else:
            neg_mask[:, :twob] = lab[:, None] != lab[None, :]
            neg_mask[roles, roles] = False
            neg_mask[roles, partner] = False
    else:
        neg_mask = np.zeros((twob, n_views), dtype=bool)
        neg_mask[:, :twob] = True
        neg_mask[roles, roles] = False
        neg_mask[roles, partner] = False

    s_pos = sims[roles, partner]
    shift = np.where(neg_mask, sims[:twob], -np.inf).max(axis=1)
    shift = np.maximum(shift, s_pos)
    if m > 1:
        shift = np.maximum(shift, np.take_along_axis(sims[:twob], extra_cols, axis=1).max(axis=1))

    # Used columns sit at or below the shift; the clip only tames unused
    # entries (e.g. self-similarity at 1/t), which would otherwise overflow
    # and poison the masked sums with inf * 0.
    exp_shift = np.exp(np.minimum(sims[:twob] - shift[:, None], 700.0))
    h_pos = exp_shift[roles, partner]
    sum_u = (exp_shift * neg_mask).sum(axis=1)

    if kind == KIND_UNBIASED:
        n_avail = neg_mask.sum(axis=1)
        if np.any(n_avail == 0):
            raise DegenerateClass("an anchor has no different-class negative available")
        neg_scale = n_neg / n_avail
        denom = h_pos + neg_scale * sum_u
        losses = np.log(denom) + shift - s_pos
        return BatchTerms(losses, np.zeros(twob, bool), np.ones(twob, bool), sims,
                          shift, h_pos, denom, exp_shift, neg_mask, neg_scale,
                          partner, extra_cols, n_neg, kind, tau_plus, t, m)

    mean_u = sum_u / n_neg
    if m > 1:
        ext_vals = np.take_along_axis(exp_shift, extra_cols, axis=1)
        mean_v = (h_pos + ext_vals.sum(axis=1)) / m
    else:
        mean_v = h_pos
    tau_minus = 1.0 - tau_plus
    raw = (mean_u - tau_plus * mean_v) / tau_minus
    floor = np.exp(-1.0 / t - shift) if floor_mode == EXP_FLOOR else np.zeros(twob)
    g_scaled = np.maximum(raw, floor)
    floored = raw < floor
    grad_active = raw > floor
    denom = h_pos + n_neg * g_scaled
    losses = np.log(denom) + shift - s_pos
    neg_scale = np.full(twob, 1.0 / tau_minus)
    return BatchTerms(losses, floored, grad_active, sims, shift, h_pos, denom,
                      exp_shift, neg_mask, neg_scale, partner, extra_cols,
                      n_neg, kind, tau_plus, t, m)


def debiased_loss_batch(view_a: np.ndarray, view_b: np.ndarray, tau_plus: float,
                        t: float, extra_views: np.ndarray | None = None,
                        floor_mode: str = EXP_FLOOR) -> LossValue:
    """Two-view batch debiased loss, averaged over all 2B anchor roles.

    Each of the 2B views is an anchor once: its partner view is the positive
    (and the first estimator positive), the other 2(B-1) primary views are
    the unlabeled negatives, and ``extra_views`` (shape (M-1, B, d)) supply
    the remaining positive samples.  Permutation-invariant over batch order.
    """
    view_a = np.asarray(view_a, dtype=np.float64)
    view_b = np.asarray(view_b, dtype=np.float64)
    if view_a.shape != view_b.shape or view_a.ndim != 2:
        raise ValueError("view_a and view_b must both be (B, d)")
    if view_a.shape[0] < 2:
        raise BatchTooSmall("need at least two anchors per batch")
    stack = [view_a, view_b]
    m = 1
    if extra_views is not None:
        extra_views = np.asarray(extra_views, dtype=np.float64)
        if extra_views.ndim != 3 or extra_views.shape[1:] != view_a.shape:
            raise ValueError("extra_views must be (M-1, B, d)")
        m += extra_views.shape[0]
        stack.extend(extra_views)
    f = np.concatenate(stack, axis=0)
    terms = batch_terms(f, view_a.shape[0], m, KIND_DEBIASED_FIN, tau_plus, t, floor_mode)
    return LossValue(float(terms.losses.mean()), KIND_DEBIASED_FIN)


def _multiset_sums(weights: np.ndarray, values: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact distribution of sum(values[i]) over n i.i.d. draws i ~ weights.

    Enumerates multisets over the support with multinomial coefficients,
    which regroups (without changing) the full tuple sum.  Returns
    (probabilities, value sums).
    """
    support = np.flatnonzero(weights > 0.0)
    if n == 0:
        return np.array([1.0]), np.array([0.0])
    n_rows = math.comb(support.size + n - 1, n)
    if n_rows > _MAX_MULTISETS:
        raise BudgetExceeded(f"{n_rows} multisets exceed the internal enumeration cap")
    combos = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations_with_replacement(range(support.size), n)),
        dtype=np.intp, count=n_rows * n,
    ).reshape(n_rows, n)
    counts = np.zeros((n_rows, support.size), dtype=np.int64)
    for j in range(n):
        np.add.at(counts, (np.arange(n_rows), combos[:, j]), 1)
    logfact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, n + 1)))))
    log_coef = logfact[n] - logfact[counts].sum(axis=1)
    log_prob = counts @ np.log(weights[support])
    probs = np.exp(log_coef + log_prob)
    sums = values[support][combos].sum(axis=1)
    return probs, sums


def _check_budget(s_points: int, n_neg: int, budget: float) -> None:
    if s_points ** n_neg * s_points ** 2 > budget:
        raise BudgetExceeded(
            f"S^N * S^2 = {s_points}^{n_neg} * {s_points}^2 exceeds budget {budget:g}"
        )


def _loss_grid(expvec: np.ndarray, sims_row: np.ndarray, tails: np.ndarray,
               shift: float) -> np.ndarray:
    """log(h+ + tail) - s+ for every (tail, positive) pair, in shifted units."""
    return np.log(expvec[None, :] + tails[:, None]) + shift - sims_row[None, :]


def unbiased_loss_exact(embeddings: np.ndarray, mix: DiscreteClassMixture,
                        n_neg: int, q: float | None = None,
                        t: float = 1.0, budget: float = DEFAULT_ENUM_BUDGET) -> LossValue:
    """Exact expectation of the true-negative loss by full enumeration.

    Expectation over anchor ~ marginal, positive ~ anchor class, and N
    i.i.d. negatives from the anchor's complement classes, with denominator
    weight Q/N (Q defaults to N).  No Monte Carlo error.
    """
    if n_neg < 1:
        raise EmptyNegatives("unbiased loss needs N >= 1")
    if mix.n_classes < 2:
        raise DegenerateClass("unbiased loss needs K >= 2")
    _check_budget(mix.n_points, n_neg, budget)
    if q is None:
        q = float(n_neg)
    f = np.asarray(embeddings, dtype=np.float64)
    sims = (f @ f.T) / t
    marg = marginal(mix)
    total = 0.0
    for a in range(mix.n_points):
        if marg[a] == 0.0:
            continue
        shift = float(sims[a].max())
        expvec = np.exp(sims[a] - shift)
        probs, sums = _multiset_sums(negative_dist(mix, a), expvec, n_neg)
        grid = _loss_grid(expvec, sims[a], (q / n_neg) * sums, shift)
        total += marg[a] * float(probs @ grid @ positive_dist(mix, a))
    return LossValue(total, KIND_UNBIASED)


def asymptotic_debiased_exact(embeddings: np.ndarray, mix: DiscreteClassMixture,
                              q: float, tau_plus: float | None = None,
                              t: float = 1.0) -> LossValue:
    """Exact large-N limit of the debiased loss on a discrete mixture.

    For each anchor the inner expectation (E_p exp(s) - tau+ E_pos exp(s))
    / tau- is computed exactly; it is not clamped, and a nonpositive value
    raises :class:`NegativeDenominator` so theory checks are never silently
    distorted (this can only happen with an override tau+ above the
    mixture's true class prior).
    """
    if mix.n_classes < 2:
        raise DegenerateClass("asymptotic debiased loss needs K >= 2")
    if tau_plus is None:
        tau_plus = mix.tau_plus
    if not (0.0 <= tau_plus < 1.0):
        raise ValueError("tau_plus must lie in [0, 1)")
    if q <= 0.0:
        raise ValueError("q must be positive")
    f = np.asarray(embeddings, dtype=np.float64)
    sims = (f @ f.T) / t
    marg = marginal(mix)
    total = 0.0
    for a in range(mix.n_points):
        if marg[a] == 0.0:
            continue
        shift = float(sims[a].max())
        expvec = np.exp(sims[a] - shift)
        pos = positive_dist(mix, a)
        inner = (float(marg @ expvec) - tau_plus * float(pos @ expvec)) / (1.0 - tau_plus)
        if inner <= 0.0:
            raise NegativeDenominator(
                f"inner expectation nonpositive at anchor {a} (tau_plus={tau_plus!r})"
            )
        losses = np.log(expvec + q * inner) + shift - sims[a]
        total += marg[a] * float(losses @ pos)
    return LossValue(total, KIND_DEBIASED_ASYM)


def binomial_oracle(embeddings: np.ndarray, mix: DiscreteClassMixture, n_neg: int,
                    t: float = 1.0, budget: float = DEFAULT_ENUM_BUDGET) -> OracleResult:
    """Inclusion-exclusion rewriting of the exact unbiased loss.

    value = (1/tau-)^N sum_k C(N,k) (-tau+)^k E[loss with k negatives from
    the positive distribution and N-k from the marginal], every inner
    expectation enumerated exactly.  The alternating series cancels
    catastrophically for large N, so N is capped at 8, terms are sorted by
    magnitude and summed with compensated arithmetic, and the condition
    number sum|term| / |sum term| is reported alongside the value.
    """
    if not (1 <= n_neg <= ORACLE_MAX_N):
        raise OracleRangeExceeded(f"oracle requires 1 <= N <= {ORACLE_MAX_N}, got {n_neg}")
    if mix.n_classes < 2:
        raise DegenerateClass("oracle needs K >= 2")
    _check_budget(mix.n_points, n_neg, budget)
    f = np.asarray(embeddings, dtype=np.float64)
    sims = (f @ f.T) / t
    marg = marginal(mix)
    tau_plus = mix.tau_plus
    tau_minus = mix.tau_minus

    inner = np.zeros(n_neg + 1)
    for a in range(mix.n_points):
        if marg[a] == 0.0:
            continue
        shift = float(sims[a].max())
        expvec = np.exp(sims[a] - shift)
        pos = positive_dist(mix, a)
        for k in range(n_neg + 1):
            probs_pos, sums_pos = _multiset_sums(pos, expvec, k)
            probs_marg, sums_marg = _multiset_sums(marg, expvec, n_neg - k)
            probs = np.outer(probs_pos, probs_marg).ravel()
            sums = (sums_pos[:, None] + sums_marg[None, :]).ravel()
            grid = _loss_grid(expvec, sims[a], sums, shift)
            inner[k] += marg[a] * float(probs @ grid @ pos)

    k = np.arange(n_neg + 1)
    coeffs = np.array([math.comb(n_neg, int(i)) for i in k], dtype=np.float64)
    terms = coeffs * (-tau_plus) ** k * inner / tau_minus ** n_neg
    order = np.argsort(np.abs(terms))
    value = _neumaier_sum(terms[order])
    abs_sum = float(np.abs(terms).sum())
    cond = abs_sum / abs(value) if value != 0.0 else math.inf
    return OracleResult(LossValue(value, KIND_ORACLE), cond, tuple(terms))


def softmax_ce(logits, label: int) -> LossValue:
    """Multiclass cross entropy -log softmax(logits)[label]."""
    logits = _as_float_array(logits, "logits")
    if logits.shape[0] < 2:
        raise DegenerateClass("softmax cross entropy needs K >= 2")
    if not (0 <= label < logits.shape[0]):
        raise ValueError("label out of range")
    shift = float(logits.max())
    value = math.log(float(np.exp(logits - shift).sum())) + shift - float(logits[label])
    return LossValue(value, KIND_SOFTMAX_CE)


def class_mean_embeddings(embeddings: np.ndarray, mix: DiscreteClassMixture) -> np.ndarray:
    """Exact class means mu_c = E_{x ~ p(.|c)} f(x), shape (K, d)."""
    f = np.asarray(embeddings, dtype=np.float64)
    return mix.class_conditionals @ f


def mean_classifier_loss(embeddings: np.ndarray, mix: DiscreteClassMixture,
                         t: float = 1.0) -> LossValue:
    """Exact supervised loss of the classifier whose rows are class means.

    Logits for point x are f(x).mu_c / t; the expectation over x ~ marginal
    is a finite sum.  Constant embeddings give exactly log K.
    """
    if mix.n_classes < 2:
        raise DegenerateClass("mean classifier loss needs K >= 2")
    f = np.asarray(embeddings, dtype=np.float64)
    mu = class_mean_embeddings(f, mix)
    logits = (f @ mu.T) / t
    marg = marginal(mix)
    shift = logits.max(axis=1)
    lse = np.log(np.exp(logits - shift[:, None]).sum(axis=1)) + shift
    ce = lse - logits[np.arange(mix.n_points), mix.labels]
    return LossValue(float(marg @ ce), KIND_SUPERVISED_MU)


def mean_classifier_loss_data(representations: np.ndarray, labels: np.ndarray,
                              t: float = 1.0,
                              sample_weights: np.ndarray | None = None) -> LossValue:
    """Empirical mean-classifier loss on a labeled representation set."""
    reps = np.asarray(representations, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    k = int(labels.max()) + 1
    if np.unique(labels).size < 2:
        raise DegenerateClass("mean classifier needs at least two classes present")
    if sample_weights is None:
        sample_weights = np.full(labels.shape[0], 1.0 / labels.shape[0])
    else:
        sample_weights = np.asarray(sample_weights, dtype=np.float64)
        sample_weights = sample_weights / sample_weights.sum()
    mu = np.zeros((k, reps.shape[1]))
    for c in range(k):
        mask = labels == c
        w = sample_weights[mask]
        if w.sum() > 0.0:
            mu[c] = (w[:, None] * reps[mask]).sum(axis=0) / w.sum()
    logits = (reps @ mu.T) / t
    shift = logits.max(axis=1)
    lse = np.log(np.exp(logits - shift[:, None]).sum(axis=1)) + shift
    ce = lse - logits[np.arange(labels.shape[0]), labels]
    return LossValue(float(sample_weights @ ce), KIND_SUPERVISED_MU)
