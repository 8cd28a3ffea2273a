"""Analytic gradients of batch losses w.r.t. encoder parameters.

The chain is closed-form: similarity scores -> (clamped) denominator
estimator -> per-anchor loss -> batch mean, then back through the unit
projection via its Jacobian and through the encoder.  On anchors where the
estimator sits on its floor the gradient through the unlabeled and extra
positive similarities is zero while the positive-pair path is retained; at
exact equality with the floor we take the floored branch, matching the
right-continuous subgradient of max and typical autodiff behavior.

A central-finite-difference harness verifies the whole chain; coordinates
whose +/- step evaluations land on different sides of the clamp are
excluded from the error aggregate (the loss is nonsmooth there) and counted
instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .encoder import EncoderParams, ViewBatch, encoder_backward, encoder_forward, flatten, unflatten_like
from .geometry import unit_rows
from .losses import KIND_BIASED, KIND_DEBIASED_FIN, KIND_UNBIASED, EXP_FLOOR, LossValue

TRAIN_KINDS = ("biased", "debiased", "unbiased")


@dataclass(frozen=True)
class LossSpec:
    """Which batch objective to differentiate, and its hyperparameters."""

    kind: str = "debiased"
    tau_plus: float = 0.0
    temperature: float = 1.0
    floor_mode: str = EXP_FLOOR

    def __post_init__(self) -> None:
        if self.kind not in TRAIN_KINDS:
            raise ValueError(f"kind must be one of {TRAIN_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class GradientReport:
    """Analytic vs central-difference gradients over flattened parameters.

    max_rel_err = ||analytic - numeric||_inf / (||numeric||_inf + 1e-12),
    computed over coordinates not excluded by clamp straddling.
    """

    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_err: float
    step: float
    excluded: tuple[int, ...] = field(default_factory=tuple)


def _kind_tag(kind: str) -> str:
    return {"biased": KIND_BIASED, "debiased": KIND_DEBIASED_FIN, "unbiased": KIND_UNBIASED}[kind]


def batch_loss_terms(params: EncoderParams, batch: ViewBatch, spec: LossSpec) -> losses.BatchTerms:
    """Forward pass only: per-anchor losses plus clamp flags."""
    z, _ = encoder_forward(params, batch.features)
    f = unit_rows(z)
    return losses.batch_terms(f, batch.batch_size, batch.m_positives, _kind_tag(spec.kind),
                              spec.tau_plus, spec.temperature, spec.floor_mode,
                              batch.labels, batch.neg_pool_labels)


def loss_and_grad(params: EncoderParams, batch: ViewBatch,
                  spec: LossSpec) -> tuple[LossValue, EncoderParams]:
    """Batch loss and its exact gradient w.r.t. the encoder parameters."""
    z, cache = encoder_forward(params, batch.features)
    f = unit_rows(z)
    terms = losses.batch_terms(f, batch.batch_size, batch.m_positives, _kind_tag(spec.kind),
                               spec.tau_plus, spec.temperature, spec.floor_mode,
                               batch.labels, batch.neg_pool_labels)
    twob = 2 * batch.batch_size
    n_views = f.shape[0]
    roles = np.arange(twob)

    # d(loss_r)/d(similarity) coefficients, averaged over the 2B anchor roles.
    grad_sims = np.zeros((n_views, n_views))
    inv_d = 1.0 / terms.denom
    active = terms.grad_active.astype(np.float64)
    if terms.kind == KIND_UNBIASED:
        d_pos = terms.h_pos * inv_d - 1.0
        d_neg = (terms.neg_scale * inv_d)[:, None] * terms.exp_shift * terms.neg_mask
    else:
        m = terms.m_positives
        v_coef = active * terms.n_negatives * terms.tau_plus / ((1.0 - terms.tau_plus) * m)
        d_pos = terms.h_pos * (1.0 - v_coef) * inv_d - 1.0
        d_neg = (active * terms.neg_scale * inv_d)[:, None] * terms.exp_shift * terms.neg_mask
        if m > 1:
            ext_vals = np.take_along_axis(terms.exp_shift, terms.extra_cols, axis=1)
            d_ext = -(v_coef * inv_d)[:, None] * ext_vals
            np.add.at(grad_sims, (roles[:, None], terms.extra_cols), d_ext / twob)
    grad_sims[:twob, :] += d_neg / twob
    grad_sims[roles, terms.partner] += d_pos / twob

    # s_ij = f_i . f_j / t  =>  dL/dF = (G + G^T) F / t.
    d_f = (grad_sims + grad_sims.T) @ f / terms.temperature
    # Unit projection: dL/dz = (dL/df - (dL/df . f) f) / ||z||.
    norms = np.linalg.norm(z, axis=1)
    d_z = (d_f - (d_f * f).sum(axis=1, keepdims=True) * f) / norms[:, None]
    grads = encoder_backward(params, cache, d_z)
    return LossValue(float(terms.losses.mean()), terms.kind), grads


def finite_diff_check(params: EncoderParams, batch: ViewBatch, spec: LossSpec,
                      step: float = 1e-6) -> GradientReport:
    """Central differences per parameter coordinate against the analytic gradient.

    Coordinates where the clamp pattern differs between the +step and -step
    evaluations are excluded from the aggregate and listed in ``excluded``.
    """
    if not (1e-8 <= step <= 1e-3):
        raise ValueError("step must lie in [1e-8, 1e-3]")
    _, grads = loss_and_grad(params, batch, spec)
    analytic = flatten(grads)
    theta = flatten(params)
    numeric = np.zeros_like(theta)
    excluded: list[int] = []
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + step
        terms_hi = batch_loss_terms(unflatten_like(params, bumped), batch, spec)
        bumped[i] = theta[i] - step
        terms_lo = batch_loss_terms(unflatten_like(params, bumped), batch, spec)
        numeric[i] = (terms_hi.losses.mean() - terms_lo.losses.mean()) / (2.0 * step)
        if not np.array_equal(terms_hi.floored, terms_lo.floored):
            excluded.append(i)
    keep = np.ones(theta.size, dtype=bool)
    keep[excluded] = False
    if keep.any():
        denom = float(np.abs(numeric[keep]).max()) + 1e-12
        max_rel_err = float(np.abs(analytic[keep] - numeric[keep]).max()) / denom
    else:
        max_rel_err = 0.0
    return GradientReport(analytic=analytic, numeric=numeric, max_rel_err=max_rel_err,
                          step=step, excluded=tuple(excluded))
