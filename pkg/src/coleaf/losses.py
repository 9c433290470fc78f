"""Training losses and the pseudo-label machinery connecting the branches.

Teacher-side quantities (pseudo-labels, unalignment weights, reference tokens
inside the contrastive loss, the reference correlation matrix inside the
co-occurrence loss) are constants: each loss trains exactly one branch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ContractError, DimensionError
from .numerics import Tensor

REFERENCE = "reference"
ANCHOR = "anchor"


@dataclass
class PseudoLabels:
    audio: np.ndarray  # C in {0,1}
    visual: np.ndarray
    source: str  # "reference" or "anchor"


@dataclass
class UnalignmentWeights:
    n_audio_only: int
    n_visual_only: int
    n_audible_visible: int
    theta_audio: float  # in [0,1], degree of contrastive encouragement
    theta_visual: float


@dataclass(frozen=True)
class LossBundle:
    ref_video: float
    anchor_video: float
    event_contrastive: float
    self_modality_kd: float
    cooccurrence_kd: float
    total: float


def _values(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def video_loss_reference(ref, weak_label):
    """Video-level BCE terms for the reference branch, both modalities.

    Covers the pooled probabilities and, when class tokens are in play, the
    class-token scores as well.
    """
    y = Tensor(np.asarray(weak_label, dtype=np.float64))
    loss = nm.bce(y, ref.video_probs_audio) + nm.bce(y, ref.video_probs_visual)
    if ref.cls_probs_audio is not None:
        loss = loss + nm.bce(y, ref.cls_probs_audio) + nm.bce(y, ref.cls_probs_visual)
    return loss


def video_loss_anchor(anchor, weak_label):
    """Video-level BCE on the anchor branch's pooled probabilities."""
    y = Tensor(np.asarray(weak_label, dtype=np.float64))
    return nm.bce(y, anchor.video_probs)


def distil_pseudo_labels(video_probs_audio, video_probs_visual, threshold, source):
    """Binary per-class labels: 1 where a video probability strictly exceeds the threshold.

    The result carries no gradient regardless of where the probabilities came from.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"pseudo-label threshold must be in (0,1), got {threshold}")
    if source not in (REFERENCE, ANCHOR):
        raise ConfigError(f"unknown pseudo-label source {source!r}")
    audio = (_values(video_probs_audio) > threshold).astype(np.int64)
    visual = (_values(video_probs_visual) > threshold).astype(np.int64)
    return PseudoLabels(audio=audio, visual=visual, source=source)


def unalignment_weights(pseudo):
    """Per-modality encouragement weights from reference pseudo-labels.

    Counts audible-only, visible-only and audible-visible classes, then
    theta_audio = N_a / (N_a + N_av) and symmetrically for visual, with
    0/0 defined as 0 (no event, or everything audible-visible).
    """
    if pseudo.source != REFERENCE:
        raise ContractError("unalignment weights are defined over reference pseudo-labels")
    ga, gv = pseudo.audio, pseudo.visual
    n_a = int(np.sum(ga * (1 - gv)))
    n_v = int(np.sum(gv * (1 - ga)))
    n_av = int(np.sum(ga * gv))
    theta_a = n_a / (n_a + n_av) if n_a + n_av else 0.0
    theta_v = n_v / (n_v + n_av) if n_v + n_av else 0.0
    return UnalignmentWeights(n_a, n_v, n_av, theta_a, theta_v)


def event_aware_nce(
    anchor_audio,
    anchor_visual,
    ref_audio,
    ref_visual,
    weights,
    tau=0.2,
    include_positive=False,
):
    """Contrastive pull of anchor segment tokens toward the reference branch.

    For each segment the positive is the same segment's reference token; the
    negatives are the other T-1 reference tokens of the same modality. The
    positive is left out of the normalizer unless `include_positive` is set.
    Each modality's sum is scaled by its unalignment weight, so videos whose
    events are all audible-visible contribute nothing.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    t = anchor_audio.shape[0]
    if t < 2:
        raise ContractError(f"contrastive loss needs at least 2 segments, got {t}")
    total = None
    for anchor_tokens, ref_tokens, theta in (
        (anchor_audio, ref_audio, weights.theta_audio),
        (anchor_visual, ref_visual, weights.theta_visual),
    ):
        if theta == 0.0:
            continue
        if anchor_tokens.shape != ref_tokens.shape:
            raise DimensionError(
                f"token sets must match, got {anchor_tokens.shape} and {ref_tokens.shape}"
            )
        teacher = nm.as_tensor(ref_tokens).detach()
        sim = nm.matmul(anchor_tokens, nm.transpose(teacher)) * (1.0 / tau)
        pos = sim[np.arange(t), np.arange(t)]
        if include_positive:
            masked = sim
        else:
            bias = np.zeros((t, t))
            np.fill_diagonal(bias, -1e30)  # exp underflows to exactly 0
            masked = sim + Tensor(bias)
        shift = masked.data.max(axis=1, keepdims=True)
        lse = nm.log(nm.exp(masked - Tensor(shift)).sum(axis=1)) + Tensor(shift[:, 0])
        term = (pos - lse).sum() * (-theta / t)
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def self_modality_kd(anchor_pseudo, ref):
    """BCE of reference video probabilities against anchor pseudo-labels."""
    if anchor_pseudo.source != ANCHOR:
        raise ContractError("self-modality distillation expects anchor pseudo-labels")
    ga = Tensor(anchor_pseudo.audio.astype(np.float64))
    gv = Tensor(anchor_pseudo.visual.astype(np.float64))
    return nm.bce(ga, ref.video_probs_audio) + nm.bce(gv, ref.video_probs_visual)


def class_correlation(video_probs):
    """Class correlation matrix: outer product of a probability vector with itself."""
    p = nm.as_tensor(video_probs)
    c = p.shape[0]
    return nm.matmul(p.reshape((c, 1)), p.reshape((1, c)))


def anchor_modality_video_probs(anchor_out):
    """Per-modality video probabilities: temporal pooling of each modality's slice."""
    pa = (anchor_out.w_temporal[:, 0, :] * anchor_out.seg_probs[:, 0, :]).sum(axis=0)
    pv = (anchor_out.w_temporal[:, 1, :] * anchor_out.seg_probs[:, 1, :]).sum(axis=0)
    return pa, pv


def _mse(a, b):
    diff = a - b
    return (diff * diff).mean()


def cooccurrence_kd(ref_out, anchor_out):
    """MSE between the branches' class correlation matrices, per modality.

    The reference matrices act as the teacher, so only the anchor branch
    receives gradient.
    """
    pa, pv = anchor_modality_video_probs(anchor_out)
    loss = None
    for ref_probs, anchor_probs in (
        (ref_out.video_probs_audio, pa),
        (ref_out.video_probs_visual, pv),
    ):
        teacher = class_correlation(nm.as_tensor(ref_probs).detach())
        student = class_correlation(anchor_probs)
        term = _mse(teacher, student)
        loss = term if loss is None else loss + term
    return loss


def total_loss(
    ref_video,
    anchor_video,
    event_contrastive,
    self_modality_kd_loss,
    cooccurrence_kd_loss,
    lambda_evt=1.0,
    lambda_kd=1.0,
    lambda_cls=1.0,
):
    """Weighted training objective plus an unweighted component record.

    Components may be autograd scalars or plain floats; the returned total is
    an autograd scalar whenever any component is one.
    """
    for name, lam in (("lambda_evt", lambda_evt), ("lambda_kd", lambda_kd), ("lambda_cls", lambda_cls)):
        if lam < 0:
            raise ConfigError(f"{name} must be >= 0, got {lam}")
    total = anchor_video + ref_video
    total = total + lambda_evt * event_contrastive
    total = total + lambda_kd * self_modality_kd_loss
    total = total + lambda_cls * cooccurrence_kd_loss

    def val(x):
        return x.item() if isinstance(x, Tensor) else float(x)

    bundle = LossBundle(
        ref_video=val(ref_video),
        anchor_video=val(anchor_video),
        event_contrastive=val(event_contrastive),
        self_modality_kd=val(self_modality_kd_loss),
        cooccurrence_kd=val(cooccurrence_kd_loss),
        total=val(total),
    )
    return total, bundle
