"""The two network branches.

The reference branch sees each modality in isolation (self-attention over the
input tokens plus learnable class tokens) and is used only during training.
The anchor branch combines unimodal and cross-modal attention and is the
branch deployed for inference.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import numerics as nm
from .errors import DimensionError
from .numerics import Tensor

AUDIO, VISUAL = 0, 1


@dataclass
class Instrumentation:
    reference_forward_calls: int = 0
    anchor_forward_calls: int = 0
    class_token_reads: int = 0

    def reset(self):
        self.reference_forward_calls = 0
        self.anchor_forward_calls = 0
        self.class_token_reads = 0


# The prediction path is required to leave the reference branch untouched;
# these counters let tests and callers check that.
instrumentation = Instrumentation()


@dataclass(eq=False)
class SegmentGroundTruth:
    audio: np.ndarray  # T x C in {0,1}
    visual: np.ndarray  # T x C in {0,1}

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.int64)
        self.visual = np.asarray(self.visual, dtype=np.int64)
        if self.audio.shape != self.visual.shape:
            raise DimensionError(
                f"ground-truth shapes differ: {self.audio.shape} vs {self.visual.shape}"
            )

    @property
    def audible_visible(self):
        # Derived on demand, never stored: an event is audible-visible at a
        # cell exactly when both modality labels are set there.
        return self.audio * self.visual

    def __eq__(self, other):
        return (
            isinstance(other, SegmentGroundTruth)
            and np.array_equal(self.audio, other.audio)
            and np.array_equal(self.visual, other.visual)
        )


@dataclass(eq=False)
class VideoSample:
    id: str
    audio_tokens: np.ndarray  # T x D
    visual_tokens: np.ndarray  # T x D
    weak_label: np.ndarray  # C in {0,1}, modality-agnostic
    gt: SegmentGroundTruth | None = None

    def __post_init__(self):
        self.audio_tokens = np.asarray(self.audio_tokens, dtype=np.float64)
        self.visual_tokens = np.asarray(self.visual_tokens, dtype=np.float64)
        self.weak_label = np.asarray(self.weak_label, dtype=np.int64)
        if self.audio_tokens.shape != self.visual_tokens.shape or self.audio_tokens.ndim != 2:
            raise DimensionError(
                f"token matrices must share T x D, got {self.audio_tokens.shape} "
                f"and {self.visual_tokens.shape}"
            )
        if self.gt is not None:
            expect = (self.n_segments, self.n_classes)
            if self.gt.audio.shape != expect:
                raise DimensionError(f"ground truth shape {self.gt.audio.shape}, expected {expect}")

    @property
    def n_segments(self):
        return self.audio_tokens.shape[0]

    @property
    def dim(self):
        return self.audio_tokens.shape[1]

    @property
    def n_classes(self):
        return self.weak_label.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, VideoSample)
            and self.id == other.id
            and np.array_equal(self.audio_tokens, other.audio_tokens)
            and np.array_equal(self.visual_tokens, other.visual_tokens)
            and np.array_equal(self.weak_label, other.weak_label)
            and self.gt == other.gt
        )


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor


@dataclass
class LinearParams:
    weight: Tensor
    bias: Tensor


@dataclass
class ReferenceParams:
    attn_audio: AttentionParams
    attn_visual: AttentionParams
    class_tokens_audio: Tensor  # C x D, learnable
    class_tokens_visual: Tensor
    temporal_fc: LinearParams  # D -> C, shared across modalities
    classifier_audio: LinearParams  # D -> C
    classifier_visual: LinearParams


@dataclass
class AnchorParams:
    self_attn_audio: AttentionParams
    self_attn_visual: AttentionParams
    cross_attn_audio: AttentionParams  # audio queries over visual tokens
    cross_attn_visual: AttentionParams
    classifier: LinearParams  # D -> C, shared by both modalities
    pool_temporal_fc: LinearParams  # D -> C, logits normalized along T
    pool_modality_fc: LinearParams  # D -> C, logits normalized across modalities


@dataclass
class BranchParams:
    reference: ReferenceParams
    anchor: AnchorParams
    dim: int
    n_classes: int

    def named_parameters(self):
        out = []
        for branch_name in ("reference", "anchor"):
            branch = getattr(self, branch_name)
            for f in fields(branch):
                value = getattr(branch, f.name)
                prefix = f"{branch_name}.{f.name}"
                if isinstance(value, Tensor):
                    out.append((prefix, value))
                else:
                    for sub in fields(value):
                        out.append((f"{prefix}.{sub.name}", getattr(value, sub.name)))
        return out

    def get_parameter(self, name):
        obj = self
        *path, leaf = name.split(".")
        for part in path:
            obj = getattr(obj, part)
        return getattr(obj, leaf)

    def set_parameter(self, name, tensor):
        obj = self
        *path, leaf = name.split(".")
        for part in path:
            obj = getattr(obj, part)
        setattr(obj, leaf, tensor)


def init_branch_params(dim, n_classes, seed):
    """Fresh parameters, uniform in [-1/sqrt(D), 1/sqrt(D)] from one seeded stream."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(dim)

    def u(*shape):
        return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

    def attn():
        return AttentionParams(u(dim, dim), u(dim, dim), u(dim, dim))

    def lin():
        return LinearParams(u(dim, n_classes), u(n_classes))

    reference = ReferenceParams(
        attn_audio=attn(),
        attn_visual=attn(),
        class_tokens_audio=u(n_classes, dim),
        class_tokens_visual=u(n_classes, dim),
        temporal_fc=lin(),
        classifier_audio=lin(),
        classifier_visual=lin(),
    )
    anchor = AnchorParams(
        self_attn_audio=attn(),
        self_attn_visual=attn(),
        cross_attn_audio=attn(),
        cross_attn_visual=attn(),
        classifier=lin(),
        pool_temporal_fc=lin(),
        pool_modality_fc=lin(),
    )
    return BranchParams(reference=reference, anchor=anchor, dim=dim, n_classes=n_classes)


@dataclass
class ReferenceOutput:
    tokens_audio: Tensor  # (T+C) x D with class tokens, T x D without
    tokens_visual: Tensor
    seg_probs_audio: Tensor  # T x C
    seg_probs_visual: Tensor
    temporal_weights_audio: Tensor  # T x C, each column sums to 1 along T
    temporal_weights_visual: Tensor
    video_probs_audio: Tensor  # C
    video_probs_visual: Tensor
    cls_probs_audio: Tensor | None  # C, None when class tokens are disabled
    cls_probs_visual: Tensor | None


@dataclass
class AnchorOutput:
    tokens_audio: Tensor  # T x D
    tokens_visual: Tensor
    seg_probs: Tensor  # T x 2 x C, audio then visual along the modality axis
    w_temporal: Tensor  # T x 2 x C, sums to 1 along T per (modality, class)
    w_modality: Tensor  # T x 2 x C, sums to 1 across modalities per (t, class)
    video_probs: Tensor  # C


def _check_dims(sample, params):
    if sample.dim != params.dim or sample.n_classes != params.n_classes:
        raise DimensionError(
            f"sample is T={sample.n_segments}, D={sample.dim}, C={sample.n_classes} "
            f"but params expect D={params.dim}, C={params.n_classes}"
        )


def _linear(x, lin):
    return nm.matmul(x, lin.weight) + lin.bias


def _linear3(x, lin):
    t, m, d = x.shape
    flat = x.reshape((t * m, d))
    return _linear(flat, lin).reshape((t, m, lin.bias.shape[0]))


def _attend(query, kv, p):
    return nm.attention(query, kv, p.wq, p.wk, p.wv)


def reference_forward(sample, params, use_class_tokens=True):
    """Unimodal branch: self-attention over [input tokens; class tokens].

    Per modality the attended input-token rows yield segment probabilities
    and temporal pooling weights; their weighted sum is the video-level
    probability vector. Attended class-token rows are average-pooled over the
    embedding axis into per-class scores.
    """
    _check_dims(sample, params)
    instrumentation.reference_forward_calls += 1
    ref = params.reference
    t = sample.n_segments
    per_modality = []
    for feats, attn_p, cls_tokens, classifier in (
        (sample.audio_tokens, ref.attn_audio, ref.class_tokens_audio, ref.classifier_audio),
        (sample.visual_tokens, ref.attn_visual, ref.class_tokens_visual, ref.classifier_visual),
    ):
        f = Tensor(feats)
        if use_class_tokens:
            instrumentation.class_token_reads += 1
            x = nm.concat([f, cls_tokens], axis=0)
        else:
            x = f
        tokens = _attend(x, x, attn_p)
        seg_tokens = tokens[0:t]
        seg_probs = nm.sigmoid(_linear(seg_tokens, classifier))
        weights = nm.softmax(_linear(seg_tokens, ref.temporal_fc), axis=0)
        video_probs = (weights * seg_probs).sum(axis=0)
        cls_probs = nm.sigmoid(tokens[t:].mean(axis=1)) if use_class_tokens else None
        per_modality.append((tokens, seg_probs, weights, video_probs, cls_probs))
    a, v = per_modality
    return ReferenceOutput(
        tokens_audio=a[0],
        tokens_visual=v[0],
        seg_probs_audio=a[1],
        seg_probs_visual=v[1],
        temporal_weights_audio=a[2],
        temporal_weights_visual=v[2],
        video_probs_audio=a[3],
        video_probs_visual=v[3],
        cls_probs_audio=a[4],
        cls_probs_visual=v[4],
    )


def anchor_forward(sample, params, unimodal_only=False):
    """Hybrid-attention branch with attentive pooling to video level.

    Each modality token receives a residual self-attention term and, unless
    `unimodal_only` is set, a cross-attention term over the other modality.
    A shared classifier scores segments; two pooling weight fields (one
    normalized along time, one across modalities) reduce the T x 2 x C
    probability block to a per-class video probability.
    """
    _check_dims(sample, params)
    instrumentation.anchor_forward_calls += 1
    anc = params.anchor
    fa0 = Tensor(sample.audio_tokens)
    fv0 = Tensor(sample.visual_tokens)
    fa = fa0 + _attend(fa0, fa0, anc.self_attn_audio)
    fv = fv0 + _attend(fv0, fv0, anc.self_attn_visual)
    if not unimodal_only:
        fa = fa + _attend(fa0, fv0, anc.cross_attn_audio)
        fv = fv + _attend(fv0, fa0, anc.cross_attn_visual)
    seg_a = nm.sigmoid(_linear(fa, anc.classifier))
    seg_v = nm.sigmoid(_linear(fv, anc.classifier))
    probs = nm.stack([seg_a, seg_v], axis=1)  # T x 2 x C
    feats = nm.stack([fa, fv], axis=1)  # T x 2 x D
    w_temporal = nm.softmax(_linear3(feats, anc.pool_temporal_fc), axis=0)
    w_modality = nm.softmax(_linear3(feats, anc.pool_modality_fc), axis=1)
    # The raw product of the two weight fields does not sum to 1 over (t, m),
    # so normalize it per class; the pooled probability is then a true convex
    # combination and stays inside [min P, max P].
    joint = w_temporal * w_modality
    video_probs = (joint * probs).sum(axis=0).sum(axis=0) / joint.sum(axis=0).sum(axis=0)
    return AnchorOutput(
        tokens_audio=fa,
        tokens_visual=fv,
        seg_probs=probs,
        w_temporal=w_temporal,
        w_modality=w_modality,
        video_probs=video_probs,
    )
