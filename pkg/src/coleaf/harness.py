"""Training loop, configuration, prediction export, and the ablation runner."""
from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .branches import anchor_forward, init_branch_params, reference_forward
from .errors import ConfigError, DivergenceError, FileFormatError
from .losses import (
    LossBundle,
    anchor_modality_video_probs,
    cooccurrence_kd,
    distil_pseudo_labels,
    event_aware_nce,
    self_modality_kd,
    total_loss,
    unalignment_weights,
    video_loss_anchor,
    video_loss_reference,
)
from .metrics import BinaryParse, MetricReport, confusion_rates, full_report
from .numerics import Tensor

SEED_ENV_VAR = "COLEAF_SEED"

ABLATION_AXES = (
    "unimodal_only",
    "disable_ref_video",
    "disable_anchor_video",
    "disable_event_contrastive",
    "disable_self_modality_kd",
    "disable_cooccurrence_kd",
    "disable_class_tokens",
)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 5e-3
    lr_decay_factor: float = 1.0
    lr_decay_every_epochs: int = 6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    pseudo_threshold: float = 0.5  # theta for pseudo-label distillation
    nce_temperature: float = 0.2  # tau
    lambda_evt: float = 1.0
    lambda_kd: float = 1.0
    lambda_cls: float = 1.0
    warmup_epochs: int = 0  # epochs with only the video-level losses
    include_positive_in_nce: bool = False
    unimodal_only: bool = False
    disable_ref_video: bool = False
    disable_anchor_video: bool = False
    disable_event_contrastive: bool = False
    disable_self_modality_kd: bool = False
    disable_cooccurrence_kd: bool = False
    disable_class_tokens: bool = False
    seed: int = 0
    eval_threshold: float | tuple = 0.5

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError(f"lr_decay_factor must be in (0,1], got {self.lr_decay_factor}")
        if self.lr_decay_every_epochs < 1:
            raise ConfigError("lr_decay_every_epochs must be >= 1")
        if not 0.0 < self.pseudo_threshold < 1.0:
            raise ConfigError(f"pseudo_threshold must be in (0,1), got {self.pseudo_threshold}")
        if self.nce_temperature <= 0:
            raise ConfigError(f"nce_temperature must be positive, got {self.nce_temperature}")
        for name in ("lambda_evt", "lambda_kd", "lambda_cls"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")

    @classmethod
    def fullscale(cls, **overrides):
        """Settings used for full-scale training runs on real feature corpora."""
        base = dict(
            epochs=15,
            batch_size=128,
            learning_rate=5e-4,
            lr_decay_factor=0.25,
            lr_decay_every_epochs=6,
        )
        base.update(overrides)
        return cls(**base)

    def to_mapping(self):
        out = dataclasses.asdict(self)
        if isinstance(out["eval_threshold"], tuple):
            out["eval_threshold"] = list(out["eval_threshold"])
        return out

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = {}
        for key, raw in mapping.items():
            values[key] = _coerce_config_value(key, raw)
        cfg = cls(**values)
        cfg.validate()
        return cfg


_BOOL_FIELDS = frozenset(
    name
    for name in (
        "include_positive_in_nce",
        "unimodal_only",
        "disable_ref_video",
        "disable_anchor_video",
        "disable_event_contrastive",
        "disable_self_modality_kd",
        "disable_cooccurrence_kd",
        "disable_class_tokens",
    )
)
_INT_FIELDS = frozenset(
    ("epochs", "batch_size", "lr_decay_every_epochs", "warmup_epochs", "seed")
)


def _coerce_config_value(key, raw):
    if key == "eval_threshold":
        if isinstance(raw, (list, tuple)):
            return tuple(float(x) for x in raw)
        if isinstance(raw, str) and "," in raw:
            return tuple(float(x) for x in raw.split(","))
        return float(raw)
    if key in _BOOL_FIELDS:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("true", "1", "yes", "on"):
            return True
        if text in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key} expects a boolean, got {raw!r}")
    if key in _INT_FIELDS:
        return int(raw)
    return float(raw)


def load_train_config(path):
    """Parse a flat `key = value` config file; unknown keys are an error."""
    mapping = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {text!r}")
            key, _, value = text.partition("=")
            mapping[key.strip()] = value.strip()
    return TrainConfig.from_mapping(mapping)


def config_to_text(config):
    lines = []
    for key, value in config.to_mapping().items():
        if isinstance(value, list):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def apply_env_seed(config):
    """Return the config with its seed overridden by COLEAF_SEED when set."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return config
    try:
        seed = int(raw)
    except ValueError as err:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from err
    return replace(config, seed=seed)


@dataclass
class EpochLog:
    losses: LossBundle
    learning_rate: float
    metrics: MetricReport | None = None


@dataclass
class TrainLog:
    epochs: list
    seed: int
    config: dict
    wall_clock_seconds: float

    def to_mapping(self, include_wall_clock=True):
        out = {
            "seed": self.seed,
            "config": self.config,
            "epochs": [
                {
                    "losses": dataclasses.asdict(e.losses),
                    "learning_rate": e.learning_rate,
                    "metrics": None if e.metrics is None else e.metrics.as_dict(),
                }
                for e in self.epochs
            ],
        }
        if include_wall_clock:
            out["wall_clock_seconds"] = self.wall_clock_seconds
        return out


class AdamState:
    """First/second moment buffers keyed by parameter name."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, tensor in params.named_parameters():
            g = grads.get(tensor)
            if g is None:
                g = np.zeros(tensor.shape)
            m = self.m.get(name)
            if m is None:
                m = np.zeros(tensor.shape)
                self.v[name] = np.zeros(tensor.shape)
            v = self.v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self.m[name] = m
            self.v[name] = v
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            update = tensor.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)
            params.set_parameter(name, Tensor(update, requires_grad=True))


def sample_losses(sample, params, config, epoch=0):
    """Forward both branches on one video and assemble the weighted objective."""
    ref_out = reference_forward(sample, params, use_class_tokens=not config.disable_class_tokens)
    anchor_out = anchor_forward(sample, params, unimodal_only=config.unimodal_only)
    y = sample.weak_label
    ref_video = 0.0 if config.disable_ref_video else video_loss_reference(ref_out, y)
    anchor_video = 0.0 if config.disable_anchor_video else video_loss_anchor(anchor_out, y)
    collab = epoch >= config.warmup_epochs
    evt = kd = cls = 0.0
    if collab and not config.disable_event_contrastive:
        pseudo_ref = distil_pseudo_labels(
            ref_out.video_probs_audio,
            ref_out.video_probs_visual,
            config.pseudo_threshold,
            source="reference",
        )
        weights = unalignment_weights(pseudo_ref)
        t = sample.n_segments
        evt = event_aware_nce(
            anchor_out.tokens_audio,
            anchor_out.tokens_visual,
            ref_out.tokens_audio[0:t],
            ref_out.tokens_visual[0:t],
            weights,
            tau=config.nce_temperature,
            include_positive=config.include_positive_in_nce,
        )
    if collab and not config.disable_self_modality_kd:
        pa, pv = anchor_modality_video_probs(anchor_out)
        pseudo_anchor = distil_pseudo_labels(pa, pv, config.pseudo_threshold, source="anchor")
        kd = self_modality_kd(pseudo_anchor, ref_out)
    if collab and not config.disable_cooccurrence_kd:
        cls = cooccurrence_kd(ref_out, anchor_out)
    return total_loss(
        ref_video,
        anchor_video,
        evt,
        kd,
        cls,
        lambda_evt=config.lambda_evt,
        lambda_kd=config.lambda_kd,
        lambda_cls=config.lambda_cls,
    )


def _mean_bundle(bundles):
    arr = np.array(
        [
            [
                b.ref_video,
                b.anchor_video,
                b.event_contrastive,
                b.self_modality_kd,
                b.cooccurrence_kd,
                b.total,
            ]
            for b in bundles
        ]
    )
    means = arr.mean(axis=0)
    return LossBundle(*[float(x) for x in means])


def effective_lr(config, epoch):
    decays = epoch // config.lr_decay_every_epochs
    return config.learning_rate * config.lr_decay_factor**decays


def train(corpus, config, eval_corpus=None):
    """Train both branches jointly with Adam; deterministic given the seed.

    Returns the trained parameters and a per-epoch log of mean loss
    components (plus a metric report per epoch when `eval_corpus` is given).
    """
    config.validate()
    samples = corpus.samples
    if not samples:
        raise ConfigError("training corpus is empty")
    first = samples[0]
    params = init_branch_params(first.dim, first.n_classes, config.seed)
    adam = AdamState(config.adam_beta1, config.adam_beta2, config.adam_eps)
    order_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))
    start = time.perf_counter()
    epoch_logs = []
    step = 0
    for epoch in range(config.epochs):
        lr = effective_lr(config, epoch)
        perm = order_rng.permutation(len(samples))
        bundles = []
        for lo in range(0, len(perm), config.batch_size):
            batch = perm[lo : lo + config.batch_size]
            totals = []
            for idx in batch:
                total, bundle = sample_losses(samples[idx], params, config, epoch)
                totals.append(total)
                bundles.append(bundle)
            batch_loss = totals[0]
            for extra in totals[1:]:
                batch_loss = batch_loss + extra
            batch_loss = batch_loss * (1.0 / len(batch))
            if isinstance(batch_loss, Tensor):
                if not np.isfinite(batch_loss.data):
                    raise DivergenceError(step, _mean_bundle(bundles[-len(batch):]))
                grads = nm.backward(batch_loss)
            else:
                grads = {}
            adam.step(params, grads, lr)
            step += 1
        report = None
        if eval_corpus is not None:
            preds = predict(params, eval_corpus, unimodal_only=config.unimodal_only)
            report = evaluate(preds, eval_corpus, config.eval_threshold)
        epoch_logs.append(EpochLog(losses=_mean_bundle(bundles), learning_rate=lr, metrics=report))
    log = TrainLog(
        epochs=epoch_logs,
        seed=config.seed,
        config=config.to_mapping(),
        wall_clock_seconds=time.perf_counter() - start,
    )
    return params, log


def predict(params, corpus, branch="anchor", unimodal_only=False, out_path=None):
    """Segment-level probabilities per video from the chosen branch.

    The anchor branch is the deployment default; the reference branch is
    never touched on that path.
    """
    preds = {}
    for sample in corpus.samples:
        if branch == "anchor":
            out = anchor_forward(sample, params, unimodal_only=unimodal_only)
            pa = np.array(out.seg_probs.data[:, 0, :])
            pv = np.array(out.seg_probs.data[:, 1, :])
        elif branch == "reference":
            out = reference_forward(sample, params)
            pa = np.array(out.seg_probs_audio.data)
            pv = np.array(out.seg_probs_visual.data)
        else:
            raise ConfigError(f"unknown branch {branch!r}")
        preds[sample.id] = (pa, pv)
    if out_path is not None:
        write_predictions(preds, out_path)
    return preds


def write_predictions(preds, path):
    with open(path, "w", encoding="utf-8") as fh:
        for vid in preds:
            pa, pv = preds[vid]
            fh.write(
                json.dumps({"id": vid, "probs_audio": pa.tolist(), "probs_visual": pv.tolist()})
                + "\n"
            )


def load_predictions(path):
    preds = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise FileFormatError(f"{path}:{line_no}: {err.msg}") from err
            for key in ("id", "probs_audio", "probs_visual"):
                if key not in rec:
                    raise FileFormatError(f"{path}:{line_no}: missing key {key}")
            preds[rec["id"]] = (
                np.asarray(rec["probs_audio"], dtype=np.float64),
                np.asarray(rec["probs_visual"], dtype=np.float64),
            )
    return preds


def gt_parses(corpus):
    out = {}
    for sample in corpus.samples:
        if sample.gt is None:
            raise ConfigError(f"video {sample.id} has no segment ground truth")
        out[sample.id] = BinaryParse(audio=sample.gt.audio, visual=sample.gt.visual)
    return out


def evaluate(preds, corpus, threshold=0.5, metric_config=None):
    return full_report(preds, gt_parses(corpus), thresholds=threshold, config=metric_config)


def save_params(params, path):
    payload = {
        "dim": params.dim,
        "n_classes": params.n_classes,
        "values": {name: t.data.tolist() for name, t in params.named_parameters()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_params(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as err:
            raise FileFormatError(f"{path}:{err.lineno}: {err.msg}") from err
    for key in ("dim", "n_classes", "values"):
        if key not in payload:
            raise FileFormatError(f"{path}:1: missing key {key}")
    params = init_branch_params(payload["dim"], payload["n_classes"], seed=0)
    names = {name for name, _ in params.named_parameters()}
    extra = sorted(set(payload["values"]) - names)
    missing = sorted(names - set(payload["values"]))
    if extra or missing:
        raise FileFormatError(
            f"{path}:1: parameter names do not match (missing {missing}, extra {extra})"
        )
    for name, value in payload["values"].items():
        params.set_parameter(name, Tensor(np.asarray(value, dtype=np.float64), requires_grad=True))
    return params


@dataclass
class AblationRow:
    label: str
    overrides: dict
    report: MetricReport
    rates: dict  # event type -> {"TP": ..., "TN": ..., "FP": ..., "FN": ...}


def split_corpus(corpus, eval_fraction=0.2):
    """Deterministic tail split; both parts share the corpus's feature prototypes."""
    from .synthdata import GeneratedCorpus

    n_eval = max(1, int(round(len(corpus.samples) * eval_fraction)))
    train_part = GeneratedCorpus(
        samples=corpus.samples[:-n_eval],
        prototypes_audio=corpus.prototypes_audio,
        prototypes_visual=corpus.prototypes_visual,
        spec=corpus.spec,
    )
    eval_part = GeneratedCorpus(
        samples=corpus.samples[-n_eval:],
        prototypes_audio=corpus.prototypes_audio,
        prototypes_visual=corpus.prototypes_visual,
        spec=corpus.spec,
    )
    return train_part, eval_part


def ablate(corpus, base_config, axes, eval_corpus=None):
    """Train one variant per axis setting with a shared seed and compare.

    Each axis is a boolean TrainConfig switch; every axis contributes an off
    row and an on row. With no axes the base configuration is the single row.
    Rows carry the exclusive metrics and segment-level confusion rates per
    event type.
    """
    for axis in axes:
        if axis not in ABLATION_AXES:
            raise ConfigError(f"unknown ablation axis {axis!r}; valid axes: {', '.join(ABLATION_AXES)}")
    if eval_corpus is None:
        corpus, eval_corpus = split_corpus(corpus)
    variants = [("base", {})]
    if axes:
        variants = [
            (f"{axis}={'on' if value else 'off'}", {axis: value})
            for axis in axes
            for value in (False, True)
        ]
    rows = []
    gts = gt_parses(eval_corpus)
    for label, overrides in variants:
        cfg = replace(base_config, **overrides)
        params, _ = train(corpus, cfg)
        preds = predict(params, eval_corpus, unimodal_only=cfg.unimodal_only)
        report = full_report(preds, gts, thresholds=cfg.eval_threshold)
        rates = confusion_rates(preds, gts, thresholds=cfg.eval_threshold)
        rows.append(AblationRow(label=label, overrides=overrides, report=report, rates=rates))
    return rows


def ablation_table_csv(rows):
    """Render ablation rows as CSV with a stable column order."""
    header = ["variant"]
    header += [f"seg_{k}" for k in ("Ao", "Vo", "AV")]
    header += [f"event_{k}" for k in ("Ao", "Vo", "AV")]
    for event_type in ("A", "V", "AV"):
        header += [f"{event_type}_{k}" for k in ("TP", "TN", "FP", "FN")]
    lines = [",".join(header)]
    for row in rows:
        seg = row.report.segment.as_dict()
        ev = row.report.event.as_dict()
        cells = [row.label]
        cells += [f"{seg[k]:.4f}" for k in ("Ao", "Vo", "AV")]
        cells += [f"{ev[k]:.4f}" for k in ("Ao", "Vo", "AV")]
        for event_type in ("A", "V", "AV"):
            cells += [f"{row.rates[event_type][k]:.4f}" for k in ("TP", "TN", "FP", "FN")]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
