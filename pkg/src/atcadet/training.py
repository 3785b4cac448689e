"""Mini-batch training with Adam and early stopping on validation EER.

The loop shuffles with a seeded PRNG, groups same-length sequences into
batches, and keeps the parameters of the epoch with the lowest
validation EER. Scoring walks a protocol in order and emits one trial
per entry; the text-ablated variant replaces every caption matrix with
a single zero token so attention returns the acoustic input unchanged.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import model as md
from .ensemble import RidgeModel, fit_ridge, predict_ridge
from .errors import (
    BadConfig,
    BadJson,
    EmptySplit,
    MissingEmbedding,
    MissingFeature,
)
from .metrics import Trial, compute_eer
from .protocol import filter_split


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patience: int = 10
    grad_clip: Optional[float] = 5.0
    auto_class_weights: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise BadConfig("epochs, batch_size, and patience must be positive")
        if self.lr < 0:
            raise BadConfig("lr must be >= 0")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise BadConfig("adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise BadConfig("adam_eps must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise BadConfig("grad_clip must be positive or None")
        if not 0 <= self.seed < 2**64:
            raise BadConfig("seed must fit in 64 bits")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise BadConfig(f"unknown train config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise BadJson(f"malformed train config: {exc}") from exc


@dataclass
class TrainReport:
    train_loss: list
    val_eer: list
    best_epoch: int
    wall_seconds: float
    class_weights: tuple

    def to_dict(self) -> dict:
        return {
            "train_loss": [float(v) for v in self.train_loss],
            "val_eer": [float(v) for v in self.val_eer],
            "best_epoch": int(self.best_epoch),
            "wall_seconds": float(self.wall_seconds),
            "class_weights": [float(w) for w in self.class_weights],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        try:
            return cls(
                [float(v) for v in d["train_loss"]],
                [float(v) for v in d["val_eer"]],
                int(d["best_epoch"]),
                float(d["wall_seconds"]),
                tuple(float(w) for w in d["class_weights"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BadJson(f"malformed train report: {exc}") from exc


def write_report(path, report: TrainReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_report(path) -> TrainReport:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return TrainReport.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise BadJson(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Data plumbing


def inverse_frequency_weights(entries) -> tuple:
    """Class weights 1/freq, normalized to mean 1; order (real, fake)."""
    n0 = sum(1 for e in entries if e.label == "bonafide")
    n1 = len(entries) - n0
    if n0 == 0 or n1 == 0:
        raise EmptySplit("need both labels to derive class weights")
    inv = np.array([1.0 / n0, 1.0 / n1])
    w = inv / inv.mean()
    return (float(w[0]), float(w[1]))


def _check_coverage(entries, features, embeddings):
    for e in entries:
        if e.utt_id not in features:
            raise MissingFeature(f"no features for {e.utt_id!r}")
        if e.utt_id not in embeddings:
            raise MissingEmbedding(f"no embedding for {e.utt_id!r}")


def _spec_matrix(feat) -> np.ndarray:
    return feat.values if hasattr(feat, "values") else np.asarray(feat, dtype=np.float64)


_ZERO_TEXT_CACHE = {}


def _zero_text(d_text: int) -> np.ndarray:
    if d_text not in _ZERO_TEXT_CACHE:
        _ZERO_TEXT_CACHE[d_text] = np.zeros((1, d_text))
    return _ZERO_TEXT_CACHE[d_text]


def _text_matrix(emb) -> np.ndarray:
    return emb.matrix if hasattr(emb, "matrix") else np.asarray(emb, dtype=np.float64)


def _batches_same_length(indices, lengths, batch_size):
    """Chunk shuffled indices into batches of equal sequence length."""
    groups = {}
    order = []
    for i in indices:
        t = lengths[i]
        if t not in groups:
            groups[t] = []
            order.append(t)
        groups[t].append(i)
    out = []
    for t in order:
        g = groups[t]
        for k in range(0, len(g), batch_size):
            out.append(g[k : k + batch_size])
    return out


class _Adam:
    def __init__(self, params: md.AtcaParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {n: np.zeros_like(t.values) for n, t in params.tensors.items()}
        self.v = {n: np.zeros_like(t.values) for n, t in params.tensors.items()}
        self.t = 0

    def step(self, params: md.AtcaParams, grads: dict) -> None:
        cfg = self.cfg
        if cfg.grad_clip is not None:
            total = 0.0
            for g in grads.values():
                total += float(np.sum(g * g))
            norm = np.sqrt(total)
            if norm > cfg.grad_clip:
                scale = cfg.grad_clip / norm
                grads = {n: g * scale for n, g in grads.items()}
        self.t += 1
        bias1 = 1.0 - cfg.adam_beta1**self.t
        bias2 = 1.0 - cfg.adam_beta2**self.t
        for name, tensor in params.tensors.items():
            g = grads[name]
            self.m[name] = cfg.adam_beta1 * self.m[name] + (1.0 - cfg.adam_beta1) * g
            self.v[name] = cfg.adam_beta2 * self.v[name] + (1.0 - cfg.adam_beta2) * (g * g)
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            tensor.values = tensor.values - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _fit_normalizers(params: md.AtcaParams, spec_mats) -> None:
    stacked = np.concatenate(spec_mats, axis=0)
    mu = stacked.mean(axis=0, keepdims=True)
    sigma = np.maximum(stacked.std(axis=0, keepdims=True), 1e-6)
    params.buffers["norm_mu"][:] = mu
    params.buffers["norm_sigma"][:] = sigma


# ---------------------------------------------------------------------------
# Training


def train(entries, features, embeddings, cfg: TrainConfig, model_cfg: md.AtcaConfig):
    """Fit ATCA on the train split, select on dev EER; returns (params, report)."""
    t_start = time.perf_counter()
    if model_cfg.use_raw_branch:
        raise BadConfig("the training loop drives the spectrogram branch only")
    train_e = filter_split(entries, "train")
    dev_e = filter_split(entries, "dev")
    if not train_e:
        raise EmptySplit("protocol has no train entries")
    if not dev_e:
        raise EmptySplit("protocol has no dev entries")
    _check_coverage(train_e + dev_e, features, embeddings)

    if cfg.auto_class_weights:
        model_cfg = dataclasses.replace(
            model_cfg, class_weights=inverse_frequency_weights(train_e)
        )
    params = md.AtcaParams.init(model_cfg, seed=cfg.seed)

    spec_mats = [_spec_matrix(features[e.utt_id]) for e in train_e]
    texts = [_text_matrix(embeddings[e.utt_id]) for e in train_e]
    labels = np.array([0 if e.label == "bonafide" else 1 for e in train_e], dtype=np.int64)
    _fit_normalizers(params, spec_mats)

    weights = np.asarray(model_cfg.class_weights, dtype=np.float64)
    lengths = [m.shape[0] for m in spec_mats]
    adam = _Adam(params, cfg)
    rng = np.random.default_rng(cfg.seed)

    best_eer = np.inf
    best_epoch = -1
    best_params = params.copy()
    bad_epochs = 0
    loss_curve = []
    eer_curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_e))
        num = 0.0
        den = 0.0
        for batch in _batches_same_length(list(order), lengths, cfg.batch_size):
            with ad.Tape() as tape:
                logits = md.forward_batch(
                    [spec_mats[i] for i in batch],
                    [None] * len(batch),
                    [texts[i] for i in batch],
                    params,
                )
                loss = ad.weighted_ce_logits(logits, labels[batch], weights)
            w_batch = float(weights[labels[batch]].sum())
            num += loss.item() * w_batch
            den += w_batch
            if cfg.lr > 0:
                grad_map = ad.backward(tape, loss)
                grads = {n: grad_map[t] for n, t in params.tensors.items()}
                adam.step(params, grads)
        loss_curve.append(num / den)

        dev_trials = score_protocol(params, dev_e, features, embeddings)
        eer = compute_eer(dev_trials).eer
        eer_curve.append(eer)
        if eer < best_eer:
            best_eer = eer
            best_epoch = epoch
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break

    report = TrainReport(
        loss_curve,
        eer_curve,
        best_epoch,
        time.perf_counter() - t_start,
        tuple(model_cfg.class_weights),
    )
    return best_params, report


# ---------------------------------------------------------------------------
# Scoring


def score_protocol(params, entries, features, embeddings, ablate_text_branch: bool = False):
    """One Trial per protocol entry, order preserved; batched inference."""
    entries = list(entries)
    if not entries:
        return []
    if ablate_text_branch:
        _check_coverage_features_only(entries, features)
        texts = [_zero_text(params.config.d_text)] * len(entries)
    else:
        _check_coverage(entries, features, embeddings)
        texts = [_text_matrix(embeddings[e.utt_id]) for e in entries]
    spec_mats = [_spec_matrix(features[e.utt_id]) for e in entries]
    lengths = [m.shape[0] for m in spec_mats]
    scores = np.empty(len(entries))
    with ad.no_grad():
        for batch in _batches_same_length(range(len(entries)), lengths, 64):
            logits = md.forward_batch(
                [spec_mats[i] for i in batch],
                [None] * len(batch),
                [texts[i] for i in batch],
                params,
            )
            scores[batch] = md.scores_from_logits(logits.values)
    return [Trial(e.utt_id, float(s), e.label) for e, s in zip(entries, scores)]


def ablate_text(params, entries, features, embeddings=None):
    """Score with captions replaced by one zero token (audio-only path)."""
    return score_protocol(params, entries, features, {}, ablate_text_branch=True)


def _check_coverage_features_only(entries, features):
    for e in entries:
        if e.utt_id not in features:
            raise MissingFeature(f"no features for {e.utt_id!r}")


# ---------------------------------------------------------------------------
# Log-mel linear baseline (third base system for the ensemble)


def logmel_stats(feat) -> np.ndarray:
    """Per-dim mean and standard deviation over frames, concatenated."""
    m = _spec_matrix(feat)
    return np.concatenate([m.mean(axis=0), m.std(axis=0)])


@dataclass
class LinearBaseline:
    ridge: RidgeModel


def fit_linear_baseline(entries, features, lam: float = 1.0) -> LinearBaseline:
    entries = list(entries)
    if not entries:
        raise EmptySplit("cannot fit a baseline on an empty protocol")
    _check_coverage_features_only(entries, features)
    x = np.stack([logmel_stats(features[e.utt_id]) for e in entries])
    y = np.array([1.0 if e.label == "bonafide" else 0.0 for e in entries])
    return LinearBaseline(fit_ridge(x, y, lam))


def score_linear_baseline(baseline: LinearBaseline, entries, features):
    entries = list(entries)
    if not entries:
        return []
    _check_coverage_features_only(entries, features)
    x = np.stack([logmel_stats(features[e.utt_id]) for e in entries])
    preds = predict_ridge(baseline.ridge, x)
    return [Trial(e.utt_id, float(p), e.label) for e, p in zip(entries, preds)]
