"""The detector network: acoustic encoder, text-guided cross-attention,
stacked GRU, and a two-class head.

Acoustic frames act as attention Queries against token embeddings as
Keys/Values; the attended features are added back onto the acoustic
input (residual refinement), summarized by a stacked GRU, and the last
hidden state feeds a linear head producing (real, fake) logits.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dsp import FEATURE_MAGIC, FeatureMatrix
from .errors import (
    BadConfig,
    BadHeader,
    NonFinite,
    ShapeMismatch,
    TruncatedFile,
    WrongKind,
)
from .text import TextEmbedding

CHECKPOINT_MAGIC = b"ATCK"
CHECKPOINT_VERSION = 1
ENSEMBLE_MAGIC = b"ATEN"  # recognized here only to diagnose wrong-file mistakes


@dataclass(frozen=True)
class AtcaConfig:
    d_spec: int = 64
    d_model: int = 16
    d_k: int = 16
    n_heads: int = 1
    gru_layers: int = 2
    gru_hidden: int = 16
    d_text: int = 768
    use_raw_branch: bool = False
    d_raw: int = 0
    class_weights: tuple = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))
        for name in ("d_spec", "d_model", "d_k", "n_heads", "gru_layers", "gru_hidden", "d_text"):
            if getattr(self, name) < 1:
                raise BadConfig(f"{name} must be positive")
        if self.d_k * self.n_heads != self.d_model:
            raise BadConfig(f"d_k*n_heads must equal d_model, got {self.d_k}*{self.n_heads} != {self.d_model}")
        if self.use_raw_branch and self.d_raw < 1:
            raise BadConfig("d_raw must be positive when use_raw_branch is set")
        if len(self.class_weights) != 2 or any(w <= 0 or not math.isfinite(w) for w in self.class_weights):
            raise BadConfig(f"class_weights must be a pair of positive reals, got {self.class_weights}")

    def to_json(self) -> str:
        d = asdict(self)
        d["class_weights"] = list(self.class_weights)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, blob: str) -> "AtcaConfig":
        try:
            d = json.loads(blob)
        except json.JSONDecodeError as exc:
            raise BadConfig(f"unparseable model config: {exc}") from exc
        try:
            return cls(**d)
        except TypeError as exc:
            raise BadConfig(f"bad model config fields: {exc}") from exc


def _tensor_specs(cfg: AtcaConfig) -> list:
    """Fixed enumeration of learnable tensors: (name, shape, kind)."""
    specs = [
        ("enc_spec_w", (cfg.d_spec, cfg.d_model), "weight"),
        ("enc_spec_b", (1, cfg.d_model), "bias"),
    ]
    if cfg.use_raw_branch:
        specs += [
            ("enc_raw_w", (cfg.d_raw, cfg.d_model), "weight"),
            ("enc_raw_b", (1, cfg.d_model), "bias"),
        ]
    specs += [
        ("Wq", (cfg.d_model, cfg.d_model), "weight"),
        ("Wk", (cfg.d_text, cfg.d_model), "weight"),
        ("Wv", (cfg.d_text, cfg.d_model), "weight"),
        ("Wo", (cfg.d_model, cfg.d_model), "weight"),
    ]
    for layer in range(cfg.gru_layers):
        d_in = cfg.d_model if layer == 0 else cfg.gru_hidden
        h = cfg.gru_hidden
        for gate in ("z", "r", "h"):
            specs += [
                (f"gru{layer}_W{gate}", (d_in, h), "weight"),
                (f"gru{layer}_U{gate}", (h, h), "weight"),
                (f"gru{layer}_b{gate}", (1, h), "bias"),
            ]
    specs += [
        ("head_w", (cfg.gru_hidden, 2), "weight"),
        ("head_b", (1, 2), "bias"),
    ]
    return specs


def _buffer_specs(cfg: AtcaConfig) -> list:
    specs = [("norm_mu", (1, cfg.d_spec)), ("norm_sigma", (1, cfg.d_spec))]
    if cfg.use_raw_branch:
        specs += [("raw_mu", (1, cfg.d_raw)), ("raw_sigma", (1, cfg.d_raw))]
    return specs


class AtcaParams:
    """Learnable tensors plus non-learnable normalizer buffers.

    Tensor enumeration order is frozen: it defines the seeded init draw
    order and the checkpoint layout.
    """

    def __init__(self, config: AtcaConfig, tensors: dict, buffers: dict):
        self.config = config
        self.tensors = tensors
        self.buffers = buffers
        for name, shape, _ in _tensor_specs(config):
            if name not in tensors or tensors[name].values.shape != shape:
                raise ShapeMismatch(f"parameter {name} missing or mis-shaped for config")
        for name, shape in _buffer_specs(config):
            if name not in buffers or buffers[name].shape != shape:
                raise ShapeMismatch(f"buffer {name} missing or mis-shaped for config")

    @classmethod
    def init(cls, config: AtcaConfig, seed: int = 0) -> "AtcaParams":
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape, kind in _tensor_specs(config):
            if kind == "weight":
                a = math.sqrt(6.0 / (shape[0] + shape[1]))
                values = rng.uniform(-a, a, size=shape)
            else:
                values = np.zeros(shape)
            tensors[name] = Tensor(values, requires_grad=True)
        buffers = {}
        for name, shape in _buffer_specs(config):
            buffers[name] = np.ones(shape) if name.endswith("sigma") else np.zeros(shape)
        return cls(config, tensors, buffers)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named_arrays(self):
        """All checkpointed arrays, learnable first, in enumeration order."""
        for name, _, _ in _tensor_specs(self.config):
            yield name, self.tensors[name].values
        for name, _ in _buffer_specs(self.config):
            yield name, self.buffers[name]

    def copy(self) -> "AtcaParams":
        tensors = {n: Tensor(t.values.copy(), requires_grad=True) for n, t in self.tensors.items()}
        buffers = {n: b.copy() for n, b in self.buffers.items()}
        return AtcaParams(self.config, tensors, buffers)


def count_params(params: AtcaParams) -> int:
    """Total element count over learnable tensors (buffers excluded)."""
    return sum(t.values.size for t in params.tensors.values())


def count_params_for(config: AtcaConfig) -> int:
    """Same count computed from shapes alone, without allocating."""
    return sum(shape[0] * shape[1] for _, shape, _ in _tensor_specs(config))


# ---------------------------------------------------------------------------
# Stages


def _as_matrix(x, what: str) -> np.ndarray:
    if isinstance(x, FeatureMatrix):
        return x.values
    values = np.asarray(x, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeMismatch(f"{what} must be 2-D, got shape {values.shape}")
    return values


def encode_acoustic(spec, raw, params: AtcaParams) -> Tensor:
    """Project each branch to d_model, tanh, concatenate along time
    (spectrogram frames first). Branch inputs are standardized by the
    stored normalizer buffers before projection."""
    cfg = params.config
    if isinstance(spec, FeatureMatrix) and spec.origin not in ("logmel", "external"):
        raise ShapeMismatch(f"spectrogram branch got origin {spec.origin!r}")
    values = _as_matrix(spec, "spec features")
    if values.shape[1] != cfg.d_spec:
        raise ShapeMismatch(f"spec features have {values.shape[1]} dims, config wants {cfg.d_spec}")
    x = (values - params.buffers["norm_mu"]) / params.buffers["norm_sigma"]
    out = ad.tanh(ad.add(ad.matmul(Tensor(x), params["enc_spec_w"]), params["enc_spec_b"]))
    if cfg.use_raw_branch:
        if raw is None:
            raise ShapeMismatch("config uses the raw branch but no raw features were given")
        if isinstance(raw, FeatureMatrix) and raw.origin != "rawpatch":
            raise ShapeMismatch(f"raw branch got origin {raw.origin!r}")
        rvalues = _as_matrix(raw, "raw features")
        if rvalues.shape[1] != cfg.d_raw:
            raise ShapeMismatch(f"raw features have {rvalues.shape[1]} dims, config wants {cfg.d_raw}")
        rx = (rvalues - params.buffers["raw_mu"]) / params.buffers["raw_sigma"]
        rout = ad.tanh(ad.add(ad.matmul(Tensor(rx), params["enc_raw_w"]), params["enc_raw_b"]))
        out = ad.concat_rows([out, rout])
    elif raw is not None:
        raise ShapeMismatch("raw features given but config does not use the raw branch")
    return out


def _as_text_tensor(text) -> Tensor:
    if isinstance(text, Tensor):
        return text
    if isinstance(text, TextEmbedding):
        return Tensor(text.matrix)
    return Tensor(_as_matrix(text, "text embedding"))


def cross_attention(acoustic: Tensor, text, params: AtcaParams, return_internals: bool = False):
    """Scaled dot-product attention, acoustic rows as Queries and text
    rows as Keys/Values; heads concatenated, projected, residual-added."""
    cfg = params.config
    text_t = _as_text_tensor(text)
    if acoustic.values.shape[1] != cfg.d_model:
        raise ShapeMismatch(f"acoustic input has {acoustic.values.shape[1]} dims, config wants {cfg.d_model}")
    if text_t.values.shape[1] != cfg.d_text:
        raise ShapeMismatch(f"text embedding has {text_t.values.shape[1]} dims, config wants {cfg.d_text}")
    q = ad.matmul(acoustic, params["Wq"])
    k = ad.matmul(text_t, params["Wk"])
    v = ad.matmul(text_t, params["Wv"])
    scale = 1.0 / math.sqrt(cfg.d_k)
    weights = []
    if cfg.n_heads == 1:
        att = ad.softmax_rows(ad.affine(ad.matmul(q, k, transpose_b=True), scale))
        merged = ad.matmul(att, v)
        weights.append(att.values)
    else:
        merged = None
        for h in range(cfg.n_heads):
            sel = np.zeros((cfg.d_model, cfg.d_k))
            sel[h * cfg.d_k : (h + 1) * cfg.d_k] = np.eye(cfg.d_k)
            sel_t = Tensor(sel)
            qh = ad.matmul(q, sel_t)
            kh = ad.matmul(k, sel_t)
            vh = ad.matmul(v, sel_t)
            att = ad.softmax_rows(ad.affine(ad.matmul(qh, kh, transpose_b=True), scale))
            placed = ad.matmul(ad.matmul(att, vh), sel_t, transpose_b=True)
            merged = placed if merged is None else ad.add(merged, placed)
            weights.append(att.values)
    out = ad.add(acoustic, ad.matmul(merged, params["Wo"]))
    if return_internals:
        return out, {"attention_weights": weights}
    return out


def _gru_step(params: AtcaParams, layer: int, x_t: Tensor, h_prev: Tensor) -> Tensor:
    p = params
    z = ad.sigmoid(
        ad.add(ad.add(ad.matmul(x_t, p[f"gru{layer}_Wz"]), ad.matmul(h_prev, p[f"gru{layer}_Uz"])), p[f"gru{layer}_bz"])
    )
    r = ad.sigmoid(
        ad.add(ad.add(ad.matmul(x_t, p[f"gru{layer}_Wr"]), ad.matmul(h_prev, p[f"gru{layer}_Ur"])), p[f"gru{layer}_br"])
    )
    h_tilde = ad.tanh(
        ad.add(
            ad.add(ad.matmul(x_t, p[f"gru{layer}_Wh"]), ad.matmul(ad.hadamard(r, h_prev), p[f"gru{layer}_Uh"])),
            p[f"gru{layer}_bh"],
        )
    )
    return ad.add(ad.hadamard(z, h_prev), ad.hadamard(ad.affine(z, -1.0, 1.0), h_tilde))


def _run_gru(steps: list, params: AtcaParams, batch: int, h0=None, collect=None) -> Tensor:
    cfg = params.config
    h = None
    for layer in range(cfg.gru_layers):
        if h0 is None:
            h = Tensor(np.zeros((batch, cfg.gru_hidden)))
        else:
            h = Tensor(np.tile(np.asarray(h0, dtype=np.float64), (batch, 1)))
        outs = []
        for x_t in steps:
            h = _gru_step(params, layer, x_t, h)
            outs.append(h)
        steps = outs
        if collect is not None:
            collect.append(np.vstack([o.values for o in outs]))
    return h


def gru_stack(x: Tensor, params: AtcaParams, h0=None, return_states: bool = False):
    """Run the stacked GRU over one sequence; returns the last layer's
    final hidden state as a (1, gru_hidden) tensor.

    h0, when given, seeds the initial hidden state of every layer (a
    test hook; training always starts from zero).
    """
    t_frames = x.values.shape[0]
    steps = [ad.slice_rows(x, t, t + 1) for t in range(t_frames)]
    states = [] if return_states else None
    out = _run_gru(steps, params, 1, h0=h0, collect=states)
    if return_states:
        return out, states
    return out


def forward(spec, raw, text, params: AtcaParams, h0=None) -> Tensor:
    """Full single-utterance pass; returns (1, 2) logits (real, fake)."""
    enc = encode_acoustic(spec, raw, params)
    att = cross_attention(enc, text, params)
    h_t = gru_stack(att, params, h0=h0)
    return ad.add(ad.matmul(h_t, params["head_w"]), params["head_b"])


def forward_batch(specs, raws, texts, params: AtcaParams) -> Tensor:
    """Batched pass over same-length utterances; returns (B, 2) logits.

    Encoding and attention run per sample (token counts vary), then the
    sequences are rearranged time-major so each GRU step processes the
    whole batch as one matrix.
    """
    batch = len(specs)
    if batch == 0:
        raise ShapeMismatch("empty batch")
    seqs = []
    for spec, raw, text in zip(specs, raws, texts):
        enc = encode_acoustic(spec, raw, params)
        seqs.append(cross_attention(enc, text, params))
    t_frames = seqs[0].values.shape[0]
    for s in seqs:
        if s.values.shape[0] != t_frames:
            raise ShapeMismatch("forward_batch requires equal-length sequences")
    if batch == 1:
        h_t = _run_gru([ad.slice_rows(seqs[0], t, t + 1) for t in range(t_frames)], params, 1)
    else:
        stacked = ad.concat_rows(seqs)
        order = np.arange(batch * t_frames).reshape(batch, t_frames).T.ravel()
        time_major = ad.gather_rows(stacked, order)
        steps = [ad.slice_rows(time_major, t * batch, (t + 1) * batch) for t in range(t_frames)]
        h_t = _run_gru(steps, params, batch)
    return ad.add(ad.matmul(h_t, params["head_w"]), params["head_b"])


# ---------------------------------------------------------------------------
# Loss and scoring


def weighted_ce(logits, labels, weights) -> float:
    """Weighted cross-entropy, reduced as sum(w_label * nll) / sum(w_label)."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise BadConfig("class weights must be positive")
    shift = logits - logits.max(axis=1, keepdims=True)
    logp = shift - np.log(np.exp(shift).sum(axis=1, keepdims=True))
    picked = logp[np.arange(len(labels)), labels]
    wl = w[labels]
    return float(np.sum(-wl * picked) / np.sum(wl))


def score(logits) -> float:
    """Detection score: logit(real) - logit(fake); higher = more genuine."""
    values = logits.values if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    flat = values.reshape(-1)
    if flat.shape[0] != 2:
        raise ShapeMismatch(f"logits must hold exactly 2 values, got shape {values.shape}")
    return float(flat[0] - flat[1])


def scores_from_logits(logits_matrix: np.ndarray) -> np.ndarray:
    values = np.atleast_2d(np.asarray(logits_matrix, dtype=np.float64))
    return values[:, 0] - values[:, 1]


# ---------------------------------------------------------------------------
# Checkpoint file


def save_checkpoint(path, params: AtcaParams) -> None:
    blob = params.config.to_json().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for name, arr in params.named_arrays():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def _read_exact(fh, n: int, path, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFile(f"{path}: unexpected end of file while reading {what}")
    return data


def load_checkpoint(path) -> AtcaParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            if magic in (ENSEMBLE_MAGIC, FEATURE_MAGIC):
                raise WrongKind(f"{path}: this is a {magic.decode()} file, not a model checkpoint")
            raise BadHeader(f"{path}: not a model checkpoint")
        version, blob_len = struct.unpack("<II", _read_exact(fh, 8, path, "header"))
        if version != CHECKPOINT_VERSION:
            raise BadHeader(f"{path}: unsupported checkpoint version {version}")
        config = AtcaConfig.from_json(_read_exact(fh, blob_len, path, "config").decode("utf-8"))
        expected = [(n, s) for n, s, _ in _tensor_specs(config)] + list(_buffer_specs(config))
        arrays = {}
        for want_name, want_shape in expected:
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, path, "tensor name length"))
            name = _read_exact(fh, name_len, path, "tensor name").decode("utf-8")
            if name != want_name:
                raise BadHeader(f"{path}: expected tensor {want_name!r}, found {name!r}")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, path, "tensor rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, path, "tensor dims"))
            if dims != want_shape:
                raise ShapeMismatch(f"{path}: tensor {name!r} has shape {dims}, config wants {want_shape}")
            count = int(np.prod(dims)) if dims else 1
            payload = _read_exact(fh, 8 * count, path, f"tensor {name!r} payload")
            values = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
            if not np.all(np.isfinite(values)):
                raise NonFinite(f"{path}: tensor {name!r} contains non-finite values")
            arrays[name] = values
        if fh.read(1):
            raise BadHeader(f"{path}: trailing data after last tensor")
    tensors = {n: Tensor(arrays[n], requires_grad=True) for n, _, _ in _tensor_specs(config)}
    buffers = {n: arrays[n] for n, _ in _buffer_specs(config)}
    return AtcaParams(config, tensors, buffers)
