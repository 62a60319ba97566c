"""Miniature bidirectional transformer encoder with three heads.

Pre-layer-norm stack (stabler than post-norm at this scale, no warmup
needed), learned positional embeddings, multi-head self-attention with pad
keys masked out. The <s> embedding feeds a regression head (linear, tanh,
linear), a linear projection head used for contrastive pretraining, and a
token-level MLM head. Regression targets are standardized during training;
predictions are de-normalized with constants stored on the model.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from adstext import rng
from adstext.autodiff import (
    Tensor,
    add,
    dropout,
    gather_rows,
    gelu,
    layer_norm,
    masked_fill,
    matmul,
    permute,
    reshape,
    row_softmax,
    scale,
    select_row,
    stack_rows,
    tanh,
)
from adstext.errors import NumericsError, ValidationError
from adstext.tokenizer import MaskedBatch, TokenSequence

# Finite stand-in for -inf: keeps softmax NaN-free when a row is fully masked.
NEG_FILL = -1e30


@dataclass
class EncoderConfig:
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int = 512
    max_len: int = 128
    vocab_size: int = 0
    dropout: float = 0.1
    d_graph: int = 64

    def __post_init__(self):
        if self.vocab_size <= 0:
            raise ValidationError("vocab_size must be set")
        if self.d_model % self.n_heads != 0:
            raise ValidationError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        for name in ("d_model", "n_heads", "n_layers", "d_ff", "max_len", "d_graph"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**{f.name: d[f.name] for f in fields(cls)})


@dataclass
class AttentionRecord:
    """Final-layer attention (n_heads, L, L) with the sequence's section codes."""

    weights: np.ndarray
    sections: np.ndarray
    attention_mask: np.ndarray


@dataclass
class EncoderModel:
    config: EncoderConfig
    params: dict = field(default_factory=dict)  # name -> Tensor
    target_mean: float = 0.0
    target_std: float = 1.0
    finetuned: bool = False

    def parameter_arrays(self) -> dict:
        return {name: p.data for name, p in self.params.items()}

    def trunk_param_names(self) -> list:
        """Encoder-only parameters (everything except the three heads)."""
        return [n for n in self.params if not n.startswith(("reg_", "proj_", "mlm_"))]


def init_model(config: EncoderConfig, seed: int = 0) -> EncoderModel:
    """Random-normal(0, 0.02) weights, unit layer-norm gains, zero biases."""
    stream = rng.stream(seed, "encoder-init")
    d, ff, v = config.d_model, config.d_ff, config.vocab_size

    def normal(*shape):
        return Tensor(stream.normal(0.0, 0.02, size=shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape), requires_grad=True)

    p = {
        "tok_emb": normal(v, d),
        "pos_emb": normal(config.max_len, d),
        "final_ln_g": ones(d),
        "final_ln_b": zeros(d),
    }
    for i in range(config.n_layers):
        p[f"layer{i}.ln1_g"] = ones(d)
        p[f"layer{i}.ln1_b"] = zeros(d)
        p[f"layer{i}.wq"] = normal(d, d)
        p[f"layer{i}.bq"] = zeros(d)
        # no key bias: softmax cancels a per-row constant, so it would be inert
        p[f"layer{i}.wk"] = normal(d, d)
        p[f"layer{i}.wv"] = normal(d, d)
        p[f"layer{i}.bv"] = zeros(d)
        p[f"layer{i}.wo"] = normal(d, d)
        p[f"layer{i}.bo"] = zeros(d)
        p[f"layer{i}.ln2_g"] = ones(d)
        p[f"layer{i}.ln2_b"] = zeros(d)
        p[f"layer{i}.ff1_w"] = normal(d, ff)
        p[f"layer{i}.ff1_b"] = zeros(ff)
        p[f"layer{i}.ff2_w"] = normal(ff, d)
        p[f"layer{i}.ff2_b"] = zeros(d)
    p.update(init_heads(config, seed))
    return EncoderModel(config=config, params=p)


def init_heads(config: EncoderConfig, seed: int = 0) -> dict:
    """Fresh regression, projection, and MLM head parameters."""
    stream = rng.stream(seed, "head-init")
    d, v = config.d_model, config.vocab_size

    def normal(*shape):
        return Tensor(stream.normal(0.0, 0.02, size=shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    return {
        "reg_w1": normal(d, d),
        "reg_b1": zeros(d),
        "reg_w2": normal(d, 1),
        "reg_b2": zeros(1),
        "proj_w": normal(d, config.d_graph),
        "proj_b": zeros(config.d_graph),
        "mlm_w": normal(d, v),
        "mlm_b": zeros(v),
    }


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def _forward(
    model: EncoderModel,
    ids: np.ndarray,
    attention_mask: np.ndarray,
    train: bool = False,
    drop_stream: np.random.Generator | None = None,
):
    """Run the stack; returns (hidden (L, d) Tensor, final attention ndarray)."""
    cfg = model.config
    p = model.params
    length = len(ids)
    if length > cfg.max_len:
        raise ValidationError(f"sequence length {length} exceeds max_len {cfg.max_len}")
    if ids.max() >= cfg.vocab_size or ids.min() < 0:
        raise ValidationError(
            f"token id out of range for vocab of size {cfg.vocab_size}"
        )
    rate = cfg.dropout if train else 0.0
    if rate > 0.0 and drop_stream is None:
        raise NumericsError("dropout enabled but no random stream supplied")

    def drop(x):
        return dropout(x, rate, drop_stream) if rate > 0.0 else x

    n_heads = cfg.n_heads
    d_head = cfg.d_model // n_heads
    key_pad = ~attention_mask  # True where attention must not look

    h = add(gather_rows(p["tok_emb"], ids), gather_rows(p["pos_emb"], np.arange(length)))
    h = drop(h)

    attn_weights = None
    for i in range(cfg.n_layers):
        pre = layer_norm(h, p[f"layer{i}.ln1_g"], p[f"layer{i}.ln1_b"])
        q = _linear(pre, p[f"layer{i}.wq"], p[f"layer{i}.bq"])
        k = matmul(pre, p[f"layer{i}.wk"])
        v = _linear(pre, p[f"layer{i}.wv"], p[f"layer{i}.bv"])
        # (L, d) -> (H, L, d_head)
        q = permute(reshape(q, (length, n_heads, d_head)), (1, 0, 2))
        k = permute(reshape(k, (length, n_heads, d_head)), (1, 0, 2))
        v = permute(reshape(v, (length, n_heads, d_head)), (1, 0, 2))
        scores = scale(matmul(q, permute(k, (0, 2, 1))), 1.0 / np.sqrt(d_head))
        scores = masked_fill(scores, key_pad[None, None, :], NEG_FILL)
        attn = row_softmax(scores)
        if i == cfg.n_layers - 1:
            attn_weights = attn.data.copy()
        ctx = matmul(drop(attn), v)
        ctx = reshape(permute(ctx, (1, 0, 2)), (length, cfg.d_model))
        h = add(h, drop(_linear(ctx, p[f"layer{i}.wo"], p[f"layer{i}.bo"])))

        pre2 = layer_norm(h, p[f"layer{i}.ln2_g"], p[f"layer{i}.ln2_b"])
        ff = _linear(gelu(_linear(pre2, p[f"layer{i}.ff1_w"], p[f"layer{i}.ff1_b"])),
                     p[f"layer{i}.ff2_w"], p[f"layer{i}.ff2_b"])
        h = add(h, drop(ff))

    h = layer_norm(h, p["final_ln_g"], p["final_ln_b"])
    return h, attn_weights


def encode_tokens(
    model: EncoderModel,
    t: TokenSequence,
    train: bool = False,
    drop_stream: np.random.Generator | None = None,
):
    """Hidden states (L, d_model) plus the final layer's AttentionRecord."""
    hidden, attn = _forward(model, t.ids, t.attention_mask, train, drop_stream)
    record = AttentionRecord(
        weights=attn, sections=t.sections.copy(), attention_mask=t.attention_mask.copy()
    )
    return hidden, record


def cls_embedding(hidden: Tensor) -> Tensor:
    """The <s> position's final embedding (row 0)."""
    return select_row(hidden, 0)


def regression_output(model: EncoderModel, cls: Tensor) -> Tensor:
    """Raw (normalized-space) scalar from the regression head."""
    p = model.params
    hidden = tanh(add(matmul(reshape(cls, (1, -1)), p["reg_w1"]), p["reg_b1"]))
    raw = add(matmul(hidden, p["reg_w2"]), p["reg_b2"])
    return reshape(raw, ())


def predict_energy(model: EncoderModel, t: TokenSequence, allow_untrained: bool = False) -> float:
    """De-normalized energy prediction for one sequence (eV)."""
    if not model.finetuned and not allow_untrained:
        raise ValidationError(
            "model has no fine-tuned regression head; pass allow_untrained=True to override"
        )
    hidden, _ = _forward(model, t.ids, t.attention_mask)
    raw = regression_output(model, cls_embedding(hidden))
    return float(raw.data) * model.target_std + model.target_mean


def project_text(model: EncoderModel, t: TokenSequence) -> np.ndarray:
    """Projection-head output (length d_graph) without gradient tracking."""
    hidden, _ = _forward(model, t.ids, t.attention_mask)
    return projection_output(model, cls_embedding(hidden)).data


def projection_output(model: EncoderModel, cls: Tensor) -> Tensor:
    p = model.params
    out = add(matmul(reshape(cls, (1, -1)), p["proj_w"]), p["proj_b"])
    return reshape(out, (model.config.d_graph,))


def mlm_logits(
    model: EncoderModel,
    masked: MaskedBatch,
    train: bool = False,
    drop_stream: np.random.Generator | None = None,
) -> Tensor:
    """Token-level logits (L, vocab_size) over a masked sequence."""
    hidden, _ = _forward(model, masked.ids, masked.attention_mask, train, drop_stream)
    return _linear(hidden, model.params["mlm_w"], model.params["mlm_b"])


def batch_projections(model: EncoderModel, sequences, train=False, drop_stream=None) -> Tensor:
    """Stack projection-head outputs for a batch into an (N, d_graph) Tensor."""
    outs = []
    for t in sequences:
        hidden, _ = _forward(model, t.ids, t.attention_mask, train, drop_stream)
        outs.append(projection_output(model, cls_embedding(hidden)))
    return stack_rows(outs)
