"""Training procedures: contrastive text-graph pretraining, dynamic-mask
MLM pretraining, and supervised energy fine-tuning.

The contrastive objective is a symmetric cross-entropy over cosine
similarities between projected text embeddings and frozen graph embeddings;
only the text side carries gradients. Fine-tuning minimizes MSE (or MAE)
between the raw regression output and standardized labels; predictions are
de-normalized with the stored constants.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from adstext import rng
from adstext.autodiff import (
    Tensor,
    absval,
    add,
    backward,
    exp,
    log_softmax,
    mul,
    neg,
    permute,
    powc,
    reshape,
    scale,
    select_columns,
    sum_,
)
from adstext.checkpoint import load_checkpoint, save_checkpoint
from adstext.encoder import (
    EncoderConfig,
    EncoderModel,
    batch_projections,
    cls_embedding,
    init_heads,
    init_model,
    mlm_logits,
    regression_output,
    _forward,
)
from adstext.errors import ValidationError
from adstext.optim import AdamW
from adstext.tokenizer import IGNORE_INDEX, apply_dynamic_mask

TAU_MIN, TAU_MAX = 1e-3, 10.0


@dataclass
class ContrastiveBatch:
    """Positionally paired text/graph embeddings plus a temperature.

    text_embeddings may be an autodiff Tensor (training) or a plain array;
    graph_embeddings are always a plain array: the graph side is frozen and
    never receives gradients.
    """

    text_embeddings: object
    graph_embeddings: np.ndarray
    tau: object = 0.07  # float or scalar-ish Tensor (learnable temperature)

    def __post_init__(self):
        if not isinstance(self.text_embeddings, Tensor):
            self.text_embeddings = Tensor(np.asarray(self.text_embeddings, dtype=np.float64))
        self.graph_embeddings = np.asarray(self.graph_embeddings, dtype=np.float64)
        t, g = self.text_embeddings.data, self.graph_embeddings
        if t.ndim != 2 or g.ndim != 2 or t.shape != g.shape:
            raise ValidationError(
                f"paired embeddings must share an (N, d) shape, got {t.shape} and {g.shape}"
            )
        if t.shape[0] < 1:
            raise ValidationError("contrastive batch must contain at least one pair")


@dataclass
class TrainConfig:
    """Knobs shared by the three training procedures (flat, file-loadable)."""

    batch_size: int = 16
    epochs: int = 30
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    mask_rate: float = 0.15
    tau: float = 0.07
    tau_learnable: bool = True
    loss: str = "mse"  # fine-tuning loss: mse | mae
    records: str = ""
    val_records: str = ""
    vocab: str = ""
    graphemb: str = ""
    init_checkpoint: str = ""
    out_checkpoint: str = ""
    log: str = ""

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 < self.mask_rate < 1.0:
            raise ValidationError(f"mask_rate must be in (0, 1), got {self.mask_rate}")
        if self.loss not in ("mse", "mae"):
            raise ValidationError(f"loss must be mse or mae, got {self.loss!r}")
        if self.tau <= 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")


def _row_normalize(t: Tensor) -> Tensor:
    sq = sum_(mul(t, t), axis=1, keepdims=True)
    if float(sq.data.min()) < 1e-24:
        raise ValidationError("zero-norm embedding: cosine similarity undefined")
    return mul(t, powc(sq, -0.5))


def contrastive_loss(batch: ContrastiveBatch) -> Tensor:
    """Symmetric InfoNCE over cosine similarities (both softmax directions).

    L = -mean_i log softmax_j(sim(G_i, T_j)/tau)[i]
        -mean_i log softmax_j(sim(T_i, G_j)/tau)[i]
    """
    tau = batch.tau
    if isinstance(tau, Tensor):
        if float(tau.data) <= 0:
            raise ValidationError("temperature must be positive")
        inv_tau = powc(reshape(tau, (1,)), -1.0)
    else:
        if tau <= 0:
            raise ValidationError("temperature must be positive")
        inv_tau = Tensor(np.array([1.0 / tau]))

    g = batch.graph_embeddings
    g_norms = np.linalg.norm(g, axis=1, keepdims=True)
    if g_norms.min() < 1e-12:
        raise ValidationError("zero-norm embedding: cosine similarity undefined")
    g_hat = g / g_norms
    t_hat = _row_normalize(batch.text_embeddings)

    n = g.shape[0]
    sim = mul(t_hat @ Tensor(g_hat.T), inv_tau)  # sim[i, j] = cos(T_i, G_j) / tau
    diag = np.arange(n)
    text_to_graph = neg(scale(sum_(select_columns(log_softmax(sim), diag)), 1.0 / n))
    graph_to_text = neg(scale(sum_(select_columns(log_softmax(permute(sim, (1, 0))), diag)), 1.0 / n))
    return add(graph_to_text, text_to_graph)


def contrastive_direction_values(text, graph, tau) -> tuple:
    """(graph->text, text->graph) mean losses as plain floats, for analysis."""
    batch = ContrastiveBatch(np.asarray(text, dtype=np.float64), graph, tau)
    t_hat = batch.text_embeddings.data
    t_hat = t_hat / np.linalg.norm(t_hat, axis=1, keepdims=True)
    g_hat = batch.graph_embeddings / np.linalg.norm(batch.graph_embeddings, axis=1, keepdims=True)
    sim = (t_hat @ g_hat.T) / float(tau.data if isinstance(tau, Tensor) else tau)

    def mean_diag_nll(logits):
        m = logits.max(axis=1, keepdims=True)
        lse = m.ravel() + np.log(np.exp(logits - m).sum(axis=1))
        return float(np.mean(lse - np.diag(logits)))

    return mean_diag_nll(sim.T), mean_diag_nll(sim)


def target_normalization(labels) -> tuple:
    """(mean, population std) of the training labels; std 1 when constant."""
    labels = np.asarray(list(labels), dtype=np.float64)
    if labels.size == 0:
        raise ValidationError("cannot normalize an empty label list")
    if not np.all(np.isfinite(labels)):
        raise ValidationError("labels must be finite")
    mean = float(labels.mean())
    std = float(labels.std())
    if std <= 1e-12 * max(1.0, abs(mean)):  # constant labels up to fp noise
        std = 1.0
    return mean, std


def masked_cross_entropy(logits: Tensor, labels: np.ndarray):
    """Mean negative log-likelihood over labeled positions; None if none."""
    selected = labels != IGNORE_INDEX
    count = int(selected.sum())
    if count == 0:
        return None
    safe = np.where(selected, labels, 0)
    log_probs = select_columns(log_softmax(logits), safe)
    picked = mul(log_probs, Tensor(selected.astype(np.float64)))
    return neg(scale(sum_(picked), 1.0 / count))


def _epoch_batches(n: int, batch_size: int, stream, drop_ragged: bool):
    order = stream.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if drop_ragged:
        batches = [b for b in batches if len(b) == batch_size]
    return batches


def pretrain_contrastive(cfg: TrainConfig, records, sequences, provider, model):
    """Align projected text embeddings with frozen graph embeddings.

    Only encoder + projection parameters (and the log-temperature, when
    learnable) receive updates. Returns (model, history); history rows are
    per-epoch mean losses.
    """
    records = list(records)
    sequences = list(sequences)
    missing = provider.missing_ids([r.system_id for r in records])
    if missing:
        raise ValidationError(f"no graph embedding for systems: {', '.join(missing)}")
    if len(records) < cfg.batch_size:
        raise ValidationError(
            f"batch size {cfg.batch_size} exceeds dataset size {len(records)} "
            "(ragged batches are dropped in contrastive pretraining)"
        )
    graph_vectors = np.stack([provider.pooled_for(r.system_id) for r in records])

    log_tau = Tensor(np.array([math.log(cfg.tau)]), requires_grad=cfg.tau_learnable)
    opt_params = dict(model.params)
    if cfg.tau_learnable:
        opt_params["log_tau"] = log_tau
    opt = AdamW(opt_params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                eps=cfg.eps, weight_decay=cfg.weight_decay)

    history = []
    for epoch in range(cfg.epochs):
        shuffle = rng.stream(cfg.seed, "gap-shuffle", epoch)
        drop_stream = rng.stream(cfg.seed, "gap-dropout", epoch)
        losses = []
        for batch_idx in _epoch_batches(len(records), cfg.batch_size, shuffle, drop_ragged=True):
            text = batch_projections(
                model, [sequences[i] for i in batch_idx],
                train=model.config.dropout > 0, drop_stream=drop_stream,
            )
            tau: object = exp(reshape(log_tau, ())) if cfg.tau_learnable else cfg.tau
            loss = contrastive_loss(
                ContrastiveBatch(text, graph_vectors[batch_idx], tau)
            )
            opt.zero_grad()
            backward(loss)
            opt.step()
            if cfg.tau_learnable:
                np.clip(log_tau.data, math.log(TAU_MIN), math.log(TAU_MAX), out=log_tau.data)
            losses.append(float(loss.data))
        history.append({"epoch": epoch, "split": "train", "loss": float(np.mean(losses)), "mae": None})
    model.tau_final = float(np.exp(log_tau.data[0])) if cfg.tau_learnable else cfg.tau
    return model, history


def pretrain_mlm(cfg: TrainConfig, records, sequences, vocab, model):
    """Masked-token prediction with masks resampled every epoch."""
    records = list(records)
    sequences = list(sequences)
    if not records:
        raise ValidationError("cannot pretrain on an empty corpus")

    opt = AdamW(dict(model.params), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                eps=cfg.eps, weight_decay=cfg.weight_decay)
    history = []
    for epoch in range(cfg.epochs):
        shuffle = rng.stream(cfg.seed, "mlm-shuffle", epoch)
        drop_stream = rng.stream(cfg.seed, "mlm-dropout", epoch)
        losses = []
        for batch_idx in _epoch_batches(len(records), cfg.batch_size, shuffle, drop_ragged=False):
            terms = []
            for i in batch_idx:
                masked = apply_dynamic_mask(
                    sequences[i], cfg.mask_rate, cfg.seed, epoch, len(vocab)
                )
                logits = mlm_logits(model, masked, train=model.config.dropout > 0,
                                    drop_stream=drop_stream)
                term = masked_cross_entropy(logits, masked.mlm_labels)
                if term is not None:
                    terms.append(term)
            if not terms:
                continue
            loss = scale(_sum_terms(terms), 1.0 / len(terms))
            opt.zero_grad()
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
        history.append({"epoch": epoch, "split": "train",
                        "loss": float(np.mean(losses)) if losses else float("nan"), "mae": None})
    return model, history


def _sum_terms(terms):
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total


def finetune(cfg: TrainConfig, records, sequences, model, val_records=None, val_sequences=None):
    """Supervised energy regression on standardized labels.

    The caller supplies the model (fresh, or trunk-loaded from a pretraining
    checkpoint via load_model(..., fresh_heads=True)). Ragged batches are
    kept. Returns (model, history) with train/val MAE per epoch in eV.
    """
    records = list(records)
    sequences = list(sequences)
    labels = [r.energy_label for r in records]
    missing = [r.system_id for r, lab in zip(records, labels) if lab is None]
    if missing:
        raise ValidationError(f"records without energy_label: {', '.join(missing[:5])}")
    if val_records is not None:
        val_records = list(val_records)
        val_sequences = list(val_sequences)
        if any(r.energy_label is None for r in val_records):
            raise ValidationError("validation records must carry energy labels")

    mean, std = target_normalization(labels)
    model.target_mean, model.target_std = mean, std
    y_norm = (np.asarray(labels, dtype=np.float64) - mean) / std

    opt = AdamW(dict(model.params), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                eps=cfg.eps, weight_decay=cfg.weight_decay)
    history = []
    for epoch in range(cfg.epochs):
        shuffle = rng.stream(cfg.seed, "finetune-shuffle", epoch)
        drop_stream = rng.stream(cfg.seed, "finetune-dropout", epoch)
        abs_errors = []
        losses = []
        for batch_idx in _epoch_batches(len(records), cfg.batch_size, shuffle, drop_ragged=False):
            terms = []
            for i in batch_idx:
                raw = _regression_raw(model, sequences[i], train=model.config.dropout > 0,
                                      drop_stream=drop_stream)
                residual = add(raw, Tensor(-y_norm[i]))
                term = mul(residual, residual) if cfg.loss == "mse" else absval(residual)
                terms.append(term)
                abs_errors.append(abs(float(raw.data) - y_norm[i]) * std)
            loss = scale(_sum_terms(terms), 1.0 / len(terms))
            opt.zero_grad()
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
        history.append({"epoch": epoch, "split": "train",
                        "loss": float(np.mean(losses)), "mae": float(np.mean(abs_errors))})
        if val_records is not None:
            val_mae = evaluate_mae(model, val_records, val_sequences)
            history.append({"epoch": epoch, "split": "val", "loss": None, "mae": val_mae})
    model.finetuned = True
    return model, history


def _regression_raw(model, sequence, train=False, drop_stream=None) -> Tensor:
    hidden, _ = _forward(model, sequence.ids, sequence.attention_mask, train, drop_stream)
    return regression_output(model, cls_embedding(hidden))


def evaluate_mae(model, records, sequences) -> float:
    """Mean absolute error (eV) of de-normalized predictions."""
    errors = []
    for record, sequence in zip(records, sequences):
        raw = _regression_raw(model, sequence)
        pred = float(raw.data) * model.target_std + model.target_mean
        errors.append(abs(pred - record.energy_label))
    return float(np.mean(errors))


# ---------------------------------------------------------------------------
# model persistence


def save_model(model: EncoderModel, path, vocab_sha256: str = "", stage: str = "") -> None:
    meta = {
        "config": model.config.to_dict(),
        "target_mean": model.target_mean,
        "target_std": model.target_std,
        "finetuned": model.finetuned,
        "vocab_sha256": vocab_sha256,
        "stage": stage,
        "tau_final": getattr(model, "tau_final", None),
    }
    save_checkpoint(path, model.parameter_arrays(), meta)


def load_model(path, expected_vocab_sha256: str = "", fresh_heads: bool = False,
               head_seed: int = 0):
    """Rebuild an EncoderModel from a checkpoint.

    fresh_heads re-initializes the regression/projection/MLM heads (used
    when fine-tuning starts from a pretraining checkpoint). A vocabulary
    hash mismatch is an error: token ids would silently disagree.
    """
    tensors, meta = load_checkpoint(path)
    if expected_vocab_sha256 and meta.get("vocab_sha256") and \
            meta["vocab_sha256"] != expected_vocab_sha256:
        raise ValidationError(
            f"{path}: checkpoint was built with a different vocabulary "
            f"({meta['vocab_sha256'][:12]} != {expected_vocab_sha256[:12]})"
        )
    config = EncoderConfig.from_dict(meta["config"])
    model = init_model(config, seed=head_seed)
    for name in model.params:
        if fresh_heads and name.startswith(("reg_", "proj_", "mlm_")):
            continue
        if name not in tensors:
            raise ValidationError(f"{path}: checkpoint is missing tensor {name!r}")
        if tensors[name].shape != model.params[name].data.shape:
            raise ValidationError(
                f"{path}: tensor {name!r} has shape {tensors[name].shape}, "
                f"expected {model.params[name].data.shape}"
            )
        model.params[name] = Tensor(tensors[name].copy(), requires_grad=True)
    if fresh_heads:
        model.params.update(init_heads(config, seed=head_seed))
        model.finetuned = False
        model.target_mean, model.target_std = 0.0, 1.0
    else:
        model.target_mean = float(meta.get("target_mean", 0.0))
        model.target_std = float(meta.get("target_std", 1.0))
        model.finetuned = bool(meta.get("finetuned", False))
    return model, meta


def write_history(history, path) -> None:
    """Training log CSV: epoch, split, loss, mae."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,split,loss,mae\n")
        for row in history:
            loss = "" if row.get("loss") is None else f"{row['loss']:.17g}"
            mae = "" if row.get("mae") is None else f"{row['mae']:.17g}"
            fh.write(f"{row['epoch']},{row['split']},{loss},{mae}\n")


def load_config_file(path) -> dict:
    """Flat `key = value` text file; later keys override earlier ones."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValidationError(f"{path}:{lineno}: expected `key = value`")
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    return values


_BOOL_STRINGS = {"true": True, "false": False, "1": True, "0": False,
                 "yes": True, "no": False}


def coerce_config(values: dict, config_cls):
    """Build a config dataclass from string values, with type coercion."""
    kwargs = {}
    for f in fields(config_cls):
        if f.name not in values:
            continue
        raw = values[f.name]
        if isinstance(raw, str):
            if f.type in ("int", int):
                kwargs[f.name] = int(raw)
            elif f.type in ("float", float):
                kwargs[f.name] = float(raw)
            elif f.type in ("bool", bool):
                try:
                    kwargs[f.name] = _BOOL_STRINGS[raw.lower()]
                except KeyError:
                    raise ValidationError(f"config key {f.name}: not a boolean: {raw!r}") from None
            else:
                kwargs[f.name] = raw
        else:
            kwargs[f.name] = raw
    return config_cls(**kwargs)
