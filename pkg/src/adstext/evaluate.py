"""Metrics and analyses: MAE/R2, parity export, sectional attention,
duplicate-vs-unique breakdown, cross-relaxer uncertainty, embedding export.

Sectional attention follows a summed-mass convention: the <s> query row of
the final layer is averaged over heads, the mass landing on each section's
tokens (plus <s> itself) is summed per sequence, and the four bucket values
are averaged over the dataset, so each report row sums to one.
"""

import csv
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from adstext.encoder import cls_embedding, encode_tokens
from adstext.errors import ValidationError
from adstext.tokenizer import Section


@dataclass
class PredictionSet:
    """Rows of (system_id, relaxer, prediction, optional label)."""

    rows: list = field(default_factory=list)

    def __post_init__(self):
        keys = [(r["system_id"], r.get("relaxer")) for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ValidationError("duplicate (system_id, relaxer) in prediction set")

    def add(self, system_id, relaxer, prediction, label=None) -> None:
        key = (system_id, relaxer)
        if any((r["system_id"], r.get("relaxer")) == key for r in self.rows):
            raise ValidationError(f"duplicate (system_id, relaxer): {key}")
        self.rows.append(
            {"system_id": system_id, "relaxer": relaxer,
             "prediction": float(prediction),
             "label": None if label is None else float(label)}
        )

    def labeled(self) -> list:
        return [r for r in self.rows if r["label"] is not None]


@dataclass
class AttentionReport:
    """Dataset-averaged <s>-query attention mass per bucket."""

    self_score: float
    adsorbate: float
    catalyst: float
    configuration: float

    def total(self) -> float:
        return self.self_score + self.adsorbate + self.catalyst + self.configuration


def mae(predictions, labels) -> float:
    predictions = np.asarray(list(predictions), dtype=np.float64)
    labels = np.asarray(list(labels), dtype=np.float64)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ValidationError(
            f"mae needs equal nonempty lengths, got {predictions.size} and {labels.size}"
        )
    return float(np.mean(np.abs(predictions - labels)))


def r2(predictions, labels) -> float:
    predictions = np.asarray(list(predictions), dtype=np.float64)
    labels = np.asarray(list(labels), dtype=np.float64)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ValidationError(
            f"r2 needs equal nonempty lengths, got {predictions.size} and {labels.size}"
        )
    ss_tot = float(np.sum((labels - labels.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValidationError("r2 undefined: labels have zero variance")
    ss_res = float(np.sum((labels - predictions) ** 2))
    return 1.0 - ss_res / ss_tot


def parity_export(ps: PredictionSet, path) -> None:
    """CSV of labeled rows only: system_id, relaxer, label, prediction."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["system_id", "relaxer", "label", "prediction"])
        for row in ps.labeled():
            writer.writerow(
                [row["system_id"], row["relaxer"] or "",
                 f"{row['label']:.17g}", f"{row['prediction']:.17g}"]
            )


def read_predictions(path) -> PredictionSet:
    """Read a CSV produced by parity_export / the predict command."""
    ps = PredictionSet()
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            ps.add(
                row["system_id"],
                row["relaxer"] or None,
                float(row["prediction"]),
                float(row["label"]) if row.get("label") else None,
            )
    return ps


def sectional_attention(model, sequences) -> AttentionReport:
    """Average over the dataset of the head-averaged <s>-row section masses."""
    sequences = list(sequences)
    if not sequences:
        raise ValidationError("sectional_attention needs at least one sequence")
    buckets = np.zeros(4)  # self, adsorbate, catalyst, configuration
    for t in sequences:
        _, record = encode_tokens(model, t)
        row = record.weights[:, 0, :].mean(axis=0)  # <s> query, head-averaged
        buckets[0] += row[0]
        for code, slot in ((Section.ADS, 1), (Section.CAT, 2), (Section.CFG, 3)):
            buckets[slot] += row[record.sections == code].sum()
    buckets /= len(sequences)
    return AttentionReport(*buckets)


def duplicate_breakdown(ps: PredictionSet, groups) -> dict:
    """MAE split into duplicate-text and unique-text subsets.

    ps rows must align 1:1 (by position) with the records that produced
    `groups`. Returns mae_duplicate (None when no duplicate groups exist),
    mae_unique, and the partition counts.
    """
    if len(ps.rows) != groups.n_records:
        raise ValidationError(
            f"{len(ps.rows)} predictions but {groups.n_records} grouped records"
        )
    group_size = {}
    for members in groups.groups.values():
        for index in members:
            group_size[index] = len(members)

    dup_err, unique_err = [], []
    for index, row in enumerate(ps.rows):
        if row["label"] is None:
            raise ValidationError(f"prediction {row['system_id']} has no label")
        err = abs(row["prediction"] - row["label"])
        (dup_err if group_size[index] >= 2 else unique_err).append(err)

    return {
        "mae_duplicate": float(np.mean(dup_err)) if dup_err else None,
        "mae_unique": float(np.mean(unique_err)) if unique_err else None,
        "count_duplicate": len(dup_err),
        "count_unique": len(unique_err),
    }


def cross_relaxer_uncertainty(ps: PredictionSet) -> float:
    """Mean over systems of the sample std of predictions across relaxers."""
    by_system = {}
    for row in ps.rows:
        by_system.setdefault(row["system_id"], []).append(row["prediction"])
    stds = [np.std(vals, ddof=1) for vals in by_system.values() if len(vals) >= 2]
    if not stds:
        raise ValidationError("no system has predictions from >= 2 relaxers")
    return float(np.mean(stds))


def classify_adsorbate(symbol: str) -> str:
    """Map an adsorbate symbol to one of O&H, C1, C2, N.

    Nitrogen-containing symbols go to N; otherwise carbon count decides
    C1/C2; pure oxygen/hydrogen species are O&H. Anything unparseable
    falls back to O&H with a warning.
    """
    tokens = re.findall(r"([A-Z][a-z]?)(\d*)", symbol)
    counts = {}
    for element, multiplier in tokens:
        if not element:
            continue
        counts[element] = counts.get(element, 0) + (int(multiplier) if multiplier else 1)
    known = set(counts)
    if not known or not known <= {"C", "H", "O", "N"}:
        warnings.warn(f"ambiguous adsorbate symbol {symbol!r}; classifying as O&H")
        return "O&H"
    if counts.get("N", 0) > 0:
        return "N"
    n_carbon = counts.get("C", 0)
    if n_carbon == 1:
        return "C1"
    if n_carbon >= 2:
        return "C2"
    return "O&H"


def export_embeddings(model, records, sequences, path) -> None:
    """CSV of <s> embeddings with energy label and adsorbate class per row."""
    d = model.config.d_model
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["system_id", "energy_label", "adsorbate_class"] + [f"e{i}" for i in range(d)]
        )
        for record, t in zip(records, sequences):
            hidden, _ = encode_tokens(model, t)
            emb = cls_embedding(hidden).data
            label = "" if record.energy_label is None else f"{record.energy_label:.17g}"
            writer.writerow(
                [record.system_id, label, classify_adsorbate(record.adsorbate_section)]
                + [f"{x:.17g}" for x in emb]
            )
