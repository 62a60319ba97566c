"""Structure-to-text serialization, duplicate grouping, and dataset merging.

Every structure becomes one string with three sections separated by " </s> ":

    <adsorbate> </s> <bulk> ( h k l ) </s> primary <elems> secondary <elems>

The grammar is fixed so that identical (metadata, interaction multiset)
inputs produce byte-identical text; duplicate analysis and tokenization
both rely on that determinism.
"""

import json
from dataclasses import dataclass, field

from adstext import rng
from adstext.errors import ValidationError
from adstext.structures import AtomicStructure, InteractionSummary, ReferenceEnergies, configuration_energy

SEPARATOR = " </s> "


@dataclass
class TextualRecord:
    """One serialized system: text, section character spans, label, provenance."""

    system_id: str
    text: str
    section_spans: tuple  # ((start, end) for adsorbate, catalyst, configuration)
    energy_label: float | None = None
    relaxer: str | None = None

    def __post_init__(self):
        self.section_spans = tuple((int(a), int(b)) for a, b in self.section_spans)
        if len(self.section_spans) != 3:
            raise ValidationError(f"{self.system_id}: expected 3 section spans")
        previous_end = 0
        for start, end in self.section_spans:
            if not (previous_end <= start <= end <= len(self.text)):
                raise ValidationError(f"{self.system_id}: section spans out of order")
            previous_end = end

    def section_text(self, index: int) -> str:
        start, end = self.section_spans[index]
        return self.text[start:end]

    @property
    def adsorbate_section(self) -> str:
        return self.section_text(0)

    @property
    def catalyst_section(self) -> str:
        return self.section_text(1)

    @property
    def configuration_section(self) -> str:
        return self.section_text(2)


@dataclass
class DuplicateGroups:
    """Partition of record indices by exact text string.

    Group iteration order is first occurrence; a group is a duplicate set
    when it has at least two members.
    """

    groups: dict = field(default_factory=dict)  # text -> list of record indices

    @property
    def n_records(self) -> int:
        return sum(len(v) for v in self.groups.values())

    def duplicate_groups(self) -> dict:
        return {text: idx for text, idx in self.groups.items() if len(idx) >= 2}

    def group_of(self, index: int) -> str:
        for text, members in self.groups.items():
            if index in members:
                return text
        raise ValidationError(f"record index {index} is not in any group")

    def sizes(self) -> dict:
        return {text: len(idx) for text, idx in self.groups.items()}


def resolve_energy_label(s: AtomicStructure) -> float | None:
    """Prefer the precomputed label; otherwise derive it from e_sys/e_slab/e_gas."""
    if s.energy_label is not None:
        return s.energy_label
    if s.e_sys is not None and s.e_slab is not None and s.e_gas is not None:
        return configuration_energy(s.e_sys, ReferenceEnergies(s.e_slab, s.e_gas))
    return None


def to_text(s: AtomicStructure, ia: InteractionSummary) -> TextualRecord:
    """Serialize one structure into the three-section string."""
    if not s.adsorbate_symbol:
        raise ValidationError(f"{s.system_id}: missing metadata field 'adsorbate'")
    if not s.bulk_composition:
        raise ValidationError(f"{s.system_id}: missing metadata field 'bulk'")

    ads = s.adsorbate_symbol
    h, k, l = s.miller_index
    cat = f"{s.bulk_composition} ( {h} {k} {l} )"
    cfg_tokens = ["primary", *ia.primary_elements(), "secondary", *ia.secondary_elements()]
    cfg = " ".join(cfg_tokens)

    text = ads + SEPARATOR + cat + SEPARATOR + cfg
    ads_span = (0, len(ads))
    cat_start = len(ads) + len(SEPARATOR)
    cat_span = (cat_start, cat_start + len(cat))
    cfg_start = cat_span[1] + len(SEPARATOR)
    cfg_span = (cfg_start, len(text))

    return TextualRecord(
        system_id=s.system_id,
        text=text,
        section_spans=(ads_span, cat_span, cfg_span),
        energy_label=resolve_energy_label(s),
        relaxer=s.relaxer,
    )


def group_duplicates(records) -> DuplicateGroups:
    """Partition records by exact text, keeping first-occurrence order."""
    groups = {}
    for index, record in enumerate(records):
        groups.setdefault(record.text, []).append(index)
    return DuplicateGroups(groups=groups)


def merge_datasets(main, augmentation, seed: int) -> list:
    """Concatenate two record lists and shuffle deterministically.

    The shuffle interleaves augmentation records with the main corpus so
    later epoch-wise batching sees them mixed rather than appended.
    """
    merged = list(main) + list(augmentation)
    order = rng.stream(seed, "dataset-merge").permutation(len(merged))
    return [merged[i] for i in order]


def write_records(records, path) -> None:
    """Write records as JSONL: system_id, text, spans, energy_label, relaxer."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "system_id": r.system_id,
                        "text": r.text,
                        "spans": [list(span) for span in r.section_spans],
                        "energy_label": r.energy_label,
                        "relaxer": r.relaxer,
                    }
                )
                + "\n"
            )


def read_records(path) -> list:
    """Read a record JSONL file written by write_records."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({err.msg})") from None
            try:
                records.append(
                    TextualRecord(
                        system_id=obj["system_id"],
                        text=obj["text"],
                        section_spans=tuple(tuple(span) for span in obj["spans"]),
                        energy_label=obj.get("energy_label"),
                        relaxer=obj.get("relaxer"),
                    )
                )
            except (KeyError, TypeError, ValueError) as err:
                raise ValidationError(f"{path}:{lineno}: malformed record ({err})") from None
    return records
