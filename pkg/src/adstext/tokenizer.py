"""Word-level vocabulary, section-aware encoding, and dynamic masking.

The corpus grammar has a small closed vocabulary (element symbols, digits,
keywords), so tokens are whitespace-split words. Each token carries a
section code used by the attention analyses; separator tokens inherit the
section they terminate so section masses stay exhaustive.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from adstext import rng
from adstext.errors import ValidationError

BOS, PAD, SEP, UNK, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<s>", "<pad>", "</s>", "<unk>", "<mask>")
N_SPECIALS = len(SPECIAL_TOKENS)
IGNORE_INDEX = -100


class Section(IntEnum):
    SELF = 0  # the leading <s> token
    ADS = 1
    CAT = 2
    CFG = 3
    PAD = 4


@dataclass
class Vocabulary:
    """Dense token list; index = id. Specials occupy ids 0-4."""

    tokens: list

    def __post_init__(self):
        if tuple(self.tokens[:N_SPECIALS]) != SPECIAL_TOKENS:
            raise ValidationError("vocabulary must start with the special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValidationError("vocabulary contains duplicate tokens")
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise ValidationError(f"token id {token_id} out of range (vocab size {len(self.tokens)})")
        return self.tokens[token_id]

    def sha256(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.tokens:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens=tokens)


@dataclass
class TokenSequence:
    """Fixed-length encoded record: ids, mask, per-token section codes."""

    ids: np.ndarray
    attention_mask: np.ndarray
    sections: np.ndarray
    system_id: str
    label: float | None = None
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_real(self) -> int:
        return int(self.attention_mask.sum())


@dataclass
class MaskedBatch:
    """A token sequence with dynamic masking applied.

    mlm_labels holds the original id at masked positions and IGNORE_INDEX
    everywhere else.
    """

    ids: np.ndarray
    mlm_labels: np.ndarray
    attention_mask: np.ndarray
    system_id: str


def build_vocab(corpus) -> Vocabulary:
    """Specials plus unique corpus tokens in first-occurrence order."""
    corpus = list(corpus)
    if not corpus:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    tokens = list(SPECIAL_TOKENS)
    seen = set(SPECIAL_TOKENS)
    for record in corpus:
        for token in record.text.split():
            if token not in seen:
                seen.add(token)
                tokens.append(token)
    return Vocabulary(tokens=tokens)


def _token_offsets(text: str):
    """Yield (token, start_char) for whitespace-split tokens."""
    pos = 0
    for token in text.split():
        start = text.index(token, pos)
        yield token, start
        pos = start + len(token)


def encode(record, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Encode a record into a length-max_len TokenSequence.

    The <s> token is prepended with section SELF; each </s> separator is
    assigned the section it terminates (first -> adsorbate, second ->
    catalyst); other tokens take the section whose span contains them.
    Sequences longer than max_len are truncated (flagged), shorter ones
    padded.
    """
    if max_len < 4:
        raise ValidationError(f"max_len must be at least 4, got {max_len}")

    ids = [BOS]
    sections = [Section.SELF]
    separators_seen = 0
    for token, start in _token_offsets(record.text):
        if token == SPECIAL_TOKENS[SEP]:
            ids.append(SEP)
            sections.append(Section.ADS if separators_seen == 0 else Section.CAT)
            separators_seen += 1
            continue
        ids.append(vocab.id_of(token))
        for code, (span_start, span_end) in zip(
            (Section.ADS, Section.CAT, Section.CFG), record.section_spans
        ):
            if span_start <= start < span_end:
                sections.append(code)
                break
        else:
            raise ValidationError(
                f"{record.system_id}: token at char {start} falls outside all section spans"
            )

    truncated = len(ids) > max_len
    ids = ids[:max_len]
    sections = sections[:max_len]
    n_real = len(ids)
    ids.extend([PAD] * (max_len - n_real))
    sections.extend([Section.PAD] * (max_len - n_real))
    mask = np.arange(max_len) < n_real

    return TokenSequence(
        ids=np.asarray(ids, dtype=np.int64),
        attention_mask=mask,
        sections=np.asarray(sections, dtype=np.int8),
        system_id=record.system_id,
        label=record.energy_label,
        truncated=truncated,
    )


def decode(t: TokenSequence, vocab: Vocabulary) -> str:
    """Inverse of encode on non-pad positions, dropping the leading <s>."""
    tokens = []
    for token_id, real in zip(t.ids, t.attention_mask):
        if not real:
            continue
        tokens.append(vocab.token_of(int(token_id)))
    if tokens and tokens[0] == SPECIAL_TOKENS[BOS]:
        tokens = tokens[1:]
    return " ".join(tokens)


def apply_dynamic_mask(
    t: TokenSequence, rate: float, rng_seed: int, epoch: int, vocab_size: int
) -> MaskedBatch:
    """BERT-style masking with a per-(seed, epoch, record) random stream.

    Eligible positions are non-special, non-pad tokens; each is selected
    independently with probability `rate`. Selected positions become
    <mask> 80% of the time, a random non-special token 10%, and stay
    unchanged 10%. Keying the stream by epoch makes masks differ across
    epochs; keying by system_id makes batching order irrelevant.
    """
    if not 0.0 < rate < 1.0:
        raise ValidationError(f"mask rate must be in (0, 1), got {rate}")
    stream = rng.stream(rng_seed, "dynamic-mask", epoch, t.system_id)
    length = len(t.ids)
    u_select = stream.random(length)
    u_action = stream.random(length)
    random_ids = (
        stream.integers(N_SPECIALS, vocab_size, size=length)
        if vocab_size > N_SPECIALS
        else np.full(length, MASK, dtype=np.int64)
    )

    eligible = t.attention_mask & (t.ids >= N_SPECIALS)
    selected = eligible & (u_select < rate)

    ids = t.ids.copy()
    labels = np.full(length, IGNORE_INDEX, dtype=np.int64)
    labels[selected] = t.ids[selected]
    ids[selected & (u_action < 0.8)] = MASK
    swap = selected & (u_action >= 0.8) & (u_action < 0.9)
    ids[swap] = random_ids[swap]

    return MaskedBatch(
        ids=ids,
        mlm_labels=labels,
        attention_mask=t.attention_mask.copy(),
        system_id=t.system_id,
    )
