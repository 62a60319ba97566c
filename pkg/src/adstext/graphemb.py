"""Frozen graph-embedding provider.

Loads precomputed per-atom embeddings (C spherical channels x M harmonic
components per atom) or already-pooled system vectors, pools atom matrices
into one vector per system (flatten row-major, then elementwise max across
atoms), and offers a deterministic synthetic generator so the pipeline can
run without an external graph encoder. The provider is read-only: no
gradient ever reaches these arrays.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from adstext import rng
from adstext.errors import ValidationError
from adstext.structures import neighbor_pairs


@dataclass
class GraphEmbeddingSet:
    """system_id -> per-atom (N, C, M) embeddings and/or pooled vectors."""

    atoms: dict = field(default_factory=dict)  # system_id -> (N, C, M) ndarray
    pooled: dict = field(default_factory=dict)  # system_id -> (C*M,) ndarray
    provenance: str = "file"

    def __len__(self) -> int:
        return len(set(self.atoms) | set(self.pooled))

    def system_ids(self) -> list:
        return sorted(set(self.atoms) | set(self.pooled))

    @property
    def pooled_length(self) -> int | None:
        for vec in self.pooled.values():
            return len(vec)
        for arr in self.atoms.values():
            return arr.shape[1] * arr.shape[2]
        return None

    def pooled_for(self, system_id: str) -> np.ndarray:
        """The system's pooled vector, pooling per-atom data on demand."""
        if system_id in self.pooled:
            return self.pooled[system_id]
        if system_id in self.atoms:
            return pool_system_embedding(self.atoms[system_id])
        raise ValidationError(f"no graph embedding for system {system_id!r}")

    def missing_ids(self, system_ids) -> list:
        known = set(self.atoms) | set(self.pooled)
        return sorted({sid for sid in system_ids if sid not in known})


def pool_system_embedding(atoms) -> np.ndarray:
    """Flatten each atom's (C, M) matrix row-major, then take the
    coordinatewise maximum across atoms."""
    arr = np.asarray(atoms, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValidationError(
            f"pooling expects a nonempty (N, C, M) stack, got shape {arr.shape}"
        )
    flat = arr.reshape(arr.shape[0], -1)
    return flat.max(axis=0)


def load_atom_embeddings(path) -> GraphEmbeddingSet:
    """Read an embedding JSONL file (per-atom or pooled form, not mixed)."""
    out = GraphEmbeddingSet(provenance="file")
    shape_seen = None
    pooled_len_seen = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({err.msg})") from None
            sid = obj.get("system_id")
            if not isinstance(sid, str) or not sid:
                raise ValidationError(f"{path}:{lineno}: missing system_id")
            if sid in out.atoms or sid in out.pooled:
                raise ValidationError(f"{path}:{lineno}: duplicate system_id {sid!r}")
            has_atoms = "atoms" in obj
            has_pooled = "pooled" in obj
            if has_atoms == has_pooled:
                raise ValidationError(
                    f"{path}:{lineno}: record must have exactly one of 'atoms' or 'pooled'"
                )
            if has_atoms and out.pooled or has_pooled and out.atoms:
                raise ValidationError(
                    f"{path}:{lineno}: mixing per-atom and pooled records in one file"
                )
            if has_atoms:
                rows = obj["atoms"]
                try:
                    arr = np.asarray(rows, dtype=np.float64)
                except ValueError:
                    raise ValidationError(
                        f"{path}:{lineno}: ragged atom embedding shapes for {sid!r}"
                    ) from None
                if arr.ndim != 3 or arr.shape[0] == 0:
                    raise ValidationError(
                        f"{path}:{lineno}: atom embeddings for {sid!r} must be (N, C, M)"
                    )
                if shape_seen is None:
                    shape_seen = arr.shape[1:]
                elif arr.shape[1:] != shape_seen:
                    raise ValidationError(
                        f"{path}:{lineno}: embedding shape {arr.shape[1:]} differs "
                        f"from earlier {shape_seen}"
                    )
                if not np.all(np.isfinite(arr)):
                    raise ValidationError(f"{path}:{lineno}: non-finite embedding for {sid!r}")
                out.atoms[sid] = arr
            else:
                vec = np.asarray(obj["pooled"], dtype=np.float64)
                if vec.ndim != 1 or vec.size == 0:
                    raise ValidationError(f"{path}:{lineno}: pooled vector must be 1-D")
                if pooled_len_seen is None:
                    pooled_len_seen = vec.size
                elif vec.size != pooled_len_seen:
                    raise ValidationError(
                        f"{path}:{lineno}: pooled length {vec.size} differs "
                        f"from earlier {pooled_len_seen}"
                    )
                if not np.all(np.isfinite(vec)):
                    raise ValidationError(f"{path}:{lineno}: non-finite embedding for {sid!r}")
                out.pooled[sid] = vec
    return out


def write_embeddings(embset: GraphEmbeddingSet, path, per_atom: bool = False) -> None:
    """Write a GraphEmbeddingSet back out as JSONL."""
    with open(path, "w", encoding="utf-8") as fh:
        for sid in embset.system_ids():
            if per_atom:
                fh.write(json.dumps({"system_id": sid, "atoms": embset.atoms[sid].tolist()}) + "\n")
            else:
                fh.write(
                    json.dumps({"system_id": sid, "pooled": embset.pooled_for(sid).tolist()}) + "\n"
                )


def synthetic_graph_embeddings(
    structures, seed: int = 0, channels: int = 8, degrees: int = 8,
    cutoff_scale: float | None = None,
) -> GraphEmbeddingSet:
    """Deterministic stand-in for a frozen graph encoder.

    Each atom's (C, M) matrix is a seeded hash-to-float expansion of its
    element, role tag, and quantized local environment (bonded-neighbor
    count). Identical structures therefore map to identical embeddings,
    and systems with similar composition land nearby after pooling, which
    gives contrastive pretraining real signal.
    """
    if channels < 1 or degrees < 1:
        raise ValidationError("channels and degrees must be >= 1")
    out = GraphEmbeddingSet(provenance="synthetic")
    for s in structures:
        if s.system_id in out.atoms:
            raise ValidationError(f"duplicate system_id {s.system_id!r}")
        pairs = neighbor_pairs(s) if cutoff_scale is None else neighbor_pairs(s, cutoff_scale)
        degree = np.zeros(s.n_atoms, dtype=np.int64)
        for i, j in pairs:
            degree[i] += 1
            degree[j] += 1
        rows = []
        for i in range(s.n_atoms):
            n_bonded = int(min(degree[i], 12))
            stream = rng.stream(seed, "graphemb", s.species[i], s.tags[i], n_bonded)
            rows.append(stream.normal(0.0, 1.0, size=(channels, degrees)))
        out.atoms[s.system_id] = np.asarray(rows)
    return out
