"""Relaxed atomic structures: parsing, periodic connectivity, interaction
analysis, and the two energy bookkeeping operations.

Structures arrive as JSONL (one object per line, schema in parse_structures).
Connectivity uses per-pair covalent cutoffs under the minimum-image
convention, evaluated over the 27 lattice-image offsets; interacting atoms
split into primary (surface atoms bonded to the adsorbate) and secondary
(surface neighbors of primary atoms).
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from adstext import kernels
from adstext.elements import covalent_radius
from adstext.errors import ValidationError

DEFAULT_CUTOFF_SCALE = 1.2

TAG_SUBSURFACE = 0
TAG_SURFACE = 1
TAG_ADSORBATE = 2


@dataclass
class AtomicStructure:
    """One relaxed adsorbate-catalyst system.

    cell rows are lattice vectors (Angstrom); positions are Cartesian.
    tags: 0 = subsurface, 1 = surface, 2 = adsorbate. e_slab/e_gas/
    energy_label are optional per-record energies carried through from the
    input file (energy_label is the precomputed configuration energy used
    as the supervised target).
    """

    system_id: str
    cell: np.ndarray
    positions: np.ndarray
    species: list
    tags: list
    adsorbate_symbol: str
    bulk_composition: str
    miller_index: tuple
    e_sys: float | None = None
    e_slab: float | None = None
    e_gas: float | None = None
    energy_label: float | None = None
    relaxer: str | None = None

    def __post_init__(self):
        self.cell = np.asarray(self.cell, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.species = list(self.species)
        self.tags = [int(t) for t in self.tags]
        self.miller_index = tuple(int(m) for m in self.miller_index)
        self.validate()

    @property
    def n_atoms(self) -> int:
        return len(self.species)

    def validate(self) -> None:
        n = len(self.species)
        if n < 1:
            raise ValidationError(f"{self.system_id}: structure has no atoms")
        if self.cell.shape != (3, 3):
            raise ValidationError(f"{self.system_id}: cell must be 3x3, got {self.cell.shape}")
        if self.positions.shape != (n, 3):
            raise ValidationError(
                f"{self.system_id}: positions shape {self.positions.shape} "
                f"does not match {n} species"
            )
        if len(self.tags) != n:
            raise ValidationError(f"{self.system_id}: {len(self.tags)} tags for {n} atoms")
        if not np.all(np.isfinite(self.cell)) or not np.all(np.isfinite(self.positions)):
            raise ValidationError(f"{self.system_id}: non-finite cell or positions")
        if abs(np.linalg.det(self.cell)) < 1e-10:
            raise ValidationError(f"{self.system_id}: cell is singular")
        bad = sorted({t for t in self.tags} - {TAG_SUBSURFACE, TAG_SURFACE, TAG_ADSORBATE})
        if bad:
            raise ValidationError(f"{self.system_id}: invalid tag values {bad}")
        if len(self.miller_index) != 3:
            raise ValidationError(f"{self.system_id}: miller index must have 3 components")
        if self.adsorbate_symbol and TAG_ADSORBATE not in self.tags:
            raise ValidationError(
                f"{self.system_id}: adsorbate {self.adsorbate_symbol!r} given "
                "but no atom is tagged as adsorbate"
            )
        for value, name in ((self.e_sys, "e_sys"), (self.e_slab, "e_slab"),
                            (self.e_gas, "e_gas"), (self.energy_label, "energy_label")):
            if value is not None and not math.isfinite(value):
                raise ValidationError(f"{self.system_id}: {name} is not finite")


@dataclass
class ReferenceEnergies:
    """Clean-slab and gas-phase adsorbate energies (eV)."""

    e_slab: float
    e_gas: float

    def __post_init__(self):
        if not (math.isfinite(self.e_slab) and math.isfinite(self.e_gas)):
            raise ValidationError("reference energies must be finite")


@dataclass
class InteractionSummary:
    """Primary/secondary interacting atoms as sorted (element, index) lists."""

    primary: list = field(default_factory=list)
    secondary: list = field(default_factory=list)

    def primary_elements(self) -> list:
        return [el for el, _ in self.primary]

    def secondary_elements(self) -> list:
        return [el for el, _ in self.secondary]


_SCHEMA_KEYS = {
    "system_id", "cell", "positions", "species", "tags", "adsorbate",
    "bulk", "miller", "e_sys", "e_slab", "e_gas", "energy_label", "relaxer",
}
_REQUIRED_KEYS = ("system_id", "cell", "positions", "species", "tags",
                  "adsorbate", "bulk", "miller")


def structure_from_record(record: dict, where: str = "record") -> AtomicStructure:
    """Build and validate an AtomicStructure from one decoded JSONL object."""
    if not isinstance(record, dict):
        raise ValidationError(f"{where}: expected a JSON object")
    unknown = set(record) - _SCHEMA_KEYS
    if unknown:
        raise ValidationError(f"{where}: unknown fields {sorted(unknown)}")
    for key in _REQUIRED_KEYS:
        if key not in record:
            raise ValidationError(f"{where}: missing required field {key!r}")
    try:
        return AtomicStructure(
            system_id=record["system_id"],
            cell=record["cell"],
            positions=record["positions"],
            species=record["species"],
            tags=record["tags"],
            adsorbate_symbol=record["adsorbate"],
            bulk_composition=record["bulk"],
            miller_index=record["miller"],
            e_sys=record.get("e_sys"),
            e_slab=record.get("e_slab"),
            e_gas=record.get("e_gas"),
            energy_label=record.get("energy_label"),
            relaxer=record.get("relaxer"),
        )
    except ValidationError as err:
        raise ValidationError(f"{where}: {err}") from None
    except (TypeError, ValueError) as err:
        raise ValidationError(f"{where}: malformed field ({err})") from None


def parse_structures(path) -> list:
    """Read a structure JSONL file, validating every record.

    Errors name the offending line number and field. Returns records in
    file order; an empty file yields an empty list.
    """
    structures = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({err.msg})") from None
            structures.append(structure_from_record(record, where=f"{path}:{lineno}"))
    return structures


def write_structures(structures, path) -> None:
    """Inverse of parse_structures, used by tests and data generators."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in structures:
            record = {
                "system_id": s.system_id,
                "cell": s.cell.tolist(),
                "positions": s.positions.tolist(),
                "species": list(s.species),
                "tags": list(s.tags),
                "adsorbate": s.adsorbate_symbol,
                "bulk": s.bulk_composition,
                "miller": list(s.miller_index),
                "e_sys": s.e_sys,
                "e_slab": s.e_slab,
                "e_gas": s.e_gas,
                "energy_label": s.energy_label,
                "relaxer": s.relaxer,
            }
            fh.write(json.dumps(record) + "\n")


def min_cell_height(cell: np.ndarray) -> float:
    """Smallest perpendicular distance between opposite cell faces."""
    volume = abs(np.linalg.det(cell))
    heights = []
    for k in range(3):
        a, b = cell[(k + 1) % 3], cell[(k + 2) % 3]
        heights.append(volume / np.linalg.norm(np.cross(a, b)))
    return min(heights)


def neighbor_pairs(s: AtomicStructure, cutoff_scale: float = DEFAULT_CUTOFF_SCALE) -> list:
    """Bonded pairs (i, j) with i < j under per-pair covalent cutoffs.

    A pair is bonded when its minimum-image distance is at most
    cutoff_scale * (r_cov(i) + r_cov(j)). Positions are wrapped into the
    cell and distances are minimized over the 27 image offsets in
    {-1,0,1}^3, which is exact only while every cutoff stays below half
    the minimum cell height; that precondition is enforced.
    """
    if cutoff_scale <= 0:
        raise ValidationError(f"cutoff_scale must be positive, got {cutoff_scale}")
    radii = np.array([covalent_radius(el) for el in s.species])
    max_cutoff = cutoff_scale * 2.0 * radii.max()
    half_height = 0.5 * min_cell_height(s.cell)
    if max_cutoff > half_height:
        raise ValidationError(
            f"{s.system_id}: largest bond cutoff {max_cutoff:.3f} A exceeds half "
            f"the minimum cell height {half_height:.3f} A; minimum-image search invalid"
        )
    frac = s.positions @ np.linalg.inv(s.cell)
    frac -= np.floor(frac)
    dist = kernels.min_image_distance_matrix(np.ascontiguousarray(frac), s.cell)
    cutoff = cutoff_scale * (radii[:, None] + radii[None, :])
    ii, jj = np.nonzero(np.triu(dist <= cutoff, k=1))
    return [(int(i), int(j)) for i, j in zip(ii, jj)]


def interacting_atoms(s: AtomicStructure, pairs, include_subsurface: bool = True) -> InteractionSummary:
    """Classify surface atoms into primary and secondary interaction sets.

    Primary: catalyst atoms bonded to any adsorbate atom. Secondary:
    catalyst atoms bonded to a primary atom, excluding primaries and the
    adsorbate itself. With include_subsurface=False only tag-1 atoms are
    eligible. Output is sorted by (element symbol, atom index).
    """
    eligible = {TAG_SUBSURFACE, TAG_SURFACE} if include_subsurface else {TAG_SURFACE}
    adjacency = {i: set() for i in range(s.n_atoms)}
    for i, j in pairs:
        adjacency[i].add(j)
        adjacency[j].add(i)

    primary = {
        i
        for i in range(s.n_atoms)
        if s.tags[i] in eligible and any(s.tags[j] == TAG_ADSORBATE for j in adjacency[i])
    }
    secondary = {
        j
        for i in primary
        for j in adjacency[i]
        if s.tags[j] in eligible and j not in primary
    }

    def ordered(indices):
        return sorted(((s.species[i], i) for i in indices), key=lambda t: (t[0], t[1]))

    return InteractionSummary(primary=ordered(primary), secondary=ordered(secondary))


def configuration_energy(e_sys: float, refs: ReferenceEnergies) -> float:
    """Energy of one adsorption configuration relative to slab + gas."""
    if not math.isfinite(e_sys):
        raise ValidationError("e_sys must be finite")
    return e_sys - refs.e_slab - refs.e_gas


def adsorption_energy(config_energies) -> float:
    """Minimum configuration energy across all configurations of a pair."""
    energies = list(config_energies)
    if not energies:
        raise ValidationError("adsorption_energy requires at least one configuration")
    if not all(math.isfinite(e) for e in energies):
        raise ValidationError("configuration energies must be finite")
    return min(energies)
