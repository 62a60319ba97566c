"""Shared test fixtures: synthetic slab/adsorbate structures whose energy
labels are a fixed smooth function of their text-visible features, so a
text model can in principle fit them exactly."""

import math

import numpy as np

from adstext.rng import stable_seed, stream
from adstext.structures import AtomicStructure, interacting_atoms, neighbor_pairs

BULK_ELEMENTS = ["Pt", "Cu", "Ir", "Ni", "Zn", "Ag", "Pd", "Au", "Rh", "Co"]
MILLERS = [(1, 1, 1), (1, 0, 0), (1, 1, 0), (2, 1, 1), (2, 1, 0)]
ADSORBATES = {
    "*O": ["O"],
    "*H": ["H"],
    "*OH": ["O", "H"],
    "*CO": ["C", "O"],
    "*CH": ["C", "H"],
    "*CH2": ["C", "H", "H"],
    "*CH3": ["C", "H", "H", "H"],
    "*N2": ["N", "N"],
    "*NH": ["N", "H"],
    "*NO": ["N", "O"],
    "*CH2CH3": ["C", "H", "H", "C", "H", "H", "H"],
    "*OCH3": ["O", "C", "H", "H", "H"],
}

_CELL_A = 7.8
_GRID = 2.6


def element_weight(token: str) -> float:
    """Stable pseudo-random weight in [-1, 1]."""
    return (stable_seed("weight", token) % 10**6) / 10**6 * 2.0 - 1.0


def smooth_label(adsorbate, bulk, miller, primary_elements, secondary_elements) -> float:
    """Fixed smooth function of composition + configuration features.

    Depends only on text-visible features, so a text model can fit it to
    arbitrary precision; the primary-atom sum makes it configuration-aware.
    """
    del miller, secondary_elements
    return (
        -1.5
        + 0.9 * element_weight(adsorbate)
        + 0.6 * math.tanh(0.5 * sum(element_weight(e) for e in primary_elements))
        + 0.25 * element_weight(bulk)
    )


def make_structure(system_id, seed, relaxer=None, jitter=0.04) -> AtomicStructure:
    """A two-layer 3x3 metal slab with a small adsorbate chain on top.

    Composition (adsorbate, elements, facet, site occupation) depends only
    on `seed`; geometry jitter also depends on `relaxer`, so relaxer
    variants of one system share composition but differ in geometry.
    """
    comp = stream("structure-comp", seed)
    geo = stream("structure-geom", seed, relaxer or "")
    ads_symbol = list(ADSORBATES)[int(comp.integers(len(ADSORBATES)))]
    main_el = BULK_ELEMENTS[int(comp.integers(len(BULK_ELEMENTS)))]
    bulk = main_el
    miller = MILLERS[int(comp.integers(len(MILLERS)))]

    cell = np.eye(3) * _CELL_A
    positions, species, tags = [], [], []
    for layer, (z, tag) in enumerate(((1.2, 0), (3.4, 1))):
        for ix in range(3):
            for iy in range(3):
                x = ix * _GRID + (0.0 if layer == 0 else 1.3)
                y = iy * _GRID + (0.0 if layer == 0 else 1.3)
                positions.append([x, y, z])
                species.append(main_el)
                tags.append(tag)

    anchor = positions[9 + int(comp.integers(9))]
    z = 3.4
    for idx, el in enumerate(ADSORBATES[ads_symbol]):
        z += 1.9 if idx == 0 else 1.2
        positions.append(
            [anchor[0] + geo.normal(0, 0.3), anchor[1] + geo.normal(0, 0.3), z]
        )
        species.append(el)
        tags.append(2)

    positions = np.asarray(positions)
    positions += geo.normal(0.0, jitter, size=positions.shape)

    s = AtomicStructure(
        system_id=system_id,
        cell=cell,
        positions=positions,
        species=species,
        tags=tags,
        adsorbate_symbol=ads_symbol,
        bulk_composition=bulk,
        miller_index=miller,
        relaxer=relaxer,
    )
    ia = interacting_atoms(s, neighbor_pairs(s))
    s.energy_label = smooth_label(
        ads_symbol, bulk, miller, ia.primary_elements(), ia.secondary_elements()
    )
    return s


def make_corpus(n, seed=0) -> list:
    """n structures with unique system ids and text-derived labels."""
    return [make_structure(f"syn-{i:04d}", stable_seed(seed, i)) for i in range(n)]


def make_relaxer_corpus(n_systems, seed=0, relaxers=("relaxer-a", "relaxer-b", "relaxer-c")) -> list:
    """Each system appears once per relaxer, with per-relaxer jitter."""
    out = []
    for i in range(n_systems):
        for r in relaxers:
            out.append(make_structure(f"mlrx-{i:04d}", stable_seed(seed, i), relaxer=r))
    return out


def random_cell(rng, kind: str) -> np.ndarray:
    if kind == "cubic":
        return np.eye(3) * rng.uniform(8.0, 14.0)
    if kind == "orthorhombic":
        return np.diag(rng.uniform(8.0, 14.0, size=3))
    if kind == "triclinic":
        cell = np.diag(rng.uniform(9.0, 14.0, size=3))
        cell[1, 0] = rng.uniform(-2.0, 2.0)
        cell[2, 0] = rng.uniform(-2.0, 2.0)
        cell[2, 1] = rng.uniform(-2.0, 2.0)
        return cell
    raise ValueError(kind)


def random_periodic_structure(rng, n_atoms=8, kind="triclinic",
                              elements=("C", "O", "N", "H", "Cu")) -> AtomicStructure:
    """Random atoms in a random cell, guaranteed valid for min-image search."""
    from adstext.elements import covalent_radius
    from adstext.structures import min_cell_height

    while True:
        cell = random_cell(rng, kind)
        max_radius = max(covalent_radius(e) for e in elements)
        if 1.2 * 2.0 * max_radius <= 0.5 * min_cell_height(cell):
            break
    frac = rng.random((n_atoms, 3))
    species = [elements[int(rng.integers(len(elements)))] for _ in range(n_atoms)]
    return AtomicStructure(
        system_id="random",
        cell=cell,
        positions=frac @ cell,
        species=species,
        tags=[1] * n_atoms,
        adsorbate_symbol="",
        bulk_composition="X",
        miller_index=(1, 1, 1),
    )
