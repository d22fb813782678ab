"""Valence-based validity checks and V2000 molfile / SDF interop.

A graph is valid when every atom's total bond order fits under its maximum
valence (the remainder is implicit hydrogens).  Fragmentation is reported
separately: multi-fragment graphs still count as valid when valences hold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chem import AtomVocabulary, EdgeVocabulary
from .graphs import GraphState, upper_triangle_indices

MOLFILE_MAX_ATOMS = 999


class MolfileError(ValueError):
    pass


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    per_atom_excess: tuple[tuple[int, int, int], ...]  # (node, order sum, max valence)
    fragment_count: int


def check_validity(g: GraphState, atoms: AtomVocabulary,
                   bonds: EdgeVocabulary) -> ValidityReport:
    """Valence satisfiability plus connected-component count over bonds."""
    node_idx = g.node_categories()
    order = np.asarray(bonds.bond_order, dtype=np.int64)[g.edge_categories()]
    np.fill_diagonal(order, 0)
    totals = order.sum(axis=1)
    caps = atoms.valence_array()[node_idx]
    violators = tuple(
        (int(i), int(totals[i]), int(caps[i]))
        for i in np.flatnonzero(totals > caps)
    )
    return ValidityReport(
        valid=not violators,
        per_atom_excess=violators,
        fragment_count=_fragment_count(order > 0),
    )


def _fragment_count(adj: np.ndarray) -> int:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    count = 0
    for start in range(n):
        if seen[start]:
            continue
        count += 1
        stack = [start]
        seen[start] = True
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(adj[u]):
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
    return count


# ---------------------------------------------------------------------------
# V2000 molfiles
# ---------------------------------------------------------------------------

def write_molfile(g: GraphState, atoms: AtomVocabulary, bonds: EdgeVocabulary,
                  name: str = "") -> str:
    """Render a discrete graph as a V2000 molblock (zeroed coordinates)."""
    if g.n < 1:
        raise MolfileError("cannot write an empty graph")
    if g.n > MOLFILE_MAX_ATOMS:
        raise MolfileError(f"V2000 supports at most {MOLFILE_MAX_ATOMS} atoms, got {g.n}")
    node_idx = g.node_categories()
    e_idx = g.edge_categories()
    iu, ju = upper_triangle_indices(g.n)
    bond_rows = [(i, j, e_idx[i, j]) for i, j in zip(iu, ju) if e_idx[i, j] != 0]
    lines = [name, "", ""]
    lines.append(f"{g.n:3d}{len(bond_rows):3d}  0  0  0  0  0  0  0  0999 V2000")
    for k in node_idx:
        sym = atoms.symbols[k]
        lines.append(f"{0.0:10.4f}{0.0:10.4f}{0.0:10.4f} {sym:<3} 0  0  0  0  0  0  0  0  0  0  0  0")
    for i, j, k in bond_rows:
        lines.append(f"{i + 1:3d}{j + 1:3d}{int(bonds.bond_order[k]):3d}  0")
    lines.append("M  END")
    return "\n".join(lines) + "\n"


def read_molfile(text: str, atoms: AtomVocabulary,
                 bonds: EdgeVocabulary) -> GraphState:
    """Inverse of write_molfile on its image."""
    lines = text.splitlines()
    if len(lines) < 4:
        raise MolfileError("molblock too short")
    if not any(line.startswith("M  END") for line in lines):
        raise MolfileError("molblock missing 'M  END' terminator")
    counts = lines[3]
    try:
        n_atoms = int(counts[0:3])
        n_bonds = int(counts[3:6])
    except (ValueError, IndexError):
        raise MolfileError(f"malformed counts line {counts!r}") from None
    if len(lines) < 4 + n_atoms + n_bonds + 1:
        raise MolfileError("molblock truncated")
    node_idx = []
    for line in lines[4:4 + n_atoms]:
        sym = line[31:34].strip()
        try:
            node_idx.append(atoms.index(sym))
        except Exception:
            raise MolfileError(f"unknown element {sym!r}") from None
    edge_idx = np.zeros((n_atoms, n_atoms), dtype=np.intp)
    for line in lines[4 + n_atoms:4 + n_atoms + n_bonds]:
        try:
            i = int(line[0:3]) - 1
            j = int(line[3:6]) - 1
            order = int(line[6:9])
        except (ValueError, IndexError):
            raise MolfileError(f"malformed bond line {line!r}") from None
        if not (0 <= i < n_atoms and 0 <= j < n_atoms) or i == j:
            raise MolfileError(f"bond index out of range in {line!r}")
        k = bonds.index_for_order(order)
        edge_idx[i, j] = edge_idx[j, i] = k
    return GraphState.from_indices(node_idx, edge_idx, atoms.size, bonds.size)


SDF_SEPARATOR = "$$$$"


def write_sdf(graphs, atoms: AtomVocabulary, bonds: EdgeVocabulary,
              names=None) -> str:
    """Concatenate molblocks into one SDF-style text with $$$$ separators."""
    blocks = []
    for idx, g in enumerate(graphs):
        name = names[idx] if names is not None else f"mol-{idx:05d}"
        blocks.append(write_molfile(g, atoms, bonds, name=name) + SDF_SEPARATOR + "\n")
    return "".join(blocks)


def read_sdf(text: str, atoms: AtomVocabulary, bonds: EdgeVocabulary) -> list[GraphState]:
    graphs = []
    for chunk in text.split(SDF_SEPARATOR):
        if chunk.strip():
            graphs.append(read_molfile(chunk.lstrip("\n"), atoms, bonds))
    return graphs
