"""Guided-sampling experiment grid: per-cell generation and statistics.

A sweep runs every (target, lambda) cell with a fixed number of molecules,
evaluating the guided property, validity rate, and fragment counts.  Cell
seeds derive from the sweep seed plus the cell index, and every molecule
gets its own RNG stream, so reruns (and the lambda = 0 cell versus plain
unguided sampling) are reproducible draw for draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .chem import AtomVocabulary, EdgeVocabulary
from .graphs import GraphState
from .guidance import FUNCTIONS, GuidanceSpec, eval_atom_proportion, eval_bond_count, \
    eval_molecular_weight
from .sampling import draw_node_count, generate
from .validity import check_validity


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    function: str
    targets: tuple[float, ...]
    lambdas: tuple[float, ...]
    samples: int
    seed: int
    atom_symbol: str = "C"
    guide_samples: int = 1
    guide_at: str = "x0"
    nodes: int | None = None  # fixed molecule size; None draws from the histogram

    def __post_init__(self):
        if self.function not in FUNCTIONS:
            raise SweepError(f"unknown guidance function {self.function!r}")
        if not self.targets or not self.lambdas:
            raise SweepError("targets and lambdas must be nonempty")
        if self.samples < 1:
            raise SweepError("samples must be >= 1")


@dataclass(frozen=True)
class SweepRow:
    target: float
    lam: float
    prop_mean: float
    prop_std: float
    pct_valid: float
    mean_fragments: float
    n_samples: int


@dataclass
class SweepResult:
    rows: list[SweepRow]
    molecules: dict[tuple[float, float], list[GraphState]] = field(default_factory=dict)


def sample_rng(cell_seed: int, sample_index: int) -> np.random.Generator:
    """Independent, reproducible stream for one molecule of one cell."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((cell_seed, sample_index))))


def generate_cell(ds, nm, dn, cell_seed: int, samples: int,
                  guide: GuidanceSpec | None, guide_at: str = "x0",
                  nodes: int | None = None) -> list[GraphState]:
    """The molecules of one sweep cell (also the unguided reference path)."""
    out = []
    for i in range(samples):
        rng = sample_rng(cell_seed, i)
        n = nodes if nodes is not None else draw_node_count(ds.node_count_histogram, rng)
        out.append(generate(n, nm, dn, rng, guide=guide, atoms=ds.atoms,
                            bonds=ds.bonds, guide_at=guide_at))
    return out


def evaluate_property(g: GraphState, function: str, atoms: AtomVocabulary,
                      bonds: EdgeVocabulary, atom_index: int) -> float:
    if function == "proportion":
        return eval_atom_proportion(g, atom_index)
    if function == "weight":
        return eval_molecular_weight(g, atoms)
    return eval_bond_count(g, bonds)


def run_sweep(cfg: SweepConfig, ds, nm, dn, keep_molecules: bool = False) -> SweepResult:
    """Generate and score every (target, lambda) cell in config order."""
    atom_index = ds.atoms.index(cfg.atom_symbol)
    base = GuidanceSpec(function=cfg.function, target=cfg.targets[0], lam=0.0,
                        samples=cfg.guide_samples, atom_index=atom_index)
    result = SweepResult(rows=[])
    cell_index = 0
    for target in cfg.targets:
        for lam in cfg.lambdas:
            guide = replace(base, target=target, lam=lam)
            molecules = generate_cell(ds, nm, dn, cfg.seed + cell_index, cfg.samples,
                                      guide, cfg.guide_at, cfg.nodes)
            values = np.array([
                evaluate_property(g, cfg.function, ds.atoms, ds.bonds, atom_index)
                for g in molecules
            ])
            reports = [check_validity(g, ds.atoms, ds.bonds) for g in molecules]
            result.rows.append(SweepRow(
                target=target,
                lam=lam,
                prop_mean=float(values.mean()),
                prop_std=float(values.std()),  # population convention (ddof=0)
                pct_valid=100.0 * sum(r.valid for r in reports) / len(reports),
                mean_fragments=float(np.mean([r.fragment_count for r in reports])),
                n_samples=cfg.samples,
            ))
            if keep_molecules:
                result.molecules[(target, lam)] = molecules
            cell_index += 1
    return result


CSV_HEADER = "target,lambda,prop_mean,prop_std,pct_valid,mean_fragments,n_samples"
CSV_COMMENT = "# prop_std is the population standard deviation (ddof=0)"


def summarize(rows: list[SweepRow]) -> tuple[str, str]:
    """CSV text (4-decimal floats) and an aligned console table."""
    if not rows:
        raise SweepError("no sweep rows to summarize")
    csv_lines = [CSV_COMMENT, CSV_HEADER]
    for r in rows:
        csv_lines.append(
            f"{r.target:.4f},{r.lam:.4f},{r.prop_mean:.4f},{r.prop_std:.4f},"
            f"{r.pct_valid:.4f},{r.mean_fragments:.4f},{r.n_samples}"
        )
    csv_text = "\n".join(csv_lines) + "\n"

    headers = ("target", "lambda", "prop mean", "prop std", "% valid", "fragments", "samples")
    cells = [
        (f"{r.target:g}", f"{r.lam:g}", f"{r.prop_mean:.4f}", f"{r.prop_std:.4f}",
         f"{r.pct_valid:.1f}", f"{r.mean_fragments:.2f}", str(r.n_samples))
        for r in rows
    ]
    widths = [max(len(h), *(len(c[k]) for c in cells)) for k, h in enumerate(headers)]
    table_lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    table_lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return csv_text, "\n".join(table_lines) + "\n"


def parse_summary(csv_text: str) -> list[SweepRow]:
    rows = []
    for line in csv_text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line == CSV_HEADER:
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise SweepError(f"malformed CSV row {line!r}")
        rows.append(SweepRow(
            target=float(parts[0]), lam=float(parts[1]), prop_mean=float(parts[2]),
            prop_std=float(parts[3]), pct_valid=float(parts[4]),
            mean_fragments=float(parts[5]), n_samples=int(parts[6]),
        ))
    if not rows:
        raise SweepError("no data rows in CSV")
    return rows
