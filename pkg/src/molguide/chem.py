"""Chemical alphabet, dataset I/O, empirical marginals, synthetic data.

The dataset text format is line-oriented: one graph per line as
``n;t_1,...,t_n;i,j,k i,j,k ...`` where the ``t`` are atom symbols and each
``i,j,k`` is an undirected bonded edge with 0-based endpoints i<j and bond
label index k >= 1 (no-bond pairs are omitted).  Lines starting with ``#``
are comments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphs import GraphState, upper_triangle_indices


class DatasetError(ValueError):
    """Raised on malformed dataset/vocabulary files or invalid graphs."""


@dataclass(frozen=True)
class AtomVocabulary:
    """Ordered atom alphabet with per-type mass (daltons) and max valence."""

    symbols: tuple[str, ...]
    weights: tuple[float, ...]
    max_valence: tuple[int, ...]

    def __post_init__(self):
        if not self.symbols:
            raise DatasetError("atom vocabulary is empty")
        if len(set(self.symbols)) != len(self.symbols):
            raise DatasetError("duplicate atom symbols")
        if not (len(self.symbols) == len(self.weights) == len(self.max_valence)):
            raise DatasetError("atom vocabulary field lengths differ")
        if any(w <= 0 for w in self.weights):
            raise DatasetError("atom weights must be positive")
        if any(v < 1 for v in self.max_valence):
            raise DatasetError("max valence must be >= 1")

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise DatasetError(f"unknown atom symbol {symbol!r}") from None

    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)

    def valence_array(self) -> np.ndarray:
        return np.asarray(self.max_valence, dtype=np.int64)


@dataclass(frozen=True)
class EdgeVocabulary:
    """Ordered bond alphabet; index 0 is the no-bond category (order 0)."""

    labels: tuple[str, ...]
    bond_order: tuple[int, ...]

    def __post_init__(self):
        if not self.labels:
            raise DatasetError("edge vocabulary is empty")
        if len(set(self.labels)) != len(self.labels):
            raise DatasetError("duplicate bond labels")
        if len(self.labels) != len(self.bond_order):
            raise DatasetError("edge vocabulary field lengths differ")
        if self.bond_order[0] != 0:
            raise DatasetError("bond category 0 must have order 0 (no bond)")
        if any(o < 0 for o in self.bond_order):
            raise DatasetError("bond orders must be non-negative")

    @property
    def size(self) -> int:
        return len(self.labels)

    def order_array(self) -> np.ndarray:
        return np.asarray(self.bond_order, dtype=np.float64)

    def index_for_order(self, order: int) -> int:
        try:
            return self.bond_order.index(order)
        except ValueError:
            raise DatasetError(f"no bond category with order {order}") from None


def qm9_heavy_vocab() -> tuple[AtomVocabulary, EdgeVocabulary]:
    """Heavy-atom QM9 alphabet: C/N/O/F and none/single/double/triple bonds."""
    atoms = AtomVocabulary(
        symbols=("C", "N", "O", "F"),
        weights=(12.011, 14.007, 15.999, 18.998),
        max_valence=(4, 3, 2, 1),
    )
    bonds = EdgeVocabulary(
        labels=("none", "single", "double", "triple"),
        bond_order=(0, 1, 2, 3),
    )
    return atoms, bonds


@dataclass
class GraphDataset:
    """Discrete graphs plus the vocabularies they are expressed in."""

    graphs: list[GraphState]
    atoms: AtomVocabulary
    bonds: EdgeVocabulary
    node_count_histogram: dict[int, float] = field(init=False)

    def __post_init__(self):
        if not self.graphs:
            raise DatasetError("empty dataset")
        counts: dict[int, int] = {}
        for g in self.graphs:
            if g.a != self.atoms.size or g.b != self.bonds.size:
                raise DatasetError("graph category counts do not match vocabularies")
            counts[g.n] = counts.get(g.n, 0) + 1
        total = len(self.graphs)
        self.node_count_histogram = {n: c / total for n, c in sorted(counts.items())}

    def __len__(self) -> int:
        return len(self.graphs)


def compute_marginals(ds: GraphDataset) -> tuple[np.ndarray, np.ndarray]:
    """Empirical category marginals (m_X over nodes, m_E over ordered pairs).

    m_X[k] is the fraction of all nodes with type k.  m_E[k] is the fraction
    of all ordered off-diagonal node pairs carrying edge category k, with the
    no-bond category counted like any other.  Single-atom graphs contribute
    no pairs.
    """
    node_counts = np.zeros(ds.atoms.size)
    pair_counts = np.zeros(ds.bonds.size)
    for g in ds.graphs:
        node_counts += np.bincount(g.node_categories(), minlength=ds.atoms.size)
        if g.n > 1:
            e_idx = g.edge_categories()
            off = ~np.eye(g.n, dtype=bool)
            pair_counts += np.bincount(e_idx[off], minlength=ds.bonds.size)
    m_X = node_counts / node_counts.sum()
    if pair_counts.sum() == 0:
        # all graphs are single atoms; fall back to pure no-bond
        pair_counts[0] = 1.0
    m_E = pair_counts / pair_counts.sum()
    return m_X, m_E


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------

def parse_dataset(text: str, atoms: AtomVocabulary, bonds: EdgeVocabulary) -> GraphDataset:
    graphs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        graphs.append(_parse_graph_line(line, lineno, atoms, bonds))
    if not graphs:
        raise DatasetError("empty dataset")
    return GraphDataset(graphs=graphs, atoms=atoms, bonds=bonds)


def _parse_graph_line(line: str, lineno: int, atoms: AtomVocabulary,
                      bonds: EdgeVocabulary) -> GraphState:
    parts = line.split(";")
    if len(parts) != 3:
        raise DatasetError(f"line {lineno}: expected 'n;types;edges', got {len(parts)} fields")
    try:
        n = int(parts[0])
    except ValueError:
        raise DatasetError(f"line {lineno}: node count {parts[0]!r} is not an integer") from None
    if n < 1:
        raise DatasetError(f"line {lineno}: node count must be >= 1")
    symbols = parts[1].split(",") if parts[1] else []
    if len(symbols) != n:
        raise DatasetError(f"line {lineno}: expected {n} atom symbols, got {len(symbols)}")
    try:
        node_idx = [atoms.index(s.strip()) for s in symbols]
    except DatasetError as exc:
        raise DatasetError(f"line {lineno}: {exc}") from None
    edge_idx = np.zeros((n, n), dtype=np.intp)
    for chunk in parts[2].split():
        fields = chunk.split(",")
        if len(fields) != 3:
            raise DatasetError(f"line {lineno}: malformed edge {chunk!r}")
        try:
            i, j, k = (int(f) for f in fields)
        except ValueError:
            raise DatasetError(f"line {lineno}: malformed edge {chunk!r}") from None
        if not (0 <= i < n and 0 <= j < n):
            raise DatasetError(f"line {lineno}: edge endpoint out of range in {chunk!r}")
        if i >= j:
            raise DatasetError(f"line {lineno}: asymmetric edge list (need i<j in {chunk!r})")
        if not (1 <= k < bonds.size):
            raise DatasetError(f"line {lineno}: edge category {k} out of range (1..{bonds.size - 1})")
        if edge_idx[i, j] != 0:
            raise DatasetError(f"line {lineno}: duplicate edge {i},{j}")
        edge_idx[i, j] = edge_idx[j, i] = k
    return GraphState.from_indices(node_idx, edge_idx, atoms.size, bonds.size)


def format_graph_line(g: GraphState, atoms: AtomVocabulary) -> str:
    node_idx = g.node_categories()
    symbols = ",".join(atoms.symbols[k] for k in node_idx)
    e_idx = g.edge_categories()
    iu, ju = upper_triangle_indices(g.n)
    chunks = [f"{i},{j},{e_idx[i, j]}" for i, j in zip(iu, ju) if e_idx[i, j] != 0]
    return f"{g.n};{symbols};{' '.join(chunks)}"


def load_dataset(path, atoms: AtomVocabulary, bonds: EdgeVocabulary) -> GraphDataset:
    """Read a dataset text file and validate every graph against the vocab."""
    return parse_dataset(Path(path).read_text(encoding="utf-8"), atoms, bonds)


def save_dataset(ds: GraphDataset, path) -> None:
    lines = [format_graph_line(g, ds.atoms) for g in ds.graphs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_vocab(text: str) -> tuple[AtomVocabulary, EdgeVocabulary]:
    """Parse the key-value vocabulary format (``atom SYM WEIGHT VALENCE`` /
    ``bond LABEL ORDER`` lines)."""
    symbols, weights, valences = [], [], []
    labels, orders = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] == "atom" and len(fields) == 4:
            symbols.append(fields[1])
            weights.append(float(fields[2]))
            valences.append(int(fields[3]))
        elif fields[0] == "bond" and len(fields) == 3:
            labels.append(fields[1])
            orders.append(int(fields[2]))
        else:
            raise DatasetError(f"line {lineno}: unrecognized vocabulary entry {line!r}")
    return (
        AtomVocabulary(tuple(symbols), tuple(weights), tuple(valences)),
        EdgeVocabulary(tuple(labels), tuple(orders)),
    )


def format_vocab(atoms: AtomVocabulary, bonds: EdgeVocabulary) -> str:
    lines = ["# atom SYMBOL WEIGHT MAX_VALENCE"]
    lines += [f"atom {s} {w} {v}" for s, w, v in zip(atoms.symbols, atoms.weights, atoms.max_valence)]
    lines.append("# bond LABEL ORDER")
    lines += [f"bond {l} {o}" for l, o in zip(bonds.labels, bonds.bond_order)]
    return "\n".join(lines) + "\n"


def load_vocab(path) -> tuple[AtomVocabulary, EdgeVocabulary]:
    return parse_vocab(Path(path).read_text(encoding="utf-8"))


def save_vocab(atoms: AtomVocabulary, bonds: EdgeVocabulary, path) -> None:
    Path(path).write_text(format_vocab(atoms, bonds), encoding="utf-8")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

# Carbon-rich node-type mix in the spirit of small organic datasets; keeps
# carbon-free molecules rare so "no carbon" guidance targets are hard.
DEFAULT_ATOM_MIX = (0.70, 0.10, 0.15, 0.05)

_TREE_ORDER_BIAS = (0.80, 0.15, 0.05)  # single/double/triple when capacity allows
_EXTRA_BOND_PROB = 0.15

_MAX_ATTEMPTS = 10_000


def generate_synthetic_dataset(atoms: AtomVocabulary, bonds: EdgeVocabulary,
                               count: int, max_nodes: int, seed: int,
                               atom_mix: tuple[float, ...] = DEFAULT_ATOM_MIX,
                               ) -> GraphDataset:
    """Random connected, valence-valid graphs with sizes uniform on [1, max_nodes].

    Atoms are attached sequentially to a random earlier atom with spare
    valence (guaranteeing connectivity); a few extra single bonds are then
    sprinkled in where valences allow.  Deterministic per seed.
    """
    if count < 1 or max_nodes < 1:
        raise DatasetError("count and max_nodes must be >= 1")
    if len(atom_mix) != atoms.size:
        raise DatasetError("atom_mix length must match the atom vocabulary")
    mix = np.asarray(atom_mix, dtype=np.float64)
    mix = mix / mix.sum()
    rng = np.random.Generator(np.random.PCG64(seed))
    valences = atoms.valence_array()
    orders = bonds.order_array()
    graphs = [
        _random_valid_graph(rng, int(rng.integers(1, max_nodes + 1)), mix, valences,
                            orders, atoms.size, bonds.size)
        for _ in range(count)
    ]
    return GraphDataset(graphs=graphs, atoms=atoms, bonds=bonds)


def _random_valid_graph(rng, n, mix, valences, orders, a, b) -> GraphState:
    single = int(np.argmin(np.abs(orders - 1.0)))
    usable = [k for k in range(1, b)]
    for _ in range(_MAX_ATTEMPTS):
        node_idx = rng.choice(a, size=n, p=mix)
        resid = valences[node_idx].astype(np.int64)
        edge_idx = np.zeros((n, n), dtype=np.intp)
        ok = True
        for i in range(1, n):
            hosts = np.flatnonzero(resid[:i] >= 1)
            if hosts.size == 0 or resid[i] < 1:
                ok = False
                break
            j = int(hosts[rng.integers(hosts.size)])
            cap = int(min(resid[i], resid[j]))
            cats = [k for k in usable if orders[k] <= cap]
            probs = np.array([_TREE_ORDER_BIAS[min(int(orders[k]) - 1, 2)] for k in cats])
            k = int(rng.choice(cats, p=probs / probs.sum()))
            edge_idx[i, j] = edge_idx[j, i] = k
            used = int(orders[k])
            resid[i] -= used
            resid[j] -= used
        if not ok:
            continue
        iu, ju = upper_triangle_indices(n)
        for i, j in zip(iu, ju):
            if edge_idx[i, j] == 0 and resid[i] >= 1 and resid[j] >= 1:
                if rng.random() < _EXTRA_BOND_PROB:
                    edge_idx[i, j] = edge_idx[j, i] = single
                    resid[i] -= 1
                    resid[j] -= 1
        return GraphState.from_indices(node_idx, edge_idx, a, b)
    raise RuntimeError(f"could not build a valid {n}-node graph after {_MAX_ATTEMPTS} attempts")
