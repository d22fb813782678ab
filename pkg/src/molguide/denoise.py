"""Clean-graph predictors p(G0 | Gt): exact dataset-Bayes, marginal, softmax.

The Bayes denoiser scores every same-size training graph by its forward
likelihood of producing the observed noisy graph and marginalizes the
resulting posterior per node and per edge.  It is the exact limit of a
perfectly trained denoiser on the empirical distribution and serves as the
verification oracle for guidance experiments.  The softmax denoiser is a
single linear-softmax layer over hand-built equivariant features with exact
hand-derived gradients.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .chem import GraphDataset, compute_marginals
from .graphs import GraphState, upper_triangle_indices
from .noise import NoiseModel, forward_noise

logger = logging.getLogger(__name__)


class DenoiserError(ValueError):
    pass


class NoSizeMatchError(DenoiserError):
    """The dataset holds no graph with the query's node count."""


@dataclass
class DenoiserOutput:
    """Per-node and per-edge predicted clean-state distributions."""

    pX: np.ndarray  # (n, a)
    pE: np.ndarray  # (n, n, b)

    @property
    def n(self) -> int:
        return self.pX.shape[0]

    def as_soft_state(self) -> GraphState:
        return GraphState(X=self.pX.copy(), E=self.pE.copy(), mode="soft")

    def validate(self, tol: float = 1e-9):
        self.as_soft_state().validate(tol)

    def copy(self) -> "DenoiserOutput":
        return DenoiserOutput(pX=self.pX.copy(), pE=self.pE.copy())


def assemble_edge_tensor(fibers_ut: np.ndarray, n: int, b: int) -> np.ndarray:
    """Symmetric (n, n, b) tensor from upper-triangle fibers, no-bond diagonal."""
    E = np.zeros((n, n, b))
    E[np.arange(n), np.arange(n), 0] = 1.0
    iu, ju = upper_triangle_indices(n)
    if iu.size:
        E[iu, ju, :] = fibers_ut
        E[ju, iu, :] = fibers_ut
    return E


# ---------------------------------------------------------------------------
# Dataset-Bayes denoiser
# ---------------------------------------------------------------------------

class BayesDenoiser:
    """Exact posterior over same-size training graphs, marginalized per entry.

    ``perms`` > 0 augments each stored graph with that many random node
    permutations (drawn once at construction from ``perm_seed``), trading
    cost for invariance to the stored node order.  Queries whose node count
    is absent from the dataset fall back to the marginal prediction with a
    logged warning; use :meth:`denoise_strict` to get an error instead.
    """

    def __init__(self, ds: GraphDataset, nm: NoiseModel, perms: int = 0, perm_seed: int = 0):
        self.nm = nm
        self.a = ds.atoms.size
        self.b = ds.bonds.size
        self.m_X, self.m_E = compute_marginals(ds)
        rng = np.random.Generator(np.random.PCG64(perm_seed))
        by_size: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        for g in ds.graphs:
            node_idx = g.node_categories()
            edge_idx = g.edge_categories()
            variants = [(node_idx, edge_idx)]
            for _ in range(perms):
                p = rng.permutation(g.n)
                variants.append((node_idx[p], edge_idx[np.ix_(p, p)]))
            by_size.setdefault(g.n, []).extend(variants)
        self._groups = {}
        for n, variants in by_size.items():
            x0 = np.stack([v[0] for v in variants])
            iu, ju = upper_triangle_indices(n)
            e0 = np.stack([v[1][iu, ju] for v in variants])
            x0_onehot = np.eye(self.a)[x0]                  # (G, n, a)
            e0_onehot = np.eye(self.b)[e0]                  # (G, P, b)
            self._groups[n] = (x0, e0, x0_onehot, e0_onehot)

    def __call__(self, gt: GraphState, t: int) -> DenoiserOutput:
        try:
            return self.denoise_strict(gt, t)
        except NoSizeMatchError:
            logger.warning("no %d-node graph in the dataset; using marginal prediction", gt.n)
            return marginal_output(gt.n, self.m_X, self.m_E)

    def denoise_strict(self, gt: GraphState, t: int) -> DenoiserOutput:
        group = self._groups.get(gt.n)
        if group is None:
            raise NoSizeMatchError(f"dataset has no graph with {gt.n} nodes")
        x0, e0, x0_onehot, e0_onehot = group
        Qbar_X = self.nm.Qbar_X[t]
        Qbar_E = self.nm.Qbar_E[t]
        xt = gt.node_categories()
        iu, ju = upper_triangle_indices(gt.n)
        et = gt.edge_categories()[iu, ju]
        with np.errstate(divide="ignore"):
            log_w = np.log(Qbar_X[x0, xt[None, :]]).sum(axis=1)
            if et.size:
                log_w = log_w + np.log(Qbar_E[e0, et[None, :]]).sum(axis=1)
        shift = log_w.max()
        if shift == -np.inf:
            raise DenoiserError(f"all training graphs have zero likelihood at t={t}")
        w = np.exp(log_w - shift)
        w /= w.sum()
        pX = np.einsum("g,gia->ia", w, x0_onehot)
        fibers = np.einsum("g,gpb->pb", w, e0_onehot) if et.size else np.zeros((0, self.b))
        return DenoiserOutput(pX=pX, pE=assemble_edge_tensor(fibers, gt.n, self.b))


def bayes_denoise(gt: GraphState, t: int, ds: GraphDataset, nm: NoiseModel) -> DenoiserOutput:
    """One-shot exact dataset-Bayes prediction (errors when no size matches)."""
    return BayesDenoiser(ds, nm).denoise_strict(gt, t)


# ---------------------------------------------------------------------------
# Marginal baseline
# ---------------------------------------------------------------------------

def marginal_output(n: int, m_X: np.ndarray, m_E: np.ndarray) -> DenoiserOutput:
    pX = np.tile(m_X, (n, 1))
    iu, _ = upper_triangle_indices(n)
    fibers = np.tile(m_E, (iu.size, 1))
    return DenoiserOutput(pX=pX, pE=assemble_edge_tensor(fibers, n, m_E.shape[0]))


class MarginalDenoiser:
    """Predicts the training marginals everywhere, ignoring the input."""

    def __init__(self, ds: GraphDataset):
        self.m_X, self.m_E = compute_marginals(ds)

    def __call__(self, gt: GraphState, t: int) -> DenoiserOutput:
        return marginal_output(gt.n, self.m_X, self.m_E)


def marginal_denoise(gt: GraphState, ds: GraphDataset) -> DenoiserOutput:
    return MarginalDenoiser(ds)(gt, 0)


# ---------------------------------------------------------------------------
# Softmax denoiser
# ---------------------------------------------------------------------------

def node_feature_matrix(gt: GraphState, t: int, T: int, bond_orders: np.ndarray) -> np.ndarray:
    """Equivariant per-node features, shape (n, a + b + a + 1).

    Concatenates the node's own noisy one-hot, incident edge-category counts
    over j != i divided by n-1, the bond-order-weighted mean of neighbor
    one-hots (zero when there are no bonds), and the normalized time t/T.
    """
    n, a, b = gt.n, gt.a, gt.b
    X, E = gt.X, gt.E
    if n > 1:
        no_bond = np.zeros(b)
        no_bond[0] = 1.0
        incident = (E.sum(axis=1) - no_bond) / (n - 1)
    else:
        incident = np.zeros((n, b))
    order_w = E @ bond_orders        # (n, n) bond order between each pair
    np.fill_diagonal(order_w, 0.0)
    totals = order_w.sum(axis=1)
    neighbor_mean = np.zeros((n, a))
    has_bonds = totals > 0
    if np.any(has_bonds):
        neighbor_mean[has_bonds] = (order_w @ X)[has_bonds] / totals[has_bonds, None]
    time_col = np.full((n, 1), t / T)
    return np.concatenate([X, incident, neighbor_mean, time_col], axis=1)


def node_features(gt: GraphState, i: int, t: int, T: int, bond_orders: np.ndarray) -> np.ndarray:
    return node_feature_matrix(gt, t, T, bond_orders)[i]


def edge_feature_matrix(gt: GraphState, t: int, T: int) -> np.ndarray:
    """Per-pair features for i<j, shape (P, b + a + 1): the pair's noisy
    one-hot, the symmetric sum of endpoint one-hots, and t/T."""
    iu, ju = upper_triangle_indices(gt.n)
    pair_onehot = gt.E[iu, ju, :]
    endpoint_sum = gt.X[iu] + gt.X[ju]
    time_col = np.full((iu.size, 1), t / T)
    return np.concatenate([pair_onehot, endpoint_sum, time_col], axis=1)


def node_feature_dim(a: int, b: int) -> int:
    return a + b + a + 1


def edge_feature_dim(a: int, b: int) -> int:
    return b + a + 1


@dataclass
class SoftmaxDenoiserParams:
    """Weights of the linear-softmax denoiser plus the context it was fit in."""

    W_X: np.ndarray  # (a, d_X)
    b_X: np.ndarray  # (a,)
    W_E: np.ndarray  # (b, d_E)
    b_E: np.ndarray  # (b,)
    T: int
    bond_orders: tuple[float, ...]

    @classmethod
    def zeros(cls, a: int, b: int, T: int, bond_orders) -> "SoftmaxDenoiserParams":
        return cls(
            W_X=np.zeros((a, node_feature_dim(a, b))),
            b_X=np.zeros(a),
            W_E=np.zeros((b, edge_feature_dim(a, b))),
            b_E=np.zeros(b),
            T=T,
            bond_orders=tuple(float(o) for o in bond_orders),
        )

    def validate(self):
        for arr in (self.W_X, self.b_X, self.W_E, self.b_E):
            if not np.all(np.isfinite(arr)):
                raise DenoiserError("non-finite denoiser parameters")

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W_X.ravel(), self.b_X, self.W_E.ravel(), self.b_E])

    def with_flat(self, vec: np.ndarray) -> "SoftmaxDenoiserParams":
        out = SoftmaxDenoiserParams(
            W_X=self.W_X.copy(), b_X=self.b_X.copy(),
            W_E=self.W_E.copy(), b_E=self.b_E.copy(),
            T=self.T, bond_orders=self.bond_orders,
        )
        sizes = [out.W_X.size, out.b_X.size, out.W_E.size, out.b_E.size]
        chunks = np.split(np.asarray(vec, dtype=np.float64), np.cumsum(sizes)[:-1])
        out.W_X = chunks[0].reshape(out.W_X.shape)
        out.b_X = chunks[1]
        out.W_E = chunks[2].reshape(out.W_E.shape)
        out.b_E = chunks[3]
        return out


def save_params(params: SoftmaxDenoiserParams, path) -> None:
    payload = {
        "format": "molguide-softmax-denoiser",
        "version": 1,
        "a": params.W_X.shape[0],
        "b": params.W_E.shape[0],
        "d_X": params.W_X.shape[1],
        "d_E": params.W_E.shape[1],
        "T": params.T,
        "bond_orders": list(params.bond_orders),
        "W_X": params.W_X.tolist(),
        "b_X": params.b_X.tolist(),
        "W_E": params.W_E.tolist(),
        "b_E": params.b_E.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_params(path) -> SoftmaxDenoiserParams:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "molguide-softmax-denoiser" or payload.get("version") != 1:
        raise DenoiserError(f"unrecognized checkpoint format in {path}")
    params = SoftmaxDenoiserParams(
        W_X=np.asarray(payload["W_X"], dtype=np.float64),
        b_X=np.asarray(payload["b_X"], dtype=np.float64),
        W_E=np.asarray(payload["W_E"], dtype=np.float64),
        b_E=np.asarray(payload["b_E"], dtype=np.float64),
        T=int(payload["T"]),
        bond_orders=tuple(payload["bond_orders"]),
    )
    expected = ((payload["a"], payload["d_X"]), (payload["b"], payload["d_E"]))
    if params.W_X.shape != expected[0] or params.W_E.shape != expected[1]:
        raise DenoiserError("checkpoint dimension header does not match matrices")
    params.validate()
    return params


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_denoise(gt: GraphState, t: int, params: SoftmaxDenoiserParams) -> DenoiserOutput:
    params.validate()
    orders = np.asarray(params.bond_orders)
    fx = node_feature_matrix(gt, t, params.T, orders)
    pX = _softmax(fx @ params.W_X.T + params.b_X)
    fe = edge_feature_matrix(gt, t, params.T)
    fibers = _softmax(fe @ params.W_E.T + params.b_E) if fe.shape[0] else np.zeros((0, gt.b))
    return DenoiserOutput(pX=pX, pE=assemble_edge_tensor(fibers, gt.n, gt.b))


class SoftmaxDenoiser:
    def __init__(self, params: SoftmaxDenoiserParams):
        self.params = params

    def __call__(self, gt: GraphState, t: int) -> DenoiserOutput:
        return softmax_denoise(gt, t, self.params)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainingDesign:
    """Fixed set of noised training examples (features + clean targets).

    The triples (graph, uniform t, one forward-noise draw) are materialized
    once so the objective is a deterministic convex function of the
    parameters; plain gradient descent then provably decreases it.
    """

    F_X: np.ndarray   # (N_nodes, d_X)
    y_X: np.ndarray   # (N_nodes,) clean node categories
    F_E: np.ndarray   # (N_pairs, d_E)
    y_E: np.ndarray   # (N_pairs,) clean edge categories
    node_triple: np.ndarray  # (N_nodes,) triple index per node row
    edge_triple: np.ndarray  # (N_pairs,) triple index per pair row
    n_triples: int


def build_training_design(ds: GraphDataset, nm: NoiseModel, noisings_per_graph: int,
                          seed: int) -> TrainingDesign:
    rng = np.random.Generator(np.random.PCG64(seed))
    orders = ds.bonds.order_array()
    fx, yx, fe, ye, nt, et = [], [], [], [], [], []
    triple = 0
    for g0 in ds.graphs:
        iu, ju = upper_triangle_indices(g0.n)
        clean_nodes = g0.node_categories()
        clean_edges = g0.edge_categories()[iu, ju]
        for _ in range(noisings_per_graph):
            t = int(rng.integers(1, nm.T + 1))
            gt = forward_noise(g0, t, nm, rng)
            fx.append(node_feature_matrix(gt, t, nm.T, orders))
            yx.append(clean_nodes)
            nt.append(np.full(g0.n, triple))
            if iu.size:
                fe.append(edge_feature_matrix(gt, t, nm.T))
                ye.append(clean_edges)
                et.append(np.full(iu.size, triple))
            triple += 1
    a, b = ds.atoms.size, ds.bonds.size
    return TrainingDesign(
        F_X=np.concatenate(fx),
        y_X=np.concatenate(yx),
        F_E=np.concatenate(fe) if fe else np.zeros((0, edge_feature_dim(a, b))),
        y_E=np.concatenate(ye) if ye else np.zeros(0, dtype=np.intp),
        node_triple=np.concatenate(nt),
        edge_triple=np.concatenate(et) if et else np.zeros(0, dtype=np.intp),
        n_triples=triple,
    )


def objective_and_gradient(params: SoftmaxDenoiserParams, design: TrainingDesign,
                           gamma: float, rows_X=None, rows_E=None, n_triples=None):
    """Cross-entropy objective and its exact gradient on (a subset of) the design.

    The edge term is weighted by gamma; both terms are averaged over the
    number of triples so the scale is per-example.
    """
    if rows_X is None:
        rows_X = slice(None)
        rows_E = slice(None)
        n_triples = design.n_triples
    F_X, y_X = design.F_X[rows_X], design.y_X[rows_X]
    F_E, y_E = design.F_E[rows_E], design.y_E[rows_E]

    pX = _softmax(F_X @ params.W_X.T + params.b_X)
    loss = -np.log(pX[np.arange(len(y_X)), y_X]).sum()
    gl = pX
    gl[np.arange(len(y_X)), y_X] -= 1.0
    gW_X = gl.T @ F_X
    gb_X = gl.sum(axis=0)

    if len(y_E):
        pE = _softmax(F_E @ params.W_E.T + params.b_E)
        loss += gamma * -np.log(pE[np.arange(len(y_E)), y_E]).sum()
        ge = pE
        ge[np.arange(len(y_E)), y_E] -= 1.0
        gW_E = gamma * (ge.T @ F_E)
        gb_E = gamma * ge.sum(axis=0)
    else:
        gW_E = np.zeros_like(params.W_E)
        gb_E = np.zeros_like(params.b_E)

    scale = 1.0 / n_triples
    grads = (gW_X * scale, gb_X * scale, gW_E * scale, gb_E * scale)
    return loss * scale, grads


def design_cross_entropy(params: SoftmaxDenoiserParams, design: TrainingDesign,
                         gamma: float) -> float:
    loss, _ = objective_and_gradient(params, design, gamma)
    return loss


def marginal_design_cross_entropy(m_X: np.ndarray, m_E: np.ndarray,
                                  design: TrainingDesign, gamma: float) -> float:
    """Objective value of the constant-marginal baseline on the same design."""
    loss = -np.log(m_X[design.y_X]).sum()
    if len(design.y_E):
        loss += gamma * -np.log(m_E[design.y_E]).sum()
    return loss / design.n_triples


def train_softmax_denoiser(ds: GraphDataset, nm: NoiseModel, gamma: float = 5.0,
                           epochs: int = 200, learn_rate: float = 0.2,
                           batch: int | None = None, seed: int = 0,
                           noisings_per_graph: int = 8,
                           ) -> tuple[SoftmaxDenoiserParams, list[float]]:
    """Fit the linear-softmax denoiser by (mini-batch) gradient descent.

    Returns the parameters and the full-design objective evaluated before
    training and after every epoch (length epochs + 1).  ``batch`` counts
    triples per mini-batch; None takes the whole design each step.
    """
    if gamma <= 0:
        raise DenoiserError("gamma must be positive")
    if epochs < 1:
        raise DenoiserError("epochs must be >= 1")
    design = build_training_design(ds, nm, noisings_per_graph, seed)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    params = SoftmaxDenoiserParams.zeros(ds.atoms.size, ds.bonds.size, nm.T,
                                         ds.bonds.bond_order)
    losses = [design_cross_entropy(params, design, gamma)]
    for epoch in range(epochs):
        if batch is None or batch >= design.n_triples:
            batches = [np.arange(design.n_triples)]
        else:
            order = rng.permutation(design.n_triples)
            batches = [order[i:i + batch] for i in range(0, design.n_triples, batch)]
        for members in batches:
            mask = np.zeros(design.n_triples, dtype=bool)
            mask[members] = True
            rows_X = mask[design.node_triple]
            rows_E = mask[design.edge_triple]
            _, (gW_X, gb_X, gW_E, gb_E) = objective_and_gradient(
                params, design, gamma, rows_X, rows_E, len(members))
            params.W_X -= learn_rate * gW_X
            params.b_X -= learn_rate * gb_X
            params.W_E -= learn_rate * gW_E
            params.b_E -= learn_rate * gb_E
        loss = design_cross_entropy(params, design, gamma)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"non-finite training loss at epoch {epoch + 1} "
                f"(learn_rate={learn_rate}, gamma={gamma}); reduce the learning rate")
        losses.append(loss)
    return params, losses
