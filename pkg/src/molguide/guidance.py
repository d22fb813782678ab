"""Training-free property guidance for categorical graph states.

A guidance function maps a graph to a scalar; its squared distance to a
target drives an additive update of the predicted clean-state distributions:
subtract the scaled loss gradient, clamp negatives, renormalize.  Because
the built-in functions are linear in the node matrix, their derivative is
constant and evaluating it at a sampled graph (straight-through) is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chem import AtomVocabulary, EdgeVocabulary
from .denoise import DenoiserOutput, assemble_edge_tensor
from .graphs import GraphState, project_rows, sample_discrete, upper_triangle_indices

FUNCTIONS = ("proportion", "weight", "bonds")


class GuidanceError(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceSpec:
    """Which property to steer, toward what value, and how hard.

    ``samples`` is the number of clean-graph draws averaged per gradient
    estimate (one is usually enough).  ``atom_index`` is only meaningful for
    the proportion function.
    """

    function: str
    target: float
    lam: float
    samples: int = 1
    atom_index: int = 0
    lambda_schedule: str = "constant"

    def __post_init__(self):
        if self.function not in FUNCTIONS:
            raise GuidanceError(f"unknown guidance function {self.function!r}")
        if self.lam < 0:
            raise GuidanceError("lambda must be non-negative")
        if self.samples < 1:
            raise GuidanceError("samples must be >= 1")
        if self.function == "proportion" and not 0.0 <= self.target <= 1.0:
            raise GuidanceError("proportion target must lie in [0, 1]")
        if self.lambda_schedule != "constant":
            raise GuidanceError(f"unsupported lambda schedule {self.lambda_schedule!r}")


@dataclass
class GuidanceGradient:
    """Loss gradient with respect to node rows and edge fibers."""

    gX: np.ndarray  # (n, a)
    gE: np.ndarray  # (n, n, b)

    def validate(self):
        if not (np.all(np.isfinite(self.gX)) and np.all(np.isfinite(self.gE))):
            raise GuidanceError("non-finite gradient")
        if not np.array_equal(self.gE, np.transpose(self.gE, (1, 0, 2))):
            raise GuidanceError("edge gradient not symmetric")


def eval_atom_proportion(g: GraphState, k: int) -> float:
    """Fraction of nodes of type k; linear in X so soft states work too."""
    if g.n < 1:
        raise GuidanceError("graph has no nodes")
    return float(g.X[:, k].mean())


def eval_molecular_weight(g: GraphState, atoms: AtomVocabulary) -> float:
    """Total mass of the heavy atoms: node one-hots times per-type weights."""
    if g.n < 1:
        raise GuidanceError("graph has no nodes")
    return float((g.X @ atoms.weight_array()).sum())


def eval_bond_count(g: GraphState, bonds: EdgeVocabulary) -> float:
    """Order-weighted bond total over unordered pairs (edge-pathway extension)."""
    iu, ju = upper_triangle_indices(g.n)
    if iu.size == 0:
        return 0.0
    return float((g.E[iu, ju, :] @ bonds.order_array()).sum())


def _property_value_and_derivative(g: GraphState, spec: GuidanceSpec,
                                   atoms: AtomVocabulary, bonds: EdgeVocabulary):
    """(f(g), df/dX rows, df/dE per unordered pair) for the chosen function."""
    n, a, b = g.n, g.a, g.b
    dX = np.zeros((n, a))
    dE_pair = np.zeros(b)
    if spec.function == "proportion":
        f = eval_atom_proportion(g, spec.atom_index)
        dX[:, spec.atom_index] = 1.0 / n
    elif spec.function == "weight":
        f = eval_molecular_weight(g, atoms)
        dX[:] = atoms.weight_array()
    else:
        f = eval_bond_count(g, bonds)
        dE_pair = bonds.order_array().copy()
    return f, dX, dE_pair


def loss_and_gradient(g0_hat: GraphState, spec: GuidanceSpec, atoms: AtomVocabulary,
                      bonds: EdgeVocabulary) -> tuple[float, GuidanceGradient]:
    """Squared-error loss (f(g) - y)^2 and its gradient at the sampled graph.

    The sampling step is treated as the identity for differentiation; the
    built-in properties are linear, so the derivative is exact wherever it
    is evaluated.  The per-pair edge derivative is mirrored onto both (i, j)
    and (j, i) fibers.
    """
    f, dX, dE_pair = _property_value_and_derivative(g0_hat, spec, atoms, bonds)
    residual = 2.0 * (f - spec.target)
    gX = residual * dX
    gE = np.zeros_like(g0_hat.E)
    if np.any(dE_pair != 0.0):
        iu, ju = upper_triangle_indices(g0_hat.n)
        gE[iu, ju, :] = residual * dE_pair
        gE[ju, iu, :] = residual * dE_pair
    return (f - spec.target) ** 2, GuidanceGradient(gX=gX, gE=gE)


def estimate_guidance_gradient(p_hat: DenoiserOutput, spec: GuidanceSpec,
                               atoms: AtomVocabulary, bonds: EdgeVocabulary,
                               rng: np.random.Generator) -> GuidanceGradient:
    """Average the loss gradient over clean graphs sampled from p_hat."""
    soft = p_hat.as_soft_state()
    gX = np.zeros_like(p_hat.pX)
    gE = np.zeros_like(p_hat.pE)
    for _ in range(spec.samples):
        g0_hat = sample_discrete(soft, rng)
        _, grad = loss_and_gradient(g0_hat, spec, atoms, bonds)
        gX += grad.gX
        gE += grad.gE
    return GuidanceGradient(gX=gX / spec.samples, gE=gE / spec.samples)


def apply_guidance(p_hat: DenoiserOutput, grad: GuidanceGradient,
                   lam: float) -> DenoiserOutput:
    """Shift distributions against the gradient, clamp, renormalize.

    Rows whose clamped mass vanishes fall back to the unguided row.  With
    lam == 0 the input is returned unchanged (exact identity).
    """
    if lam < 0:
        raise GuidanceError("lambda must be non-negative")
    if lam == 0.0:
        return p_hat.copy()
    n, b = p_hat.n, p_hat.pE.shape[2]
    pX = project_rows(p_hat.pX - lam * grad.gX, fallback=p_hat.pX)
    iu, ju = upper_triangle_indices(n)
    if iu.size:
        raw = p_hat.pE[iu, ju, :] - lam * grad.gE[iu, ju, :]
        fibers = project_rows(raw, fallback=p_hat.pE[iu, ju, :])
    else:
        fibers = np.zeros((0, b))
    return DenoiserOutput(pX=pX, pE=assemble_edge_tensor(fibers, n, b))
