"""Reverse process: prior draw, marginalized reverse step, generation loop.

Each reverse step mixes the single-step posteriors over the denoiser's
clean-state prediction.  Candidate clean categories whose forward likelihood
of the observed state is zero contribute nothing; the surviving mixture mass
is renormalized.  Guidance, when active, perturbs either the clean-state
prediction (default) or the reverse-step rows themselves.
"""

from __future__ import annotations

import numpy as np

from .denoise import DenoiserOutput, assemble_edge_tensor
from .graphs import GraphState, sample_discrete, upper_triangle_indices
from .guidance import GuidanceSpec, apply_guidance, estimate_guidance_gradient
from .noise import NoiseModel

# The reverse-step output has the same container shape as a denoiser
# prediction: stochastic node rows and symmetric edge fibers.
ReverseStepDistribution = DenoiserOutput


class SamplerError(RuntimeError):
    pass


def sample_prior(n: int, nm: NoiseModel, rng: np.random.Generator) -> GraphState:
    """Fully noised starting point: marginal draws for nodes and pairs."""
    if n < 1:
        raise SamplerError("node count must be >= 1")
    iu, _ = upper_triangle_indices(n)
    soft = GraphState(
        X=np.tile(nm.m_X, (n, 1)),
        E=assemble_edge_tensor(np.tile(nm.m_E, (iu.size, 1)), n, nm.b),
        mode="soft",
    )
    return sample_discrete(soft, rng)


def reverse_step_distribution(gt: GraphState, t: int, dn: DenoiserOutput,
                              nm: NoiseModel) -> ReverseStepDistribution:
    """Mix single-step posteriors over the predicted clean distributions."""
    P_X, P_E = nm.posterior_tensors(t)
    xt = gt.node_categories()
    rows = np.einsum("nx,nxj->nj", dn.pX, P_X[xt])
    mass = rows.sum(axis=1)
    if np.any(mass <= 0.0):
        bad = int(np.argmin(mass))
        raise SamplerError(f"all clean-state contributions dropped for node {bad} at t={t}")
    rows /= mass[:, None]
    iu, ju = upper_triangle_indices(gt.n)
    if iu.size:
        et = gt.edge_categories()[iu, ju]
        fibers = np.einsum("pe,pej->pj", dn.pE[iu, ju, :], P_E[et])
        emass = fibers.sum(axis=1)
        if np.any(emass <= 0.0):
            bad = int(np.argmin(emass))
            raise SamplerError(
                f"all clean-state contributions dropped for edge ({iu[bad]},{ju[bad]}) at t={t}")
        fibers /= emass[:, None]
    else:
        fibers = np.zeros((0, nm.b))
    return ReverseStepDistribution(pX=rows, pE=assemble_edge_tensor(fibers, gt.n, nm.b))


def draw_node_count(histogram: dict[int, float], rng: np.random.Generator) -> int:
    """Sample a molecule size from the dataset's node-count histogram."""
    sizes = np.array(sorted(histogram))
    probs = np.array([histogram[s] for s in sizes])
    u = rng.random()
    return int(sizes[min((np.cumsum(probs) <= u).sum(), len(sizes) - 1)])


def generate(n: int, nm: NoiseModel, dn, rng: np.random.Generator,
             guide: GuidanceSpec | None = None, atoms=None, bonds=None,
             guide_at: str = "x0") -> GraphState:
    """Run the full T-step reverse chain and return a discrete graph.

    ``dn`` is any callable (state, t) -> DenoiserOutput.  When a guidance
    spec with positive scale is given, its gradient (estimated from sampled
    clean graphs) is applied at ``guide_at``: the clean-state prediction
    ("x0", default) or the reverse-step distribution ("xtm1").  A zero-scale
    or absent guide leaves the chain byte-identical to unguided sampling.
    """
    if guide_at not in ("x0", "xtm1"):
        raise SamplerError(f"guide_at must be 'x0' or 'xtm1', got {guide_at!r}")
    guiding = guide is not None and guide.lam > 0.0
    if guiding and (atoms is None or bonds is None):
        raise SamplerError("guided generation needs the vocabularies")
    state = sample_prior(n, nm, rng)
    for t in range(nm.T, 0, -1):
        try:
            p_hat = dn(state, t)
            grad = None
            if guiding:
                grad = estimate_guidance_gradient(p_hat, guide, atoms, bonds, rng)
                if guide_at == "x0":
                    p_hat = apply_guidance(p_hat, grad, guide.lam)
            step = reverse_step_distribution(state, t, p_hat, nm)
            if guiding and guide_at == "xtm1":
                step = apply_guidance(step, grad, guide.lam)
            state = sample_discrete(step.as_soft_state(), rng)
        except Exception as exc:
            raise SamplerError(f"reverse step failed at t={t}: {exc}") from exc
    return state
