"""Discrete diffusion over categorical molecular graphs with training-free guidance."""

from .chem import (
    AtomVocabulary,
    EdgeVocabulary,
    GraphDataset,
    compute_marginals,
    generate_synthetic_dataset,
    load_dataset,
    qm9_heavy_vocab,
    save_dataset,
)
from .denoise import (
    BayesDenoiser,
    DenoiserOutput,
    MarginalDenoiser,
    SoftmaxDenoiser,
    SoftmaxDenoiserParams,
    bayes_denoise,
    marginal_denoise,
    softmax_denoise,
    train_softmax_denoiser,
)
from .graphs import GraphState, argmax_discrete, project_simplex, sample_discrete
from .guidance import (
    GuidanceGradient,
    GuidanceSpec,
    apply_guidance,
    estimate_guidance_gradient,
    eval_atom_proportion,
    eval_bond_count,
    eval_molecular_weight,
    loss_and_gradient,
)
from .noise import NoiseModel, NoiseSchedule, cosine_schedule, forward_noise, \
    posterior_step, transition_matrix
from .sampling import generate, reverse_step_distribution, sample_prior
from .sweep import SweepConfig, SweepRow, run_sweep, summarize
from .validity import ValidityReport, check_validity, read_molfile, write_molfile

__version__ = "0.1.0"
