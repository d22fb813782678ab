"""Command-line entry points: dataset generation, training, sampling, sweeps.

Every command writes a ``run-config.txt`` with the fully resolved options so
a run can be reproduced exactly; all outputs are deterministic functions of
the flags and seed (no timestamps).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import denoise, sweep as sweep_mod
from .chem import generate_synthetic_dataset, load_dataset, load_vocab, qm9_heavy_vocab, \
    save_dataset, save_vocab
from .denoise import BayesDenoiser, MarginalDenoiser, SoftmaxDenoiser
from .guidance import GuidanceSpec
from .noise import NoiseModel, cosine_schedule
from .sweep import SweepConfig, generate_cell, run_sweep, summarize
from .validity import check_validity, write_sdf

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 500
DEFAULT_COSINE_S = 0.008
DEFAULT_SWEEP_SAMPLES = 1024
QUICK_SWEEP_SAMPLES = 256
QUICK_STEPS = 100

PROPORTION_LAMBDAS = "0,1,10,100,1000,10000,100000"
WEIGHT_LAMBDAS = "0,0.0001,0.001,0.01,0.1,0.2"


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def _add_model(p: argparse.ArgumentParser):
    p.add_argument("--steps", type=int, default=DEFAULT_STEPS, help="diffusion timesteps T")
    p.add_argument("--cosine-s", type=float, default=DEFAULT_COSINE_S,
                   help="cosine schedule offset")
    p.add_argument("--data", type=Path, required=True, help="dataset text file")
    p.add_argument("--vocab", type=Path, default=None,
                   help="vocabulary file (default: built-in heavy-atom alphabet)")


def _add_denoiser(p: argparse.ArgumentParser):
    p.add_argument("--denoiser", choices=("bayes", "softmax", "marginal"), default="bayes")
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="trained denoiser checkpoint (softmax only)")
    p.add_argument("--bayes-perms", type=int, default=0,
                   help="random node permutations averaged per training graph")


def _add_guidance(p: argparse.ArgumentParser):
    p.add_argument("--guide", choices=("none", "proportion", "weight", "bonds"),
                   default="none")
    p.add_argument("--guide-atom", default="C", help="atom symbol for proportion guidance")
    p.add_argument("--target", type=float, default=None, help="guidance target value")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="guidance scale")
    p.add_argument("--guide-samples", type=int, default=1,
                   help="clean-graph draws per gradient estimate")
    p.add_argument("--guide-at", choices=("x0", "xtm1"), default="x0",
                   help="apply guidance to the clean prediction or the reverse step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="molguide",
        description="Discrete graph diffusion with training-free property guidance",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="write a synthetic valence-valid dataset")
    _add_common(p)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--max-nodes", type=int, default=6)

    p = sub.add_parser("train", help="fit the softmax denoiser")
    _add_common(p)
    _add_model(p)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learn-rate", type=float, default=0.2)
    p.add_argument("--gamma", type=float, default=5.0, help="edge loss weight")
    p.add_argument("--batch", type=int, default=None, help="triples per mini-batch")
    p.add_argument("--noisings", type=int, default=8, help="noisy replicas per graph")

    p = sub.add_parser("sample", help="generate molecules")
    _add_common(p)
    _add_model(p)
    _add_denoiser(p)
    _add_guidance(p)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--nodes", type=int, default=None,
                   help="fixed molecule size (default: draw from the dataset histogram)")

    p = sub.add_parser("sweep", help="run a (target, lambda) experiment grid")
    _add_common(p)
    _add_model(p)
    _add_denoiser(p)
    _add_guidance(p)
    p.add_argument("--targets", default=None, help="comma-separated target values")
    p.add_argument("--lambdas", default=None, help="comma-separated guidance scales")
    p.add_argument("--samples", type=int, default=None, help="molecules per cell")
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--quick", action="store_true",
                   help=f"CI mode: {QUICK_SWEEP_SAMPLES} samples and T={QUICK_STEPS}")
    p.add_argument("--keep-molecules", action="store_true",
                   help="also write every generated molecule to molecules.sdf")

    p = sub.add_parser("report", help="print the console table for a sweep CSV")
    p.add_argument("csv", type=Path)

    return parser


def _load_inputs(args):
    if args.vocab is not None:
        atoms, bonds = load_vocab(args.vocab)
    else:
        atoms, bonds = qm9_heavy_vocab()
    ds = load_dataset(args.data, atoms, bonds)
    from .chem import compute_marginals

    m_X, m_E = compute_marginals(ds)
    steps = QUICK_STEPS if getattr(args, "quick", False) else args.steps
    nm = NoiseModel(cosine_schedule(steps, args.cosine_s), m_X, m_E)
    return ds, nm


def _make_denoiser(args, ds, nm):
    if args.denoiser == "bayes":
        return BayesDenoiser(ds, nm, perms=args.bayes_perms, perm_seed=args.seed)
    if args.denoiser == "marginal":
        return MarginalDenoiser(ds)
    if args.checkpoint is None:
        raise SystemExit("--denoiser softmax requires --checkpoint")
    params = denoise.load_params(args.checkpoint)
    if params.T != nm.T:
        logger.warning("checkpoint was trained with T=%d but sampling uses T=%d",
                       params.T, nm.T)
    return SoftmaxDenoiser(params)


def _guidance_spec(args, ds) -> GuidanceSpec | None:
    if args.guide == "none":
        return None
    if args.target is None:
        raise SystemExit("--guide requires --target")
    return GuidanceSpec(
        function=args.guide,
        target=args.target,
        lam=args.lam,
        samples=args.guide_samples,
        atom_index=ds.atoms.index(args.guide_atom),
    )


def _write_run_config(args, out: Path):
    skip = {"out"}
    lines = [
        f"{key}={value}"
        for key, value in sorted(vars(args).items())
        if key not in skip
    ]
    (out / "run-config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_gen_dataset(args):
    atoms, bonds = qm9_heavy_vocab()
    ds = generate_synthetic_dataset(atoms, bonds, args.count, args.max_nodes, args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "dataset.txt")
    save_vocab(atoms, bonds, out / "vocab.txt")
    _write_run_config(args, out)
    print(f"wrote {len(ds)} graphs to {out / 'dataset.txt'}")
    return 0


def _cmd_train(args):
    ds, nm = _load_inputs(args)
    params, losses = denoise.train_softmax_denoiser(
        ds, nm, gamma=args.gamma, epochs=args.epochs, learn_rate=args.learn_rate,
        batch=args.batch, seed=args.seed, noisings_per_graph=args.noisings)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    denoise.save_params(params, out / "denoiser.json")
    _write_run_config(args, out)
    print(f"initial loss {losses[0]:.6f}, final loss {losses[-1]:.6f}")
    print(f"wrote checkpoint to {out / 'denoiser.json'}")
    return 0


def _cmd_sample(args):
    ds, nm = _load_inputs(args)
    dn = _make_denoiser(args, ds, nm)
    guide = _guidance_spec(args, ds)
    molecules = generate_cell(ds, nm, dn, args.seed, args.count, guide,
                              args.guide_at, args.nodes)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "molecules.sdf").write_text(write_sdf(molecules, ds.atoms, ds.bonds),
                                       encoding="utf-8")
    lines = ["index,n_nodes,mol_weight,valid,fragments"]
    from .guidance import eval_molecular_weight

    for i, g in enumerate(molecules):
        report = check_validity(g, ds.atoms, ds.bonds)
        lines.append(f"{i},{g.n},{eval_molecular_weight(g, ds.atoms):.4f},"
                     f"{int(report.valid)},{report.fragment_count}")
    (out / "molecules.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_run_config(args, out)
    print(f"wrote {len(molecules)} molecules to {out / 'molecules.sdf'}")
    return 0


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


def _cmd_sweep(args):
    ds, nm = _load_inputs(args)
    dn = _make_denoiser(args, ds, nm)
    if args.guide == "none":
        raise SystemExit("sweep requires --guide proportion|weight|bonds")
    if args.targets is not None:
        targets = _parse_floats(args.targets)
    elif args.guide == "proportion":
        targets = (1.0, 0.0)
    else:
        raise SystemExit(f"--guide {args.guide} requires explicit --targets")
    if args.lambdas is not None:
        lambdas = _parse_floats(args.lambdas)
    else:
        lambdas = _parse_floats(
            PROPORTION_LAMBDAS if args.guide == "proportion" else WEIGHT_LAMBDAS)
    samples = args.samples
    if samples is None:
        samples = QUICK_SWEEP_SAMPLES if args.quick else DEFAULT_SWEEP_SAMPLES
    cfg = SweepConfig(
        function=args.guide, targets=targets, lambdas=lambdas, samples=samples,
        seed=args.seed, atom_symbol=args.guide_atom, guide_samples=args.guide_samples,
        guide_at=args.guide_at, nodes=args.nodes,
    )
    result = run_sweep(cfg, ds, nm, dn, keep_molecules=args.keep_molecules)
    csv_text, table = summarize(result.rows)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(csv_text, encoding="utf-8")
    if args.keep_molecules:
        flat, names = [], []
        for (target, lam), cell in result.molecules.items():
            for i, g in enumerate(cell):
                flat.append(g)
                names.append(f"target{target:g}-lambda{lam:g}-{i:05d}")
        (out / "molecules.sdf").write_text(
            write_sdf(flat, ds.atoms, ds.bonds, names), encoding="utf-8")
    _write_run_config(args, out)
    print(table, end="")
    return 0


def _cmd_report(args):
    rows = sweep_mod.parse_summary(args.csv.read_text(encoding="utf-8"))
    _, table = summarize(rows)
    print(table, end="")
    return 0


_COMMANDS = {
    "gen-dataset": _cmd_gen_dataset,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
