"""Command-line entry point.

Subcommands: train, eval, forces, gradcheck, ablate-basis, attn-dump.
All artifacts are files; numeric CSV output keeps 17 significant digits.
Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
The environment variable ``GEOATTN_OUT_DIR`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .attention import AttentionRecord, format_attention_csv
from .config import SCHEMA, RunConfig
from .data import (Dataset, load_dataset, parse_xyz_frames, split_dataset,
                   write_xyz_frames)
from .errors import ConfigError, DataError, UsageError
from .geometry import Molecule, distance_matrix
from .gradcheck import force_gradcheck
from .model import GeoTModel, load_checkpoint, save_checkpoint
from .training import energy_mae, generate_synthetic, train


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for key in SCHEMA:
        parser.add_argument(f"--{key}", dest=f"cfg_{key}", default=None,
                            metavar="V", help=argparse.SUPPRESS)


def _run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg = RunConfig.load(path)
    else:
        cfg = RunConfig()
    overrides = {key: getattr(args, f"cfg_{key}")
                 for key in SCHEMA if getattr(args, f"cfg_{key}", None) is not None}
    cfg = cfg.override(overrides)
    env_out = os.environ.get("GEOATTN_OUT_DIR")
    if env_out:
        cfg = cfg.override({"out_dir": env_out})
    return cfg


def _build_dataset(cfg: RunConfig) -> Dataset:
    if cfg["data_path"]:
        if not Path(cfg["data_path"]).exists():
            raise ConfigError(f"dataset not found: {cfg['data_path']}")
        return load_dataset(cfg["data_path"], cfg.fractions(), cfg["seed"])
    data = generate_synthetic(cfg.synthetic_spec(), seed=cfg["seed"])
    return split_dataset(data, cfg.fractions(), cfg["seed"])


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(cfg)
    dataset = _build_dataset(cfg)
    model = GeoTModel.init(cfg.model_config(), seed=cfg["seed"])
    result = train(model, dataset, cfg.train_config())
    (out / "metrics.csv").write_text(result.metrics_csv())
    save_checkpoint(model, out / "final.npz")
    if result.best_checkpoint is not None:
        (out / "best.npz").write_bytes(result.best_checkpoint)
    if result.stopped == "diverged":
        print("training diverged; last good checkpoint kept", file=sys.stderr)
        return 1
    print(f"trained {result.steps_run} steps ({result.stopped}); "
          f"best val MAE {result.best_val_mae:.6g}; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    with open(args.data) as fh:
        mols = parse_xyz_frames(fh.read())
    labeled = [m for m in mols if m.energy is not None]
    if not labeled:
        raise UsageError("no labeled molecules to evaluate")
    rows = [("energy", energy_mae(model, labeled))]
    with_forces = [m for m in labeled if m.forces is not None]
    if with_forces:
        errs = []
        for m in with_forces:
            pred = model.forces(m)
            if model.config.force_sign == "paper":
                pred = -pred     # labels are physical forces
            errs.append(np.mean(np.abs(pred - m.forces)))
        rows.append(("forces", float(np.mean(errs))))
    lines = ["target,mae"] + [f"{t},{v:.17g}" for t, v in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    for t, v in rows:
        print(f"MAE[{t}] = {v:.8g}")
    return 0


def cmd_forces(args) -> int:
    model = load_checkpoint(args.checkpoint)
    model.config.force_sign = args.sign
    with open(args.xyz) as fh:
        mols = parse_xyz_frames(fh.read())
    out_mols = []
    for mol in mols:
        energy, coords = model.forward_parts(mol)
        forces = model.forces(mol)
        out_mols.append(Molecule(mol.atomic_numbers, mol.coords,
                                 energy=energy.item(), forces=forces))
    text = write_xyz_frames(out_mols)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = None
    if args.config:
        cfg = _run_config(args).model_config()
    if args.trials == 0:
        print("warning: 0 trials requested; nothing checked, trivially passing")
        return 0
    report = force_gradcheck(n_trials=args.trials, seed=args.seed, config=cfg)
    for i, err in enumerate(report.per_trial):
        print(f"trial {i}: rel err {err:.3e}")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict}: max rel err {report.max_rel_error:.3e} "
          f"(threshold {report.threshold:g})")
    return 0 if report.passed else 1


def cmd_ablate_basis(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(cfg)
    dataset = _build_dataset(cfg)
    rows = []
    for kind in ("gaussian", "linear", "bessel"):
        run = cfg.override({"basis_kind": kind})
        model = GeoTModel.init(run.model_config(), seed=run["seed"])
        result = train(model, dataset, run.train_config())
        rows.append((kind, result.best_val_mae))
        print(f"{kind}: val MAE {result.best_val_mae:.6g}")
    text = "basis,val_mae\n" + "".join(f"{k},{v:.17g}\n" for k, v in rows)
    (out / "ablation.csv").write_text(text)
    return 0


def cmd_attn_dump(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if model.config.use_softmax_baseline:
        raise ConfigError("attention dump needs the geometry-gated path")
    with open(args.xyz) as fh:
        mol = parse_xyz_frames(fh.read())[0]
    trace: list[AttentionRecord] = []
    model.forward_parts(mol, trace=trace)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    attn_path = Path(f"{prefix}_attention.csv")
    attn_path.write_text(format_attention_csv(trace))
    dist = distance_matrix(mol.coords)
    lines = ["layer,i,j,distance,norm"]
    for rec in trace:
        norm = rec.norm_map()
        n = norm.shape[0]
        for i in range(n):
            for j in range(n):
                lines.append(f"{rec.layer},{i},{j},{dist[i, j]:.17g},{norm[i, j]:.17g}")
    pairs_path = Path(f"{prefix}_pairs.csv")
    pairs_path.write_text("\n".join(lines) + "\n")
    print(f"wrote {attn_path} and {pairs_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geoattn",
        description="Geometry-gated transformer for molecular energies and forces")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("config", help="path to a key = value run config")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="report MAE of a checkpoint on an XYZ file")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--out", default=None, help="also write a CSV report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("forces", help="predict energy and forces for XYZ input")
    p.add_argument("checkpoint")
    p.add_argument("xyz")
    p.add_argument("--sign", choices=("paper", "physical"), default="paper")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_forces)

    p = sub.add_parser("gradcheck", help="finite-difference force verification")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None,
                   help="optional run config fixing the architecture")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate-basis",
                       help="train one model per basis family, same budget and seed")
    p.add_argument("config")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_ablate_basis)

    p = sub.add_parser("attn-dump", help="export head-averaged attention maps")
    p.add_argument("checkpoint")
    p.add_argument("xyz")
    p.add_argument("--out-prefix", default="attn")
    p.set_defaults(fn=cmd_attn_dump)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:   # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
