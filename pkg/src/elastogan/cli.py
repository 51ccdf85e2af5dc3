"""Command-line entry point: generate-data, train, evaluate, sweep.

Every command is deterministic given the config file and its seeds; outputs
embed the config fingerprint so downstream stages can refuse mismatched
inputs. Exit codes: 0 success, 2 validation failure, 3 numerical failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, fingerprint_diff
from .container import ContainerError
from .evaluate import (
    ReferenceStatistics,
    SweepCell,
    build_report,
    ensemble_from_generator,
    moment_fields,
    relative_l2_error,
    write_report,
    write_sweep_report,
)
from .fem import DatasetGenerationError, SnapshotDataset, SolverError, generate_dataset
from .randomfield import EigensolverError
from .training import (
    TrainingDivergedError,
    latest_checkpoint,
    load_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig.from_dict({})
    return _apply_overrides(cfg, args)


_FIELD_OVERRIDES = {
    "correlation_length": ("field", "correlation_length", float),
    "kl_terms": ("field", "kl_terms", int),
    "alpha": ("field", "alpha", float),
    "beta": ("field", "beta", float),
    "kl_grid": ("field", "kl_grid", str),
    "n_snapshots": ("data", "n_snapshots", int),
    "mesh": ("data", "mesh", str),
    "seed": ("seeds", "data", int),
    "steps": ("training", "total_steps", int),
}


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    data = cfg.to_dict()
    changed = False
    for arg_name, (section, key, cast) in _FIELD_OVERRIDES.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            data.setdefault(section, {})[key] = cast(value)
            changed = True
    return RunConfig.from_dict(data) if changed else cfg


def cmd_generate_data(args) -> int:
    cfg = _load_config(args)
    model = cfg.build_field_model()
    dataset = generate_dataset(
        model,
        cfg.mesh_spec(),
        cfg.boundary_load(),
        cfg.sensor_grid(),
        cfg.data.n_snapshots,
        seed=cfg.seeds.data,
        nu=cfg.elasticity.nu,
        n_workers=args.threads,
        fingerprint=cfg.fingerprint(),
        config=cfg.data_identity(),
    )
    dataset.save(args.out)
    print(f"wrote {cfg.data.n_snapshots} snapshots x {dataset.n_sensors} sensors "
          f"to {args.out}")
    if args.csv_out:
        dataset.export_csv(args.csv_out)
        print(f"wrote CSV export to {args.csv_out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    dataset = SnapshotDataset.load(args.data)
    if dataset.fingerprint and dataset.fingerprint != cfg.fingerprint():
        lines = fingerprint_diff(cfg.data_identity(), dataset.config)
        print("dataset fingerprint does not match config:", file=sys.stderr)
        for line in lines or ["  (identity fields differ)"]:
            print(line, file=sys.stderr)
        return EXIT_VALIDATION

    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.yaml")

    result = train(
        cfg.training_config(args.steps),
        dataset,
        colloc=cfg.collocation_set(),
        load=cfg.boundary_load(),
        run_dir=run_dir,
        resume=args.resume,
        fingerprint=cfg.fingerprint(),
    )
    print(f"trained to step {result.final_step}; run directory {run_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else latest_checkpoint(args.run_dir)
    if ckpt_path is None or not Path(ckpt_path).is_file():
        raise FileNotFoundError(f"no checkpoint found in {args.run_dir}")
    _, nets, _, _ = load_checkpoint(ckpt_path)

    grid = cfg.evaluation_grid()
    seeds = np.random.SeedSequence(cfg.seeds.evaluation).spawn(2)
    generated = ensemble_from_generator(
        nets["gen_e"], grid, cfg.evaluation.n_generated, seeds[0]
    )
    model = cfg.build_field_model()
    reference = ReferenceStatistics.from_model(
        model, grid, cfg.evaluation.n_reference, seeds[1]
    )
    report = build_report(
        generated,
        reference,
        pdf_points=[tuple(p) for p in cfg.evaluation.pdf_points],
        sections=dict(cfg.evaluation.correlation_sections),
        anchor_x1=cfg.evaluation.correlation_anchor_x1,
        meta={"checkpoint": str(ckpt_path)},
    )
    files = write_report(report, args.report_dir)
    print(f"rel_l2_mean={report.rel_l2_mean:.6f}")
    print(f"rel_l2_std={report.rel_l2_std:.6f}")
    print(f"wrote {len(files)} report files to {args.report_dir}")
    return EXIT_OK


def _sweep_trial(task: dict) -> tuple[float, float]:
    """One (value, trial) cell: generate data, train, score moment fields."""
    cfg = RunConfig.from_dict(task["config"])
    model = cfg.build_field_model()
    dataset = generate_dataset(
        model,
        cfg.mesh_spec(),
        cfg.boundary_load(),
        cfg.sensor_grid(),
        cfg.data.n_snapshots,
        seed=cfg.seeds.data,
        nu=cfg.elasticity.nu,
        fingerprint=cfg.fingerprint(),
        config=cfg.data_identity(),
    )
    result = train(
        cfg.training_config(),
        dataset,
        colloc=cfg.collocation_set(),
        load=cfg.boundary_load(),
    )
    grid = cfg.evaluation_grid()
    generated = ensemble_from_generator(
        result.gen_e, grid, cfg.evaluation.n_generated, cfg.seeds.evaluation
    )
    mean_gen, std_gen = moment_fields(generated)
    mean_ref, std_ref = model.analytic_moments(grid.points())
    return (
        relative_l2_error(mean_gen, mean_ref, grid),
        relative_l2_error(std_gen, std_ref, grid),
    )


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if cfg.sweep is None:
        raise ConfigError("config has no sweep section")
    sweep = cfg.sweep
    if args.trials is not None:
        sweep = replace(sweep, trials=args.trials)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks, labels = [], []
    for value in sweep.values:
        for trial in range(sweep.trials):
            data = cfg.to_dict()
            if sweep.parameter == "n_snapshots":
                data["data"]["n_snapshots"] = int(value)
            else:
                data["collocation"]["interior_grid"] = str(value)
            data["training"]["total_steps"] = sweep.total_steps
            stride = sweep.trial_seed_stride
            for key in ("data", "init", "noise"):
                data["seeds"][key] = data["seeds"][key] + stride * trial
            tasks.append({"config": data})
            labels.append((value, trial))

    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            errors = list(pool.map(_sweep_trial, tasks))
    else:
        errors = [_sweep_trial(t) for t in tasks]

    cells = []
    for value in sweep.values:
        trial_errors = [
            errors[i] for i, (v, _) in enumerate(labels) if v == value
        ]
        cells.append(SweepCell(sweep.parameter, value, trial_errors))
        em, es = cells[-1].mean_errors
        print(f"{sweep.parameter}={value}: rel_l2_mean={em:.4f} rel_l2_std={es:.4f}")

    write_sweep_report(cells, out_dir / "sweep_report.csv")
    print(f"wrote sweep report to {out_dir / 'sweep_report.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastogan",
        description="Adversarial inference of elastic-modulus random fields "
        "from displacement snapshots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate-data",
                         help="sample modulus fields, solve, record sensors")
    gen.add_argument("--config", help="YAML run configuration")
    gen.add_argument("--n-snapshots", type=int, dest="n_snapshots")
    gen.add_argument("--mesh", help="FEM mesh, e.g. 64x64")
    gen.add_argument("--seed", type=int, help="dataset generation seed")
    gen.add_argument("--correlation-length", type=float, dest="correlation_length")
    gen.add_argument("--kl-terms", type=int, dest="kl_terms")
    gen.add_argument("--alpha", type=float)
    gen.add_argument("--beta", type=float)
    gen.add_argument("--kl-grid", dest="kl_grid", help="KL eigenproblem grid, e.g. 25x25")
    gen.add_argument("--out", required=True, help="output dataset file")
    gen.add_argument("--csv-out", dest="csv_out", help="optional CSV export path")
    gen.add_argument("--threads", type=int, default=1,
                     help="worker processes for independent solves")
    gen.set_defaults(func=cmd_generate_data)

    tr = sub.add_parser("train", help="train the generators and critic")
    tr.add_argument("--config", help="YAML run configuration")
    tr.add_argument("--data", required=True, help="dataset file")
    tr.add_argument("--out", required=True, help="run directory")
    tr.add_argument("--steps", type=int, help="override training.total_steps")
    tr.add_argument("--resume", action="store_true",
                    help="continue from the latest checkpoint in the run directory")
    tr.add_argument("--threads", type=int, default=1,
                    help="accepted for symmetry; training is a single sequence")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="score a trained modulus generator")
    ev.add_argument("--run-dir", dest="run_dir", required=True)
    ev.add_argument("--config", help="YAML run configuration")
    ev.add_argument("--checkpoint", help="explicit checkpoint path")
    ev.add_argument("--report-dir", dest="report_dir", required=True)
    ev.set_defaults(func=cmd_evaluate)

    sw = sub.add_parser("sweep", help="error curves over measurement or "
                                      "collocation counts")
    sw.add_argument("--config", help="YAML run configuration with a sweep section")
    sw.add_argument("--trials", type=int, help="override sweep.trials")
    sw.add_argument("--out", required=True, help="output directory")
    sw.add_argument("--threads", type=int, default=1,
                    help="worker processes for independent trials")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDivergedError, SolverError, EigensolverError,
            DatasetGenerationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ContainerError, FileNotFoundError, OSError) as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
