"""Command-line front end: run simulations, generate trace scenarios,
validate configurations."""

from __future__ import annotations

import argparse
import logging
import math
import os
import statistics
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datasets, energy, orchestrator
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("greenfed")


def _build_dataset(cfg: RunConfig):
    data = cfg.data
    if data.dataset == "idx":
        train = datasets.load_idx_dataset(
            data.idx_train_images, data.idx_train_labels, data.num_classes
        )
        test = datasets.load_idx_dataset(
            data.idx_test_images, data.idx_test_labels, data.num_classes
        )
        return train, test
    train = datasets.synthetic_blobs(
        cfg.sim.seed, data.train_size, data.num_classes, data.image_size, data.noise
    )
    test = datasets.synthetic_blobs(
        cfg.sim.seed + 1_000_003, data.test_size, data.num_classes,
        data.image_size, data.noise, pattern_seed=cfg.sim.seed,
    )
    return train, test


def _partition(cfg: RunConfig, train):
    if cfg.data.partitioner == "dirichlet":
        return datasets.dirichlet_partition(
            train, cfg.sim.num_clients, cfg.data.beta, cfg.sim.seed
        )
    return datasets.balanced_noniid_partition(
        train, cfg.sim.num_clients, cfg.data.labels_per_user, cfg.sim.seed
    )


def _build_scenario(cfg: RunConfig, partitions) -> orchestrator.Scenario:
    traces = energy.load_solar_csv(cfg.traces.solar, cfg.traces.step_minutes)
    spare = energy.load_spare_csv(cfg.traces.spare)
    if cfg.traces.mapping:
        mapping = energy.load_mapping_csv(cfg.traces.mapping)
    else:
        placement = energy.assign_domains(cfg.sim.num_clients, sorted(traces), cfg.sim.seed)
        rng = np.random.default_rng(cfg.sim.seed)
        names = sorted(energy.HARDWARE_CLASSES)
        mapping = {
            c: (placement[c], names[int(rng.integers(len(names)))])
            for c in range(cfg.sim.num_clients)
        }
    domains = {d: energy.PowerDomain(d, tr) for d, tr in traces.items()}
    profiles = {}
    for cid in range(cfg.sim.num_clients):
        if cid not in mapping:
            raise ConfigError(f"no domain mapping for client {cid}")
        if cid not in spare:
            raise ConfigError(f"no spare-capacity trace for client {cid}")
        domain_id, hw = mapping[cid]
        profiles[cid] = energy.ClientProfile(
            client_id=cid,
            domain_id=domain_id,
            hardware=energy.HardwareClass.default(hw),
            spare_trace=spare[cid],
            partition_id=cid,
            batches_per_epoch=max(1, math.ceil(len(partitions[cid]) / cfg.sim.sgd.batch_size)),
        )
    return orchestrator.Scenario(domains=domains, profiles=profiles)


def _summary_row(mode, seed, records):
    accs = [r.accuracy for r in records]
    return {
        "mode": mode,
        "seed": seed,
        "max_accuracy": max(accs),
        "final_accuracy": accs[-1],
        "mean_accuracy": statistics.mean(accs),
        "std_accuracy": statistics.pstdev(accs),
        "total_kwh": records[-1].cumulative_kwh,
    }


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        print("error: --seeds must list at least one seed", file=sys.stderr)
        return 2
    modes = (
        [orchestrator.MODE_CAMA, orchestrator.MODE_BASELINE]
        if args.mode == "both"
        else [args.mode]
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for seed in seeds:
        run_cfg = RunConfig(
            sim=replace(cfg.sim, seed=seed), data=cfg.data, traces=cfg.traces
        )
        train, test = _build_dataset(run_cfg)
        partitions = _partition(run_cfg, train)
        scenario = _build_scenario(run_cfg, partitions)
        for mode in modes:
            log.info("running mode=%s seed=%d", mode, seed)
            result = orchestrator.run_simulation(
                run_cfg.sim, scenario, train, partitions, test, mode=mode
            )
            tag = f"{mode}_seed{seed}"
            orchestrator.write_rounds_csv(out / f"rounds_{tag}.csv", result.records)
            orchestrator.write_participants_csv(
                out / f"participants_{tag}.csv", result.records
            )
            rows.append(_summary_row(mode, seed, result.records))

    with open(out / "summary.csv", "w", newline="") as fh:
        fh.write("mode,seed,max_accuracy,final_accuracy,mean_accuracy,std_accuracy,total_kwh\n")
        for row in rows:
            fh.write(
                f"{row['mode']},{row['seed']},{row['max_accuracy']:.6f},"
                f"{row['final_accuracy']:.6f},{row['mean_accuracy']:.6f},"
                f"{row['std_accuracy']:.6f},{row['total_kwh']:.9f}\n"
            )
    print(f"wrote {len(rows)} run(s) to {out}")
    return 0


def cmd_gen_scenario(args) -> int:
    if args.peak > energy.DEFAULT_MAX_OUTPUT_W:
        print(
            f"error: --peak must be <= {energy.DEFAULT_MAX_OUTPUT_W:g} W",
            file=sys.stderr,
        )
        return 2
    if min(args.domains, args.clients, args.days) < 1:
        print("error: --domains, --clients and --days must be positive", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = {
        d: energy.synth_solar_trace(
            args.seed * 1000 + d, args.days, args.step_minutes, args.peak
        )
        for d in range(args.domains)
    }
    steps = len(traces[0])
    rng = np.random.default_rng(args.seed)
    spare = {
        c: np.round(rng.uniform(args.spare / 2, args.spare, size=steps), 3)
        for c in range(args.clients)
    }
    placement = energy.assign_domains(args.clients, sorted(traces), args.seed)
    names = sorted(energy.HARDWARE_CLASSES)
    mapping = {
        c: (placement[c], names[int(rng.integers(len(names)))])
        for c in range(args.clients)
    }
    energy.write_solar_csv(out / "solar.csv", traces)
    energy.write_spare_csv(out / "spare.csv", spare)
    energy.write_mapping_csv(out / "clients.csv", mapping)
    print(f"wrote solar.csv ({args.domains} domains x {steps} steps), "
          f"spare.csv ({args.clients} clients), clients.csv to {out}")
    return 0


def cmd_validate(args) -> int:
    problems = []
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"FAIL config: {exc}")
        return 0
    if cfg.data.partitioner == "dirichlet" and cfg.data.beta <= 0:
        problems.append(f"partitioner: beta must be > 0, got {cfg.data.beta}")
    needed = cfg.sim.trace_start_step + cfg.sim.rounds * cfg.sim.round_window_steps
    for name, loader in (("solar", energy.load_solar_csv), ("spare", energy.load_spare_csv)):
        path = getattr(cfg.traces, name)
        if not path:
            problems.append(f"traces: no {name} trace configured")
            continue
        try:
            series = loader(path)
        except (OSError, energy.TraceError) as exc:
            problems.append(f"traces: {exc}")
            continue
        for key, tr in series.items():
            length = len(tr)
            if length < needed:
                problems.append(
                    f"traces: {name} trace for {key} covers {length} steps, "
                    f"run needs {needed} ({needed - length} short)"
                )
    if problems:
        for p in problems:
            print(f"FAIL {p}")
    else:
        print("OK")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("GREENFED_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = argparse.ArgumentParser(
        prog="greenfed",
        description="Energy-aware federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run simulations and write CSVs")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seeds", default="0", help="comma-separated seed list")
    p_run.add_argument(
        "--mode",
        choices=[orchestrator.MODE_CAMA, orchestrator.MODE_BASELINE, "both"],
        default=orchestrator.MODE_CAMA,
    )
    p_run.add_argument("--out", required=True)
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("gen-scenario", help="write synthetic trace files")
    p_gen.add_argument("--domains", type=int, default=10)
    p_gen.add_argument("--clients", type=int, default=100)
    p_gen.add_argument("--days", type=int, default=1)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--peak", type=float, default=energy.DEFAULT_MAX_OUTPUT_W)
    p_gen.add_argument("--step-minutes", type=float, default=5.0)
    p_gen.add_argument("--spare", type=float, default=10.0,
                       help="upper bound on spare batches per timestep")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_scenario)

    p_val = sub.add_parser("validate", help="dry-run config and trace checks")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, energy.TraceError, datasets.IdxFormatError,
            datasets.PartitionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
