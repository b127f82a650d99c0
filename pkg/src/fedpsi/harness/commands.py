"""Implementations behind the four ``fedpsi`` subcommands.

Sub-seeds derived from the master seed ``s`` (see :mod:`fedpsi.seeding`):

* partition of cell ``(k, r)``:  ``derive_seed(s, "partition", k, r)``
  (the same seed drives the protocol draw and the train/test split)
* training seed of repetition r: ``derive_seed(s, "train", r)``, shared by every
  method so that all methods start from the same initial parameters
* clustering seed:               ``derive_seed(s, "cluster", r)``
* centralized split:             ``derive_seed(s, "partition", "centralized", r)``
"""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..datasets import Dataset, label_histogram
from ..divergence import all_metrics
from ..errors import DivergedError, FedPsiError, InfeasiblePartition
from ..evaluation import AccuracyReport, ClientAccuracy, evaluate_clients, local_accuracy
from ..federation.models import init_params
from ..federation.training import Method, centralized_baseline, run_clust_psi_pfl, run_federation
from ..partition import ClientPartition, partition, split_train_test
from ..seeding import derive_seed
from .config import ConfigError, ExperimentConfig
from .io import param_label, write_csv_rows, write_json, write_model, write_text

log = logging.getLogger("fedpsi")

SWEEP_COLUMNS = ("protocol", "parameter", "seed", "k", "wpsi", "hd", "jsd", "emd")
SUMMARY_COLUMNS = ("run_id", "method", "protocol", "parameter", "seed", "global_accuracy", "ad", "sdad", "tau", "k")
LOCAL_COLUMNS = ("run_id", "method", "protocol", "parameter", "seed", "client_id", "n_test", "accuracy", "k")
CLUSTERED = frozenset({Method.CLUST_PSI_PFL.value})
SEED_DERIVATION = 'uint64 LE of blake2b-8("fedpsi|<master>|<role>|<indices...>")'


class RuntimeFailure(FedPsiError):
    """A command could not complete (missing inputs, unreadable files)."""


class SchemaError(ConfigError):
    """Summary files handed to compare do not share the expected columns."""


def cell_name(protocol: str, parameter: float, k: int, seed: int) -> str:
    return f"{protocol}-{param_label(parameter)}-k{k}-s{seed}"


def build_partition(cfg: ExperimentConfig, data: Dataset, protocol: str, parameter: float, k: int, r: int):
    """Split partition of one cell; raises InfeasiblePartition."""
    pseed = derive_seed(cfg.seed, "partition", k, r)
    raw = partition(data, protocol, parameter, k, pseed, min_samples_per_client=cfg.min_samples_per_client)
    return split_train_test(raw, data.labels, cfg.test_fraction, pseed)


# -------------------------------------------------------------------- partition


def cmd_partition(cfg: ExperimentConfig) -> dict:
    """Write one partition file per feasible cell plus ``partitions/manifest.json``."""
    data = cfg.load_dataset()
    out = Path(cfg.output_dir) / "partitions"
    cells = []
    for protocol, parameter, k, r in cfg.cells():
        name = cell_name(protocol, parameter, k, r)
        entry = {"cell": name, "protocol": protocol, "parameter": parameter, "k": k, "seed": r,
                 "partition_seed": derive_seed(cfg.seed, "partition", k, r)}
        try:
            part = build_partition(cfg, data, protocol, parameter, k, r)
        except InfeasiblePartition as exc:
            entry.update(status="infeasible", message=str(exc))
            log.info("%s infeasible: %s", name, exc)
        else:
            write_text(out / f"{name}.json", part.to_json())
            entry.update(status="ok", file=f"{name}.json")
        cells.append(entry)
    manifest = {"command": "partition", "config": cfg.resolved(), "seed_derivation": SEED_DERIVATION, "cells": cells}
    write_json(out / "manifest.json", manifest)
    return manifest


# -------------------------------------------------------------------- sweep


def _load_partitions(cfg: ExperimentConfig) -> dict[str, ClientPartition | None] | None:
    directory = Path(cfg.output_dir) / "partitions"
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        return None
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise RuntimeFailure(f"{manifest_path}: unreadable manifest ({exc})") from None
    entries = {e["cell"]: e for e in manifest.get("cells", [])}
    out: dict[str, ClientPartition | None] = {}
    for protocol, parameter, k, r in cfg.cells():
        name = cell_name(protocol, parameter, k, r)
        entry = entries.get(name)
        if entry is None:
            raise RuntimeFailure(f"missing partition for cell {name} (not in {manifest_path})")
        if entry["status"] != "ok":
            out[name] = None
            continue
        path = directory / entry["file"]
        try:
            out[name] = ClientPartition.load(path)
        except OSError:
            raise RuntimeFailure(f"missing partition for cell {name}: {path}") from None
        except (ValueError, KeyError) as exc:
            raise RuntimeFailure(f"corrupt partition for cell {name}: {path} ({exc})") from None
    return out


def cmd_sweep(cfg: ExperimentConfig) -> list[dict]:
    """Federation-level WPSI/HD/JSD/EMD per feasible cell, written to ``sweep.csv``.

    Partitions are read from a previous ``partition`` run when its manifest
    exists, otherwise generated on the fly. Metrics use each client's full
    label histogram (train and test).
    """
    data = cfg.load_dataset()
    stored = _load_partitions(cfg)
    rows = []
    for protocol, parameter, k, r in cfg.cells():
        name = cell_name(protocol, parameter, k, r)
        if stored is not None:
            part = stored[name]
        else:
            try:
                part = build_partition(cfg, data, protocol, parameter, k, r)
            except InfeasiblePartition:
                part = None
        if part is None:
            continue
        hist = [label_histogram(data.labels[part.client_indices(c)], data.num_classes) for c in range(k)]
        metrics = all_metrics(hist, cfg.epsilon)
        rows.append({"protocol": protocol, "parameter": parameter, "seed": r, "k": k, **metrics})
    write_csv_rows(Path(cfg.output_dir) / "sweep.csv", SWEEP_COLUMNS, ([row[c] for c in SWEEP_COLUMNS] for row in rows))
    return rows


# -------------------------------------------------------------------- train


@dataclass(frozen=True)
class Job:
    method: str
    protocol: str
    parameter: float
    k: int
    seed: int

    @property
    def run_id(self) -> str:
        if self.method == Method.CENTRALIZED.value:
            return f"{self.method}-s{self.seed}"
        return f"{self.method}-{cell_name(self.protocol, self.parameter, self.k, self.seed)}"


_DATA_CACHE: dict[int, Dataset] = {}


def _dataset(cfg: ExperimentConfig) -> Dataset:
    key = hash(repr(cfg.resolved()))
    if key not in _DATA_CACHE:
        _DATA_CACHE.clear()
        _DATA_CACHE[key] = cfg.load_dataset()
    return _DATA_CACHE[key]


def _centralized(cfg: ExperimentConfig, data: Dataset, job: Job, out: Path) -> dict:
    tcfg = cfg.train_config(Method.CENTRALIZED, derive_seed(cfg.seed, "train", job.seed))
    empty = np.empty(0, np.int64)
    pooled = ClientPartition(1, (np.arange(data.num_examples),), (empty,), "pooled", math.nan, 0)
    split = split_train_test(pooled, data.labels, cfg.test_fraction,
                             derive_seed(cfg.seed, "partition", "centralized", job.seed))
    model = centralized_baseline(data, tcfg, split.train_indices[0])
    test = split.test_indices[0]
    acc = local_accuracy(model, data.features[test], data.labels[test])
    write_model(out / "models" / f"{job.run_id}.bin", model)
    report = AccuracyReport.from_clients([ClientAccuracy(0, int(test.size), acc)])
    return {"report": report, "tau": None, "init": init_params(model.shape, derive_seed(tcfg.seed, "init")).checksum()}


def _federated(cfg: ExperimentConfig, data: Dataset, job: Job, out: Path) -> dict:
    part = build_partition(cfg, data, job.protocol, job.parameter, job.k, job.seed)
    tcfg = cfg.train_config(job.method, derive_seed(cfg.seed, "train", job.seed))
    init = init_params(tcfg.model_shape(data), derive_seed(tcfg.seed, "init"))
    if tcfg.method is Method.CLUST_PSI_PFL:
        models, assignment, logs = run_clust_psi_pfl(
            data, part, tcfg, cfg.epsilon, derive_seed(cfg.seed, "cluster", job.seed), init=init
        )
        by_cluster = dict(models)
        per_client = {cid: by_cluster[c] for cid, c in assignment.cluster_of().items()}
        report = evaluate_clients(data, part, per_client)
        for c, params in models:
            write_model(out / "models" / f"{job.run_id}-c{c}.bin", params)
        write_json(out / "clusters" / f"{job.run_id}.json", {"run_id": job.run_id, **assignment.report()})
        tau = assignment.tau
    else:
        params, logs = run_federation(data, part, range(part.num_clients), tcfg, init=init)
        report = evaluate_clients(data, part, params)
        write_model(out / "models" / f"{job.run_id}.bin", params)
        tau = None
    lines = [json.dumps({"run_id": job.run_id, **entry.to_dict()}, sort_keys=True) for entry in logs]
    write_text(out / "rounds" / f"{job.run_id}.jsonl", "\n".join(lines) + "\n")
    return {"report": report, "tau": tau, "init": init.checksum()}


def run_job(cfg: ExperimentConfig, job: Job) -> dict:
    """Run one (method, cell, seed) job; exceptions become a status."""
    data = _dataset(cfg)
    out = Path(cfg.output_dir)
    result = {"job": job, "status": "ok", "message": None, "report": None, "tau": None, "init": None}
    try:
        if job.method == Method.CENTRALIZED.value:
            result.update(_centralized(cfg, data, job, out))
        else:
            result.update(_federated(cfg, data, job, out))
    except InfeasiblePartition as exc:
        result.update(status="infeasible", message=str(exc))
    except DivergedError as exc:
        result.update(status="diverged", message=str(exc))
    log.info("%s: %s", job.run_id, result["status"])
    return result


def train_jobs(cfg: ExperimentConfig) -> list[Job]:
    federated = [m for m in cfg.methods if m != Method.CENTRALIZED.value]
    jobs = [Job(m, protocol, parameter, k, r) for protocol, parameter, k, r in cfg.cells() for m in federated]
    if Method.CENTRALIZED.value in cfg.methods:
        jobs += [Job(Method.CENTRALIZED.value, "", math.nan, 0, r) for r in range(cfg.num_seeds)]
    return jobs


def _run_all(cfg: ExperimentConfig, jobs: Sequence[Job], workers: int) -> list[dict]:
    if workers <= 1 or len(jobs) <= 1:
        return [run_job(cfg, job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_job, [cfg] * len(jobs), jobs))


def cmd_train(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Train every (method, cell, seed) job and write the result tables.

    Results are gathered and written in canonical job order, so the output
    bytes do not depend on ``jobs``.
    """
    out = Path(cfg.output_dir)
    results = _run_all(cfg, train_jobs(cfg), jobs)
    summary, local, runs = [], [], []
    for res in results:
        job: Job = res["job"]
        central = job.method == Method.CENTRALIZED.value
        protocol = None if central else job.protocol
        parameter = None if central else job.parameter
        k = None if central else job.k
        runs.append({"run_id": job.run_id, "method": job.method, "protocol": protocol, "parameter": parameter,
                     "k": k, "seed": job.seed, "status": res["status"], "message": res["message"],
                     "init_checksum": res["init"], "tau": res["tau"]})
        report: AccuracyReport | None = res["report"]
        if report is None:
            continue
        summary.append([job.run_id, job.method, protocol, parameter, job.seed, report.global_accuracy,
                        report.ad, report.sdad, res["tau"], k])
        for c in report.per_client:
            local.append([job.run_id, job.method, protocol, parameter, job.seed, c.client_id, c.n_test, c.accuracy, k])
    write_csv_rows(out / "summary.csv", SUMMARY_COLUMNS, summary)
    write_csv_rows(out / "local_metrics.csv", LOCAL_COLUMNS, local)
    manifest = {"command": "train", "config": cfg.resolved(), "seed_derivation": SEED_DERIVATION,
                "runs": runs, "paired_init": _paired_init(runs)}
    write_json(out / "train_manifest.json", manifest)
    return manifest


def _paired_init(runs: list[dict]) -> list[dict]:
    # Every method of one (cell, seed) must start from the same parameters.
    groups: dict[tuple, set] = {}
    for run in runs:
        if run["init_checksum"] is None or run["protocol"] is None:
            continue
        key = (run["protocol"], run["parameter"], run["k"], run["seed"])
        groups.setdefault(key, set()).add(run["init_checksum"])
    return [
        {"cell": cell_name(*key), "checksums": sorted(sums), "identical": len(sums) == 1}
        for key, sums in groups.items()
    ]


# -------------------------------------------------------------------- compare


def _read_summary(path: Path) -> list[dict]:
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = tuple(reader.fieldnames or ())
            rows = list(reader)
    except OSError as exc:
        raise RuntimeFailure(f"{path}: cannot read summary ({exc.strerror})") from None
    if header != SUMMARY_COLUMNS:
        raise SchemaError(f"{path}: columns {list(header)} do not match {list(SUMMARY_COLUMNS)}")
    return rows


def _stats(values: list[float]) -> dict:
    return {
        "mean": statistics.fmean(values),
        "std": statistics.stdev(values) if len(values) > 1 else None,
    }


def relative_reduction(ad_reference: float, ad_candidate: float) -> float | None:
    """Percentage by which ``ad_candidate`` lowers ``ad_reference``."""
    if ad_reference > 0:
        return 100.0 * (ad_reference - ad_candidate) / ad_reference
    return 0.0 if ad_candidate == 0 else None


def cmd_compare(paths: Sequence[str | Path], out: str | Path | None = None) -> dict:
    """Mean and sample std per method and cell, plus the clustered-vs-rest AD gain.

    Cells are ``(protocol, parameter, k)`` triples present in every summary.
    Centralized rows carry no cell and are reported on their own.
    """
    if not paths:
        raise ConfigError("compare needs at least one summary.csv")
    tables = [_read_summary(Path(p)) for p in paths]
    cell_sets = []
    for rows in tables:
        cell_sets.append({(r["protocol"], r["parameter"], r["k"]) for r in rows if r["method"] != Method.CENTRALIZED.value})
    shared = set.intersection(*cell_sets)
    ordered = []
    for rows in tables:
        for r in rows:
            key = (r["protocol"], r["parameter"], r["k"])
            if key in shared and key not in ordered:
                ordered.append(key)
    all_rows = [r for rows in tables for r in rows]

    def method_stats(rows: list[dict]) -> dict:
        by_method: dict[str, list[dict]] = {}
        for r in rows:
            by_method.setdefault(r["method"], []).append(r)
        stats = {}
        for m, group in by_method.items():
            stats[m] = {"n": len(group), **{col: _stats([float(r[col]) for r in group])
                                            for col in ("global_accuracy", "ad", "sdad")}}
            taus = [int(r["tau"]) for r in group if r["tau"] != ""]
            if taus:
                stats[m]["tau"] = taus
        return stats

    cells = []
    for protocol, parameter, k in ordered:
        rows = [r for r in all_rows if (r["protocol"], r["parameter"], r["k"]) == (protocol, parameter, k)]
        stats = method_stats(rows)
        clustered = sorted((s["ad"]["mean"], m) for m, s in stats.items() if m in CLUSTERED)
        others = sorted((s["ad"]["mean"], m) for m, s in stats.items() if m not in CLUSTERED)
        entry = {"protocol": protocol, "parameter": float(parameter), "k": int(k), "methods": stats,
                 "best_clustered": None, "best_non_clustered": None, "ad_relative_improvement_pct": None}
        if clustered and others:
            entry["best_clustered"] = clustered[0][1]
            entry["best_non_clustered"] = others[0][1]
            entry["ad_relative_improvement_pct"] = relative_reduction(others[0][0], clustered[0][0])
        cells.append(entry)
    central = [r for r in all_rows if r["method"] == Method.CENTRALIZED.value]
    report = {
        "std": "sample (n-1); null when n == 1",
        "empty": not cells,
        "cells": cells,
        "centralized": method_stats(central).get(Method.CENTRALIZED.value),
        "sources": [str(p) for p in paths],
    }
    if out is not None:
        write_json(Path(out) / "comparison.json", report)
    return report
