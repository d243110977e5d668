"""Pipeline orchestration: objective evaluation, training, generation,
benchmarking, decoding, and report export.

Primary outputs (molecules JSONL, history JSONL, best-params JSON, summary
JSON) are byte-deterministic for a fixed config and seed; wall-clock times
and timestamps live in a ``run_meta.json`` sidecar. Benchmark CSVs contain
measured times and are the one intentionally non-reproducible artifact.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mps as mps_backend
from . import statevec
from .ansatz import (
    DEFAULT_ATOM_CODEBOOK,
    DEFAULT_BOND_CODEBOOK,
    ModeSpec,
    build_hybrid_ansatz,
    build_static_ansatz,
    qubit_count,
)
from .config import RunConfig, config_base_dir
from .errors import CapacityError, ConfigError
from .molgraph import (
    DEFAULT_VALENCE,
    MoleculeGraph,
    ValidationResult,
    canonical_key,
    decode_shot,
    to_smiles,
    validate,
)
from .optim import ObjectiveSample, bo_step, cobyla_minimize
from .sampling import SampleBatch, save_batch_binary, save_batch_jsonl

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Metrics:
    validity: float
    uniqueness: float
    objective: float


@dataclass
class DecodedShot:
    mol: MoleculeGraph
    result: ValidationResult
    key: str


def decode_batch(batch: SampleBatch, mode: ModeSpec | None = None,
                 valence=None) -> list[DecodedShot]:
    out = []
    for s in range(batch.n_shots):
        mol = decode_shot(
            (batch.atom_codes[s], batch.bond_codes[s]),
            batch.n_atoms, DEFAULT_ATOM_CODEBOOK, DEFAULT_BOND_CODEBOOK,
            mode, shot_id=s)
        result = validate(mol, valence)
        out.append(DecodedShot(mol, result, canonical_key(mol)))
    return out


def compute_metrics(decoded: list[DecodedShot]) -> Metrics:
    """validity * uniqueness; uniqueness of an empty valid set is 0."""
    if not decoded:
        raise ValueError("cannot compute metrics for an empty batch")
    n_valid = sum(1 for d in decoded if d.result.valid)
    validity = n_valid / len(decoded)
    if n_valid == 0:
        return Metrics(0.0, 0.0, 0.0)
    distinct = len({d.key for d in decoded if d.result.valid})
    uniqueness = distinct / n_valid
    return Metrics(validity, uniqueness, validity * uniqueness)


# ---------------------------------------------------------------------------
# Sampling through a config
# ---------------------------------------------------------------------------

def build_circuit(cfg: RunConfig, variant: str | None = None, n_atoms: int | None = None):
    mode = cfg.mode_spec(config_base_dir(cfg))
    variant = variant or cfg.variant
    n_atoms = n_atoms or cfg.n_atoms
    if variant == "hybrid":
        circuit, layout = build_hybrid_ansatz(n_atoms, mode, cfg.conditioning)
    else:
        circuit, layout = build_static_ansatz(n_atoms, mode)
    return circuit, layout, mode


def sample_batch(cfg: RunConfig, circuit, params, seed: int, shots: int | None = None):
    """Run shots on the configured backend; returns (batch, truncation log|None)."""
    shots = shots or cfg.shots
    if cfg.backend == "dense":
        try:
            batch = statevec.run_shots(
                circuit, params, shots, seed, cfg.n_atoms,
                qubit_cap=cfg.dense_qubit_cap, workers=cfg.workers)
        except CapacityError as exc:
            raise CapacityError(
                f"{exc} (n_atoms={cfg.n_atoms}; switch backend to mps)") from exc
        return batch, None
    chi, threshold = cfg.mps_settings()
    return mps_backend.run_shots_mps(
        circuit, params, shots, chi, threshold, seed, cfg.n_atoms,
        workers=cfg.workers)


def evaluate_objective(cfg: RunConfig, circuit, mode: ModeSpec, params, seed: int):
    batch, _ = sample_batch(cfg, circuit, params, seed)
    decoded = decode_batch(batch, mode)
    return compute_metrics(decoded), batch


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def run_train(cfg: RunConfig, resume: bool = False) -> dict:
    if cfg.optimizer.budget < 1:
        raise ConfigError("empty budget: optimizer.budget must be >= 1")
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    circuit, layout, mode = build_circuit(cfg)
    bounds = np.tile([0.0, TWO_PI], (layout.total, 1))

    history: list[ObjectiveSample] = []
    rows: list[dict] = []
    iter_times: list[float] = []
    t_start = time.time()

    history_path = outdir / "history.jsonl"
    if resume:
        if cfg.optimizer.kind != "bo":
            raise ConfigError("resume is only supported for the bo optimizer")
        if history_path.exists():
            for line in history_path.read_text().splitlines():
                row = json.loads(line)
                rows.append(row)
                history.append(ObjectiveSample(
                    np.array(row["x"]), row["y"], cfg.shots, row["seed"]))

    def record(i: int, x: np.ndarray, metrics: Metrics, seed: int, dt: float) -> None:
        rows.append({
            "iteration": i,
            "x": [float(v) for v in x],
            "y": metrics.objective,
            "validity": metrics.validity,
            "uniqueness": metrics.uniqueness,
            "seed": seed,
        })
        history.append(ObjectiveSample(np.asarray(x, dtype=float),
                                       metrics.objective, cfg.shots, seed))
        iter_times.append(dt)

    if cfg.optimizer.kind == "bo":
        for t in range(len(history), cfg.optimizer.budget):
            t0 = time.perf_counter()
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xB0, t)))
            x = bo_step(history, bounds, rng,
                        n_candidates=cfg.optimizer.candidates,
                        polish_steps=cfg.optimizer.polish_steps,
                        xi=cfg.optimizer.xi)
            eval_seed = _derive_seed(cfg.seed, 1, t)
            metrics, _ = evaluate_objective(cfg, circuit, mode, x, eval_seed)
            record(t, x, metrics, eval_seed, time.perf_counter() - t0)
    else:
        eval_seed = _derive_seed(cfg.seed, 2)
        x0 = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, 3))).uniform(0.0, TWO_PI, layout.total)
        counter = [0]

        def objective(x: np.ndarray) -> float:
            t0 = time.perf_counter()
            metrics, _ = evaluate_objective(cfg, circuit, mode, x, eval_seed)
            record(counter[0], x, metrics, eval_seed, time.perf_counter() - t0)
            counter[0] += 1
            return -metrics.objective

        cobyla_minimize(objective, x0, cfg.optimizer.rhobeg, cfg.optimizer.rhoend,
                        cfg.optimizer.budget, bounds)

    best_idx = max(range(len(rows)), key=lambda i: rows[i]["y"])
    best = {
        "x": rows[best_idx]["x"],
        "objective": rows[best_idx]["y"],
        "iteration": rows[best_idx]["iteration"],
        "n_atoms": cfg.n_atoms,
        "variant": cfg.variant,
        "mode": cfg.mode.kind,
        "epoch_definition": "one epoch = one objective evaluation (one shot batch)",
    }
    with open(history_path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    (outdir / "best_params.json").write_text(json.dumps(best, sort_keys=True, indent=2))
    _write_meta(outdir, cfg, {"iteration_wall_times": iter_times,
                              "total_wall_time": time.time() - t_start})
    running_max = float(max(r["y"] for r in rows))
    return {"best_objective": running_max, "evaluations": len(rows),
            "history_path": str(history_path)}


# ---------------------------------------------------------------------------
# Generation / decoding
# ---------------------------------------------------------------------------

def run_generate(cfg: RunConfig, params_path) -> dict:
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    circuit, layout, mode = build_circuit(cfg)
    params = _load_params(params_path)
    if len(params) != layout.total:
        raise ConfigError(
            f"params length {len(params)} does not match layout total "
            f"{layout.total} for n_atoms={cfg.n_atoms}, mode={cfg.mode.kind}")
    t0 = time.time()
    batch, trunc = sample_batch(cfg, circuit, params, cfg.seed)
    save_batch_jsonl(batch, outdir / "shots.jsonl")
    decoded = decode_batch(batch, mode)
    _write_molecules(outdir / "molecules.jsonl", decoded)
    metrics = compute_metrics(decoded)
    summary = _summary_dict(cfg, decoded, metrics)
    (outdir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    if trunc is not None:
        _write_truncation_csv(outdir / "truncation.csv", trunc)
    _write_meta(outdir, cfg, {"total_wall_time": time.time() - t0,
                              "sample_wall_time": batch.wall_time})
    return summary


def run_decode(cfg: RunConfig, batch_path) -> dict:
    from .sampling import load_batch

    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    batch = load_batch(batch_path)
    if batch.n_atoms != cfg.n_atoms:
        raise ConfigError(
            f"batch has n_atoms={batch.n_atoms}, config says {cfg.n_atoms}")
    mode = cfg.mode_spec(config_base_dir(cfg))
    decoded = decode_batch(batch, mode)
    _write_molecules(outdir / "molecules.jsonl", decoded)
    metrics = compute_metrics(decoded)
    summary = _summary_dict(cfg, decoded, metrics)
    (outdir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    return summary


def _load_params(path) -> np.ndarray:
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data["x"]
    return np.asarray(data, dtype=float)


def _write_molecules(path, decoded: list[DecodedShot]) -> None:
    with open(path, "w") as fh:
        for d in decoded:
            smiles = None
            if d.result.valid:
                try:
                    smiles = to_smiles(d.mol)
                except Exception:
                    smiles = d.key  # fallback: canonical key stands in
            fh.write(json.dumps({
                "shot": d.mol.shot_id,
                "atoms": list(d.mol.atoms),
                "bonds": [list(b) for b in d.mol.bonds],
                "valid": d.result.valid,
                "failures": list(d.result.failures),
                "canonical_key": d.key,
                "smiles": smiles,
            }, sort_keys=True) + "\n")


def metrics_from_molecules_jsonl(path) -> Metrics:
    """Recompute the summary metrics from a molecules file alone."""
    total = 0
    keys = set()
    n_valid = 0
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            total += 1
            if row["valid"]:
                n_valid += 1
                keys.add(row["canonical_key"])
    if total == 0:
        raise ValueError("empty molecules file")
    validity = n_valid / total
    uniqueness = len(keys) / n_valid if n_valid else 0.0
    return Metrics(validity, uniqueness, validity * uniqueness)


def _summary_dict(cfg: RunConfig, decoded: list[DecodedShot], metrics: Metrics) -> dict:
    failure_counts: dict[str, int] = {}
    for d in decoded:
        for f in d.result.failures:
            kind = f.split(":")[0]
            failure_counts[kind] = failure_counts.get(kind, 0) + 1
    return {
        "n_shots": len(decoded),
        "n_atoms": cfg.n_atoms,
        "mode": cfg.mode.kind,
        "backend": cfg.backend,
        "variant": cfg.variant,
        "validity": metrics.validity,
        "uniqueness": metrics.uniqueness,
        "objective": metrics.objective,
        "n_valid": sum(1 for d in decoded if d.result.valid),
        "n_unique_valid": len({d.key for d in decoded if d.result.valid}),
        "failure_counts": failure_counts,
        "notes": {
            "validity_definition": "nonempty AND valence-bounded AND connected "
                                   "(disconnected outputs count as invalid)",
            "uniqueness_of_empty_valid_set": 0.0,
        },
    }


def _write_meta(outdir: Path, cfg: RunConfig, extra: dict) -> None:
    meta = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"), "seed": cfg.seed}
    meta.update(extra)
    (Path(outdir) / "run_meta.json").write_text(json.dumps(meta, indent=2))


def _write_truncation_csv(path, log) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gate_index", "discarded_weight", "bond_dim"])
        for ip, disc, chi in log.rows():
            writer.writerow([ip, repr(disc), chi])


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

def run_bench(cfg: RunConfig) -> dict:
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    mode = ModeSpec.de_novo()

    plan = []
    for variant in cfg.bench.variants:
        for n in cfg.bench.dense_atoms:
            plan.append(("dense", variant, n, cfg.bench.dense_shots or cfg.shots))
        for n in cfg.bench.mps_atoms:
            plan.append(("mps", variant, n, cfg.bench.mps_shots or cfg.shots))

    for backend, variant, n, shots in plan:
        if variant == "hybrid":
            circuit, layout = build_hybrid_ansatz(n, mode, "early_measured")
        else:
            circuit, layout = build_static_ansatz(n, mode)
        params = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, 0xBE, n))).uniform(0.0, TWO_PI, layout.total)
        times = []
        peak = 0
        status = "ok"
        for rep in range(cfg.bench.repetitions):
            try:
                if backend == "dense":
                    batch = statevec.run_shots(
                        circuit, params, shots, _derive_seed(cfg.seed, n, rep),
                        n, qubit_cap=cfg.dense_qubit_cap, workers=cfg.workers)
                    times.append(batch.wall_time)
                    peak = 1 << circuit.n_qubits
                else:
                    chi, threshold = cfg.mps_settings()
                    batch, log = mps_backend.run_shots_mps(
                        circuit, params, shots, chi, threshold,
                        _derive_seed(cfg.seed, n, rep), n, workers=cfg.workers)
                    times.append(batch.wall_time)
                    peak = max(peak, log.max_bond_dim)
            except CapacityError:
                status = "capacity_error"
                break
        rows.append({
            "backend": backend,
            "variant": variant,
            "n_atoms": n,
            "shots": shots,
            "wall_time_s": float(np.median(times)) if times and status == "ok" else "",
            "peak_cost": peak if status == "ok" else "",
            "status": status,
        })

    csv_path = outdir / "bench.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "backend", "variant", "n_atoms", "shots", "wall_time_s", "peak_cost", "status"])
        writer.writeheader()
        writer.writerows(rows)

    summary = summarize_bench(rows)
    (outdir / "bench_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    return {"rows": rows, "summary": summary, "csv_path": str(csv_path)}


def fit_log_slope(ns: list[int], times: list[float]) -> dict:
    """Least-squares fit of log(runtime) against atom count."""
    x = np.asarray(ns, dtype=float)
    y = np.log(np.asarray(times, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    return {"slope": float(slope), "per_atom_factor": float(math.exp(slope)),
            "intercept": float(intercept), "points": len(ns)}


def summarize_bench(rows: list[dict]) -> dict:
    fits = {}
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        if row["status"] == "ok" and row["wall_time_s"] != "":
            groups.setdefault((row["backend"], row["variant"]), []).append(row)
    for (backend, variant), grp in groups.items():
        grp = sorted(grp, key=lambda r: r["n_atoms"])
        if len(grp) >= 2:
            fits[f"{backend}/{variant}"] = fit_log_slope(
                [r["n_atoms"] for r in grp], [float(r["wall_time_s"]) for r in grp])
    ratios = {}
    mps_rows = {(r["variant"], r["n_atoms"]): float(r["wall_time_s"])
                for r in rows if r["backend"] == "mps" and r["status"] == "ok"
                and r["wall_time_s"] != ""}
    for (variant, n), t in sorted(mps_rows.items()):
        if variant == "static" and ("hybrid", n) in mps_rows:
            ratios[str(n)] = {
                "hybrid_s": mps_rows[("hybrid", n)],
                "static_s": t,
                "hybrid_over_static": mps_rows[("hybrid", n)] / t if t > 0 else None,
            }
    capacity = [
        {"backend": r["backend"], "variant": r["variant"], "n_atoms": r["n_atoms"]}
        for r in rows if r["status"] == "capacity_error"]
    return {"fits": fits, "reuse_vs_no_reuse": ratios, "capacity_errors": capacity}


# ---------------------------------------------------------------------------
# Report export (plot-ready tidy CSVs)
# ---------------------------------------------------------------------------

def report_history(history_path, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = [json.loads(line) for line in Path(history_path).read_text().splitlines()]
    out = outdir / "trajectory.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective", "validity", "uniqueness",
                         "running_max", "moving_avg3"])
        best = -math.inf
        window: list[float] = []
        for row in rows:
            best = max(best, row["y"])
            window.append(row["y"])
            if len(window) > 3:
                window.pop(0)
            writer.writerow([row["iteration"], repr(row["y"]), repr(row["validity"]),
                             repr(row["uniqueness"]), repr(best),
                             repr(sum(window) / len(window))])
    return out


def report_bench(bench_csv, outdir) -> tuple[Path, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(bench_csv) as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["n_atoms"] = int(row["n_atoms"])
    summary = summarize_bench(rows)

    scaling = outdir / "scaling.csv"
    with open(scaling, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["backend", "variant", "n_atoms", "wall_time_s",
                         "fit_slope", "fit_per_atom_factor"])
        for row in rows:
            if row["status"] != "ok":
                continue
            fit = summary["fits"].get(f"{row['backend']}/{row['variant']}", {})
            writer.writerow([row["backend"], row["variant"], row["n_atoms"],
                             row["wall_time_s"], fit.get("slope", ""),
                             fit.get("per_atom_factor", "")])

    ratio = outdir / "reuse_ratio.csv"
    with open(ratio, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_atoms", "hybrid_s", "static_s", "hybrid_over_static"])
        for n, entry in sorted(summary["reuse_vs_no_reuse"].items(), key=lambda kv: int(kv[0])):
            writer.writerow([n, entry["hybrid_s"], entry["static_s"],
                             entry["hybrid_over_static"]])
    return scaling, ratio
