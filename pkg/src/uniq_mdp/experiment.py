"""End-to-end experiment driver.

One config in, one directory out: the environment, per-seed datasets, a
trained policy plus evaluation report for every (seed, method) pair, an
aggregate comparison across seeds, and a manifest that pins the resolved
config hash and library versions. Nothing in the output depends on wall
time, so rerunning the same config reproduces every file byte for byte.

Training tasks fan out over a process pool; UNIQ_MDP_THREADS caps the pool
size (1 runs everything inline). A crash in one (seed, method) task is
recorded in the manifest and does not take down the rest of the run.
"""

from __future__ import annotations

import dataclasses
import json
import os
import platform
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import yaml

from uniq_mdp import __version__, kernels
from uniq_mdp.baselines import train_bc, train_dwbc, train_iq
from uniq_mdp.config import ExperimentConfig
from uniq_mdp.data import (
    TrajectoryDataset,
    build_mix,
    build_undesired,
    label_undesired,
    load_dataset,
    rollout,
    save_dataset,
)
from uniq_mdp.evaluation import evaluate
from uniq_mdp.gridworld import ExpertPair, build_gridworld, synthesize_experts
from uniq_mdp.mdp import FiniteMdp, TabularPolicy, mdp_from_json, mdp_to_json, table_to_json
from uniq_mdp.training import loss_trace_to_csv, train_uniq

_AGG_FIELDS = ("mean_return", "std_return", "mean_cost", "std_cost", "mean_cvar10_cost")


def max_workers() -> int:
    """Worker-pool size: UNIQ_MDP_THREADS if set, else the CPU count."""
    raw = os.environ.get("UNIQ_MDP_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"UNIQ_MDP_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"UNIQ_MDP_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def build_world(config: ExperimentConfig) -> tuple[FiniteMdp, ExpertPair]:
    mdp = build_gridworld(config.gridworld)
    experts = synthesize_experts(mdp, lambda_cost=config.lambda_cost, temperature=config.temperature)
    return mdp, experts


def generate_seed_datasets(
    mdp: FiniteMdp, experts: ExpertPair, config: ExperimentConfig, seed: int
) -> tuple[dict[str, TrajectoryDataset], float]:
    """The three datasets one seed sees, plus the fraction of unconstrained
    rollouts that crossed the cost threshold.

    Both expert pools are oversampled (config.*_pool) so that labeling and
    the without-replacement draws below never run dry; the four stream seeds
    derive from the one experiment seed.
    """
    rng = np.random.default_rng(seed)
    s1, s2, s3, s4 = (int(s) for s in rng.integers(0, 2**31, size=4))
    unc = rollout(mdp, experts.unconstrained, config.unconstrained_pool(), config.horizon, seed=s1)
    con = rollout(mdp, experts.constrained, config.constrained_pool(), config.horizon, seed=s2)
    bad, _ = label_undesired(unc, config.cost_threshold)
    mix = build_mix(con, bad, config.n_safe, config.n_undesired, mdp, seed=s3)
    un = build_undesired(bad, config.n_un, config.cost_threshold, mdp, seed=s4)
    safe = build_mix(con, [], config.n_safe, 0, mdp, seed=s3)
    return {"mix": mix, "un": un, "safe": safe}, len(bad) / len(unc)


def _dwbc_trace_csv(trace: np.ndarray) -> str:
    lines = ["step,loss"]
    for row in np.atleast_2d(trace):
        lines.append(f"{int(row[0])},{float(row[1])!r}")
    return "\n".join(lines) + "\n"


def train_method(
    method: str, datasets: dict[str, TrajectoryDataset], config: ExperimentConfig, seed: int
) -> tuple[TabularPolicy, dict[str, str]]:
    """Train one method on the seed's datasets; returns the policy and the
    artifact files to persist (name -> text)."""
    if method == "uniq":
        res = train_uniq(datasets["un"], datasets["mix"], config.uniq, seed=seed)
        ratio_json = table_to_json(
            "ratio", {"tau": res.ratio.tau, "support": res.ratio.support.astype(np.float64)}
        )
        return res.policy, {
            "policy.json": res.policy_json(),
            "q.json": res.q_json(),
            "ratio.json": ratio_json,
            "trace.csv": loss_trace_to_csv(res.loss_trace),
        }
    if method in ("iq-mix", "iq-un"):
        data = datasets["mix"] if method == "iq-mix" else datasets["un"]
        res = train_iq(data, config.uniq, mode="imitate", seed=seed)
        return res.policy, {
            "policy.json": res.policy_json(),
            "q.json": res.q_json(),
            "trace.csv": loss_trace_to_csv(res.loss_trace),
        }
    if method == "dwbc":
        res = train_dwbc(
            datasets["un"],
            datasets["mix"],
            eta=config.dwbc_eta,
            lr=config.dwbc_lr,
            steps=config.dwbc_steps,
            pu_clamp=config.dwbc_pu_clamp,
            d_clip=config.dwbc_d_clip,
        )
        return res.policy, {
            "policy.json": table_to_json("policy", {"probs": res.policy.probs}),
            "d.json": table_to_json("discriminator", {"d": res.d_probs}),
            "trace.csv": _dwbc_trace_csv(res.loss_trace),
        }
    if method == "bc-mix":
        policy = train_bc(datasets["mix"])
    elif method == "bc-safe":
        policy = train_bc(datasets["safe"])
    elif method == "bc-un":
        policy = train_bc(datasets["un"], mode="avoid")
    else:
        raise ValueError(f"unknown method {method!r}")
    return policy, {"policy.json": table_to_json("policy", {"probs": policy.probs})}


def _run_task(args) -> tuple[str, dict | None, str | None]:
    # worker body; must stay importable at module level for the process pool
    config, out_dir, seed, method = args
    key = f"seed{seed}/{method}"
    try:
        out = Path(out_dir)
        mdp = mdp_from_json((out / "mdp.json").read_text())
        ddir = out / "datasets" / f"seed{seed}"
        datasets = {name: load_dataset(ddir / f"{name}.json") for name in ("mix", "un", "safe")}
        policy, artifacts = train_method(method, datasets, config, seed)
        report = evaluate(
            mdp,
            policy,
            n_episodes=config.eval_episodes,
            horizon=config.episode_horizon(),
            seed=config.eval_seed_base + seed,
        )
        rdir = out / "runs" / f"seed{seed}" / method
        rdir.mkdir(parents=True, exist_ok=True)
        for name, text in artifacts.items():
            (rdir / name).write_text(text)
        payload = {"method": method, "seed": seed, **report.to_dict()}
        (rdir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return key, payload, None
    except Exception:
        return key, None, traceback.format_exc()


def aggregate_rows(reports: dict[str, list[dict]]) -> list[dict]:
    """Across-seed means and stds of the per-seed evaluation summaries."""
    rows = []
    for method in sorted(reports):
        reps = reports[method]
        rets = np.array([r["mean_return"] for r in reps])
        costs = np.array([r["mean_cost"] for r in reps])
        cvars = np.array([r["cvar10_cost"] for r in reps])
        rows.append(
            {
                "method": method,
                "mean_return": float(rets.mean()),
                "std_return": float(rets.std()),
                "mean_cost": float(costs.mean()),
                "std_cost": float(costs.std()),
                "mean_cvar10_cost": float(cvars.mean()),
                "n_seeds": len(reps),
            }
        )
    return rows


def aggregate_csv(rows: list[dict], extra: tuple[str, ...] = ()) -> str:
    """Full-precision CSV; `extra` prepends grouping columns (sweeps)."""
    header = ",".join(extra + ("method",) + _AGG_FIELDS + ("n_seeds",))
    lines = [header]
    for row in rows:
        cells = [str(row[k]) for k in extra] + [row["method"]]
        cells += [repr(float(row[k])) for k in _AGG_FIELDS]
        cells.append(str(row["n_seeds"]))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def aggregate_text(rows: list[dict]) -> str:
    """One-decimal summary table; the lowest-mean-cost method is flagged,
    ties broken by name."""
    header = f"{'method':<12} {'return':>12} {'cost':>12} {'cvar10':>8} {'seeds':>6}"
    lines = [header, "-" * len(header)]
    best = min(rows, key=lambda r: (r["mean_cost"], r["method"]))["method"] if rows else ""
    for row in rows:
        flag = " *" if row["method"] == best else ""
        ret = f"{row['mean_return']:.1f} ± {row['std_return']:.1f}"
        cost = f"{row['mean_cost']:.1f} ± {row['std_cost']:.1f}"
        lines.append(
            f"{row['method']:<12} {ret:>12} {cost:>12} {row['mean_cvar10_cost']:>8.1f} "
            f"{row['n_seeds']:>6d}{flag}"
        )
    if best:
        lines.append(f"* lowest mean cost: {best}")
    return "\n".join(lines) + "\n"


def _versions() -> dict[str, str]:
    return {
        "uniq_mdp": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }


def _execute(config: ExperimentConfig, out: Path) -> tuple[list[dict], dict[str, str]]:
    """Generate data, fan out training tasks, write all per-run artifacts.
    Returns the aggregate rows and a map of failed task keys to tracebacks."""
    out.mkdir(parents=True, exist_ok=True)
    mdp, experts = build_world(config)
    (out / "mdp.json").write_text(mdp_to_json(mdp))
    edir = out / "experts"
    edir.mkdir(exist_ok=True)
    (edir / "unconstrained.json").write_text(
        table_to_json("policy", {"probs": experts.unconstrained.probs})
    )
    (edir / "constrained.json").write_text(
        table_to_json("policy", {"probs": experts.constrained.probs})
    )

    errors: dict[str, str] = {}
    fractions: dict[str, float] = {}
    ready_seeds = []
    for seed in config.seeds:
        ddir = out / "datasets" / f"seed{seed}"
        ddir.mkdir(parents=True, exist_ok=True)
        try:
            datasets, frac = generate_seed_datasets(mdp, experts, config, seed)
            for name, ds in datasets.items():
                save_dataset(ds, ddir / f"{name}.json")
            fractions[str(seed)] = frac
            ready_seeds.append(seed)
        except Exception:
            errors[f"datasets/seed{seed}"] = traceback.format_exc()

    tasks = [(config, str(out), seed, method) for seed in ready_seeds for method in config.methods]
    workers = min(max_workers(), max(len(tasks), 1))
    if workers <= 1:
        outcomes = [_run_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_task, tasks))

    reports: dict[str, list[dict]] = {}
    for key, payload, err in outcomes:
        if err is not None:
            errors[key] = err
        else:
            reports.setdefault(payload["method"], []).append(payload)
    rows = aggregate_rows(reports)
    (out / "aggregate.csv").write_text(aggregate_csv(rows))
    (out / "comparison.txt").write_text(aggregate_text(rows))

    manifest = {
        "name": config.name,
        "config": config.as_dict(),
        "config_sha256": config.digest(),
        "versions": _versions(),
        "kernels_backend": kernels.backend_name,
        "labeled_undesired_fraction": fractions,
        "n_tasks": len(tasks),
        "errors": errors,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return rows, errors


def run_experiment(config: ExperimentConfig, out_dir) -> Path:
    """Full run into out_dir; see the module docstring for the layout."""
    out = Path(out_dir)
    _execute(config, out)
    return out


def sweep_undesired_sizes(config: ExperimentConfig, sizes, out_dir) -> Path:
    """Rerun the experiment at several undesired-dataset sizes.

    Each size gets a full run_experiment directory under out_dir, and
    sweep.csv collects one aggregate row per (size, method)."""
    sizes = [int(n) for n in sizes]
    if not sizes:
        raise ValueError("need at least one size")
    if any(n < 1 for n in sizes):
        raise ValueError(f"sizes must be >= 1, got {sizes}")
    if len(set(sizes)) != len(sizes):
        raise ValueError(f"duplicate sizes in {sizes}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    all_rows = []
    errors: dict[str, str] = {}
    for n in sizes:
        sub = dataclasses.replace(config, n_un=n, name=f"{config.name}-un{n}")
        rows, errs = _execute(sub, out / f"un{n}")
        for row in rows:
            all_rows.append({"n_un": n, **row})
        for key, err in errs.items():
            errors[f"un{n}/{key}"] = err

    (out / "sweep.csv").write_text(aggregate_csv(all_rows, extra=("n_un",)))
    lines = []
    for n in sizes:
        lines.append(f"|D_UN| = {n}")
        lines.append(aggregate_text([r for r in all_rows if r["n_un"] == n]))
    (out / "sweep.txt").write_text("\n".join(lines))

    manifest = {
        "name": config.name,
        "config": config.as_dict(),
        "config_sha256": config.digest(),
        "sizes": sizes,
        "versions": _versions(),
        "kernels_backend": kernels.backend_name,
        "errors": errors,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
