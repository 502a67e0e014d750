"""Command line entry points.

Every subcommand is a thin wrapper over the library: config files are parsed
strictly (exit code 2 on any config problem), verification failures exit
with code 3, and partial training failures inside an experiment leave the
rest of the run intact but exit with code 1.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from uniq_mdp import __version__
from uniq_mdp.baselines import train_bc, train_dwbc, train_iq
from uniq_mdp.config import ConfigError, ExperimentConfig, load_experiment_config
from uniq_mdp.data import empirical_occupancy, load_dataset, save_dataset
from uniq_mdp.evaluation import evaluate
from uniq_mdp.experiment import (
    build_world,
    generate_seed_datasets,
    run_experiment,
    sweep_undesired_sizes,
)
from uniq_mdp.mdp import mdp_from_json, mdp_to_json, table_to_json
from uniq_mdp.oracles import run_verification
from uniq_mdp.ratio import fit_ratio, tau_of
from uniq_mdp.training import UniqConfig, loss_trace_to_csv, policy_from_json, train_uniq

EXIT_CONFIG_ERROR = 2
EXIT_VERIFY_FAILED = 3

_IN_PATH = click.Path(exists=True, dir_okay=False, path_type=Path)
_OUT_DIR = click.Path(file_okay=False, path_type=Path)


def _load_config(path: Path) -> ExperimentConfig:
    try:
        return load_experiment_config(path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)


def _read_mdp(path: Path):
    return mdp_from_json(path.read_text())


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="uniq-mdp")
def main():
    """Avoidance learning on finite MDPs: environments, datasets, training,
    evaluation and numerical verification."""


@main.command("gen-env")
@click.option("--config", "config_path", type=_IN_PATH, required=True, help="Experiment config (YAML).")
@click.option("--out-dir", type=_OUT_DIR, required=True)
def gen_env(config_path: Path, out_dir: Path):
    """Build the gridworld and the two softmax experts."""
    config = _load_config(config_path)
    mdp, experts = build_world(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "mdp.json").write_text(mdp_to_json(mdp))
    (out_dir / "expert_unconstrained.json").write_text(
        table_to_json("policy", {"probs": experts.unconstrained.probs})
    )
    (out_dir / "expert_constrained.json").write_text(
        table_to_json("policy", {"probs": experts.constrained.probs})
    )
    click.echo(
        f"{config.gridworld.width}x{config.gridworld.height} grid: "
        f"{mdp.num_states} states, {mdp.num_actions} actions, "
        f"{len(config.gridworld.hazard_cells)} listed hazard cells -> {out_dir}"
    )


@main.command("gen-data")
@click.option("--config", "config_path", type=_IN_PATH, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=_OUT_DIR, required=True)
def gen_data(config_path: Path, seed: int, out_dir: Path):
    """Roll out both experts and write the mix / un / safe datasets."""
    config = _load_config(config_path)
    mdp, experts = build_world(config)
    datasets, frac = generate_seed_datasets(mdp, experts, config, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, ds in datasets.items():
        save_dataset(ds, out_dir / f"{name}.json")
    click.echo(
        f"seed {seed}: mix {len(datasets['mix'])} trajectories "
        f"({config.n_safe} safe + {config.n_undesired} undesired), "
        f"un {len(datasets['un'])}, safe {len(datasets['safe'])}; "
        f"labeled fraction {frac:.3f} -> {out_dir}"
    )


@main.command("train-ratio")
@click.option("--un", "un_path", type=_IN_PATH, required=True, help="Undesired dataset (JSON).")
@click.option("--mix", "mix_path", type=_IN_PATH, required=True, help="Mixture dataset (JSON).")
@click.option("--steps", type=int, default=20_000, show_default=True)
@click.option("--lr", type=float, default=0.3, show_default=True)
@click.option("--weighting", type=click.Choice(["discounted", "uniform"]), default="discounted", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
def train_ratio(un_path: Path, mix_path: Path, steps: int, lr: float, weighting: str, out_path: Path):
    """Fit the two-head density-ratio discriminator."""
    un = load_dataset(un_path)
    mix = load_dataset(mix_path)
    table = fit_ratio(un, mix, steps=steps, lr=lr, weighting=weighting)
    est = tau_of(table, empirical_occupancy(mix, weighting) > 0)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(
        table_to_json("ratio", {"tau": est.tau, "support": est.support.astype(float)})
    )
    on = est.tau[est.support]
    click.echo(f"tau on support: min {on.min():.3f} max {on.max():.3f} -> {out_path}")


def _uniq_config(config_path: Path | None, steps: int | None, lr_q: float | None, lr_policy: float | None) -> UniqConfig:
    cfg = _load_config(config_path).uniq if config_path is not None else UniqConfig()
    overrides = {k: v for k, v in (("steps", steps), ("lr_q", lr_q), ("lr_policy", lr_policy)) if v is not None}
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


@main.command("train-uniq")
@click.option("--un", "un_path", type=_IN_PATH, required=True)
@click.option("--mix", "mix_path", type=_IN_PATH, required=True)
@click.option("--config", "config_path", type=_IN_PATH, default=None, help="Take hyperparameters from this config's uniq section.")
@click.option("--steps", type=int, default=None)
@click.option("--lr-q", type=float, default=None)
@click.option("--lr-policy", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=_OUT_DIR, required=True)
def train_uniq_cmd(un_path, mix_path, config_path, steps, lr_q, lr_policy, seed, out_dir):
    """Train the avoidance learner on an undesired + mixture dataset pair."""
    cfg = _uniq_config(config_path, steps, lr_q, lr_policy)
    un = load_dataset(un_path)
    mix = load_dataset(mix_path)
    res = train_uniq(un, mix, cfg, seed=seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "policy.json").write_text(res.policy_json())
    (out_dir / "q.json").write_text(res.q_json())
    (out_dir / "ratio.json").write_text(
        table_to_json("ratio", {"tau": res.ratio.tau, "support": res.ratio.support.astype(float)})
    )
    (out_dir / "trace.csv").write_text(loss_trace_to_csv(res.loss_trace))
    click.echo(f"{cfg.steps} steps, final objective {res.loss_trace[-1, 1]:.4g} -> {out_dir}")


@main.command("train-baseline")
@click.option("--kind", type=click.Choice(["bc-mix", "bc-un", "iq-mix", "iq-un", "dwbc"]), required=True)
@click.option("--mix", "mix_path", type=_IN_PATH, default=None, help="Mixture dataset; any cloning dataset works for bc-mix (e.g. the safe one).")
@click.option("--un", "un_path", type=_IN_PATH, default=None, help="Undesired dataset.")
@click.option("--config", "config_path", type=_IN_PATH, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=_OUT_DIR, required=True)
def train_baseline(kind, mix_path, un_path, config_path, seed, out_dir):
    """Train one comparison method."""
    needs_mix = kind in ("bc-mix", "iq-mix", "dwbc")
    needs_un = kind in ("bc-un", "iq-un", "dwbc")
    if needs_mix and mix_path is None:
        raise click.UsageError(f"{kind} needs --mix")
    if needs_un and un_path is None:
        raise click.UsageError(f"{kind} needs --un")
    config = _load_config(config_path) if config_path is not None else None
    datasets = {}
    if mix_path is not None:
        datasets["mix"] = load_dataset(mix_path)
    if un_path is not None:
        datasets["un"] = load_dataset(un_path)

    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "bc-mix":
        policy = train_bc(datasets["mix"])
        arts = {"policy.json": table_to_json("policy", {"probs": policy.probs})}
    elif kind == "bc-un":
        policy = train_bc(datasets["un"], mode="avoid")
        arts = {"policy.json": table_to_json("policy", {"probs": policy.probs})}
    elif kind in ("iq-mix", "iq-un"):
        ucfg = config.uniq if config is not None else UniqConfig()
        res = train_iq(datasets["mix" if kind == "iq-mix" else "un"], ucfg, mode="imitate", seed=seed)
        policy = res.policy
        arts = {
            "policy.json": res.policy_json(),
            "q.json": res.q_json(),
            "trace.csv": loss_trace_to_csv(res.loss_trace),
        }
    else:
        kw = {}
        if config is not None:
            kw = dict(
                eta=config.dwbc_eta, lr=config.dwbc_lr, steps=config.dwbc_steps,
                pu_clamp=config.dwbc_pu_clamp, d_clip=config.dwbc_d_clip,
            )
        res = train_dwbc(datasets["un"], datasets["mix"], **kw)
        policy = res.policy
        arts = {
            "policy.json": table_to_json("policy", {"probs": policy.probs}),
            "d.json": table_to_json("discriminator", {"d": res.d_probs}),
        }
    for name, text in arts.items():
        (out_dir / name).write_text(text)
    click.echo(f"{kind} trained -> {out_dir}")


@main.command("eval")
@click.option("--mdp", "mdp_path", type=_IN_PATH, required=True)
@click.option("--policy", "policy_path", type=_IN_PATH, required=True)
@click.option("--episodes", type=int, default=100, show_default=True)
@click.option("--horizon", type=int, default=60, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Also write the full-precision report JSON here.")
def eval_cmd(mdp_path, policy_path, episodes, horizon, seed, out_path):
    """Roll out a policy and report return / cost / tail-cost statistics."""
    mdp = _read_mdp(mdp_path)
    policy = policy_from_json(policy_path.read_text())
    report = evaluate(mdp, policy, n_episodes=episodes, horizon=horizon, seed=seed)
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    click.echo(
        f"return {report.mean_return:.1f} ± {report.std_return:.1f}   "
        f"cost {report.mean_cost:.1f} ± {report.std_cost:.1f}   "
        f"cvar10 {report.cvar10_cost:.1f}   ({report.n_episodes} episodes)"
    )


@main.command("verify")
@click.option("--prop", type=click.Choice(["1", "2", "3"]), required=True)
@click.option("--trials", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def verify(prop, trials, seed):
    """Check one identity family on random instances against brute force."""
    report = run_verification(int(prop), trials=trials, seed=seed)
    click.echo(report.summary())
    if not report.passed:
        sys.exit(EXIT_VERIFY_FAILED)


def _echo_run_outcome(out_dir: Path) -> int:
    click.echo((out_dir / "comparison.txt").read_text(), nl=False)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    errors = manifest.get("errors", {})
    if errors:
        click.echo(f"{len(errors)} task(s) failed:", err=True)
        for key in sorted(errors):
            click.echo(f"  {key}: {errors[key].strip().splitlines()[-1]}", err=True)
        return 1
    return 0


@main.command("run-experiment")
@click.option("--config", "config_path", type=_IN_PATH, required=True)
@click.option("--out-dir", type=_OUT_DIR, required=True)
def run_experiment_cmd(config_path: Path, out_dir: Path):
    """Run every (seed, method) pair of a config and aggregate the results."""
    config = _load_config(config_path)
    run_experiment(config, out_dir)
    sys.exit(_echo_run_outcome(out_dir))


@main.command("sweep")
@click.option("--config", "config_path", type=_IN_PATH, required=True)
@click.option("--sizes", required=True, help="Comma-separated undesired-dataset sizes, e.g. 25,50,100.")
@click.option("--out-dir", type=_OUT_DIR, required=True)
def sweep(config_path: Path, sizes: str, out_dir: Path):
    """Rerun the experiment across undesired-dataset sizes."""
    config = _load_config(config_path)
    try:
        parsed = [int(tok) for tok in sizes.split(",") if tok.strip()]
        if not parsed or any(n < 1 for n in parsed) or len(set(parsed)) != len(parsed):
            raise ValueError("need distinct positive integers")
    except ValueError as exc:
        raise click.UsageError(f"bad --sizes {sizes!r}: {exc}")
    sweep_undesired_sizes(config, parsed, out_dir)
    click.echo((out_dir / "sweep.txt").read_text(), nl=False)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    if manifest.get("errors"):
        click.echo(f"{len(manifest['errors'])} task(s) failed; see manifest.json", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
