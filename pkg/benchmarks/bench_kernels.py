"""Time the compiled kernels against the pure-numpy fallback.

Builds one realistic workload (the band8 experiment at its default sizes),
then runs both entry points on every available backend and reports per-call
wall time plus the numeric gap between backends.

    python3 benchmarks/bench_kernels.py --steps 1200 --repeats 3
"""

import argparse
import math
import pathlib
import time

import numpy as np

from uniq_mdp import kernels
from uniq_mdp.config import load_experiment_config
from uniq_mdp.data import (
    empirical_occupancy,
    initial_state_weights,
    observed_action_mask,
    transition_triples,
)
from uniq_mdp.experiment import build_world, generate_seed_datasets
from uniq_mdp.ratio import closed_form_optimum, tau_of


def build_workload(config_path: str, seed: int):
    config = load_experiment_config(config_path)
    mdp, experts = build_world(config)
    datasets, _ = generate_seed_datasets(mdp, experts, config, seed)
    mix, un = datasets["mix"], datasets["un"]
    S, A = mdp.num_states, mdp.num_actions

    w_un = empirical_occupancy(un, "discounted").reshape(-1)
    w_mix = empirical_occupancy(mix, "discounted").reshape(-1)
    sa, ns, w_t = transition_triples(mix, "discounted")
    exact = closed_form_optimum(w_un.reshape(S, A), w_mix.reshape(S, A))
    tau = tau_of(exact, w_mix.reshape(S, A) > 0).tau.reshape(-1)

    counts = empirical_occupancy(mix, "uniform").reshape(S, A)
    tot = counts.sum(axis=1, keepdims=True)
    p0 = np.where(tot > 0, counts / np.where(tot > 0, tot, 1.0), 1.0 / A)
    return {
        "S": S,
        "A": A,
        "n_triples": sa.shape[0],
        "ratio_args": (np.zeros(S * A), np.zeros(S * A), w_un, w_mix),
        "loop_args": (
            np.zeros((S, A)),
            np.log(np.maximum(p0, 1e-8)),
            sa,
            ns,
            w_t,
            tau,
            initial_state_weights(mix),
            empirical_occupancy(mix, "uniform").reshape(-1),
            observed_action_mask(mix),
        ),
        "gamma": mdp.discount,
    }


def time_call(fn, repeats: int) -> tuple[float, object]:
    best, out = math.inf, None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


DEFAULT_CONFIG = pathlib.Path(__file__).resolve().parents[1] / "configs" / "band8.yaml"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(DEFAULT_CONFIG))
    ap.add_argument("--steps", type=int, default=1200)
    ap.add_argument("--ratio-steps", type=int, default=20_000)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    wl = build_workload(args.config, args.seed)
    backends = kernels.available_backends()
    print(
        f"workload: {wl['S']}x{wl['A']} grid, {wl['n_triples']} aggregated transitions; "
        f"backends: {', '.join(backends)} (active: {kernels.backend_name})"
    )

    results = {}
    print(f"\n{'kernel':<14} {'backend':<8} {'best of ' + str(args.repeats):>12}")
    print("-" * 36)
    for name in backends:
        impl = kernels.get_backend(name)
        secs, out = time_call(
            lambda: kernels.ratio_ascent(
                *wl["ratio_args"], steps=args.ratio_steps, lr=0.3, backend=impl
            ),
            args.repeats,
        )
        results[("ratio", name)] = out
        print(f"{'ratio_ascent':<14} {name:<8} {secs * 1e3:>10.1f} ms")
    for name in backends:
        impl = kernels.get_backend(name)
        secs, out = time_call(
            lambda: kernels.train_loop(
                *wl["loop_args"],
                gamma=wl["gamma"],
                steps=args.steps,
                lr_q=0.02,
                lr_policy=8.0,
                direction=1.0,
                weight_cap=math.exp(10.0),
                backend=impl,
            ),
            args.repeats,
        )
        results[("loop", name)] = out
        print(f"{'train_loop':<14} {name:<8} {secs * 1e3:>10.1f} ms")

    if len(backends) == 2:
        r_py, r_c = results[("ratio", "py")], results[("ratio", "c")]
        l_py, l_c = results[("loop", "py")], results[("loop", "c")]
        gap_ratio = max(np.abs(r_py[0] - r_c[0]).max(), np.abs(r_py[1] - r_c[1]).max())
        gap_loop = max(np.abs(l_py[0] - l_c[0]).max(), np.abs(l_py[1] - l_c[1]).max())
        print(f"\nmax |py - c| gap: ratio logits {gap_ratio:.3e}, loop q/theta {gap_loop:.3e}")


if __name__ == "__main__":
    main()
