"""Experiment runner.

Subcommands:

* ``run``: one seeded sampling run; writes samples.csv, trace.csv,
  metrics.csv, density.pgm, and target.pgm into the output directory.
* ``compare``: every proposal in the config's ``proposals`` list under one
  shared master seed; writes comparison.csv plus per-proposal trace files
  (the guidance baseline never reweights, so it gets a metrics row but no
  trace file).
* ``enumerate-target``: dumps the exact tilted terminal target as text and
  PGM without running the sampler.

Exit codes: 0 success, 2 configuration error, 3 numeric or degeneracy
error, 4 enumeration-guard refusal.  All file writes go through a
temporary file and an atomic replace, and identical (config, seed) pairs
produce byte-identical outputs regardless of worker count.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .config import RunConfig, parse_config
from .core import (
    ConfigError,
    DegeneracyError,
    GuardError,
    NoiseSchedule,
    TemperSchedule,
    Vocab,
)
from .dataset import GmmComponent, GmmSpec, build_gmm_table, default_gmm_spec
from .diffusion import TabularModel, load_tabular_model
from .eval import (
    MetricReport,
    empirical_distribution,
    enumerate_target,
    grid_to_pgm,
    grid_to_text,
    metrics,
)
from .reward import (
    GMM_BOTTOM,
    GMM_TOP,
    GumbelConfig,
    RewardFn,
    gmm_reward,
    linear_reward,
)
from .smc import SmcResult, SmcSampler, traces_to_csv

SAMPLES_HEADER = "# ddsmc samples v1"
METRICS_HEADER = "# ddsmc metrics v1"
COMPARISON_HEADER = "# ddsmc comparison v1"
METRIC_COLUMNS = "proposal,mean_reward,emd,diversity,sample_count"


def _write_atomic(path: str, data):
    tmp = path + ".tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    kwargs = {} if isinstance(data, bytes) else {"encoding": "ascii", "newline": "\n"}
    with open(tmp, mode, **kwargs) as fh:
        fh.write(data)
    os.replace(tmp, path)


def build_model(config: RunConfig) -> TabularModel:
    """Dataset/model construction honoring the family's vocabulary needs."""
    if config.model_file:
        model = load_tabular_model(config.model_file)
    else:
        if config.gmm_components:
            comps = tuple(
                GmmComponent(
                    mean=(mi, mj),
                    cov=((sigma * sigma, 0.0), (0.0, sigma * sigma)),
                    weight=weight,
                )
                for mi, mj, sigma, weight in config.gmm_components
            )
            spec = GmmSpec(components=comps, grid_size=config.grid_size)
        else:
            spec = default_gmm_spec(config.grid_size)
        model = build_gmm_table(spec)
    if config.family == "udlm":
        if model.vocab.mask_index is not None:
            model = model.with_vocab(Vocab(model.vocab.data_size, None))
    elif model.vocab.mask_index is None:
        raise ConfigError(
            f"family {config.family!r} requires a model with a mask token"
        )
    return model


def build_reward(config: RunConfig, model: TabularModel) -> RewardFn:
    if config.reward == "zero":
        return linear_reward(
            np.zeros((model.length, model.vocab.size_total))
        )
    if model.length != 2:
        raise ConfigError("gmm rewards require a length-2 model")
    if config.reward == "gmm_top":
        weights, offsets = GMM_TOP
    elif config.reward == "gmm_bottom":
        weights, offsets = GMM_BOTTOM
    else:
        weights = (config.reward_wx, config.reward_wy)
        offsets = (config.reward_ox, config.reward_oy)
    return gmm_reward(
        axis_weights=weights,
        offsets=offsets,
        vocab=model.vocab,
        grid_size=model.data_size,
    )


def _build_sampler(config: RunConfig, model, reward, proposal: str) -> SmcSampler:
    return SmcSampler(
        model,
        reward,
        family=config.family,
        proposal=proposal,
        particles=config.particles,
        steps=config.steps,
        alpha=config.alpha,
        temper=TemperSchedule(
            config.temper, config.steps, base=config.temper_base
        ),
        noise=NoiseSchedule(config.noise),
        ess_min=config.ess_min,
        resample=config.resample,
        eta_cap=config.eta_cap,
        gumbel=GumbelConfig(tau=config.gumbel_tau, n_samples=config.gumbel_samples),
        workers=config.workers,
        final_resample=config.final_resample,
    )


def _samples_csv(result: SmcResult, length: int) -> str:
    cols = ",".join(f"tok{l}" for l in range(length))
    lines = [SAMPLES_HEADER, f"weight,{cols}"]
    weights = result.particles.weights()
    states = result.particles.states
    for i in range(states.shape[0]):
        toks = ",".join(str(int(v)) for v in states[i])
        lines.append(f"{weights[i]!r},{toks}")
    return "\n".join(lines) + "\n"


def _metric_row(proposal: str, report: MetricReport) -> str:
    return (
        f"{proposal},{report.mean_reward!r},{report.emd!r},"
        f"{report.diversity},{report.sample_count}"
    )


def _summary_line(proposal, seed, report: MetricReport, log_z) -> str:
    return (
        f"proposal={proposal} seed={seed} "
        f"mean_reward={report.mean_reward:.6f} emd={report.emd:.6f} "
        f"diversity={report.diversity}/{report.sample_count} "
        f"log_z={log_z:.6f}"
    )


def run_experiment(config: RunConfig) -> int:
    """Single run; returns 0 (errors raise, mapped to exit codes in main)."""
    model = build_model(config)
    reward = build_reward(config, model)
    target = enumerate_target(model, reward, config.alpha)
    sampler = _build_sampler(config, model, reward, config.proposal)
    result = sampler.run(config.seed)
    report = metrics(result.particles, reward, target, vocab=model.vocab)
    empirical = empirical_distribution(
        result.particles.states,
        result.particles.weights(),
        target.table.shape,
        vocab=model.vocab,
    )
    os.makedirs(config.out, exist_ok=True)
    _write_atomic(
        os.path.join(config.out, "samples.csv"),
        _samples_csv(result, model.length),
    )
    traces_to_csv(result.traces, os.path.join(config.out, "trace.csv.tmp"))
    os.replace(
        os.path.join(config.out, "trace.csv.tmp"),
        os.path.join(config.out, "trace.csv"),
    )
    _write_atomic(
        os.path.join(config.out, "metrics.csv"),
        "\n".join(
            [METRICS_HEADER, METRIC_COLUMNS, _metric_row(config.proposal, report)]
        )
        + "\n",
    )
    _write_atomic(os.path.join(config.out, "density.pgm"), grid_to_pgm(empirical))
    _write_atomic(os.path.join(config.out, "target.pgm"), grid_to_pgm(target))
    print(_summary_line(config.proposal, config.seed, report, result.log_z))
    return 0


def compare_proposals(config: RunConfig) -> int:
    """All configured proposals under one master seed."""
    model = build_model(config)
    reward = build_reward(config, model)
    target = enumerate_target(model, reward, config.alpha)
    os.makedirs(config.out, exist_ok=True)
    rows = [COMPARISON_HEADER, METRIC_COLUMNS]
    for proposal in config.proposals:
        sampler = _build_sampler(config, model, reward, proposal)
        result = sampler.run(config.seed)
        report = metrics(result.particles, reward, target, vocab=model.vocab)
        rows.append(_metric_row(proposal, report))
        if proposal != "approx_guidance":
            tmp = os.path.join(config.out, f"trace_{proposal}.csv.tmp")
            traces_to_csv(result.traces, tmp)
            os.replace(tmp, os.path.join(config.out, f"trace_{proposal}.csv"))
        print(_summary_line(proposal, config.seed, report, result.log_z))
    _write_atomic(
        os.path.join(config.out, "comparison.csv"), "\n".join(rows) + "\n"
    )
    return 0


def enumerate_target_cmd(config: RunConfig) -> int:
    model = build_model(config)
    reward = build_reward(config, model)
    target = enumerate_target(model, reward, config.alpha)
    os.makedirs(config.out, exist_ok=True)
    _write_atomic(os.path.join(config.out, "target.txt"), grid_to_text(target))
    _write_atomic(os.path.join(config.out, "target.pgm"), grid_to_pgm(target))
    peak = np.unravel_index(np.argmax(target.table), target.table.shape)
    print(
        f"target reward={config.reward} alpha={config.alpha!r} "
        f"bins={target.table.size} peak={tuple(int(v) for v in peak)}"
    )
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddsmc",
        description=(
            "Reward-tilted sampling from tabular discrete diffusion models "
            "via twisted sequential Monte Carlo."
        ),
        epilog=(
            "Config format: flat 'key = value' lines, '#' comments. "
            "Required keys: proposal, reward. Optional keys and defaults: "
            "family=masked, particles=2000, steps=100, alpha=1.0, "
            "temper=linear, temper_base=1.05, noise=linear, "
            "ess_min=particles/2, resample=full_systematic, eta_cap=0.1, "
            "gumbel_tau=0.5, gumbel_samples=100, seed=0, grid_size=64, "
            "gmm_components= (semicolon list of 'mean_i,mean_j,sigma,weight'), "
            "model_file= (path, excludes gmm_components), reward_wx=0.01, "
            "reward_wy=1.0, reward_ox=0.0, reward_oy=0.0, workers=1, "
            "final_resample=false, out=out, proposals=all four."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="one seeded sampling run")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None)
    cmp_p = sub.add_parser("compare", help="all configured proposals, one seed")
    cmp_p.add_argument("--config", required=True)
    enum_p = sub.add_parser(
        "enumerate-target", help="dump the exact tilted target table"
    )
    enum_p.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        if args.command == "run":
            if args.seed is not None:
                if not 0 <= args.seed < 2**63:
                    raise ConfigError("seed must lie in [0, 2^63)")
                config = dataclasses.replace(config, seed=args.seed)
            if args.out is not None:
                config = dataclasses.replace(config, out=args.out)
            return run_experiment(config)
        if args.command == "compare":
            return compare_proposals(config)
        return enumerate_target_cmd(config)
    except GuardError as err:
        print(f"guard refusal: {err}", file=sys.stderr)
        return 4
    except (ConfigError, ValueError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (DegeneracyError, ArithmeticError, FloatingPointError) as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
