"""Command-line entry point.

Every subcommand writes under ``--output_dir``. Configuration precedence is
preset < ``--config`` JSON file < flags. Exit status is 0 on success, 2 on
usage errors and 1 on runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import warnings

import numpy as np

from .config import ALGOS, ENVS, TrainConfig, preset

_SKIP = {"algo", "env", "seed"}
_TUPLES = {"enc_hidden_sizes", "inf_hidden_sizes", "pol_hidden_sizes"}
_OPTIONAL_INT = {"n_tasks", "pr_steps", "ad_batch_size"}
_OPTIONAL_FLOAT = {"ad_lr"}


class UsageError(Exception):
    pass


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(p):
    p.add_argument("--env", choices=ENVS, default=argparse.SUPPRESS)
    p.add_argument("--algo", choices=ALGOS, default=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON file of TrainConfig fields")
    for f in dataclasses.fields(TrainConfig):
        if f.name in _SKIP:
            continue
        flag = f"--{f.name}"
        if f.name in _TUPLES:
            p.add_argument(flag, type=int, nargs="+", default=argparse.SUPPRESS)
        elif f.name in _OPTIONAL_INT:
            p.add_argument(flag, type=int, default=argparse.SUPPRESS)
        elif f.name in _OPTIONAL_FLOAT:
            p.add_argument(flag, type=float, default=argparse.SUPPRESS)
        elif f.type in ("bool", bool):
            p.add_argument(flag, type=_bool, default=argparse.SUPPRESS)
        elif f.type in ("int", int):
            p.add_argument(flag, type=int, default=argparse.SUPPRESS)
        elif f.type in ("float", float):
            p.add_argument(flag, type=float, default=argparse.SUPPRESS)
        else:
            p.add_argument(flag, type=str, default=argparse.SUPPRESS)


def parse_config(args) -> TrainConfig:
    """Merge preset, config file and explicit flags into a validated config."""
    file_values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_values = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"--config: file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"--config: invalid JSON in {args.config}: {exc}") from None
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(file_values) - names)
    if unknown:
        raise UsageError(f"--config: unknown keys {unknown}")
    flags = {k: v for k, v in vars(args).items() if k in names}
    env = flags.get("env", file_values.get("env"))
    if env is None:
        raise UsageError("--env is required (or set 'env' in the config file)")
    algo = flags.get("algo", file_values.get("algo", "ateppo"))
    try:
        cfg = preset(env, algo)
        merged = cfg.to_dict()
        merged.update(file_values)
        merged.update(flags)
        if merged["algo"] == "teppo":
            merged["ad_steps"] = 0
        cfg = TrainConfig.from_dict(merged)
        cfg.validate()
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    return cfg


# -- helpers -----------------------------------------------------------------

def _checkpoint_dir(run_dir, which="final"):
    root = os.path.join(run_dir, "checkpoints")
    if not os.path.isdir(root):
        raise FileNotFoundError(f"no checkpoints under {run_dir}")
    if which != "final":
        path = os.path.join(root, which if which.startswith("epoch_") else f"epoch_{which}")
        if not os.path.isdir(path):
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return path
    epochs = [int(d.split("_")[1]) for d in os.listdir(root) if d.startswith("epoch_")]
    if not epochs:
        raise FileNotFoundError(f"no checkpoints under {root}")
    return os.path.join(root, f"epoch_{max(epochs)}")


def _load_run(args):
    from .agent import Agent
    from .trainer import load_config, make_env

    cfg = load_config(os.path.join(args.run_dir, "config.json"))
    agent = Agent.load(_checkpoint_dir(args.run_dir, args.checkpoint))
    return cfg, agent, make_env(cfg)


def _out(args):
    out = args.output_dir or getattr(args, "run_dir", None)
    if not out:
        raise UsageError("--output_dir is required")
    os.makedirs(out, exist_ok=True)
    return out


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return repr(float(x))


# -- subcommands -------------------------------------------------------------

def cmd_train(args):
    from .plotting import emit_plots
    from .trainer import Trainer

    cfg = parse_config(args)
    out = _out(args)

    def progress(row):
        if args.verbose:
            print(f"epoch {row['epoch']:4d}  return {row['mean_return']:10.4f}  "
                  f"success {row['success_rate']:.3f}", flush=True)

    art = Trainer(cfg).run(out, save_trajectories=True, progress=progress)
    if not args.no_plots:
        emit_plots(out, goals=_goals(cfg))
    last = art.curve[-1] if art.curve else None
    print(f"wrote {out}" + (f"; final mean_return {last['mean_return']:.4f}" if last else ""))
    return 0


def _goals(cfg):
    from .trainer import make_env

    return make_env(cfg).goals


def cmd_eval(args):
    from .agent import rollout
    from .envs import write_trajectories
    from .plotting import plot_trajectories
    from .envs import read_trajectories

    cfg, agent, env = _load_run(args)
    out = _out(args)
    means, _ = agent.task_heads()
    tasks = np.repeat(np.arange(agent.k), args.n_per_task)
    z = None if args.sample_skills else means[tasks]
    trajs = rollout(agent, env, tasks, np.random.default_rng(args.seed), z=z,
                    deterministic=not args.stochastic)
    _write_rows(os.path.join(out, "eval.csv"), ["episode", "task", "return", "length", "success"],
                [[i, t.task, _fmt(t.total_reward), len(t), int(t.terminal)]
                 for i, t in enumerate(trajs)])
    tp = os.path.join(out, "eval_trajectories.csv")
    write_trajectories(tp, trajs)
    plot_trajectories(read_trajectories(tp), os.path.join(out, "eval_trajectories.svg"),
                      goals=env.goals)
    print(f"mean return {np.mean([t.total_reward for t in trajs]):.4f} over {len(trajs)} episodes")
    return 0


def cmd_ace(args):
    from .causal import agent_importance, write_ace_csv, write_importance_csv

    cfg, agent, env = _load_run(args)
    out = _out(args)
    table, reports = agent_importance(agent, env, n_points=args.n_points,
                                      n_rollouts=args.n_rollouts, seed=args.seed,
                                      deterministic=args.deterministic)
    write_ace_csv(os.path.join(out, "ace.csv"), reports)
    write_importance_csv(os.path.join(out, "importance.csv"), reports)
    for t, row in enumerate(table):
        print(f"task {t}: " + " ".join(f"z{i}={v:.3f}" for i, v in enumerate(row)))
    return 0


def cmd_perturb(args):
    from .causal import perturb_sweep
    from .envs import write_trajectories

    cfg, agent, env = _load_run(args)
    out = _out(args)
    if not 0 <= args.task < agent.k or not 0 <= args.component < agent.latent_dim:
        raise UsageError("--task or --component out of range")
    if args.values:
        values = sorted(args.values)
    else:
        means, log_std = agent.task_heads()
        mu = means[args.task, args.component]
        values = list(np.linspace(mu - args.width, mu + args.width, args.n_points))
    sweeps = perturb_sweep(agent, env, args.task, args.component, values,
                           np.random.default_rng(args.seed), deterministic=not args.stochastic)
    flat, rows = [], []
    for v, trajs in zip(values, sweeps):
        for tr in trajs:
            rows.append([len(flat), _fmt(v), _fmt(tr.total_reward)])
            flat.append(tr)
    _write_rows(os.path.join(out, "perturb.csv"), ["episode", "value", "return"], rows)
    write_trajectories(os.path.join(out, "perturb_trajectories.csv"), flat)
    _plot_perturb(flat, values, env.goals, os.path.join(out, "perturb.svg"))
    print(f"wrote {len(flat)} trajectories to {out}")
    return 0


def _plot_perturb(trajs, values, goals, path):
    from .plotting import plot_trajectories

    episodes = {i: (i % 10, tr.states, tr.rewards) for i, tr in enumerate(trajs)}
    plot_trajectories(episodes, path, goals=goals, title="perturbation sweep")


def cmd_efficiency(args):
    from .geometry import efficiency, embedding_matrix

    cfg, agent, env = _load_run(args)
    out = _out(args)
    scaling = np.asarray(args.scaling, dtype=np.float64) if args.scaling else None
    A = embedding_matrix(agent, None, scaling)
    vol = efficiency(agent, None, scaling)
    _write_rows(os.path.join(out, "embedding_means.csv"),
                ["task"] + [f"z{i}" for i in range(A.shape[1])],
                [[t] + [_fmt(v) for v in row] for t, row in enumerate(A)])
    with open(os.path.join(out, "efficiency.txt"), "w") as fh:
        fh.write(f"{vol!r}\n")
    print(f"efficiency {vol:.6e}")
    for t, row in enumerate(A):
        print(",".join([str(t)] + [f"{v:.6g}" for v in row]))
    return 0


def cmd_fit_q(args):
    from .agent import collect_rollouts
    from .objective import Coefficients
    from .offpolicy import QNet, ReplayBuffer, fit_q, offpolicy_update

    cfg, agent, env = _load_run(args)
    out = _out(args)
    rng = np.random.default_rng(args.seed)
    if args.buffer:
        buf = ReplayBuffer.load(args.buffer)
    else:
        buf = ReplayBuffer(args.capacity)
        buf.add_trajectories(collect_rollouts(env, agent, args.episodes * env.horizon, rng))
    coeffs = Coefficients(cfg.discount, cfg.enc_ent_coeff, cfg.inf_ent_coeff,
                          cfg.policy_ent_coeff, cfg.lr_clip_range)
    qnet = QNet.create(env.obs_dim, env.action_dim, agent.latent_dim, agent.k, rng)
    qnet, losses = fit_q(buf, qnet, agent, coeffs, args.steps,
                         target_copy_interval=args.target_copy_interval, lr=args.q_lr,
                         n_steps=args.bootstrap_steps, n_samples=args.n_expectation_samples,
                         rng=rng, with_h_enc=cfg.inference_reward == "bound")
    _write_rows(os.path.join(out, "q_loss.csv"), ["step", "loss"],
                [[i, _fmt(v)] for i, v in enumerate(losses)])
    buf.save(os.path.join(out, "buffer.npz"))
    qnet.params.save(os.path.join(out, "qnet.json"))
    if args.policy_steps:
        pol_losses = offpolicy_update(buf, agent, qnet, coeffs, lr=args.policy_lr,
                                      steps=args.policy_steps, rng=rng)
        _write_rows(os.path.join(out, "policy_loss.csv"), ["step", "loss"],
                    [[i, _fmt(v)] for i, v in enumerate(pol_losses)])
        agent.save(os.path.join(out, "offpolicy_agent"))
    tail = losses[-1] if losses else float("nan")
    print(f"{len(buf)} episodes in buffer; final q loss {tail:.6g}")
    return 0


def cmd_validate(args):
    from .trainer import alpha_check, make_env

    cfg = parse_config(args)
    try:
        env = make_env(cfg)
    except ValueError as exc:
        raise UsageError(f"{cfg.env} is not simulated here: {exc}") from None
    ok, bound = alpha_check(cfg, env)
    lines = [f"alpha_bound {bound:.6g} (enc_ent_coeff {cfg.enc_ent_coeff:g}): "
             + ("PASS" if ok else "WARN: the regularizer may not dominate the return")]
    if cfg.algo == "ateppo":
        a, p = cfg.effective_ad_steps, cfg.effective_pr_steps
        if a < 1 or p < 1:
            lines.append(f"steps A={a} P={p}: WARN: both must be nonzero for adversarial training")
        elif a > p:
            lines.append(f"steps A={a} P={p}: WARN: adversary steps exceed protagonist steps")
        else:
            lines.append(f"steps A={a} P={p}: PASS")
    for line in lines:
        print(line)
    if args.output_dir:
        os.makedirs(args.output_dir, exist_ok=True)
        with open(os.path.join(args.output_dir, "validate.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(os.path.join(args.output_dir, "config.json"), "w") as fh:
            fh.write(cfg.dumps())
    return 0


def cmd_plot(args):
    from .plotting import emit_plots

    for path in emit_plots(args.run_dirs, args.output_dir, key=args.key):
        print(path)
    return 0


# -- parser ------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="ateppo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent and write a run directory")
    _add_config_flags(p)
    p.add_argument("--output_dir", required=True)
    p.add_argument("--no_plots", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train, _parser=p)

    def run_parser(name, help_text, func):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--run_dir", required=True)
        q.add_argument("--checkpoint", default="final", help="'final' or an epoch number")
        q.add_argument("--output_dir")
        q.add_argument("--seed", type=int, default=0)
        q.set_defaults(func=func, _parser=q)
        return q

    q = run_parser("eval", "roll out a trained agent", cmd_eval)
    q.add_argument("--n_per_task", type=int, default=1)
    q.add_argument("--stochastic", action="store_true", help="sample actions")
    q.add_argument("--sample_skills", action="store_true", help="draw z instead of the mean")

    q = run_parser("ace", "average causal effect of each skill component", cmd_ace)
    q.add_argument("--n_points", type=int, default=20)
    q.add_argument("--n_rollouts", type=int, default=16)
    q.add_argument("--deterministic", action="store_true")

    q = run_parser("perturb", "vary one skill component and record trajectories", cmd_perturb)
    q.add_argument("--task", type=int, required=True)
    q.add_argument("--component", type=int, required=True)
    q.add_argument("--values", type=float, nargs="+")
    q.add_argument("--n_points", type=int, default=5)
    q.add_argument("--width", type=float, default=1.0)
    q.add_argument("--stochastic", action="store_true")

    q = run_parser("efficiency", "squared volume spanned by the task skills", cmd_efficiency)
    q.add_argument("--scaling", type=float, nargs="+")

    q = run_parser("fit-q", "fit a Retrace critic from replayed episodes", cmd_fit_q)
    q.add_argument("--buffer", help="replay buffer file to reuse instead of collecting")
    q.add_argument("--episodes", type=int, default=64)
    q.add_argument("--capacity", type=int, default=10_000)
    q.add_argument("--steps", type=int, default=200)
    q.add_argument("--target_copy_interval", type=int, default=100)
    q.add_argument("--bootstrap_steps", type=int, default=5)
    q.add_argument("--n_expectation_samples", type=int, default=8)
    q.add_argument("--q_lr", type=float, default=1e-3)
    q.add_argument("--policy_steps", type=int, default=0)
    q.add_argument("--policy_lr", type=float, default=1e-4)

    p = sub.add_parser("validate", help="check the regularizer bound and step counts")
    _add_config_flags(p)
    p.add_argument("--output_dir")
    p.set_defaults(func=cmd_validate, _parser=p)

    p = sub.add_parser("plot", help="render SVG figures from run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--output_dir")
    p.add_argument("--key", default="mean_return")
    p.set_defaults(func=cmd_plot, _parser=p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if args.command != "validate" else "default")
            return args.func(args)
    except UsageError as exc:
        sub = args._parser
        sub.print_usage(sys.stderr)
        print(f"{sub.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
