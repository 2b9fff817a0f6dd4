"""Command-line entry point: train, params, eval, bench, defaults."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import shlex
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import ARCHITECTURES, LABELS, build_actor, build_actor_critic, build_critic
from .envs import BUILTIN_ENVS, REFERENCE_ENV_DIMS, BridgeEnv, BridgeError, make_env
from .nets import count_params
from .numcore import Rng
from .policy import ActorCritic, NonFiniteOutput
from .ppo import PpoConfig, RunRecord, TrainingAborted, evaluate, train
from .spline import SplineConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CHECKPOINT_FORMAT = "kanppo-checkpoint"
CHECKPOINT_VERSION = 1

CURVE_COLUMNS = ("update", "steps", "seeds", "mean", "std", "min", "max")
EVAL_COLUMNS = ("update", "steps", "episodes", "mean", "std", "min", "max")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message lists every offending field."""


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    # built-in environment name, or a label when ``bridge_command`` is set
    env: str = "pendulum"
    bridge_command: list | None = None
    env_options: dict = field(default_factory=dict)
    arch: str = "full_kan"
    spline: dict = field(default_factory=lambda: SplineConfig().to_dict())
    kan_sigma: float = 0.1
    log_std_init: float = 0.0
    ppo: PpoConfig = field(default_factory=PpoConfig)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    workers: int = 1
    # 0 evaluates only once, after training
    eval_every: int = 0
    eval_episodes: int = 100
    out_dir: str = "runs"

    def spline_config(self) -> SplineConfig:
        return SplineConfig.from_dict(self.spline)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["ppo"] = dataclasses.asdict(self.ppo)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        errors = []
        known = {f.name for f in dataclasses.fields(cls)}
        errors += [f"{k}: unknown field" for k in sorted(set(d) - known)]
        kwargs = {k: v for k, v in d.items() if k in known}

        ppo_raw = kwargs.pop("ppo", {})
        ppo_known = {f.name for f in dataclasses.fields(PpoConfig)}
        if not isinstance(ppo_raw, dict):
            errors.append("ppo: must be an object")
            ppo_raw = {}
        errors += [f"ppo.{k}: unknown field" for k in sorted(set(ppo_raw) - ppo_known)]
        try:
            ppo = PpoConfig(**{k: v for k, v in ppo_raw.items() if k in ppo_known})
        except (ValueError, TypeError) as exc:
            errors += [f"ppo: {msg}" for msg in str(exc).split("; ")]
            ppo = PpoConfig()

        cfg = cls(ppo=ppo, **kwargs)
        errors += cfg._problems()
        if errors:
            raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
        return cfg

    def _problems(self) -> list[str]:
        errors = []
        if self.arch not in ARCHITECTURES:
            errors.append(f"arch: {self.arch!r} is not one of {', '.join(ARCHITECTURES)}")
        if self.bridge_command is None and self.env not in BUILTIN_ENVS:
            errors.append(f"env: {self.env!r} is not a built-in ({', '.join(BUILTIN_ENVS)}); set bridge_command")
        if self.bridge_command is not None and not (
            isinstance(self.bridge_command, list) and self.bridge_command and all(isinstance(a, str) for a in self.bridge_command)
        ):
            errors.append("bridge_command: must be a non-empty list of strings")
        try:
            self.spline_config()
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(f"spline: {exc}")
        if not (isinstance(self.seeds, list) and self.seeds and all(isinstance(s, int) and s >= 0 for s in self.seeds)):
            errors.append("seeds: must be a non-empty list of non-negative integers")
        elif len(set(self.seeds)) != len(self.seeds):
            errors.append("seeds: duplicates")
        if not (isinstance(self.workers, int) and self.workers >= 1):
            errors.append(f"workers: must be >= 1, got {self.workers!r}")
        if not (isinstance(self.eval_every, int) and self.eval_every >= 0):
            errors.append(f"eval_every: must be >= 0, got {self.eval_every!r}")
        if not (isinstance(self.eval_episodes, int) and self.eval_episodes >= 1):
            errors.append(f"eval_episodes: must be >= 1, got {self.eval_episodes!r}")
        if not isinstance(self.env_options, dict):
            errors.append("env_options: must be an object")
        if not (isinstance(self.kan_sigma, (int, float)) and self.kan_sigma >= 0):
            errors.append(f"kan_sigma: must be >= 0, got {self.kan_sigma!r}")
        return errors


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return ExperimentConfig.from_dict(raw)


def output_dir(cfg: ExperimentConfig) -> Path:
    base = os.environ.get("KANPPO_OUT") or cfg.out_dir
    return Path(base) / cfg.name


def dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(ac: ActorCritic, path: Path, meta: dict | None = None):
    payload = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "meta": meta or {}, "policy": ac.to_dict()}
    dump_json(payload, path)


def load_checkpoint(path) -> tuple[ActorCritic, dict]:
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a checkpoint ({exc.msg})") from None
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint format {payload.get('format')!r} v{payload.get('version')!r}")
    return ActorCritic.from_dict(payload["policy"]), payload.get("meta", {})


# -- train -------------------------------------------------------------------


def make_experiment_env(cfg: ExperimentConfig):
    if cfg.bridge_command is not None:
        return BridgeEnv(cfg.bridge_command, name=cfg.env)
    return make_env(cfg.env, **cfg.env_options)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_seed(cfg: ExperimentConfig, seed: int, out: Path) -> Path:
    """Train one seed; returns the path of its CSV log."""
    env = make_experiment_env(cfg)
    eval_env = make_experiment_env(cfg)
    try:
        root = Rng(seed)
        ac = build_actor_critic(
            cfg.arch,
            env.spec.obs_dim,
            env.spec.act_dim,
            spline=cfg.spline_config(),
            rng=root.split("init"),
            normalize_obs=cfg.ppo.normalize_obs,
            kan_sigma=cfg.kan_sigma,
            log_std_init=cfg.log_std_init,
        )
        records, evals = [], []

        def run_eval(update, steps):
            # same initial states at every evaluation point
            res = evaluate(ac, eval_env, cfg.eval_episodes, root.split("eval"))
            evals.append((update, steps, res.episodes, res.mean, res.std, res.min, res.max))

        def on_update(ac_, rec):
            if cfg.eval_every and rec.update % cfg.eval_every == 0:
                run_eval(rec.update, rec.steps)
            return False

        ckpt_dir = out / "checkpoints"

        def checkpoint(ac_, update):
            ckpt_dir.mkdir(exist_ok=True)
            save_checkpoint(ac_, ckpt_dir / f"seed{seed}_update{update}.json", {"seed": seed, "update": update})

        status = "ok"
        try:
            train(ac, env, cfg.ppo, root, log=records.append, seed=seed, on_update=on_update, checkpoint=checkpoint)
        except TrainingAborted as exc:
            status = f"aborted: {exc}"
        if not evals or evals[-1][0] != len(records):
            run_eval(len(records), records[-1].steps if records else 0)

        stem = out / f"seed{seed}"
        csv_path = stem.with_suffix(".csv")
        write_csv(csv_path, RunRecord.CSV_COLUMNS, [r.csv_row() for r in records])
        write_csv(stem.with_suffix(".timing.csv"), ("update", "wall_ms"), [(r.update, f"{r.wall_ms:.3f}") for r in records])
        write_csv(stem.with_suffix(".eval.csv"), EVAL_COLUMNS, [[repr(v) if isinstance(v, float) else str(v) for v in row] for row in evals])
        save_checkpoint(ac, stem.with_suffix(".final.json"), {"seed": seed, "update": len(records), "arch": cfg.arch, "env": cfg.env})
        if status != "ok":
            raise TrainingAborted(f"seed {seed}: {status}", len(records), ac.params.copy())
        return csv_path
    finally:
        env.close()
        eval_env.close()


def _run_seed_job(args):
    cfg_dict, seed, out = args
    return run_seed(ExperimentConfig.from_dict(cfg_dict), seed, Path(out))


def read_log(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def merge_curves(paths) -> list[list]:
    """Per-update mean/std/min/max of ``mean_return`` across seeds; rollouts with no finished episode are skipped."""
    by_update = {}
    for path in paths:
        for row in read_log(path):
            key = (int(row["update"]), int(row["steps"]))
            by_update.setdefault(key, [])
            value = float(row["mean_return"])
            if math.isfinite(value):
                by_update[key].append(value)
    rows = []
    for (update, steps), values in sorted(by_update.items()):
        if values:
            v = np.array(values)
            stats = [repr(float(v.mean())), repr(float(v.std())), repr(float(v.min())), repr(float(v.max()))]
        else:
            stats = ["nan"] * 4
        rows.append([update, steps, len(values), *stats])
    return rows


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(cfg.to_dict(), out / "config.json")
    jobs = [(cfg.to_dict(), seed, str(out)) for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            paths = list(pool.map(_run_seed_job, jobs))
    else:
        paths = [_run_seed_job(job) for job in jobs]
    write_csv(out / "curve.csv", CURVE_COLUMNS, merge_curves(paths))
    summary = []
    for seed in cfg.seeds:
        final = read_log(out / f"seed{seed}.eval.csv")[-1]
        summary.append(final)
        print(f"seed {seed}: eval mean {float(final['mean']):.3f} over {final['episodes']} episodes")
    print(f"wrote {out}")
    return EXIT_OK


# -- params ------------------------------------------------------------------


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def count_actor_critic(arch: str, obs_dim: int, act_dim: int, spline: SplineConfig) -> tuple[int, int]:
    return count_params(build_actor(arch, obs_dim, act_dim, spline)), count_params(build_critic(arch, obs_dim, spline))


def params_table(arch: str, spline: SplineConfig) -> dict:
    """Per-environment counts for the audit task set plus rounded averages.

    Actor and critic averages are rounded separately; the total average is
    their sum.
    """
    rows = {name: count_actor_critic(arch, *dims, spline) for name, dims in REFERENCE_ENV_DIMS.items()}
    actor_avg = round_half_up(sum(a for a, _ in rows.values()) / len(rows))
    critic_avg = round_half_up(sum(c for _, c in rows.values()) / len(rows))
    return {"rows": rows, "actor_avg": actor_avg, "critic_avg": critic_avg, "total_avg": actor_avg + critic_avg}


def parse_dims(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--dims expects IN,OUT integers, got {text!r}") from None
    if a < 1 or b < 1:
        raise ConfigError(f"--dims must be positive, got {text!r}")
    return a, b


def resolve_dims(args) -> tuple[int, int]:
    if args.dims:
        return parse_dims(args.dims)
    if args.env in REFERENCE_ENV_DIMS:
        return REFERENCE_ENV_DIMS[args.env]
    if args.env in BUILTIN_ENVS:
        spec = make_env(args.env).spec
        return spec.obs_dim, spec.act_dim
    known = ", ".join(list(REFERENCE_ENV_DIMS) + list(BUILTIN_ENVS))
    raise ConfigError(f"unknown env {args.env!r}; known: {known}")


def cmd_params(args) -> int:
    try:
        spline = SplineConfig(order_k=args.k, grid_g=args.g)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    archs = [args.arch] if args.arch else list(ARCHITECTURES)
    if args.all_envs or not (args.env or args.dims):
        for arch in archs:
            table = params_table(arch, spline)
            print(f"{arch} ({LABELS[arch]})")
            print(f"  {'env':<22}{'actor':>8}{'critic':>8}{'total':>8}")
            for name, (a, c) in table["rows"].items():
                print(f"  {name:<22}{a:>8}{c:>8}{a + c:>8}")
            print(f"  {'average':<22}{table['actor_avg']:>8}{table['critic_avg']:>8}{table['total_avg']:>8}")
        return EXIT_OK
    obs_dim, act_dim = resolve_dims(args)
    for arch in archs:
        a, c = count_actor_critic(arch, obs_dim, act_dim, spline)
        print(f"{arch} {obs_dim}->{act_dim}: actor {a} critic {c} total {a + c}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    ac, meta = load_checkpoint(args.checkpoint)
    if args.bridge:
        env = BridgeEnv(shlex.split(args.bridge), name=args.env or "bridge")
    else:
        if args.env not in BUILTIN_ENVS:
            raise ConfigError(f"unknown env {args.env!r}; built-ins: {', '.join(BUILTIN_ENVS)}")
        env = make_env(args.env)
    try:
        if (env.spec.obs_dim, env.spec.act_dim) != (ac.obs_dim, ac.act_dim):
            raise ConfigError(
                f"checkpoint expects obs_dim={ac.obs_dim}, act_dim={ac.act_dim} but env {env.spec.name} "
                f"has obs_dim={env.spec.obs_dim}, act_dim={env.spec.act_dim}"
            )
        result = evaluate(ac, env, args.episodes, Rng(args.seed))
    finally:
        env.close()
    summary = result.summary()
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(
            f"episodes {summary['episodes']} mean {summary['mean']:.6g} std {summary['std']:.6g} "
            f"min {summary['min']:.6g} max {summary['max']:.6g}"
        )
    return EXIT_OK


# -- bench -------------------------------------------------------------------

BENCH_COLUMNS = ("arch", "label", "params", "steps", "total_s", "per_step_ms")


def bench_network(net, obs_dim: int, steps: int, rng: Rng, backward: bool = False) -> float:
    """Wall-clock seconds for ``steps`` single-observation passes."""
    obs = rng.normal((steps, obs_dim))
    grads = net.zero_grads()
    upstream = np.ones(net.n_out)
    t0 = time.perf_counter()
    for x in obs:
        y, cache = net.forward(x)
        if backward:
            net.backward(cache, upstream, grads, need_input_grad=False)
    return time.perf_counter() - t0


def run_bench(obs_dim: int, act_dim: int, steps: int, backward: bool = False, seed: int = 0) -> list[list]:
    rows = []
    contenders = (("mlp_a2_c2", "MLP(64,64)"), ("kan_actor_mlp_critic", "KAN(k=2,g=3)"))
    for arch, label in contenders:
        rng = Rng(seed)
        net = build_actor(arch, obs_dim, act_dim)
        net.params[:] = rng.normal(net.param_count, std=0.1)
        total = bench_network(net, obs_dim, steps, rng, backward)
        rows.append([arch, label, net.param_count, steps, f"{total:.6f}", f"{1000.0 * total / steps:.6f}"])
    return rows


def cmd_bench(args) -> int:
    obs_dim, act_dim = parse_dims(args.dims)
    if args.steps < 1:
        raise ConfigError(f"--steps must be >= 1, got {args.steps}")
    rows = run_bench(obs_dim, act_dim, args.steps, args.backward)
    out = Path(os.environ.get("KANPPO_OUT") or args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench.csv"
    write_csv(path, BENCH_COLUMNS, rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    w.writerows(rows)
    return EXIT_OK


def cmd_defaults(args) -> int:
    print(json.dumps(ExperimentConfig().to_dict(), indent=1, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kanppo", description="PPO with KAN and MLP actor-critics")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train every seed of an experiment config")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    pa = sub.add_parser("params", help="parameter counts per architecture")
    pa.add_argument("--arch", choices=sorted(ARCHITECTURES))
    pa.add_argument("--env")
    pa.add_argument("--dims", help="IN,OUT")
    pa.add_argument("--k", type=int, default=2)
    pa.add_argument("--g", type=int, default=3)
    pa.add_argument("--all-envs", action="store_true")
    pa.set_defaults(func=cmd_params)

    e = sub.add_parser("eval", help="noise-free evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env")
    e.add_argument("--bridge", help="command line of a bridge child process, e.g. 'python3 -m kanppo.envs.stub'")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="forward-pass timing, MLP vs KAN actor")
    b.add_argument("--dims", default="17,6")
    b.add_argument("--steps", type=int, default=1000)
    b.add_argument("--backward", action="store_true", help="time forward+backward")
    b.add_argument("--out", default="runs")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("defaults", help="print the default experiment config")
    d.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "eval" and not (args.env or args.bridge):
        print("kanppo eval: one of --env or --bridge is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"kanppo {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, NonFiniteOutput, BridgeError) as exc:
        print(f"kanppo {args.command}: aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
