"""CLI entrypoint and high-level orchestration of training, evaluation and experiments."""

import argparse
import json
import logging
import sys
from collections import Counter
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .assembly_env import EnvConfig
from .config import (
    CHECKPOINT_DIR_NAME,
    CONFIG_SNAPSHOT_NAME,
    DEFAULT_EVAL_EPISODES,
    EPISODE_LOG_NAME,
    EVAL_REPORT_NAME,
    METRICS_LOG_NAME,
    ORACLE_STATE_BUDGET,
    RERUN_REPORT_TEMPLATE,
)
from .env import get_default_workers, get_output_root, load_env_file
from .errors import AssemblyError, ConfigError, GenerationError, TaskFileError, TaskValidationError
from .harness import (
    PRESET_PERTURBATIONS,
    SURROGATE_SPECS,
    TASK1_TYPE_MIX,
    PerturbationSchedule,
    SuiteConfig,
    TaskGenSpec,
    generate_task,
    optimal_steps_oracle,
    run_experiment_suite,
    run_perturbed_eval,
)
from .history import append_jsonl, episode_log_rows, write_json
from .learning import Algorithm, TrainConfig, evaluate, load_agents, train
from .report import render_board, render_eval_summary
from .task_model import default_max_steps, initial_state, load_task

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
PERTURB_REPORT_NAME = "perturb.json"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

# Errors caused by bad inputs rather than by a failing computation.
VALIDATION_ERRORS = (TaskFileError, TaskValidationError, ConfigError, GenerationError)


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to replay a training run."""

    task: str | None = None
    algorithm: str = Algorithm.STACKELBERG.value
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_episodes: int = DEFAULT_EVAL_EPISODES

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", Algorithm.parse(self.algorithm).value)
        if self.eval_episodes < 1:
            raise ConfigError(f"eval_episodes must be positive, got {self.eval_episodes}.")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "algorithm": self.algorithm,
            "env": self.env.to_dict(),
            "train": self.train.to_dict(),
            "eval_episodes": self.eval_episodes,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "RunConfig":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown run settings: {', '.join(sorted(unknown))}.")
        values = dict(payload)
        if "env" in values:
            values["env"] = EnvConfig.from_dict(values["env"])
        if "train" in values:
            values["train"] = TrainConfig.from_dict(values["train"])
        return cls(**values)


class UsageErrorParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage-error code instead of argparse's 2."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging(verbosity: int = 0) -> None:
    """Install one stream handler; -v for DEBUG, -q for WARNING."""
    if verbosity > 0:
        level = logging.DEBUG
    elif verbosity < 0:
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    # basicConfig is a no-op once handlers exist; the level still has to follow the flags.
    logging.getLogger().setLevel(level)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _read_config_file(path: Path | None) -> dict[str, Any]:
    """Load a JSON config document; an absent path means no overrides."""
    if path is None:
        return {}
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Could not parse config file {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object.")
    return payload


def _given(args: argparse.Namespace, mapping: dict[str, str]) -> dict[str, Any]:
    """Explicitly passed flags (non-None), renamed to config keys."""
    return {key: getattr(args, attr) for attr, key in mapping.items() if getattr(args, attr, None) is not None}


ENV_FLAGS = {
    "p_individual": "p_individual",
    "p_cooperative": "p_cooperative",
    "max_steps": "max_steps",
}
TRAIN_FLAGS = {
    "episodes": "episodes",
    "seed": "seed",
    "gamma": "gamma",
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "buffer_capacity": "buffer_capacity",
    "tau": "tau",
    "target_period": "target_period",
    "hidden": "hidden_sizes",
    "epsilon_start": "epsilon_start",
    "epsilon_end": "epsilon_end",
    "epsilon_decay_fraction": "epsilon_decay_fraction",
    "log_every": "log_every",
    "checkpoint_every": "checkpoint_every",
}


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the --config document, then explicit flags."""
    base = RunConfig.from_dict(_read_config_file(args.config))
    env_values = {**base.env.to_dict(), **_given(args, ENV_FLAGS)}
    if args.deterministic:
        env_values["deterministic"] = True
    train_values = {**base.train.to_dict(), **_given(args, TRAIN_FLAGS)}
    return replace(
        base,
        task=args.task if args.task is not None else base.task,
        algorithm=args.algo if args.algo is not None else base.algorithm,
        env=EnvConfig.from_dict(env_values),
        train=TrainConfig.from_dict(train_values),
        eval_episodes=args.eval_episodes if args.eval_episodes is not None else base.eval_episodes,
    )


def _fresh_file(path: Path) -> Path:
    # Logs are appended; a rerun into the same directory starts them over.
    path.unlink(missing_ok=True)
    return path


def _load_run_config(run_dir: Path) -> RunConfig:
    snapshot = run_dir / CONFIG_SNAPSHOT_NAME
    if not snapshot.exists():
        raise ConfigError(f"No {CONFIG_SNAPSHOT_NAME} in {run_dir}; is it a training run directory?")
    return RunConfig.from_dict(_read_config_file(snapshot))


def _run_env_config(run_config: RunConfig, deterministic: bool = False) -> EnvConfig:
    """The run's environment with its training step budget; rewards and probabilities carry over."""
    env_config = run_config.env
    if run_config.train.max_steps is not None:
        env_config = replace(env_config, max_steps=run_config.train.max_steps)
    if deterministic:
        env_config = replace(env_config, deterministic=True)
    return env_config


def _load_trained(run_dir: Path):
    """Online and target networks from a run's final checkpoint."""
    checkpoint_dir = run_dir / CHECKPOINT_DIR_NAME / "final"
    if not (checkpoint_dir / "leader.npz").exists():
        raise ConfigError(f"No final checkpoint under {checkpoint_dir}.")
    nets, _ = load_agents(checkpoint_dir)
    return nets


def cmd_train(args: argparse.Namespace) -> int:
    """Train one run, snapshot its config and write the greedy evaluation report."""
    run_config = resolve_run_config(args)
    if run_config.task is None:
        raise ConfigError("No task given; pass a task file or a config with a 'task' entry.")
    task = load_task(run_config.task)
    run_dir = args.run_dir or get_output_root() / (
        f"{task.name}-{run_config.algorithm}-seed{run_config.train.seed}"
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / CONFIG_SNAPSHOT_NAME, run_config.to_dict())

    result = train(
        task,
        run_config.env,
        run_config.train,
        run_config.algorithm,
        run_dir=run_dir,
        metrics_path=_fresh_file(run_dir / METRICS_LOG_NAME),
    )
    summary = evaluate(
        result.nets,
        task,
        _run_env_config(run_config),
        run_config.eval_episodes,
        np.random.default_rng(run_config.train.seed),
        run_config.algorithm,
    )
    write_json(run_dir / EVAL_REPORT_NAME, summary.to_dict())

    print(render_eval_summary(f"{task.name} / {run_config.algorithm.upper()} greedy evaluation", summary.to_dict()))
    print(f"Run directory: {run_dir}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    """Re-evaluate a trained run; the report is keyed by mode and seed."""
    run_config = _load_run_config(args.run_dir)
    task = load_task(args.task or run_config.task)
    nets = _load_trained(args.run_dir)
    env_config = _run_env_config(run_config, args.deterministic)
    algorithm = args.algo or run_config.algorithm

    summary = evaluate(nets, task, env_config, args.episodes, np.random.default_rng(args.seed), algorithm)
    log_path = _fresh_file(args.run_dir / EPISODE_LOG_NAME)
    for episode, record in enumerate(summary.episodes, start=1):
        append_jsonl(log_path, episode_log_rows(episode, record))
    mode = "deterministic" if env_config.deterministic else "stochastic"
    # eval.json belongs to the training run; reruns get their own report.
    write_json(args.run_dir / RERUN_REPORT_TEMPLATE.format(mode=mode, seed=args.seed), summary.to_dict())

    print(render_eval_summary(f"{task.name} / {str(algorithm).upper()} ({mode}, {args.episodes} runs)", summary.to_dict()))
    return EXIT_OK


def cmd_perturb(args: argparse.Namespace) -> int:
    """Greedy runs with and without forced idle steps, on the run's own environment."""
    run_config = _load_run_config(args.run_dir)
    task = load_task(args.task or run_config.task)
    if args.schedule is not None:
        schedule = PerturbationSchedule.parse(args.schedule)
    elif task.name in PRESET_PERTURBATIONS:
        schedule = PRESET_PERTURBATIONS[task.name]
    else:
        raise ConfigError(f"No preset perturbation for {task.name}; pass --schedule such as L:1,F:3.")
    nets = _load_trained(args.run_dir)
    algorithm = args.algo or run_config.algorithm
    env_config = _run_env_config(run_config, deterministic=True)

    normal = run_perturbed_eval(nets, task, PerturbationSchedule(), args.runs, env_config, algorithm, args.seed)
    perturbed = run_perturbed_eval(nets, task, schedule, args.runs, env_config, algorithm, args.seed)
    write_json(args.run_dir / PERTURB_REPORT_NAME, {"normal": normal.to_dict(), "perturbed": perturbed.to_dict()})

    print(render_eval_summary(f"{task.name}: normal deterministic runs", normal.metrics.to_dict()))
    print(render_eval_summary(f"{task.name}: perturbed at {schedule.to_text()}", perturbed.metrics.to_dict()))
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    """Print the optimal completion steps and one schedule that reaches them."""
    task = load_task(args.task)
    result = optimal_steps_oracle(task, args.budget)
    print(f"Optimal completion steps for {task.name}: {result.steps} ({result.states_visited} board states searched)")
    for index, (leader, follower) in enumerate(result.schedule, start=1):
        leader_text = "-" if leader is None else str(leader)
        follower_text = "-" if follower is None else str(follower)
        print(f"  step {index:>3}: leader {leader_text:>4}  follower {follower_text:>4}")
    print(render_board(task, initial_state(task)))
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    """Generate a random valid task file."""
    spec = TaskGenSpec(
        n_columns=args.columns,
        n_subtasks=args.subtasks,
        type_weights=args.type_weights,
        rows=args.rows,
        seed=args.seed,
        name=args.name,
        cross_edge_probability=args.cross_edges,
    )
    output = args.output if args.output.suffix == ".json" else args.output.with_suffix(".json")
    task = generate_task(spec, output)
    print(f"Wrote {task.name} ({task.n_subtasks} sub-tasks, {len(task.edges)} edges) to {output}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    task = load_task(args.task)
    type_counts = Counter(subtask.task_type for subtask in task.subtasks)
    print(f"Task {task.name}: {task.n_subtasks} sub-tasks in {task.n_columns} columns, {len(task.edges)} edges")
    print("Types: " + ", ".join(f"type {kind} x{type_counts.get(kind, 0)}" for kind in (1, 2, 3, 4)))
    print(f"Step budget: {default_max_steps(task)}")
    print(render_board(task, initial_state(task)))
    return EXIT_OK


def cmd_suite(args: argparse.Namespace) -> int:
    """Run a multi-seed experiment suite and print its results table."""
    values = _read_config_file(args.config)
    if args.tasks is not None:
        values["tasks"] = args.tasks
    if args.algos is not None:
        values["algorithms"] = args.algos
    if args.seeds is not None:
        values["seeds"] = list(args.seeds)
    if args.workers is not None:
        values["workers"] = args.workers
    elif "workers" not in values:
        values["workers"] = get_default_workers()
    if args.eval_episodes is not None:
        values["eval_episodes"] = args.eval_episodes
    if args.surrogates:
        values["generated"] = [spec.to_dict() for spec in SURROGATE_SPECS]
    if args.episodes is not None:
        values["train"] = {**values.get("train", {}), "episodes": args.episodes}
    suite_config = SuiteConfig.from_dict(values)

    output_dir = args.output or get_output_root() / "suite"
    output_dir.mkdir(parents=True, exist_ok=True)
    write_json(output_dir / CONFIG_SNAPSHOT_NAME, suite_config.to_dict())

    result = run_experiment_suite(suite_config, output_dir)
    print(result.table)
    print(f"Results written to {output_dir}")
    return EXIT_OK


def _add_verbosity(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More log output (DEBUG).")
    parser.add_argument("-q", "--quiet", action="count", default=0, help="Less log output (WARNING).")


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per operation."""
    parser = UsageErrorParser(description="Stackelberg double deep Q-learning for collaborative assembly")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=UsageErrorParser)

    train_parser = commands.add_parser("train", help="Train leader and follower networks on a task.")
    train_parser.add_argument("task", nargs="?", help="Task file, with or without .json.")
    train_parser.add_argument("--algo", help="sg (Stackelberg), nash or ind (independent).")
    train_parser.add_argument("--config", type=Path, help="JSON run config; a run's config.json replays it.")
    train_parser.add_argument("--run-dir", type=Path, help="Output directory (default: <output root>/<task>-<algo>-seed<seed>).")
    train_parser.add_argument("--episodes", type=int)
    train_parser.add_argument("--seed", type=int)
    train_parser.add_argument("--max-steps", type=int, help="Step budget per episode.")
    train_parser.add_argument("--gamma", type=float)
    train_parser.add_argument("--lr", type=float, help="Adam learning rate.")
    train_parser.add_argument("--batch-size", type=int)
    train_parser.add_argument("--buffer-capacity", type=int)
    train_parser.add_argument("--tau", type=float, help="Target blending weight kept from the old target.")
    train_parser.add_argument("--target-period", type=int, help="Steps between soft target updates.")
    train_parser.add_argument("--hidden", type=_int_list, help="Hidden layer widths, e.g. 128,128.")
    train_parser.add_argument("--epsilon-start", type=float)
    train_parser.add_argument("--epsilon-end", type=float)
    train_parser.add_argument("--epsilon-decay-fraction", type=float)
    train_parser.add_argument("--log-every", type=int)
    train_parser.add_argument("--checkpoint-every", type=int, help="Episodes between checkpoints; 0 keeps only the final one.")
    train_parser.add_argument("--p-individual", type=float)
    train_parser.add_argument("--p-cooperative", type=float)
    train_parser.add_argument("--deterministic", action="store_true", help="Train with certain sub-task success.")
    train_parser.add_argument("--eval-episodes", type=int)
    _add_verbosity(train_parser)
    train_parser.set_defaults(handler=cmd_train)

    eval_parser = commands.add_parser("eval", help="Greedy evaluation of a trained run.")
    eval_parser.add_argument("run_dir", type=Path)
    eval_parser.add_argument("task", nargs="?", help="Task file (default: the run's task).")
    eval_parser.add_argument("--algo")
    eval_parser.add_argument("--episodes", type=int, default=DEFAULT_EVAL_EPISODES)
    eval_parser.add_argument("--seed", type=int, default=0)
    eval_parser.add_argument("--deterministic", action="store_true")
    _add_verbosity(eval_parser)
    eval_parser.set_defaults(handler=cmd_eval)

    perturb_parser = commands.add_parser("perturb", help="Deterministic runs with forced no-ops.")
    perturb_parser.add_argument("run_dir", type=Path)
    perturb_parser.add_argument("task", nargs="?", help="Task file (default: the run's task).")
    perturb_parser.add_argument("--schedule", help="AGENT:STEP pairs, e.g. L:1,L:4,F:6,F:8 (default: task preset).")
    perturb_parser.add_argument("--runs", type=int, default=DEFAULT_EVAL_EPISODES)
    perturb_parser.add_argument("--seed", type=int, default=0)
    perturb_parser.add_argument("--algo")
    _add_verbosity(perturb_parser)
    perturb_parser.set_defaults(handler=cmd_perturb)

    oracle_parser = commands.add_parser("oracle", help="Minimum completion steps by exhaustive search.")
    oracle_parser.add_argument("task")
    oracle_parser.add_argument("--budget", type=int, default=ORACLE_STATE_BUDGET, help="Maximum board states to visit.")
    _add_verbosity(oracle_parser)
    oracle_parser.set_defaults(handler=cmd_oracle)

    gen_parser = commands.add_parser("gen", help="Generate a random valid task file.")
    gen_parser.add_argument("--columns", type=int, default=4)
    gen_parser.add_argument("--subtasks", type=int, default=18)
    gen_parser.add_argument("--type-weights", type=_float_list, default=TASK1_TYPE_MIX, help="Weights of types 1-4, e.g. 4,4,8,2.")
    gen_parser.add_argument("--rows", type=int)
    gen_parser.add_argument("--seed", type=int, default=0)
    gen_parser.add_argument("--name")
    gen_parser.add_argument("--cross-edges", type=float, default=0.15, help="Chance of an extra cross-column edge.")
    gen_parser.add_argument("-o", "--output", type=Path, required=True)
    _add_verbosity(gen_parser)
    gen_parser.set_defaults(handler=cmd_gen)

    validate_parser = commands.add_parser("validate", help="Check a task file and draw its board.")
    validate_parser.add_argument("task")
    _add_verbosity(validate_parser)
    validate_parser.set_defaults(handler=cmd_validate)

    suite_parser = commands.add_parser("suite", help="Multi-seed training and the results table.")
    suite_parser.add_argument("--config", type=Path, help="JSON suite config.")
    suite_parser.add_argument("--tasks", nargs="+")
    suite_parser.add_argument("--algos", nargs="+")
    suite_parser.add_argument("--seeds", type=_int_list, help="e.g. 0,1,2")
    suite_parser.add_argument("--episodes", type=int)
    suite_parser.add_argument("--eval-episodes", type=int)
    suite_parser.add_argument("--workers", type=int, help="Worker processes (default: $STACKASSEMBLY_WORKERS or 1).")
    suite_parser.add_argument("--surrogates", action="store_true", help="Add generated tasks of 18, 20 and 26 sub-tasks.")
    suite_parser.add_argument("-o", "--output", type=Path)
    _add_verbosity(suite_parser)
    suite_parser.set_defaults(handler=cmd_suite)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    configure_logging(args.verbose - args.quiet)
    load_env_file()
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AssemblyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        logger.debug("Command %s failed.", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
