"""Shared configuration constants used across the application."""

from pathlib import Path

# Reward quantities for the collaborative assembly game.
R_COP = 2.0
R_IND = 1.0
R_COST = -1.0

# Success probabilities of the stochastic transition kernel.
P_INDIVIDUAL = 0.9
P_COOPERATIVE = 0.7

# Sub-task types: 1 leader only, 2 follower only, 3 either robot, 4 both jointly.
SUBTASK_TYPES = (1, 2, 3, 4)
LEADER_TYPES = frozenset({1, 3})
FOLLOWER_TYPES = frozenset({2, 3})
JOINT_TYPE = 4

# Generated tasks without max_steps get STEPS_PER_SUBTASK steps each, rounded up.
STEPS_PER_SUBTASK = 2.2
STEP_BUDGET_ROUNDING = 10

# Training defaults.
DEFAULT_EPISODES = 10_000
DEFAULT_GAMMA = 0.95
DEFAULT_LEARNING_RATE = 1e-4
DEFAULT_TAU = 0.1
DEFAULT_TARGET_PERIOD = 50
DEFAULT_BATCH_SIZE = 64
DEFAULT_BUFFER_CAPACITY = 100_000
DEFAULT_HIDDEN_SIZES = (128, 128)
EPSILON_START = 1.0
EPSILON_END = 0.05
EPSILON_DECAY_FRACTION = 0.6

# Adam moment decay rates and numerical floor.
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Evaluation defaults.
DEFAULT_EVAL_EPISODES = 10
ORACLE_STATE_BUDGET = 2_000_000
GENERATION_RETRIES = 50

# Output locations and file names inside a run directory.
OUTPUT_ROOT_ENV_VAR = "STACKASSEMBLY_OUTPUT_ROOT"
WORKERS_ENV_VAR = "STACKASSEMBLY_WORKERS"
DEFAULT_OUTPUT_ROOT = Path("runs")
DOTENV_PATH = Path(".env")
CONFIG_SNAPSHOT_NAME = "config.json"
METRICS_LOG_NAME = "metrics.jsonl"
EPISODE_LOG_NAME = "episodes.jsonl"
RESULTS_LOG_NAME = "results.jsonl"
RESULTS_TABLE_NAME = "results.txt"
EVAL_REPORT_NAME = "eval.json"
RERUN_REPORT_TEMPLATE = "eval-{mode}-seed{seed}.json"
CHECKPOINT_DIR_NAME = "checkpoints"
CHECKPOINT_FORMAT_VERSION = 1

MAX_TABLE_WIDTH = 110
