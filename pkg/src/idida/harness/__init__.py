"""Training loop, evaluation, checkpoints, reports and the command line."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint
from .config import ABLATIONS, FULL, NO_DISEN, NO_ENV, NO_INTERV, ConfigError, TrainConfig
from .probes import gradcheck_command, scaling_probe
from .report import aggregate, report_emit
from .training import DivergenceError, MetricsReport, evaluate, train
