from .checkpoint import load_checkpoint, read_sidecar, read_theta, save_checkpoint
from .loops import evaluate, finetune, ground_truth_metrics, pretrain, validation_score
from .metrics import METRICS_HEADER, MetricsRow, TableRow, read_metrics, write_metrics, write_table
from .state import TrainState, adam_update
