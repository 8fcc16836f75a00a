from .base_command import BaseCommand
from .compare_command.compare_command import CompareCommand
from .eval_command.eval_command import EvalCommand
from .finetune_command.finetune_command import FinetuneCommand
from .pretrain_command.pretrain_command import PretrainCommand
