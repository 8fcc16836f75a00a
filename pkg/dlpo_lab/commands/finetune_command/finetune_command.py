import logging
from pathlib import Path
from typing import Optional

from dlpo_lab.commands.base_command import BaseCommand
from dlpo_lab.trainer import TrainState, finetune, load_checkpoint, save_checkpoint, write_metrics

logger = logging.getLogger(__name__)


class FinetuneCommand(BaseCommand):
    name: str = "finetune"
    description: str = "Fine-tune a pretrained checkpoint with one RL objective, keeping the top-k checkpoints."

    def _run(
        self,
        ckpt: Path,
        out: Path,
        config: Optional[Path] = None,
        algo: Optional[str] = None,
        seed: Optional[int] = None,
    ) -> int:
        experiment = self.load_experiment(config, seed, algo)
        pretrained = load_checkpoint(ckpt, experiment.layout)
        dataset = experiment.dataset() if experiment.rl.dl_source == "dataset" else None
        state = TrainState.fresh(pretrained.copy(), experiment.config.seed)
        state, rows = finetune(experiment, state, pretrained, Path(out) / "checkpoints", dataset=dataset)

        write_metrics(Path(out) / "metrics.csv", rows)
        save_checkpoint(
            Path(out) / "final.ckpt",
            state.params,
            {
                "algo": experiment.rl.algo,
                "step": state.step,
                "seed": experiment.config.seed,
                "config_sha256": experiment.config.sha256(),
            },
        )
        for score, path in state.topk:
            logger.info("Top checkpoint %s (validation reward %.4f)", path, score)
        return 0
