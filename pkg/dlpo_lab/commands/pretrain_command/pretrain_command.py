import logging
from pathlib import Path
from typing import Optional

from dlpo_lab.commands.base_command import BaseCommand
from dlpo_lab.trainer import evaluate, pretrain, save_checkpoint, write_metrics

logger = logging.getLogger(__name__)


class PretrainCommand(BaseCommand):
    name: str = "pretrain"
    description: str = "Pretrain the denoiser on the synthetic dataset with the DDPM loss."

    def _run(self, out: Path, config: Optional[Path] = None, seed: Optional[int] = None) -> int:
        experiment = self.load_experiment(config, seed)
        dataset = experiment.dataset()
        state, rows = pretrain(experiment, dataset)
        final = evaluate(state.params, experiment, algo="pretrained", step=len(rows))
        logger.info(
            "Pretrained: reward %.4f, heldout %.4f, recovery error %.3f",
            final.reward_mos,
            final.heldout,
            final.recovery_err,
        )
        path = save_checkpoint(
            Path(out) / "pretrained.ckpt",
            state.params,
            {"step": state.step, "seed": experiment.config.seed, "config_sha256": experiment.config.sha256()},
        )
        write_metrics(Path(out) / "pretrain_metrics.csv", [*rows, final])
        logger.info("Wrote %s", path)
        return 0
