import logging
from pathlib import Path
from typing import Optional

import numpy as np

from dlpo_lab.commands.base_command import BaseCommand
from dlpo_lab.config import Experiment
from dlpo_lab.diffusion.denoiser import DenoiserParams
from dlpo_lab.estimators import ALGOS
from dlpo_lab.trainer import (
    MetricsRow,
    TableRow,
    TrainState,
    evaluate,
    finetune,
    ground_truth_metrics,
    load_checkpoint,
    write_metrics,
    write_table,
)

logger = logging.getLogger(__name__)


def _mean_row(algo: str, rows: list[MetricsRow]) -> TableRow:
    return TableRow(
        algo=algo,
        reward_mos=float(np.mean([row.reward_mos for row in rows])),
        heldout=float(np.mean([row.heldout for row in rows])),
        recovery_err=float(np.mean([row.recovery_err for row in rows])),
    )


def run_algorithm(
    experiment: Experiment,
    pretrained: DenoiserParams,
    seeds: list[int],
    out: Path,
) -> tuple[TableRow, list[MetricsRow]]:
    """Fine-tune from ``pretrained`` once per seed and score each run's best checkpoint."""
    algo = experiment.rl.algo
    dataset = experiment.dataset() if experiment.rl.dl_source == "dataset" else None
    scores, curves = [], []
    for seed in seeds:
        state = TrainState.fresh(pretrained.copy(), seed)
        state, rows = finetune(
            experiment, state, pretrained, out / "runs" / algo / f"seed_{seed}", seed=seed, dataset=dataset
        )
        best = load_checkpoint(state.topk[0][1], experiment.layout) if state.topk else state.params
        scores.append(evaluate(best, experiment, seed=seed, algo=algo, step=state.step, reference=pretrained))
        curves.extend(rows)
    return _mean_row(algo, scores), curves


class CompareCommand(BaseCommand):
    name: str = "compare"
    description: str = (
        "Fine-tune with all six objectives from one checkpoint over several seeds"
        " and write table1.csv and curves_<algo>.csv."
    )

    def _run(self, ckpt: Path, out: Path, config: Optional[Path] = None, seed: Optional[int] = None) -> int:
        experiment = self.load_experiment(config, seed)
        pretrained = load_checkpoint(ckpt, experiment.layout)
        out = Path(out)
        seeds = [experiment.config.seed + i for i in range(experiment.config.compare_seeds)]

        table = [
            _mean_row("pretrained", [evaluate(pretrained, experiment, seed=s, algo="pretrained") for s in seeds])
        ]
        for algo in ALGOS:
            logger.info("Comparing %s over seeds %s", algo, seeds)
            row, curves = run_algorithm(experiment.with_algo(algo), pretrained, seeds, out)
            write_metrics(out / f"curves_{algo}.csv", curves)
            table.append(row)
        if experiment.config.compare_ground_truth:
            table.append(_mean_row("ground_truth", [ground_truth_metrics(experiment, s) for s in seeds]))

        write_table(out / "table1.csv", table)
        for row in table:
            logger.info(
                "%-12s reward %.4f heldout %.4f recovery error %.3f",
                row.algo,
                row.reward_mos,
                row.heldout,
                row.recovery_err,
            )
        return 0
