from pathlib import Path
from typing import Optional

from dlpo_lab.commands.base_command import BaseCommand
from dlpo_lab.trainer import evaluate, load_checkpoint, read_sidecar, write_metrics


class EvalCommand(BaseCommand):
    name: str = "eval"
    description: str = "Score one checkpoint on the held-out test conditions and write eval.csv."

    def _run(self, ckpt: Path, out: Path, config: Optional[Path] = None, seed: Optional[int] = None) -> int:
        experiment = self.load_experiment(config, seed)
        params = load_checkpoint(ckpt, experiment.layout)
        algo = read_sidecar(ckpt).get("algo", "pretrained")
        row = evaluate(params, experiment, algo=algo)
        write_metrics(Path(out) / "eval.csv", [row])
        return 0
