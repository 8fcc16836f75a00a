import argparse
import logging
import sys
from pathlib import Path
from typing import NoReturn, Optional, Sequence

from pydantic import ValidationError

from dlpo_lab.commands.base_command import BaseCommand
from dlpo_lab.commands.compare_command.compare_command import CompareCommand
from dlpo_lab.commands.eval_command.eval_command import EvalCommand
from dlpo_lab.commands.finetune_command.finetune_command import FinetuneCommand
from dlpo_lab.commands.pretrain_command.pretrain_command import PretrainCommand
from dlpo_lab.config import config_help
from dlpo_lab.errors import (
    ArgumentError,
    CheckpointError,
    ConfigError,
    NumericError,
    StateError,
)
from dlpo_lab.runtime import THREADS_ENV

logger = logging.getLogger("dlpo_lab")

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CHECKPOINT = 4

COMMANDS: dict[str, BaseCommand] = {
    command.name: command
    for command in (PretrainCommand(), FinetuneCommand(), EvalCommand(), CompareCommand())
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def _epilog() -> str:
    return (
        f"config keys (key = value, '#' comments):\n{config_help()}\n\n"
        f"environment:\n  {THREADS_ENV}  worker threads for trajectory sampling (default: all cores)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="dlpo-lab",
        description="Pretrain a toy conditional diffusion model and fine-tune it with RL objectives.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command in COMMANDS.values():
        fields = command.args_schema.model_fields
        summary = command.description.split(" - ", 1)[-1]
        child = sub.add_parser(
            command.name,
            help=summary,
            description=summary,
            epilog=_epilog(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        child.add_argument("--config", type=Path, help="config file of key = value lines")
        if "ckpt" in fields:
            child.add_argument("--ckpt", type=Path, required=True, help="pretrained checkpoint")
        if "algo" in fields:
            child.add_argument("--algo", help="override the config's algo")
        child.add_argument("--out", type=Path, default=Path("."), help="output directory")
        child.add_argument("--seed", type=int, help="override the config's seed")
    return parser


def _fail(code: int, message: str) -> int:
    print(f"error: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    command = COMMANDS[args.command]
    kwargs = {
        name: getattr(args, name)
        for name in command.args_schema.model_fields
        if hasattr(args, name)
    }
    try:
        return command.run(**kwargs)
    except (ConfigError, ArgumentError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        return _fail(EXIT_USAGE, f"{location}: {first['msg']}" if location else first["msg"])
    except (NumericError, StateError) as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))


if __name__ == "__main__":
    sys.exit(main())
