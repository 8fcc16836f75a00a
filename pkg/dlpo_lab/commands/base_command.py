import inspect
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Optional, Type

from pydantic import BaseModel, ConfigDict, Field, create_model

from dlpo_lab.config import Experiment, parse_config_file, parse_config_text

logger = logging.getLogger(__name__)


class BaseCommand(BaseModel, ABC):
    class _ArgsSchemaPlaceholder(BaseModel):
        pass

    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    """The sub-command name used on the command line."""
    description: str
    """One-line help shown by ``--help``."""
    args_schema: Type[BaseModel] = Field(default_factory=lambda: BaseCommand._ArgsSchemaPlaceholder)
    """The schema for the arguments that the command accepts."""

    def model_post_init(self, __context: Any) -> None:
        if self.args_schema is BaseCommand._ArgsSchemaPlaceholder:
            self.args_schema = self._schema_from_run()
        self._generate_description()
        super().model_post_init(__context)

    def _schema_from_run(self) -> Type[BaseModel]:
        fields: dict[str, Any] = {}
        for param in inspect.signature(self._run).parameters.values():
            if param.kind in (param.VAR_POSITIONAL, param.VAR_KEYWORD):
                continue
            default = ... if param.default is inspect.Parameter.empty else param.default
            fields[param.name] = (param.annotation, default)
        return create_model(f"{type(self).__name__}Schema", **fields)

    def _generate_description(self) -> None:
        args = []
        for arg, attribute in self.args_schema.model_json_schema()["properties"].items():
            kind = attribute.get("type") or "|".join(
                option.get("type", "?") for option in attribute.get("anyOf", [])
            )
            args.append(f"{arg}: '{kind}'")
        description = self.description.replace("\n", " ")
        if not description.startswith(f"{self.name}("):
            self.description = f"{self.name}({', '.join(args)}) - {description}"

    def run(self, **kwargs: Any) -> int:
        logger.info("Running command: %s", self.name)
        arguments = self.args_schema(**kwargs)
        return self._run(**{name: getattr(arguments, name) for name in type(arguments).model_fields})

    @abstractmethod
    def _run(self, **kwargs: Any) -> int:
        """Here goes the actual implementation of the command; returns the exit code."""

    @staticmethod
    def load_experiment(config: Optional[Path], seed: Optional[int] = None, algo: Optional[str] = None) -> Experiment:
        overrides = {"seed": seed, "algo": algo}
        if config is None:
            run_config = parse_config_text("", overrides)
        else:
            run_config = parse_config_file(config, overrides)
        return Experiment.from_config(run_config)
