from typing import Optional

from dlpo_lab.errors import ConfigError

from .base_estimator import ALGOS, GradEstimate, GradientEstimator, RLConfig
from .ddpo.ddpo_estimator import DDPOEstimator, grad_ddpo
from .dlpo.dlpo_estimator import DLPOEstimator, grad_dlpo
from .dpok.dpok_estimator import DPOKEstimator, grad_dpok
from .klinr.klinr_estimator import KLinREstimator, grad_klinr
from .onlydl.onlydl_estimator import OnlyDLEstimator, grad_onlydl
from .rwr.rwr_estimator import RWREstimator, grad_rwr

ESTIMATORS: dict[str, type[GradientEstimator]] = {
    "rwr": RWREstimator,
    "ddpo": DDPOEstimator,
    "dpok": DPOKEstimator,
    "klinr": KLinREstimator,
    "dlpo": DLPOEstimator,
    "onlydl": OnlyDLEstimator,
}


def get_estimator(algo: str, config: Optional[RLConfig] = None) -> GradientEstimator:
    if algo not in ESTIMATORS:
        raise ConfigError(f"unknown algorithm {algo!r}; choose one of {', '.join(ALGOS)}", key="algo")
    return ESTIMATORS[algo](config=config if config is not None else RLConfig(algo=algo))
