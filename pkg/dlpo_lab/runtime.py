import logging
import os
from concurrent.futures import ThreadPoolExecutor
from enum import IntEnum
from typing import Callable, Sequence, TypeVar

import numpy as np

THREADS_ENV = "DLPO_LAB_THREADS"
CHUNK_SIZE = 16

logger = logging.getLogger(__name__)


class Stream(IntEnum):
    """Random stream ids; every consumer of randomness derives its generator from (seed, stream, ...)."""

    DATASET = 1
    PRETRAIN = 2
    ROLLOUT = 3
    ESTIMATOR = 4
    VALIDATION = 5
    TEST = 6
    POOL = 7
    POOL_DRAW = 8
    MONITOR = 9
    CONDITIONS = 10


T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning("Ignoring %s=%r: not an integer, using the CPU count", THREADS_ENV, value)
    return os.cpu_count() or 1


def chunked_map(fn: Callable[[Sequence[T]], list[R]], items: Sequence[T], chunk_size: int = CHUNK_SIZE) -> list[R]:
    """Apply ``fn`` to fixed-size chunks of ``items`` and concatenate in order.

    Chunk boundaries do not depend on the worker count, so results are identical
    whatever ``DLPO_LAB_THREADS`` says.
    """
    chunks = [items[i : i + chunk_size] for i in range(0, len(items), chunk_size)]
    workers = min(worker_count(), len(chunks))
    if workers <= 1:
        parts = [fn(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, chunks))
    return [item for part in parts for item in part]


def spawn_rngs(seed: int, count: int, *stream: int) -> list[np.random.Generator]:
    """Independent per-element generators derived from ``(seed, *stream)``."""
    root = np.random.SeedSequence([seed, *stream])
    return [np.random.default_rng(child) for child in root.spawn(count)]
