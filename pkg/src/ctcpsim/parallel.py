"""
Fan independent runs out over worker processes.

Each run owns its own simulator and random streams, so runs share nothing
and the results only need to be put back in task order::

    rows = run_all(run_cell, tasks, workers=4)

``workers=1`` runs everything in the calling process.
"""
import asyncio
import concurrent.futures
import functools
import logging
from typing import Callable, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


async def async_call(
    func, *args, executor: concurrent.futures.Executor = None, **kwargs
):
    loop = asyncio.get_running_loop()
    if kwargs:
        func = functools.partial(func, **kwargs)

    return await loop.run_in_executor(executor, func, *args)


async def _gather(func: Callable[[T], R], tasks: Sequence[T], workers: int) -> List[R]:
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
        return await asyncio.gather(*(async_call(func, t, executor=executor) for t in tasks))


def run_all(func: Callable[[T], R], tasks: Sequence[T], workers: int = 1) -> List[R]:
    """
    ``[func(t) for t in tasks]``, spread over ``workers`` processes.

    ``func`` and the tasks must be picklable when ``workers > 1``.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    tasks = list(tasks)
    if workers == 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    workers = min(workers, len(tasks))
    logger.info("running %d tasks on %d worker processes", len(tasks), workers)
    return asyncio.run(_gather(func, tasks, workers))
