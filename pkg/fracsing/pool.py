import asyncio
import logging
from types import TracebackType
from typing import Awaitable, Callable, Iterable, Optional, Type

from fracsing.errors import ConfigurationError

DEFAULT_WORKERS = 4


class WorkerPool(object):
    """Runs blocking solver calls on threads, at most `workers` at a time. Results come back in input order."""

    def __init__(self, workers: int = DEFAULT_WORKERS,
                 logger: logging.Logger = logging.getLogger("fracsing.pool")):
        if workers < 1:
            raise ConfigurationError("Worker count must be at least 1, got %d" % workers)
        self.workers = workers
        self.logger = logger
        self.semaphore: Optional[asyncio.Semaphore] = None
        self._started = False

    async def __aenter__(self) -> "WorkerPool":
        await self.start()
        return self

    async def __aexit__(self, exc_type: Optional[Type[BaseException]], exc_value: Optional[BaseException],
                        traceback: Optional[TracebackType]):
        await self.stop()
        return None

    def started(self) -> bool:
        return self._started

    async def start(self):
        # The semaphore binds to the running loop
        self.semaphore = asyncio.Semaphore(self.workers)
        self._started = True

    async def stop(self):
        self._started = False
        self.semaphore = None

    async def _run_one[T, R](self, fn: Callable[[T], R], item: T) -> R:
        async with self.semaphore:
            return await asyncio.to_thread(fn, item)

    async def map[T, R](self, fn: Callable[[T], R], items: Iterable[T],
                        progress: Optional[Callable[[int, int], Awaitable[None] | None]] = None) -> list[R]:
        if not self._started:
            raise RuntimeError("Worker pool is not started")
        items = list(items)
        self.logger.debug("Mapping %d items over %d workers", len(items), self.workers)
        tasks = [asyncio.create_task(self._run_one(fn, item), name="fracsing-worker-%d" % i)
                 for i, item in enumerate(items)]
        try:
            if progress is not None:
                done = 0
                for fut in asyncio.as_completed(tasks):
                    await fut
                    done += 1
                    res = progress(done, len(items))
                    if asyncio.iscoroutine(res):
                        await res
            return list(await asyncio.gather(*tasks))
        except BaseException:
            for t in tasks:
                t.cancel()
            raise


async def pool_map[T, R](fn: Callable[[T], R], items: Iterable[T], workers: int = DEFAULT_WORKERS) -> list[R]:
    async with WorkerPool(workers) as pool:
        return await pool.map(fn, items)
