import asyncio
import time

import pytest

from fracsing.errors import ConfigurationError
from fracsing.pool import WorkerPool, pool_map


@pytest.mark.asyncio
async def test_map_keeps_order() -> None:
    def slow_square(x: int) -> int:
        time.sleep(0.01 * (5 - x))
        return x * x

    assert await pool_map(slow_square, range(5), workers=3) == [0, 1, 4, 9, 16]


@pytest.mark.asyncio
async def test_progress() -> None:
    seen = []

    async def progress(done: int, total: int):
        seen.append((done, total))

    async with WorkerPool(2) as pool:
        assert pool.started()
        await pool.map(lambda x: x + 1, [1, 2, 3], progress=progress)
    assert not pool.started()
    assert seen == [(1, 3), (2, 3), (3, 3)]


@pytest.mark.asyncio
async def test_errors_propagate() -> None:
    def fail(x: int) -> int:
        if x == 2:
            raise ValueError("bad item")
        return x

    with pytest.raises(ValueError):
        await pool_map(fail, [1, 2, 3])


@pytest.mark.asyncio
async def test_pool_must_be_started() -> None:
    pool = WorkerPool(1)
    with pytest.raises(RuntimeError):
        await pool.map(lambda x: x, [1])


def test_worker_count() -> None:
    with pytest.raises(ConfigurationError):
        WorkerPool(0)


def test_runs_outside_a_loop() -> None:
    assert asyncio.run(pool_map(str, [1, 2])) == ["1", "2"]
