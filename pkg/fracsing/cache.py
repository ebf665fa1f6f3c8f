import logging
import os
from pathlib import Path
from typing import Optional

import numpy as np
import numpy.typing as npt

from fracsing.core import Grid

CACHE_VERSION = 1
DEFAULT_CACHE_DIR = os.path.join("~", ".cache", "fracsing")


class KernelCache(object):
    """On-disk store of assembled kernel matrices, one .npz archive per (N, s, grading)."""

    def __init__(self, directory: str = DEFAULT_CACHE_DIR,
                 logger: logging.Logger = logging.getLogger("fracsing.cache")):
        self.directory = Path(directory).expanduser()
        self.logger = logger

    def path_for(self, grid: Grid, s: float) -> Path:
        return self.directory / ("kernel-v%d-%s-N%d-s%s.npz" % (CACHE_VERSION, grid.grading, grid.n, repr(s)))

    def load(self, grid: Grid, s: float) -> Optional[npt.NDArray[np.float64]]:
        path = self.path_for(grid, s)
        if not path.exists():
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                header = (int(data["version"]), int(data["N"]), float(data["s"]), str(data["grading"]))
                kernel = np.array(data["kernel"], dtype=np.float64)
        except (OSError, KeyError, ValueError):
            self.logger.warning("Corrupt kernel cache file %s, rebuilding", path, exc_info=True)
            return None

        if header != (CACHE_VERSION, grid.n, s, str(grid.grading)) or kernel.shape != (grid.n, grid.n):
            self.logger.warning("Kernel cache header mismatch in %s: %s, rebuilding", path, header)
            return None
        self.logger.info("Loaded kernel N=%d s=%g from %s", grid.n, s, path)
        return kernel

    def store(self, grid: Grid, s: float, kernel: npt.NDArray[np.float64]):
        path = self.path_for(grid, s)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            # Atomic replace
            tmp = path.with_suffix(".tmp.npz")
            np.savez(tmp, version=CACHE_VERSION, N=grid.n, s=s, grading=str(grid.grading), kernel=kernel)
            os.replace(tmp, path)
        except OSError:
            self.logger.warning("Failed to write kernel cache %s", path, exc_info=True)
