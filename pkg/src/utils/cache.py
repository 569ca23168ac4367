import sys
import threading
from types import TracebackType
from typing import Any, Dict, Hashable, Optional, Protocol, Tuple, Type

import numpy as np

from .exceptions import ResourceError

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

DEFAULT_BUDGET = 10**6
DEFAULT_QUANTUM = 1e-8


def quantize(values: Any, quantum: float = DEFAULT_QUANTUM) -> Tuple[int, ...]:
    """
    Map real values to integer lattice coordinates usable as dictionary keys.

    :param values: scalar or array of reals.
    :param quantum: lattice spacing.
    """
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    return tuple(int(v) for v in np.rint(arr / quantum))


class AbstractCache(Protocol):
    """
    Interface of the memoization stores used by the cell solvers.
    """

    def get(self, key: Hashable, default: Optional[Any] = None) -> Optional[Any]:
        """
        Retrieve an item from the cache.

        Args:
            key: The key identifying the item in the cache.
            default (optional): The value returned on a miss.

        Returns:
            The stored value if found, else the default value.
        """
        ...

    def set(self, key: Hashable, value: Any) -> None:
        """
        Store an item in the cache.

        Args:
            key: The key under which the item is stored.
            value: The value to store.
        """
        ...

    def close(self) -> None:
        ...

    def __enter__(self) -> Self:
        ...

    def __exit__(
        self, exc_type: Optional[Type[BaseException]], exc_val: Optional[BaseException], exc_tb: Optional[TracebackType]
    ) -> None:
        ...


class FluxCache(AbstractCache):
    """
    Thread-safe in-memory store for effective-flux samples.

    Keys are namespaced by ``seed`` so that several problems can share one store.
    Inserting a new key once ``budget`` entries are held raises ResourceError.
    """

    def __init__(self, seed: Any = "", budget: int = DEFAULT_BUDGET):
        self._seed = str(seed)
        self._budget = int(budget)
        self._cache: Dict[Tuple[Any, ...], Any] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _prefixed_key(self, key: Hashable) -> Tuple[Any, ...]:
        return (self._seed, key)

    def get(self, key: Hashable, default: Optional[Any] = None) -> Optional[Any]:
        with self._lock:
            result = self._cache.get(self._prefixed_key(key))
            if result is None:
                self.misses += 1
                return default
            self.hits += 1
            return result

    def set(self, key: Hashable, value: Any) -> None:
        full = self._prefixed_key(key)
        with self._lock:
            if full not in self._cache and len(self._cache) >= self._budget:
                raise ResourceError(f"flux cache budget of {self._budget} entries exceeded")
            # first writer wins so concurrent solvers observe one value per key
            self._cache.setdefault(full, value)

    def __len__(self) -> int:
        with self._lock:
            return len(self._cache)

    def stats(self) -> Dict[str, int]:
        with self._lock:
            return {"entries": len(self._cache), "hits": self.hits, "misses": self.misses}

    def close(self) -> None:
        with self._lock:
            self._cache.clear()

    def __enter__(self) -> Self:
        return self

    def __exit__(
        self, exc_type: Optional[Type[BaseException]], exc_val: Optional[BaseException], exc_tb: Optional[TracebackType]
    ) -> None:
        self.close()
