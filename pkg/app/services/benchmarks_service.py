import time
from typing import Any, Callable, NamedTuple


class Timed(NamedTuple):
    result: Any
    execution_time_sec: float


def benchmark_function(func: Callable[..., Any], *args, **kwargs) -> Timed:
    """Run func and report its wall time in seconds (microsecond resolution)."""
    start = time.perf_counter()
    result = func(*args, **kwargs)
    return Timed(result, round(time.perf_counter() - start, 6))
