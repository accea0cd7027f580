from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Sequence, Tuple, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def run_ordered(func: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """并发执行后按输入顺序返回结果；workers 为 1 时直接串行。"""
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    results: List[Tuple[int, R]] = []
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(func, item): index for index, item in enumerate(items)}
        for future in as_completed(futures):
            results.append((futures[future], future.result()))
    results.sort(key=lambda pair: pair[0])
    return [result for _, result in results]
