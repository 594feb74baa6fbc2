from __future__ import annotations

from concurrent.futures import Future, ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from threading import Semaphore
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, TypeVar

_T = TypeVar("_T")
_R = TypeVar("_R")


@dataclass(frozen=True)
class ThreadingSettings:
    """
    Settings for evaluating independent work items in a thread pool.

    Attributes:
        max_workers (int | None): The maximum number of worker threads. If
            `None`, the default thread pool size is used.
        timeout (int | None): The timeout (in seconds) for each task. If
            `None`, no timeout is applied.
        task_batch (int): The maximum number of tasks in flight at once.
            Defaults to 50.
    """

    max_workers: Optional[int] = None
    timeout: Optional[int] = None
    task_batch: int = 50

    def __post_init__(self) -> None:
        if self.max_workers is not None and self.max_workers < 1:
            raise ValueError("'max_workers' must be at least 1")
        if self.task_batch < 1:
            raise ValueError("'task_batch' must be at least 1")


class _PendingTasksList(List["Future[Tuple[int, _R]]"]):
    """
    A list of pending futures that replenishes itself from a work iterator,
    bounded by a semaphore.
    """

    def __init__(
        self,
        items: Iterator[Tuple[int, _T]],
        thread: ThreadPoolExecutor,
        func: Callable[[_T], _R],
        settings: ThreadingSettings,
        task_semaphore: Semaphore,
    ) -> None:
        super().__init__()
        self._items = items
        self._thread = thread
        self._func = func
        self._settings = settings
        self._task_semaphore = task_semaphore
        self.results: Dict[int, _R] = {}

    def _run(self, position: int, item: _T) -> Tuple[int, _R]:
        return position, self._func(item)

    def remove_future(self, future: Future[Tuple[int, _R]]) -> None:
        """
        Removes a completed future, stores its result, releases the
        semaphore slot, and submits a new task.
        """
        self.remove(future)
        position, result = future.result(timeout=self._settings.timeout)
        self.results[position] = result
        self._task_semaphore.release()
        self.add_future()

    def add_future(self) -> None:
        """Submits the next work item, if any, and tracks its future."""
        try:
            position, item = next(self._items)
        except StopIteration:
            return
        self._task_semaphore.acquire()
        self.append(self._thread.submit(self._run, position, item))


def map_in_threads(
    func: Callable[[_T], _R],
    items: Sequence[_T],
    settings: Optional[ThreadingSettings] = None,
) -> List[_R]:
    """
    Apply `func` to every item, in a thread pool when `settings` is given,
    returning results in input order regardless of completion order.
    """
    if settings is None:
        return [func(item) for item in items]

    task_semaphore = Semaphore(settings.task_batch)
    with ThreadPoolExecutor(settings.max_workers) as thread_executor:
        pending_tasks: _PendingTasksList = _PendingTasksList(
            iter(enumerate(items)), thread_executor, func, settings, task_semaphore
        )
        for _ in range(settings.task_batch):
            pending_tasks.add_future()

        while pending_tasks:
            for future in as_completed(pending_tasks[:]):
                pending_tasks.remove_future(future)
    return [pending_tasks.results[position] for position in range(len(items))]
