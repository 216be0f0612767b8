"""Injectable clocks and task scheduling.

Components never read wall time directly: they take a clock plus a
scheduler, so every loop runs either inside the deterministic discrete-event
scheduler (virtual time, single thread) or on a timer thread (real time).
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable


class VirtualClock:
    """Simulated ms-resolution clock advanced only by its scheduler."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    def now_ms(self) -> int:
        return self._now


class WallClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class Task:
    """Cancellation handle for a scheduled callback."""

    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class SimScheduler:
    """Single-threaded discrete-event scheduler over a VirtualClock.

    Events at equal times run in scheduling order, which keeps runs
    reproducible for a fixed seed and scenario.
    """

    def __init__(self, clock: VirtualClock):
        self.clock = clock
        self._heap: list[tuple[int, int, Task, Callable[[], None]]] = []
        self._seq = itertools.count()

    def call_at(self, at_ms: int, fn: Callable[[], None]) -> Task:
        if at_ms < self.clock.now_ms():
            raise ValueError("cannot schedule in the past")
        task = Task()
        heapq.heappush(self._heap, (at_ms, next(self._seq), task, fn))
        return task

    def call_after(self, delay_ms: int, fn: Callable[[], None]) -> Task:
        return self.call_at(self.clock.now_ms() + delay_ms, fn)

    def every(
        self, interval_ms: int, fn: Callable[[], None], first_at: int | None = None
    ) -> Task:
        """Run fn repeatedly; the returned task cancels the whole series."""
        if interval_ms <= 0:
            raise ValueError("interval must be positive")
        task = Task()
        start = self.clock.now_ms() + interval_ms if first_at is None else first_at

        def tick(at=start):
            if task.cancelled:
                return
            heapq.heappush(self._heap, (at + interval_ms, next(self._seq), task,
                                        lambda: tick(at + interval_ms)))
            fn()

        heapq.heappush(self._heap, (start, next(self._seq), task, lambda: tick(start)))
        return task

    def run_until(self, t_ms: int) -> None:
        """Process all events due at or before t_ms, then land the clock there."""
        while self._heap and self._heap[0][0] <= t_ms:
            at, _, task, fn = heapq.heappop(self._heap)
            self.clock._now = at
            if not task.cancelled:
                fn()
        self.clock._now = max(self.clock._now, t_ms)

    def run_for(self, duration_ms: int) -> None:
        self.run_until(self.clock.now_ms() + duration_ms)


class TimerThread:
    """Wall-clock scheduler with the SimScheduler interface.

    One worker thread drains a deadline heap; callbacks run on that thread.
    """

    def __init__(self, clock: WallClock | None = None):
        self.clock = clock or WallClock()
        self._heap: list[tuple[int, int, Task, Callable[[], None]]] = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def call_at(self, at_ms: int, fn: Callable[[], None]) -> Task:
        task = Task()
        with self._cond:
            heapq.heappush(self._heap, (at_ms, next(self._seq), task, fn))
            self._cond.notify()
        return task

    def call_after(self, delay_ms: int, fn: Callable[[], None]) -> Task:
        return self.call_at(self.clock.now_ms() + delay_ms, fn)

    def every(
        self, interval_ms: int, fn: Callable[[], None], first_at: int | None = None
    ) -> Task:
        if interval_ms <= 0:
            raise ValueError("interval must be positive")
        task = Task()
        start = self.clock.now_ms() + interval_ms if first_at is None else first_at

        def tick(at=start):
            if task.cancelled:
                return
            with self._cond:
                heapq.heappush(self._heap, (at + interval_ms, next(self._seq), task,
                                            lambda: tick(at + interval_ms)))
                self._cond.notify()
            fn()

        with self._cond:
            heapq.heappush(self._heap, (start, next(self._seq), task, lambda: tick(start)))
            self._cond.notify()
        return task

    def _run(self) -> None:
        while True:
            with self._cond:
                while not self._stopped and (
                    not self._heap or self._heap[0][0] > self.clock.now_ms()
                ):
                    if self._heap:
                        wait_s = (self._heap[0][0] - self.clock.now_ms()) / 1000.0
                        self._cond.wait(timeout=max(wait_s, 0.0))
                    else:
                        self._cond.wait()
                if self._stopped:
                    return
                _, _, task, fn = heapq.heappop(self._heap)
            if not task.cancelled:
                try:
                    fn()
                except Exception:  # tasks must not kill the timer thread
                    pass

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify_all()
        self._thread.join(timeout=2.0)
