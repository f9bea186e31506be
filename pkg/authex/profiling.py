# -*- coding: utf-8 -*-
import threading
import time
from collections import defaultdict
from contextlib import contextmanager


"""
This module contains the category timers used by the benchmarks.
Timing is exclusive: time spent in a nested category is charged to
the innermost one only. Without an active Profiler every call is a
no-op.
"""

_state = threading.local()


class Profiler(object):
    """
    Accumulates exclusive wall time and event counts per category.
    """

    def __init__(self):
        self.totals = defaultdict(float)
        self.counts = defaultdict(int)
        self._stack = []

    def reset(self):
        self.totals.clear()
        self.counts.clear()
        del self._stack[:]

    def total(self, category):
        return self.totals.get(category, 0.0)

    def count(self, category):
        return self.counts.get(category, 0)

    def __repr__(self):
        info = ''.join(self.__class__.__name__) + '\n'
        for key in sorted(self.totals):
            info += '%s : %.6f s (%d)\n' % (key, self.totals[key],
                                             self.counts[key])
        return info


def active():
    return getattr(_state, 'profiler', None)


@contextmanager
def profiling(profiler):
    """Activates `profiler` for the current thread."""
    previous = active()
    _state.profiler = profiler
    try:
        yield profiler
    finally:
        _state.profiler = previous


@contextmanager
def measure(category):
    profiler = active()
    if profiler is None:
        yield
        return
    # frame: [start, time spent in children]
    frame = [time.perf_counter(), 0.0]
    profiler._stack.append(frame)
    try:
        yield
    finally:
        profiler._stack.pop()
        elapsed = time.perf_counter() - frame[0]
        profiler.totals[category] += elapsed - frame[1]
        profiler.counts[category] += 1
        if profiler._stack:
            profiler._stack[-1][1] += elapsed


def count(category, n=1):
    profiler = active()
    if profiler is not None:
        profiler.counts[category] += n
