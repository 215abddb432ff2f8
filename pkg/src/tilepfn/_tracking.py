"""Scoped allocation tracker that ``Tensor`` buffers report to.

Only one scope may be open at a time, and only the thread that opened it may
allocate tensors while it is open.
"""
import threading

from .errors import InstrumentationError

_lock = threading.Lock()
_active = None


class AllocationTracker:
    def __init__(self):
        self.owner = threading.get_ident()
        self.live = 0
        self.live_output = 0
        self.peak = 0
        self.transient_peak = 0
        self.n_allocs = 0

    def alloc(self, nbytes, output=False):
        self.n_allocs += 1
        self.live += nbytes
        if output:
            self.live_output += nbytes
        self.peak = max(self.peak, self.live)
        self.transient_peak = max(self.transient_peak, self.live - self.live_output)

    def free(self, nbytes, output=False):
        self.live -= nbytes
        if output:
            self.live_output -= nbytes


def current():
    tracker = _active
    if tracker is not None and tracker.owner != threading.get_ident():
        raise InstrumentationError(
            "tensor allocated from a second thread inside a tracking scope; "
            "run kernels single-threaded while tracking"
        )
    return tracker


def open_scope():
    global _active
    with _lock:
        if _active is not None:
            raise InstrumentationError("a tracking scope is already open")
        _active = AllocationTracker()
        return _active


def close_scope(tracker):
    global _active
    with _lock:
        if _active is tracker:
            _active = None


def is_active():
    return _active is not None
