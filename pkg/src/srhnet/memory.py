"""Instrumented allocator for tensor storage.

Every :class:`~srhnet.tensor.Tensor` created while a :class:`MemoryTracker`
is active registers its buffer size, as do the large scratch arrays of the
kernels (im2col columns, padded copies, reduction workspaces); the bytes are
released when the owning object is garbage collected.  Views are counted as full buffers, so the
tracker can over-count but never under-count live storage.
"""
from __future__ import annotations

import contextlib
import weakref
from collections import defaultdict

_active: list["MemoryTracker"] = []


class MemoryTracker:
    def __init__(self):
        self.live_bytes = 0
        self.peak_bytes = 0
        self.live_count = 0
        self.total_allocated = 0
        self.live_by_tag: dict[str, int] = defaultdict(int)
        self.peak_by_tag: dict[str, int] = defaultdict(int)

    def register(self, obj, nbytes: int) -> None:
        self.live_bytes += nbytes
        self.live_count += 1
        self.total_allocated += nbytes
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes
        weakref.finalize(obj, self._release, nbytes)

    def tag(self, obj, nbytes: int, tag: str) -> None:
        """Attribute an already registered buffer to a named category."""
        self.live_by_tag[tag] += nbytes
        if self.live_by_tag[tag] > self.peak_by_tag[tag]:
            self.peak_by_tag[tag] = self.live_by_tag[tag]
        weakref.finalize(obj, self._untag, nbytes, tag)

    def _release(self, nbytes: int) -> None:
        self.live_bytes -= nbytes
        self.live_count -= 1

    def _untag(self, nbytes: int, tag: str) -> None:
        self.live_by_tag[tag] -= nbytes

    def reset_peak(self) -> None:
        self.peak_bytes = self.live_bytes
        for k, v in self.live_by_tag.items():
            self.peak_by_tag[k] = v


@contextlib.contextmanager
def track_memory():
    """Activate a fresh tracker for the duration of the block."""
    tracker = MemoryTracker()
    _active.append(tracker)
    try:
        yield tracker
    finally:
        _active.remove(tracker)


def _notify(obj, nbytes: int) -> None:
    for tracker in _active:
        tracker.register(obj, nbytes)


def track_array(arr):
    """Count a raw scratch buffer (e.g. im2col columns) until it is collected."""
    if _active:
        _notify(arr, arr.nbytes)
    return arr


def tag(tensor, name: str) -> None:
    """Attribute ``tensor``'s storage to ``name`` in every active tracker."""
    for tracker in _active:
        tracker.tag(tensor, tensor.data.nbytes, name)


def tracking() -> bool:
    return bool(_active)
