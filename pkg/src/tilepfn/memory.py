"""Peak-memory accounting for the attention kernels.

Two meters: :func:`analytic_peak` evaluates a closed-form model of the live
buffers in one tile step, and :func:`with_tracking` records the high-water
mark of live ``Tensor`` buffers allocated during a call.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from . import _tracking
from .attention import TileConfig, chunked_attention

CSV_COLUMNS = ("B", "H", "Lq", "Lk", "dk", "l", "r", "m",
               "tracked_peak", "analytic_peak", "output_bytes")


def analytic_peak(B, H, ell, r, d_k, bytes_per_scalar=4):
    """Bytes live during one tile step.

    ``B*H*(l*r + 2*l*d_k + r*d_k + 2*l)`` scalars: the logits tile, the query
    tile plus the ``a`` accumulator, one KV tile slice, and the ``mu``/``s``
    columns.
    """
    return bytes_per_scalar * B * H * (ell * r + 2 * ell * d_k + r * d_k + 2 * ell)


@dataclass(frozen=True)
class MemoryReport:
    tracked_peak_bytes: int
    transient_peak_bytes: int
    output_bytes: int
    analytic_peak_bytes: int | None = None
    shape: tuple | None = None  # (B, H, L_q, L_k, d_k)
    tiles: tuple | None = None  # effective (l', r', m')

    def csv_row(self):
        B, H, Lq, Lk, dk = self.shape if self.shape else ("",) * 5
        ell, r, m = self.tiles if self.tiles else ("",) * 3
        return {
            "B": B, "H": H, "Lq": Lq, "Lk": Lk, "dk": dk, "l": ell, "r": r, "m": m,
            "tracked_peak": self.tracked_peak_bytes,
            "analytic_peak": "" if self.analytic_peak_bytes is None else self.analytic_peak_bytes,
            "output_bytes": self.output_bytes,
        }

    def to_csv(self, header=True):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if header:
            writer.writeheader()
        writer.writerow(self.csv_row())
        return buf.getvalue()


def with_tracking(fn, *args, **kwargs):
    """Call ``fn`` inside a tracking scope and return ``(result, MemoryReport)``.

    Only ``Tensor`` buffers created during the call count; inputs built
    beforehand do not. Buffers the kernel marks as its output are counted in
    ``tracked_peak_bytes`` but left out of ``transient_peak_bytes``.
    """
    tracker = _tracking.open_scope()
    try:
        result = fn(*args, **kwargs)
    finally:
        _tracking.close_scope(tracker)
    output_bytes = tracker.live_output
    report = MemoryReport(tracked_peak_bytes=tracker.peak,
                          transient_peak_bytes=tracker.transient_peak,
                          output_bytes=output_bytes)
    return result, report


def measure_attention(q, k, v, tiles: TileConfig | None = None):
    """Run ``chunked_attention`` under tracking and fill in the analytic model."""
    tiles = TileConfig() if tiles is None else tiles
    B, H, L_q, d_k = q.shape
    L_k = k.shape[2]
    m, ell, r = tiles.effective(B, L_q, L_k)
    out, rep = with_tracking(chunked_attention, q, k, v, tiles)
    report = MemoryReport(
        tracked_peak_bytes=rep.tracked_peak_bytes,
        transient_peak_bytes=rep.transient_peak_bytes,
        output_bytes=out.nbytes,
        analytic_peak_bytes=analytic_peak(m, H, ell, r, d_k, q.dtype.itemsize),
        shape=(B, H, L_q, L_k, d_k),
        tiles=(ell, r, m),
    )
    return out, report
