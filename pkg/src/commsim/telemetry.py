"""Cost model and per-iteration trace recording.

Communication is accounted per worker and per direction: ``s2w`` is what
the server sends to one worker (downlink), ``w2s`` what one worker sends
back (uplink). The default unit is coordinates, matching plots that count
coordinates sent; the ``bits`` unit weights each coordinate by the float
width, with a reduced per-coordinate rate for natural-rounded payloads
(sign plus exponent bits only).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

S2W = "s2w"
W2S = "w2s"

CSV_FIELDS = ("t", "f", "grad_norm_sq", "s2w_cum", "w2s_cum")


class TelemetryError(ValueError):
    pass


@dataclass(frozen=True)
class CostModel:
    unit: str = "coordinates"  # "coordinates" or "bits"
    natural_weight: float = 9.0 / 32.0  # 1 sign bit + 8 exponent bits
    full_float_bits: float = 32.0

    def __post_init__(self):
        if self.unit not in ("coordinates", "bits"):
            raise TelemetryError(f"unknown cost unit {self.unit!r}")
        if self.natural_weight <= 0 or self.full_float_bits <= 0:
            raise TelemetryError("cost weights must be positive")


@dataclass(frozen=True)
class FullPayload:
    """Stand-in payload for an uncompressed length-d vector send."""

    cost: float
    natural_encoded: bool = False


@dataclass(frozen=True)
class CommEvent:
    """One per-worker transmission, possibly replicated across workers.

    ``payload`` is the transmitted message (a SparseMessage or a
    FullPayload); ``workers`` counts how many workers this identical
    per-worker send covers; ``compressed_by`` names the operator kind for
    audits.
    """

    direction: str
    payload: object
    workers: int = 1
    compressed_by: Optional[str] = None


def charge(event: CommEvent, model: CostModel) -> float:
    """Per-worker cost of one event under the model, in the model's unit."""
    if model.unit == "coordinates":
        return event.payload.cost
    weight = model.natural_weight if event.payload.natural_encoded else 1.0
    return event.payload.cost * weight * model.full_float_bits


@dataclass(frozen=True)
class TraceRecord:
    """Metrics at iterate t.

    Cumulative costs cover the steps leading up to this iterate, so the
    record at t = 0 always carries zero cost. ``best_f`` tracks the
    running minimum objective, a stand-in for the unknown optimal value.
    Coin outcomes of the step that produced this iterate are kept for
    reproducibility audits (None at t = 0 and for coin-free methods).
    """

    t: int
    f: float
    grad_norm_sq: float
    s2w_cum: float
    w2s_cum: float
    best_f: float
    coin_primal: Optional[int] = None
    coin_dual: Optional[int] = None


def coords_to_target(trace, eps: float):
    """Cumulative costs at the first iterate with grad_norm_sq <= eps.

    Returns a dict with s2w, w2s, total and the crossing iteration, or
    None when the trace never reaches the target.
    """
    if eps <= 0:
        raise TelemetryError("eps must be positive")
    for rec in trace:
        if rec.grad_norm_sq <= eps:
            return {"t": rec.t, "s2w": rec.s2w_cum, "w2s": rec.w2s_cum,
                    "total": rec.s2w_cum + rec.w2s_cum}
    return None


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trace_to_csv(trace) -> str:
    """Render a trace in the fixed CSV schema with 17-significant-digit
    floats (round-trip exact for doubles)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for rec in trace:
        writer.writerow([rec.t, _fmt(rec.f), _fmt(rec.grad_norm_sq),
                         _fmt(rec.s2w_cum), _fmt(rec.w2s_cum)])
    return buf.getvalue()


def write_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trace_to_csv(trace))


def read_trace_csv(path):
    """Load a trace CSV back into plain records (coins are not stored)."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise TelemetryError(f"unexpected trace header in {path}")
        best = float("inf")
        for row in reader:
            f_val = float(row["f"])
            best = min(best, f_val)
            out.append(TraceRecord(t=int(row["t"]), f=f_val,
                                   grad_norm_sq=float(row["grad_norm_sq"]),
                                   s2w_cum=float(row["s2w_cum"]),
                                   w2s_cum=float(row["w2s_cum"]), best_f=best))
    return out


def average_traces(traces):
    """Pointwise mean of several traces truncated to the shortest one."""
    if not traces:
        raise TelemetryError("nothing to average")
    horizon = min(len(tr) for tr in traces)
    out = []
    count = len(traces)
    for t in range(horizon):
        recs = [tr[t] for tr in traces]
        out.append(TraceRecord(
            t=t,
            f=sum(r.f for r in recs) / count,
            grad_norm_sq=sum(r.grad_norm_sq for r in recs) / count,
            s2w_cum=sum(r.s2w_cum for r in recs) / count,
            w2s_cum=sum(r.w2s_cum for r in recs) / count,
            best_f=sum(r.best_f for r in recs) / count,
        ))
    return out
