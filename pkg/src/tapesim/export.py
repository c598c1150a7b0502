"""Trace and report writers.

The event trace is a CSV with header ``QID,MID,Q_in,D_in,Q_out,D_out,
Q_len,Data_out``: one DR row per fragment request and one R row per
drive return, ordered by Q_in. Message ids render as block.fragment
("312.2" is the second copy of block 312). Column mapping to the
request checkpoints, spelled out because two columns sound alike:

    Q_in     request enters its queue
    D_in     cartridge mounted in the drive (DR-in; service starts)
    Q_out    request leaves its queue (resources reserved)
    D_out    drive freed back to the pool (DR-out; occupation ends)
    Data_out read finished, data served (Data-access)

Checkpoints that never happened (request in flight at the horizon, or a
read that errored out and produced no data) stay empty, never zero.
Output is UTF-8 with LF endings and no trailing delimiter, so a
deterministic run writes byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .engine import SimulationResult
from .kpis import KpiReport

TRACE_HEADER = "QID,MID,Q_in,D_in,Q_out,D_out,Q_len,Data_out"


@dataclass(frozen=True)
class TraceRecord:
    qid: str
    mid: str
    q_in: int | None
    d_in: int | None
    q_out: int | None
    d_out: int | None
    q_len: int | None
    data_out: int | None


def build_trace_records(result: SimulationResult) -> list[TraceRecord]:
    """Assemble DR and R rows from a finished run, in Q_in order."""
    rows: list[tuple[int, int, TraceRecord]] = []
    for frag in result.fragments:
        rows.append(
            (
                frag.q_in,
                frag.seq,
                TraceRecord(
                    qid="DR",
                    mid=str(frag.mid),
                    q_in=frag.q_in,
                    d_in=frag.dr_in,
                    q_out=frag.q_out,
                    d_out=frag.dr_out,
                    q_len=frag.q_len,
                    data_out=None if frag.read_error else frag.data_access,
                ),
            )
        )
    for ret in result.return_rows:
        rows.append(
            (
                ret.q_in,
                ret.seq,
                TraceRecord(
                    qid="R",
                    mid=ret.mid,
                    q_in=ret.q_in,
                    d_in=None,
                    q_out=ret.q_out,
                    d_out=ret.d_out,
                    q_len=ret.q_len,
                    data_out=None,
                ),
            )
        )
    rows.sort(key=lambda r: (r[0], r[1]))
    return [rec for _, _, rec in rows]


def _cell(value: int | None) -> str:
    return "" if value is None else str(value)


def write_trace(records: list[TraceRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        for rec in records:
            fh.write(
                f"{rec.qid},{rec.mid},{_cell(rec.q_in)},{_cell(rec.d_in)},"
                f"{_cell(rec.q_out)},{_cell(rec.d_out)},{_cell(rec.q_len)},"
                f"{_cell(rec.data_out)}\n"
            )


def parse_trace(path) -> list[TraceRecord]:
    """Read a trace back; write_trace(parse_trace(p)) is byte-identical."""
    records = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header {header!r}")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) != 8:
                raise ValueError(f"{path}: malformed row {line!r}")
            qid, mid = parts[0], parts[1]
            ints = [None if p == "" else int(p) for p in parts[2:]]
            records.append(TraceRecord(qid, mid, *ints))
    return records


def trace_filename(library_index: int | None = None) -> str:
    """simQ.csv for a single library; simQ0.csv, simQ1.csv, ... for arrays."""
    return "simQ.csv" if library_index is None else f"simQ{library_index}.csv"


def write_result_trace(result: SimulationResult, outdir, library_index: int | None = None) -> str:
    path = os.path.join(outdir, trace_filename(library_index))
    write_trace(build_trace_records(result), path)
    return path


def _csv_value(value) -> str:
    if value is None:
        return "no data"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(report: KpiReport, outdir, prefix: str = "") -> list[str]:
    """Write the summary and the plot-data CSVs; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []

    kpi_path = os.path.join(outdir, prefix + "kpis.csv")
    with open(kpi_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("key,value\n")
        for key, value in report.summary_rows():
            fh.write(f"{key},{_csv_value(value)}\n")
    paths.append(kpi_path)

    summary_path = os.path.join(outdir, prefix + "summary.txt")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("simulation summary\n")
        fh.write("==================\n")
        for key, value in report.summary_rows():
            fh.write(f"{key:36s} {_csv_value(value)}\n")
    paths.append(summary_path)

    latency_path = os.path.join(outdir, prefix + "latency_by_hour.csv")
    with open(latency_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("hour,first_byte_mean_s,last_byte_mean_s,dr_queue_mean_len,d_queue_mean_len\n")
        for i in report.hours:
            fb = report.first_byte_mean_by_hour[i] if report.first_byte_mean_by_hour else None
            lb = report.last_byte_mean_by_hour[i] if report.last_byte_mean_by_hour else None
            fh.write(
                f"{i},{'' if fb is None else repr(fb)},{'' if lb is None else repr(lb)},"
                f"{report.dr_queue_len_by_hour[i]!r},{report.d_queue_len_by_hour[i]!r}\n"
            )
    paths.append(latency_path)

    activity_path = os.path.join(outdir, prefix + "activity_by_hour.csv")
    with open(activity_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("hour,requests,exchanges,read_errors\n")
        for i in report.hours:
            fh.write(
                f"{i},{report.requests_by_hour[i]},{report.exchanges_by_hour[i]},"
                f"{report.read_errors_by_hour[i]}\n"
            )
    paths.append(activity_path)

    dist_path = os.path.join(outdir, prefix + "queue_length_distribution.csv")
    with open(dist_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("queue,length,fraction\n")
        for length, frac in report.dr_queue_len_distribution:
            fh.write(f"DR,{length},{frac!r}\n")
        for length, frac in report.d_queue_len_distribution:
            fh.write(f"D,{length},{frac!r}\n")
    paths.append(dist_path)

    return paths


def write_motion_histograms(model, rng, path, samples: int = 100_000, bins: int = 40) -> str:
    """Per-kind motion-time histogram CSV for plotting travel distributions."""
    from .geometry import MotionKind

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("kind,bin_low_s,bin_high_s,probability\n")
        for kind in MotionKind:
            for lo, hi, prob in model.motion_histogram(kind, rng, samples=samples, bins=bins):
                fh.write(f"{kind.value},{lo!r},{hi!r},{prob!r}\n")
    return path
