"""Trace persistence: metadata JSON, per-iteration CSV rows and a binary sidecar.

CSV column order is fixed: ``k, node, x0..x{d-1}, y0..y{d-1}, err`` with
1-based node labels. ``err`` is the network-wide error at iteration ``k`` and is
repeated on every node row (empty when no optimum is known).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from dynpriv.engine import ExecutionTrace
from dynpriv.errors import MissingSidecar
from dynpriv.graph import build_graph
from dynpriv.weights import IterationParameters

__all__ = [
    "trace_columns",
    "write_trace_csv",
    "write_error_csv",
    "write_metadata",
    "save_sidecar",
    "load_trace",
    "fmt",
]


def fmt(value: float) -> str:
    """Shortest round-trip text for a float."""
    return repr(float(value))


def trace_columns(d: int) -> list[str]:
    return ["k", "node", *(f"x{c}" for c in range(d)), *(f"y{c}" for c in range(d)), "err"]


def write_trace_csv(trace: ExecutionTrace, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_columns(trace.d))
        for k in range(trace.T + 1):
            err = "" if trace.err is None else fmt(trace.err[k])
            for i in range(trace.n):
                w.writerow([k, i + 1, *map(fmt, trace.x[k, i]), *map(fmt, trace.y[k, i]), err])
    return path


def write_error_csv(err: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "err"])
        for k, e in enumerate(err):
            w.writerow([k, fmt(e)])
    return path


def write_metadata(trace: ExecutionTrace, path: str | Path) -> Path:
    path = Path(path)
    header = {
        "n": trace.n,
        "d": trace.d,
        "T": trace.T,
        "K": trace.K,
        "graph_digest": trace.graph.digest(),
        "edges": trace.graph.arrows(),
        "columns": trace_columns(trace.d),
        "x_star": None if trace.x_star is None else np.asarray(trace.x_star).tolist(),
        "config": trace.meta,
    }
    path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path


def save_sidecar(trace: ExecutionTrace, path: str | Path) -> Path:
    """Binary ``.npz`` with states, parameters and messages for replay."""
    if not trace.has_sidecar:
        raise MissingSidecar("trace was recorded without parameters and messages")
    path = Path(path)
    arrays = {
        "x": trace.x,
        "y": trace.y,
        "grad": trace.grad,
        "ly": trace.ly,
        "tracker": trace.tracker,
        "edges": np.array(sorted(trace.graph.edges), dtype=np.int64).reshape(-1, 2),
        "n": np.array(trace.n),
        "K": np.array(trace.K),
        "meta": np.array(json.dumps(trace.meta, sort_keys=True)),
    }
    for f in ("lam", "R", "A", "C", "B"):
        arrays[f"param_{f}"] = trace.stacked(f)
    if trace.err is not None:
        arrays["err"] = trace.err
    if trace.x_star is not None:
        arrays["x_star"] = np.asarray(trace.x_star)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_trace(path: str | Path) -> ExecutionTrace:
    """Inverse of :func:`save_sidecar`; the objective suite is not stored."""
    path = Path(path)
    if not path.exists():
        raise MissingSidecar(f"no sidecar at {path}")
    with np.load(path, allow_pickle=False) as z:
        data = {key: z[key] for key in z.files}
    graph = build_graph(int(data["n"]), [tuple(e) for e in data["edges"]])
    T = data["x"].shape[0] - 1
    params = [
        IterationParameters(
            k=k,
            lam=data["param_lam"][k],
            R=data["param_R"][k],
            A=data["param_A"][k],
            C=data["param_C"][k],
            B=data["param_B"][k],
        )
        for k in range(T)
    ]
    return ExecutionTrace(
        graph=graph,
        K=int(data["K"]),
        x=data["x"],
        y=data["y"],
        grad=data["grad"],
        err=data.get("err"),
        params=params,
        ly=data["ly"],
        tracker=data["tracker"],
        x_star=data.get("x_star"),
        meta=json.loads(str(data["meta"])),
    )
