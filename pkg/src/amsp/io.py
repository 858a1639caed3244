"""Instance files (JSON).

Layout::

    {
      "format": "amsp-instance", "version": 1, "name": "...", "mu": 1,
      "tree": {"T": 4, "B": 2, "probabilities": [...]},      # probabilities optional
      "state_vars": [{"name": "x1", "integer": true, "xbar": 1.0}, ...],
      "stage_vars": [{"name": "y1", "integer": false}, ...],
      "bounds": {"x_lb": ..., "x_ub": ..., "y_lb": ..., "y_ub": ...},
      "node_data": [
        {"node": 1, "a": [...], "b": [...],
         "rows": [{"coeffs": [["x", 1, 0, -5.0], ["y", 1, 0, 1.0]], "sense": "<=", "rhs": 0.0}]},
        ...
      ]
    }

Each bound entry is either one list per component (same for every node) or
an ``N x width`` matrix; ``null`` stands for an infinite bound.  A coefficient
``[kind, node, index, value]`` refers to ``x`` or ``y`` of ``node`` (which
must lie on the root path of the row's node) and a 0-based component index.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .model import AmspInstance, InstanceError, RowBuilder
from .scenario_tree import ScenarioTree

FORMAT = "amsp-instance"
VERSION = 1
_SENSE_TEXT = {1: ">=", -1: "<=", 0: "=="}


def _bound_out(arr: np.ndarray):
    arr = np.asarray(arr, dtype=float)
    enc = lambda v: None if math.isinf(v) else float(v)
    if np.all(arr == arr[0]) or arr.shape[0] == 1:
        return [enc(v) for v in arr[0]]
    return [[enc(v) for v in row] for row in arr]


def _bound_in(val, default: float, shape: tuple[int, int]) -> np.ndarray:
    if val is None:
        return np.full(shape, default)
    arr = np.array([[default if v is None else v for v in row] for row in val], dtype=float) \
        if val and isinstance(val[0], list) else \
        np.array([default if v is None else v for v in val], dtype=float)
    try:
        return np.broadcast_to(arr, shape).copy()
    except ValueError:
        raise InstanceError(f"bound block of shape {arr.shape} does not fit {shape}") from None


def instance_to_dict(inst: AmspInstance) -> dict[str, Any]:
    tree, rows = inst.tree, inst.rows
    tree_doc: dict[str, Any] = {"T": tree.num_stages, "B": tree.branching}
    if not tree.is_uniform:
        tree_doc["probabilities"] = tree.probabilities.tolist()
    per_node: list[list[dict]] = [[] for _ in range(tree.num_nodes)]
    coeffs: list[list] = [[] for _ in range(len(rows))]
    for r, nd, var, c in zip(rows.x_row.tolist(), rows.x_node.tolist(), rows.x_var.tolist(), rows.x_coef.tolist()):
        coeffs[r].append(["x", nd, var, c])
    for r, nd, var, c in zip(rows.y_row.tolist(), rows.y_node.tolist(), rows.y_var.tolist(), rows.y_coef.tolist()):
        coeffs[r].append(["y", nd, var, c])
    for r, (nd, sense, rhs) in enumerate(zip(rows.node.tolist(), rows.sense.tolist(), rows.rhs.tolist())):
        per_node[nd - 1].append({"coeffs": coeffs[r], "sense": _SENSE_TEXT[sense], "rhs": rhs})
    return {
        "format": FORMAT,
        "version": VERSION,
        "name": inst.name,
        "mu": inst.mu,
        "tree": tree_doc,
        "state_vars": [{"name": n, "integer": bool(b), "xbar": float(xb)}
                       for n, b, xb in zip(inst.state_names, inst.x_integer, inst.xbar)],
        "stage_vars": [{"name": n, "integer": bool(b)} for n, b in zip(inst.stage_names, inst.y_integer)],
        "bounds": {"x_lb": _bound_out(inst.x_lb), "x_ub": _bound_out(inst.x_ub),
                   "y_lb": _bound_out(inst.y_lb), "y_ub": _bound_out(inst.y_ub)},
        "node_data": [{"node": n, "a": inst.a[n - 1].tolist(), "b": inst.b[n - 1].tolist(),
                       "rows": per_node[n - 1]} for n in tree.nodes],
    }


def instance_from_dict(doc: dict[str, Any]) -> AmspInstance:
    if doc.get("format", FORMAT) != FORMAT:
        raise InstanceError(f"not an instance document: format={doc.get('format')!r}")
    if doc.get("version", VERSION) != VERSION:
        raise InstanceError(f"unsupported instance version {doc.get('version')}")
    try:
        t = doc["tree"]
        tree = ScenarioTree(int(t["T"]), int(t["B"]), t.get("probabilities"))
        svars, yvars = doc["state_vars"], doc["stage_vars"]
        nodes = doc["node_data"]
    except KeyError as exc:
        raise InstanceError(f"instance document lacks section {exc}") from None
    N, I, J = tree.num_nodes, len(svars), len(yvars)
    if len(nodes) != N:
        raise InstanceError(f"node_data has {len(nodes)} entries, tree has {N} nodes")
    a = np.zeros((N, I))
    b = np.zeros((N, J))
    rb = RowBuilder()
    seen = set()
    for entry in nodes:
        n = int(entry["node"])
        if not 1 <= n <= N or n in seen:
            raise InstanceError(f"bad or duplicate node id {n}")
        seen.add(n)
        a[n - 1] = entry.get("a", np.zeros(I))
        b[n - 1] = entry.get("b", np.zeros(J))
        for row in entry.get("rows", []):
            xt, yt = [], []
            for kind, nd, var, c in row["coeffs"]:
                if kind not in ("x", "y"):
                    raise InstanceError(f"coefficient kind must be 'x' or 'y', got {kind!r}")
                (xt if kind == "x" else yt).append((int(nd), int(var), float(c)))
            if row["sense"] not in _SENSE_TEXT.values():
                raise InstanceError(f"unknown row sense {row['sense']!r}")
            rb.add(n, row["sense"], float(row["rhs"]), xt, yt)
    bounds = doc.get("bounds", {})
    return AmspInstance(
        tree=tree, a=a, b=b, rows=rb.build(),
        x_lb=_bound_in(bounds.get("x_lb"), -math.inf, (N, I)),
        x_ub=_bound_in(bounds.get("x_ub"), math.inf, (N, I)),
        x_integer=[bool(v.get("integer", False)) for v in svars],
        y_lb=_bound_in(bounds.get("y_lb"), -math.inf, (N, J)),
        y_ub=_bound_in(bounds.get("y_ub"), math.inf, (N, J)),
        y_integer=[bool(v.get("integer", False)) for v in yvars],
        xbar=[float(v["xbar"]) for v in svars],
        mu=int(doc.get("mu", 0)),
        state_names=tuple(v.get("name", f"x{k + 1}") for k, v in enumerate(svars)),
        stage_names=tuple(v.get("name", f"y{k + 1}") for k, v in enumerate(yvars)),
        name=doc.get("name", "instance"),
    )


def save_instance(inst: AmspInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst)))


def load_instance(path: str | Path) -> AmspInstance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: invalid JSON ({exc})") from None
    return instance_from_dict(doc)
