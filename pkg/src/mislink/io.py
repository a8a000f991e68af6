"""Reading and writing datasets, configs and reports.

A dataset on disk is a directory with

``nodes.csv``
    ``group_id, node_id, y, <covariate columns...>``; node order within a
    group is the row order.
``edges.csv``
    ``group_id, src, dst, measure`` with ``measure`` in {1, 2}; absent pairs
    are non-links.
``truth.csv`` (optional)
    ``group_id, src, dst`` listing the true links.
``dataset.json``
    ``schema_version``, covariate names, the name of the column defining the
    pair indicator, and one entry per measure with a ``symmetric`` flag. For
    a symmetric measure each listed edge is set in both directions.

Configs and reports are JSON objects carrying ``schema_version`` and
``kind``; floats are written in their shortest round-trip form and
non-finite values as ``null``.
"""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import jsonschema
import numpy as np

from .core import Dataset, GroupSample
from .errors import (
    IntegrityError,
    IoError,
    ParseError,
    UnknownColumn,
    ValidationError,
    VersionError,
)

SCHEMA_VERSION = "1.0"
SUPPORTED_VERSIONS = ("1.0",)

NODE_FIXED = ("group_id", "node_id", "y")
EDGE_COLUMNS = ("group_id", "src", "dst", "measure")
TRUTH_COLUMNS = ("group_id", "src", "dst")

_number_array = {"type": "array", "items": {"type": ["number", "null"]}}
_matrix = {"type": "array", "items": _number_array}

REPORT_SCHEMAS = {
    "dataset": {
        "type": "object",
        "required": ["covariate_names", "phi_column", "measures"],
        "properties": {
            "covariate_names": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "phi_column": {"type": "string"},
            "measures": {
                "type": "array",
                "minItems": 1,
                "maxItems": 2,
                "items": {
                    "type": "object",
                    "required": ["id", "symmetric"],
                    "properties": {
                        "id": {"enum": [1, 2]},
                        "symmetric": {"type": "boolean"},
                    },
                },
            },
            "has_truth": {"type": "boolean"},
        },
    },
    "sim_config": {"type": "object"},
    "mc_config": {"type": "object", "properties": {"Q": {"type": "integer", "minimum": 1}}},
    "rates": {
        "type": "object",
        "required": ["mode", "p0", "p1", "pi1", "pi0", "flags", "param_names"],
        "properties": {
            "mode": {"enum": ["single", "two", "known"]},
            "p0": _number_array,
            "p1": _number_array,
            "flags": {"type": "array", "items": {"type": "string"}},
            "vcov": {"anyOf": [{"type": "null"}, _matrix]},
            "tau": {"anyOf": [{"type": "null"}, _matrix]},
        },
    },
    "fit": {
        "type": "object",
        "required": ["names", "params", "se", "vcov", "spec", "first_stage_corrected"],
        "properties": {
            "names": {"type": "array", "items": {"type": "string"}},
            "params": _number_array,
            "se": _number_array,
            "vcov": _matrix,
            "spec": {"type": "object"},
            "first_stage_corrected": {"type": "boolean"},
            "diagnostics": {"type": "object"},
        },
    },
    "mc": {
        "type": "object",
        "required": ["config", "Q", "n_success", "failures", "rates", "variants"],
        "properties": {
            "Q": {"type": "integer", "minimum": 1},
            "n_success": {"type": "integer", "minimum": 1},
            "failures": {"type": "array"},
            "variants": {"type": "array"},
        },
    },
    "lim": {"type": "object"},
}

ENVELOPE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "kind"],
    "properties": {
        "schema_version": {"type": "string"},
        "kind": {"enum": sorted(REPORT_SCHEMAS)},
    },
}


# ---------------------------------------------------------------- JSON

def to_jsonable(obj):
    """Plain JSON types: numpy scalars and arrays unwrapped, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj):
    """Deterministic JSON text (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def validate_report(doc):
    """Check the envelope and the kind-specific schema. Raises VersionError/ValidationError."""
    if not isinstance(doc, dict):
        raise ValidationError("report must be a JSON object")
    if "schema_version" not in doc:
        raise VersionError("schema_version missing")
    if doc["schema_version"] not in SUPPORTED_VERSIONS:
        raise VersionError(f"unsupported schema_version {doc['schema_version']!r}")
    try:
        jsonschema.validate(doc, ENVELOPE_SCHEMA)
        jsonschema.validate(doc, REPORT_SCHEMAS[doc["kind"]])
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"report does not match its schema: {exc.message}") from exc
    return doc


def wrap_report(kind, payload):
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind}
    doc.update(to_jsonable(payload))
    return validate_report(doc)


def save_report(path, kind, payload):
    """Write ``payload`` (a dict) as a versioned JSON document of the given kind."""
    doc = wrap_report(kind, payload)
    try:
        Path(path).write_text(dumps(doc), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return doc


def load_report(path, kind=None):
    try:
        text = Path(path).read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=str(path)) from exc
    validate_report(doc)
    if kind is not None and doc["kind"] != kind:
        raise ValidationError(f"{path}: expected a {kind!r} document, found {doc['kind']!r}")
    return doc


def strip_envelope(doc):
    return {k: v for k, v in doc.items() if k not in ("schema_version", "kind")}


# ---------------------------------------------------------------- CSV

def _read_csv(path, required):
    """Yield ``(line_number, row_dict)``; the header must contain ``required``."""
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1, path=str(path)) from None
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise UnknownColumn(f"{path}: missing column(s) {missing}")
        if len(set(header)) != len(header):
            raise ParseError("duplicate column names", line=1, path=str(path))
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", line=line, path=str(path)
                )
            rows.append((line, dict(zip(header, (c.strip() for c in row)))))
        return header, rows


def _float(text, line, path, column):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"column {column!r}: not a number: {text!r}", line, str(path)) from None


def read_table_csv(path):
    """Read a generic CSV table into a list of dicts, converting numeric cells."""
    _, rows = _read_csv(path, ())
    out = []
    for _, row in rows:
        conv = {}
        for k, v in row.items():
            try:
                conv[k] = int(v)
            except ValueError:
                try:
                    conv[k] = float(v)
                except ValueError:
                    conv[k] = v
        out.append(conv)
    return out


def _resolve_config(config):
    if isinstance(config, (str, os.PathLike)):
        doc = load_report(config, kind="dataset")
    else:
        doc = dict(config)
        doc.setdefault("schema_version", SCHEMA_VERSION)
        doc.setdefault("kind", "dataset")
        validate_report(doc)
    ids = [m["id"] for m in doc["measures"]]
    if ids != list(range(1, len(ids) + 1)):
        raise ValidationError(f"measure ids must be 1..T in order, got {ids}")
    return doc


def load_dataset(nodes_path, edges_path, config, truth_path=None) -> Dataset:
    """Assemble a :class:`Dataset` from node and edge tables.

    Parameters
    ----------
    nodes_path, edges_path : path-like
    config : path-like or dict
        The ``dataset.json`` document (or its contents).
    truth_path : path-like, optional
        Table of true links; required for the oracle estimator.

    Raises
    ------
    ParseError
        Malformed rows; carries the offending line number.
    IntegrityError
        Duplicate nodes or edges, self loops, unknown groups or nodes.
    UnknownColumn
        A configured covariate or the pair-indicator column is absent.
    """
    cfg = _resolve_config(config)
    covs = list(cfg["covariate_names"])
    if cfg["phi_column"] not in covs:
        raise UnknownColumn(f"phi column {cfg['phi_column']!r} is not a covariate")
    phi_idx = covs.index(cfg["phi_column"])
    T = len(cfg["measures"])
    symmetric = [m["symmetric"] for m in cfg["measures"]]

    _, node_rows = _read_csv(nodes_path, NODE_FIXED + tuple(covs))
    groups = {}  # group_id -> {"ids": [...], "index": {}, "y": [], "X": []}
    for line, row in node_rows:
        gid, nid = row["group_id"], row["node_id"]
        if not gid or not nid:
            raise ParseError("empty group_id or node_id", line, str(nodes_path))
        g = groups.setdefault(gid, {"ids": [], "index": {}, "y": [], "X": []})
        if nid in g["index"]:
            raise IntegrityError(f"duplicate node {nid!r} in group {gid!r} (line {line})")
        g["index"][nid] = len(g["ids"])
        g["ids"].append(nid)
        g["y"].append(_float(row["y"], line, nodes_path, "y"))
        g["X"].append([_float(row[c], line, nodes_path, c) for c in covs])
    if not groups:
        raise IntegrityError(f"{nodes_path}: no nodes")

    H = {gid: np.zeros((T, len(g["ids"]), len(g["ids"])), np.int8) for gid, g in groups.items()}

    def locate(row, line, path):
        gid, src, dst = row["group_id"], row["src"], row["dst"]
        if gid not in groups:
            raise IntegrityError(f"{path}:{line}: unknown group {gid!r}")
        idx = groups[gid]["index"]
        for node in (src, dst):
            if node not in idx:
                raise IntegrityError(f"{path}:{line}: unknown node {node!r} in group {gid!r}")
        if src == dst:
            raise IntegrityError(f"{path}:{line}: self loop at node {src!r}")
        return gid, idx[src], idx[dst]

    _, edge_rows = _read_csv(edges_path, EDGE_COLUMNS)
    seen = set()
    for line, row in edge_rows:
        try:
            m = int(row["measure"])
        except ValueError:
            raise ParseError(f"measure must be an integer, got {row['measure']!r}",
                             line, str(edges_path)) from None
        if not 1 <= m <= T:
            raise IntegrityError(f"{edges_path}:{line}: measure {m} not in 1..{T}")
        gid, i, j = locate(row, line, edges_path)
        key = (gid, i, j, m)
        if key in seen:
            raise IntegrityError(
                f"{edges_path}:{line}: duplicate edge {row['src']}->{row['dst']} "
                f"(group {gid!r}, measure {m})"
            )
        seen.add(key)
        H[gid][m - 1, i, j] = 1
        if symmetric[m - 1]:
            H[gid][m - 1, j, i] = 1

    truth = None
    if truth_path is not None:
        truth = {gid: np.zeros(h.shape[1:], np.int8) for gid, h in H.items()}
        _, truth_rows = _read_csv(truth_path, TRUTH_COLUMNS)
        tseen = set()
        for line, row in truth_rows:
            gid, i, j = locate(row, line, truth_path)
            if (gid, i, j) in tseen:
                raise IntegrityError(f"{truth_path}:{line}: duplicate true link")
            tseen.add((gid, i, j))
            truth[gid][i, j] = 1

    samples = []
    for gid, g in groups.items():
        samples.append(
            GroupSample(
                gid, np.array(g["y"]), np.array(g["X"]), tuple(H[gid]),
                None if truth is None else truth[gid], tuple(g["ids"]),
            )
        )
    return Dataset(samples, tuple(covs), phi_idx)


def _fmt(x):
    return format(float(x), ".17g")


def dataset_config(ds: Dataset):
    return {
        "covariate_names": list(ds.covariate_names),
        "phi_column": ds.covariate_names[ds.phi_column],
        "measures": [
            {
                "id": t + 1,
                "symmetric": all(np.array_equal(g.measures[t], g.measures[t].T) for g in ds.groups),
            }
            for t in range(ds.n_measures)
        ],
        "has_truth": ds.has_truth,
    }


def save_dataset(ds: Dataset, directory):
    """Write ``nodes.csv``, ``edges.csv``, ``truth.csv`` (if known) and ``dataset.json``.

    Edges are listed in both directions even for symmetric measures, so the
    files load back to the same matrices with or without expansion.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(NODE_FIXED) + list(ds.covariate_names))
        for g in ds.groups:
            for k, nid in enumerate(g.node_ids):
                w.writerow([g.group_id, nid, _fmt(g.y[k])] + [_fmt(v) for v in g.X[k]])
    with open(d / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_COLUMNS)
        for g in ds.groups:
            ids = g.node_ids
            for t, Hm in enumerate(g.measures):
                for i, j in zip(*np.nonzero(Hm)):
                    w.writerow([g.group_id, ids[i], ids[j], t + 1])
    if ds.has_truth:
        with open(d / "truth.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRUTH_COLUMNS)
            for g in ds.groups:
                ids = g.node_ids
                for i, j in zip(*np.nonzero(g.truth)):
                    w.writerow([g.group_id, ids[i], ids[j]])
    save_report(d / "dataset.json", "dataset", dataset_config(ds))
    return d


def load_dataset_dir(directory, with_truth=True) -> Dataset:
    """Load a directory written by :func:`save_dataset`."""
    d = Path(directory)
    cfg = load_report(d / "dataset.json", kind="dataset")
    truth = d / "truth.csv"
    use_truth = with_truth and truth.exists()
    return load_dataset(d / "nodes.csv", d / "edges.csv", cfg, truth if use_truth else None)


def save_weight_matrices(path, ds: Dataset, matrices):
    """Write real-valued per-group matrices as ``group_id, src, dst, measure, weight``.

    ``matrices`` maps ``(group_id, measure)`` to an ``(n, n)`` array; only
    nonzero off-diagonal cells are listed.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id", "src", "dst", "measure", "weight"])
        for g in ds.groups:
            ids = g.node_ids
            for t in range(ds.n_measures):
                M = matrices[(g.group_id, t + 1)]
                for i, j in zip(*np.nonzero(M)):
                    if i != j:
                        w.writerow([g.group_id, ids[i], ids[j], t + 1, _fmt(M[i, j])])
