"""File formats: annotation/gold/matrix CSVs, result and sweep CSVs, JSON output.

Annotation CSVs have header ``task_id,annotator_id,label``; gold and result
CSVs ``task_id,label``; matrix CSVs hold C rows of C reals. Labels that all
parse as non-negative integers are used as class indices directly;
otherwise the sorted distinct strings become ``class_names``. Ids read from
files are strings, ordered numerically when they look like integers and
lexically otherwise, so write -> read is lossless.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np

from .core import AggregationResult, AnnotationSet, TransitionMatrix
from .errors import CrowdCertError, LabelOutOfRange

log = logging.getLogger(__name__)

ANNOTATION_HEADER = ("task_id", "annotator_id", "label")
LABEL_HEADER = ("task_id", "label")


class FormatError(CrowdCertError):
    pass


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


def fmt6(x: float) -> str:
    return format(float(x), ".6g")


def _id_key(s: str):
    return (0, int(s), s) if s.isdigit() else (1, 0, s)


def _rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if tuple(h.strip() for h in first) != header:
            raise FormatError(f"{path}: expected header {','.join(header)}, got {','.join(first)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield [c.strip() for c in row]


def _label_map(values, class_names=None):
    """(mapping str -> index, class_names or None)."""
    if class_names is not None:
        return {str(n): i for i, n in enumerate(class_names)}, tuple(class_names)
    vals = set(values)
    if all(v.isdigit() for v in vals):
        return {v: int(v) for v in vals}, None
    names = tuple(sorted(vals))
    return {n: i for i, n in enumerate(names)}, names


def read_annotations(path, num_classes: int | None = None, class_names=None) -> AnnotationSet:
    rows = list(_rows(path, ANNOTATION_HEADER))
    mapping, names = _label_map([r[2] for r in rows], class_names)
    tasks = sorted({r[0] for r in rows}, key=_id_key)
    annots = sorted({r[1] for r in rows}, key=_id_key)
    tpos = {t: i for i, t in enumerate(tasks)}
    apos = {a: i for i, a in enumerate(annots)}
    try:
        labels = [mapping[r[2]] for r in rows]
    except KeyError as exc:
        raise LabelOutOfRange(f"unknown label {exc.args[0]!r}") from None
    if num_classes is None:
        num_classes = len(names) if names is not None else max(labels, default=0) + 1
    return AnnotationSet.from_arrays(
        [tpos[r[0]] for r in rows], [apos[r[1]] for r in rows], labels, num_classes,
        task_ids=tasks, annotator_ids=annots, class_names=names)


def read_labels(path, data: AnnotationSet) -> dict:
    """task_id -> class index, mapped through ``data.class_names``; unknown tasks are skipped."""
    mapping = ({str(n): i for i, n in enumerate(data.class_names)} if data.class_names
               else None)
    known = set(data.task_ids)
    out, skipped = {}, 0
    for tid, lab in _rows(path, LABEL_HEADER):
        if tid not in known:
            skipped += 1
            continue
        if mapping is not None:
            if lab not in mapping:
                raise LabelOutOfRange(f"unknown gold label {lab!r}")
            out[tid] = mapping[lab]
        else:
            if not lab.isdigit():
                raise LabelOutOfRange(f"gold label {lab!r} is not a class index")
            out[tid] = int(lab)
    if skipped:
        log.warning("%s: ignored %d labels for tasks without annotations", path, skipped)
    return out


def read_annotations_with_gold(path, gold_path=None, **kw) -> AnnotationSet:
    data = read_annotations(path, **kw)
    if gold_path is not None:
        data = data.with_gold(read_labels(gold_path, data))
    return data


def _label_text(data_or_names, c: int) -> str:
    names = data_or_names
    return str(names[c]) if names else str(int(c))


def write_annotations(data: AnnotationSet, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for t, a, y in data.records():
            w.writerow((t, a, _label_text(data.class_names, y)))


def write_gold(data: AnnotationSet, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for tid, c in data.gold_mapping().items():
            w.writerow((tid, _label_text(data.class_names, c)))


def write_result(result: AggregationResult, path, class_names=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for tid, c in zip(result.task_ids, result.labels):
            w.writerow((tid, _label_text(class_names, c)))


def read_result_labels(path) -> dict:
    return {tid: lab for tid, lab in _rows(path, LABEL_HEADER)}


def read_matrix(path) -> TransitionMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    try:
        values = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return TransitionMatrix(values)


def write_matrix(t: TransitionMatrix, path):
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(t.entries):
            fh.write(",".join(fmt17(x) for x in row) + "\n")


def _json_value(obj: Any, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," + pad if indent else ", "
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return fmt17(x)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, Path):
        return json.dumps(str(obj), ensure_ascii=False)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return json.dumps(obj.value)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (json.dumps(str(k), ensure_ascii=False) + ": " + _json_value(v, indent, level + 1)
                 for k, v in obj.items())
        return "{" + pad + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + pad + sep.join(_json_value(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    """JSON with every float printed to 17 significant digits."""
    return _json_value(obj, indent, 0) + "\n"


def write_json(obj, path):
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


SWEEP_BASE = ("nu0", "t00", "t11", "h", "gap", "verdict")
SWEEP_MC = ("empirical_mv", "empirical_map")


def sweep_header(mc: bool, estimate: bool) -> tuple:
    return SWEEP_BASE + (SWEEP_MC if mc else ()) + (("estimated_verdict",) if estimate else ()) + (
        "degenerate", "error")


def _opt(x, f=fmt17):
    return "" if x is None else f(x)


def sweep_rows(grid, mc: bool, estimate: bool):
    for c in grid.cells:
        row = [fmt17(c.nu0), fmt17(c.t00), fmt17(c.t11), str(c.H), _opt(c.gap), c.verdict or ""]
        if mc:
            row += [_opt(c.empirical_mv), _opt(c.empirical_map)]
        if estimate:
            row.append(c.estimated_verdict or "")
        row += ["1" if c.degenerate else "0", c.error]
        yield row


def write_sweep_csv(grid, path_or_buf):
    from .simulate import SweepMode
    mc = grid.spec.mode is SweepMode.MONTE_CARLO
    est = grid.spec.estimate
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(sweep_header(mc, est))
        w.writerows(sweep_rows(grid, mc, est))
    finally:
        if own:
            fh.close()


def read_sweep_csv(path) -> list:
    """Parse a sweep CSV back into :class:`SweepCell` records."""
    from .simulate import SweepCell
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cells = []
        for r in reader:
            fl = lambda k: float(r[k]) if r.get(k) not in (None, "") else None
            cells.append(SweepCell(
                nu0=float(r["nu0"]), t00=float(r["t00"]), t11=float(r["t11"]), H=int(r["h"]),
                gap=fl("gap"), verdict=r["verdict"] or None, degenerate=r["degenerate"] == "1",
                empirical_mv=fl("empirical_mv"), empirical_map=fl("empirical_map"),
                estimated_verdict=(r.get("estimated_verdict") or None), error=r["error"]))
    return cells


def sweep_json(grid) -> list:
    return [dict(c.__dict__) for c in grid.cells]
