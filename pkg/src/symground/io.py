"""File formats: PPM rasters, trace CSV, JSON / JSON Lines."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image


def write_ppm(path, raster: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(raster, dtype=np.uint8), "RGB").save(path, format="PPM")


def read_ppm(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_jsonl(records: Iterable[Mapping], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


TRACE_COLUMNS = ("t", "x_px", "y_px", "x_mm", "y_mm", "truth_action")


def write_trace_csv(trace, path) -> None:
    truth = trace.truth_assignment
    mm = trace.gaze_mm if trace.gaze_mm is not None else np.full_like(trace.gaze_px, np.nan)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for i in range(len(trace)):
            w.writerow([int(trace.t[i]), repr(float(trace.gaze_px[i, 0])),
                        repr(float(trace.gaze_px[i, 1])), repr(float(mm[i, 0])),
                        repr(float(mm[i, 1])), int(truth[i]) if truth is not None else -1])


def read_trace_csv(path, image_size):
    """Load a trace written by :func:`write_trace_csv`.

    The image size is not stored in the CSV, so the caller passes it (it
    comes with the scene JSON).
    """
    from .scene_sim import FixationTrace

    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for r in reader:
            rows.append(r)
    t = np.array([int(r["t"]) for r in rows])
    px = np.array([[float(r["x_px"]), float(r["y_px"])] for r in rows]).reshape(-1, 2)
    mm = np.array([[float(r["x_mm"]), float(r["y_mm"])] for r in rows]).reshape(-1, 2)
    truth = np.array([int(r["truth_action"]) for r in rows])
    starts = tuple(int(i) for i in np.flatnonzero(np.r_[True, truth[1:] != truth[:-1]])) \
        if len(truth) else ()
    return FixationTrace(t, px, tuple(image_size), mm, starts, truth)
