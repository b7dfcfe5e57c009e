"""Patch featurisation: background removal, [R, G, B, area] vectors, grouping."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyForeground, MissingPatchFile
from .io import read_ppm

log = logging.getLogger(__name__)

FEATURES = ("R", "G", "B", "area")
THETA_BG = 60
THETA_NOISE = 0.02


def subtract_background(raster: np.ndarray, theta_bg: float = THETA_BG) -> np.ndarray:
    """Foreground mask: bright pixels, largest 4-connected blob only."""
    bright = raster.max(axis=2) > theta_bg
    labels, n = ndimage.label(bright)  # default structure is 4-connectivity
    if n <= 1:
        return bright
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def is_background_dominated(mask: np.ndarray, theta_noise: float = THETA_NOISE) -> bool:
    return bool(mask.mean() < theta_noise)


def extract_features(raster: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Raw ``[mean R, mean G, mean B, pixel count]`` over the foreground."""
    count = int(mask.sum())
    if count == 0:
        raise EmptyForeground("mask has no foreground pixels")
    rgb = raster[mask].astype(float).mean(axis=0)
    return np.array([rgb[0], rgb[1], rgb[2], float(count)])


def normalize(raw: Sequence[float], patch_size: int) -> np.ndarray:
    """Fixed physical scaling: channels by 255, area by the patch area."""
    raw = np.asarray(raw, dtype=float)
    scale = np.array([255.0, 255.0, 255.0, float(patch_size) ** 2])
    return np.clip(raw / scale, 0.0, 1.0)


def featurize_patch(raster: np.ndarray, theta_bg: float = THETA_BG,
                    theta_noise: float = THETA_NOISE) -> np.ndarray | None:
    """Normalized feature vector, or ``None`` for a background-dominated patch."""
    mask = subtract_background(raster, theta_bg)
    if not mask.any() or is_background_dominated(mask, theta_noise):
        return None
    return normalize(extract_features(raster, mask), raster.shape[0])


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    id: str
    symbols: tuple[str, ...]
    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        if f.shape != (len(FEATURES),) or np.any(f < 0) or np.any(f > 1):
            raise ValueError(f"feature vector {f} is not a point of [0,1]^{len(FEATURES)}")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "symbols", tuple(self.symbols))

    def to_dict(self) -> dict:
        return {"id": self.id, "symbols": list(self.symbols),
                "features": [float(v) for v in self.features]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureRecord":
        return cls(str(d["id"]), tuple(d["symbols"]), np.asarray(d["features"], dtype=float))


class FeatureDataset(dict):
    """``symbol -> (M_s, 4)`` array, rows ordered by patch id."""

    @classmethod
    def from_records(cls, records: Iterable[FeatureRecord]) -> "FeatureDataset":
        rows: dict[str, list[np.ndarray]] = {}
        for rec in sorted(records, key=lambda r: r.id):
            for s in rec.symbols:
                rows.setdefault(s, []).append(rec.features)
        return cls({s: np.array(v) for s, v in sorted(rows.items())})

    def counts(self) -> dict[str, int]:
        return {s: len(v) for s, v in self.items()}


def featurize_records(patches: Iterable, theta_bg: float = THETA_BG,
                      theta_noise: float = THETA_NOISE) -> tuple[list[FeatureRecord], int]:
    """Featurize objects with ``id``, ``raster`` and ``symbols`` attributes.

    Returns the kept records and the number of background-dominated patches
    that were skipped.
    """
    kept, skipped = [], 0
    for p in patches:
        vec = featurize_patch(p.raster, theta_bg, theta_noise)
        if vec is None:
            skipped += 1
            continue
        kept.append(FeatureRecord(p.id, tuple(p.symbols), vec))
    return kept, skipped


def read_manifest(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def featurize_manifest(manifest: Sequence[Mapping], base_dir=".", theta_bg: float = THETA_BG,
                       theta_noise: float = THETA_NOISE) -> tuple[list[FeatureRecord], int]:
    kept, skipped = [], 0
    for rec in manifest:
        path = Path(base_dir) / rec["file"]
        if not path.exists():
            raise MissingPatchFile(f"patch file {path} not found (record {rec.get('id')})")
        vec = featurize_patch(read_ppm(path), theta_bg, theta_noise)
        if vec is None:
            skipped += 1
            continue
        kept.append(FeatureRecord(str(rec["id"]), tuple(rec["symbols"]), vec))
    if skipped:
        log.info("skipped %d background-dominated patches", skipped)
    return kept, skipped


def group_by_symbol(manifest: Sequence[Mapping], base_dir=".", theta_bg: float = THETA_BG,
                    theta_noise: float = THETA_NOISE) -> FeatureDataset:
    """Per-symbol feature lists; each patch counts once for every label it has."""
    records, _ = featurize_manifest(manifest, base_dir, theta_bg, theta_noise)
    return FeatureDataset.from_records(records)
