"""MAP segmentation of fixation traces into plan actions, and patch labelling.

A trace for an L-step plan is modelled as L action segments separated by
L-1 transition segments. Action samples are isotropic Normal around the
segment's own mean, transition samples are uniform over the image, and the
2L-1 segment-length proportions carry a symmetric Dirichlet prior. Every term
is a sum over segments, so the best partition is found exactly by dynamic
programming over changepoints.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import InvalidPartition, TraceTooShort
from .features import THETA_BG, THETA_NOISE, is_background_dominated, subtract_background
from .plan_parser import Plan
from .scene_sim import FixationTrace, Scene, crop_patch, noisy_patch

log = logging.getLogger(__name__)

TRANSITION = -1


@dataclass(frozen=True)
class SegmentParams:
    sigma_fix: float = 5.0
    alpha: float = 2.0
    min_segment: int = 5


@dataclass(frozen=True)
class Partition:
    """Interior boundaries of the alternating action/transition segments.

    ``changepoints[k]`` is the first sample of segment ``k + 1``; segment 0
    starts at 0 and the last segment ends at ``length``.
    """

    changepoints: tuple[int, ...]
    n_actions: int
    length: int

    def __post_init__(self):
        object.__setattr__(self, "changepoints", tuple(int(c) for c in self.changepoints))
        if self.n_actions < 1:
            raise InvalidPartition("a partition needs at least one action")
        if len(self.changepoints) != 2 * self.n_actions - 2:
            raise InvalidPartition(
                f"{self.n_actions} actions need {2 * self.n_actions - 2} changepoints, "
                f"got {len(self.changepoints)}")
        bounds = (0, *self.changepoints, self.length)
        if any(b <= a for a, b in zip(bounds, bounds[1:])):
            raise InvalidPartition(f"empty or unordered segment in {bounds}")

    def segments(self) -> list[tuple[int, int, int]]:
        """``(start, end, action)`` triples; action is ``TRANSITION`` for gaps."""
        bounds = (0, *self.changepoints, self.length)
        return [(a, b, k // 2 if k % 2 == 0 else TRANSITION)
                for k, (a, b) in enumerate(zip(bounds, bounds[1:]))]

    def assignment(self) -> np.ndarray:
        out = np.empty(self.length, dtype=int)
        for a, b, act in self.segments():
            out[a:b] = act
        return out


def _action_loglik(points: np.ndarray, sigma: float) -> float:
    n = len(points)
    centred = points - points.mean(axis=0)
    return -n * math.log(2 * math.pi * sigma ** 2) - float((centred ** 2).sum()) / (2 * sigma ** 2)


def _dirichlet_const(k: int, alpha: float) -> float:
    return float(gammaln(k * alpha) - k * gammaln(alpha)) if k > 1 else 0.0


def score_partition(trace: FixationTrace, n_actions: int, partition: Partition,
                    params: SegmentParams = SegmentParams()) -> float:
    """Log joint score of a partition (higher is better)."""
    if partition.n_actions != n_actions or partition.length != len(trace):
        raise InvalidPartition("partition does not match trace length / plan length")
    W, H = trace.image_size
    log_area = math.log(W * H)
    T = len(trace)
    k = 2 * n_actions - 1
    total = _dirichlet_const(k, params.alpha)
    for a, b, act in partition.segments():
        n = b - a
        if act == TRANSITION:
            total -= n * log_area
        else:
            total += _action_loglik(trace.gaze_px[a:b], params.sigma_fix)
        if k > 1:
            total += (params.alpha - 1) * math.log(n / T)
    return total


def _segment_tables(gaze: np.ndarray, image_size, params: SegmentParams):
    """``(T+1, T+1)`` scores of a segment ``[i, j)`` as action and as transition.

    Tables are indexed ``[j, i]`` (end first) so the dynamic programme reduces
    along contiguous rows. Entries with ``j - i < min_segment`` are ``-inf``.
    Both tables include the segment's Dirichlet term.
    """
    T = len(gaze)
    x = gaze - gaze.mean(axis=0)  # centring keeps the cumulative sums small
    cx = np.concatenate([[0.0], np.cumsum(x[:, 0])])
    cy = np.concatenate([[0.0], np.cumsum(x[:, 1])])
    c2 = np.concatenate([[0.0], np.cumsum((x ** 2).sum(axis=1))])
    # the (T+1)^2 tables are large, so they are built with in-place arithmetic
    idx = np.arange(T + 1, dtype=float)
    nf = idx[:, None] - idx[None, :]  # nf[j, i] = j - i
    invalid = nf < params.min_segment
    np.maximum(nf, 1.0, out=nf)

    ss = c2[:, None] - c2[None, :]
    tmp = cx[:, None] - cx[None, :]
    tmp *= tmp
    dy = cy[:, None] - cy[None, :]
    dy *= dy
    tmp += dy
    tmp /= nf
    ss -= tmp  # within-segment sum of squared deviations

    prior = np.divide(nf, T, out=dy)
    np.log(prior, out=prior)
    prior *= params.alpha - 1

    sig2 = params.sigma_fix ** 2
    act = ss
    act *= -1.0 / (2 * sig2)
    act -= np.multiply(nf, math.log(2 * math.pi * sig2), out=tmp)
    act += prior
    W, H = image_size
    trans = np.multiply(nf, -math.log(W * H), out=nf)
    trans += prior
    act[invalid] = -np.inf
    trans[invalid] = -np.inf
    return act, trans


def infer_segmentation(trace: FixationTrace, n_actions: int,
                       params: SegmentParams = SegmentParams()) -> Partition:
    """Highest-scoring partition; ties go to earlier changepoints."""
    T = len(trace)
    k_segments = 2 * n_actions - 1
    if n_actions < 1:
        raise InvalidPartition("need at least one action")
    if T < params.min_segment * k_segments:
        raise TraceTooShort(
            f"{T} samples cannot hold {k_segments} segments of {params.min_segment}")
    if n_actions == 1:
        return Partition((), 1, T)

    act, trans = _segment_tables(trace.gaze_px, trace.image_size, params)

    best = act[:, 0].copy()  # best[j]: score of segments covering [0, j)
    back = []
    cand = np.empty_like(act)
    ends = np.arange(T + 1)
    for k in range(1, k_segments):
        table = trans if k % 2 else act
        np.add(table, best[None, :], out=cand)
        arg = np.argmax(cand, axis=1)  # first maximum -> earliest boundary
        best = cand[ends, arg]
        back.append(arg)

    cps = []
    j = T
    for arg in reversed(back):
        j = int(arg[j])
        cps.append(j)
    return Partition(tuple(reversed(cps)), n_actions, T)


def infer_locations(trace: FixationTrace, partition: Partition) -> np.ndarray:
    """Coordinate-wise median gaze of every action segment, ``(L, 2)`` pixels."""
    out = np.empty((partition.n_actions, 2))
    for a, b, act in partition.segments():
        if act != TRANSITION:
            out[act] = np.median(trace.gaze_px[a:b], axis=0)
    return out


def assignment_accuracy(partition: Partition, trace: FixationTrace) -> float:
    """Fraction of samples whose inferred action (or transition) is the true one."""
    if trace.truth_assignment is None:
        raise ValueError("trace carries no ground truth")
    return float(np.mean(partition.assignment() == trace.truth_assignment))


# -- labelled patches -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LabeledPatch:
    id: str
    raster: np.ndarray
    symbols: tuple[str, ...]
    demo: int
    step: int
    corrupted: bool = False
    object_id: int | None = None  # object the patch was snapped to

    def __post_init__(self):
        if not self.symbols:
            raise ValueError("a labelled patch needs at least one symbol")
        if self.raster.ndim != 3 or self.raster.shape[0] != self.raster.shape[1]:
            raise ValueError("patch raster must be square RGB")

    def __eq__(self, other):
        if not isinstance(other, LabeledPatch):
            return NotImplemented
        return (self.id, self.symbols, self.demo, self.step, self.corrupted, self.object_id) == \
            (other.id, other.symbols, other.demo, other.step, other.corrupted, other.object_id) \
            and np.array_equal(self.raster, other.raster)

    __hash__ = object.__hash__

    def manifest_record(self, file: str) -> dict:
        return {"id": self.id, "file": file, "symbols": list(self.symbols),
                "demo": self.demo, "step": self.step, "corrupted": self.corrupted}


def snap_to_object(location_px, scene: Scene, max_dist: float) -> int | None:
    """Id of the nearest object centre within ``max_dist``; lowest id on ties."""
    if not scene.objects:
        return None
    centers = scene.centers_px()
    d = np.hypot(*(centers - np.asarray(location_px, dtype=float)).T)
    best = int(np.argmin(d))  # objects are stored in id order
    return scene.objects[best].id if d[best] <= max_dist else None


def extract_labeled_patches(frame: np.ndarray, scene: Scene, plan: Plan, locations,
                            patch_size: int, demo: int = 0, frame_index: int = 0,
                            theta_bg: float = THETA_BG,
                            theta_noise: float = THETA_NOISE, noise_seed=None,
                            pixel_noise: float = 0.0) -> list[LabeledPatch]:
    """One patch per plan step, cropped at the object nearest the inferred location.

    With ``pixel_noise > 0`` every crop gets its own sensor noise, which lets
    a caller render a scene once and still draw independent observations.
    """
    if len(locations) != len(plan.steps):
        raise ValueError("need one location per plan step")
    patches = []
    for k, (step, loc) in enumerate(zip(plan.steps, locations)):
        obj_id = snap_to_object(loc, scene, patch_size)
        center = scene.camera.mm_to_px(scene.object(obj_id).center_mm) if obj_id is not None \
            else np.asarray(loc, dtype=float)
        raster = crop_patch(frame, center, patch_size, scene.background_rgb)
        if pixel_noise > 0:
            raster = noisy_patch(raster, noise_seed, pixel_noise)
        if is_background_dominated(subtract_background(raster, theta_bg), theta_noise):
            log.debug("demo %d step %d: background-dominated patch dropped", demo, k)
            continue
        patches.append(LabeledPatch(f"d{demo:04d}-s{k:02d}-f{frame_index:02d}", raster,
                                    tuple(step.target), demo, k, False, obj_id))
    return patches


def inject_label_noise(patches: Sequence[LabeledPatch], rate: float, seed,
                       classes: Sequence[tuple[str, ...]] | Mapping[int, Sequence[tuple[str, ...]]]
                       ) -> list[LabeledPatch]:
    """Relabel each patch with probability ``rate`` as a different object class.

    ``classes`` lists the symbol tuples of the scene's object classes, either
    once for all patches or per demo id.
    """
    if not 0 <= rate < 1:
        raise ValueError("rate must lie in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    for p in patches:
        # one uniform per patch keeps the corruption pattern independent of the labels
        u = rng.random()
        pick = rng.random()
        if u >= rate:
            out.append(p)
            continue
        pool = classes[p.demo] if isinstance(classes, Mapping) else classes
        others = sorted({tuple(c) for c in pool} - {tuple(p.symbols)})
        if not others:
            out.append(p)
            continue
        new = others[min(int(pick * len(others)), len(others) - 1)]
        out.append(replace(p, symbols=new, corrupted=True))
    return out
