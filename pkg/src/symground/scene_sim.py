"""Synthetic tabletop scenes, overhead rendering and fixation traces.

Everything random takes an explicit ``numpy.random.Generator`` (or a seed),
so a scene, a frame and a demonstration are reproducible from their seeds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NoIntersection, PlacementFailure
from .plan_parser import AbstractStep, Lexicon, Plan, render_step

COLOUR_PROTOTYPES = {
    "red": (200, 30, 30),
    "blue": (30, 30, 200),
    "yellow": (220, 210, 30),
}
# novel colours, only ever used for out-of-distribution test objects
OTHER_COLOURS = {
    "green": (30, 200, 30),
    "purple": (150, 30, 200),
    "orange": (230, 120, 30),
    "white": (220, 220, 220),
    "cyan": (30, 200, 200),
}
SHAPE_FOOTPRINTS = {
    "cell": (12, 12),
    "block": (24, 12),
    "cube": (24, 24),
}
CELL_CORNER_RADIUS = 3
COLOUR_JITTER = 8.0
PIXEL_NOISE = 3.0
BACKGROUND_RGB = (6, 6, 6)
MAX_REJECTIONS = 10_000


def luminance(rgb) -> float:
    r, g, b = rgb
    return 0.299 * r + 0.587 * g + 0.114 * b


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


# -- cameras ----------------------------------------------------------------

@dataclass(frozen=True)
class OrthoCamera:
    """Overhead orthographic camera looking straight down at the table."""

    px_per_mm: float
    image_size: tuple[int, int]  # (width, height) in pixels
    height_mm: float = 1000.0

    def mm_to_px(self, xy_mm):
        return np.asarray(xy_mm, dtype=float) * self.px_per_mm

    def ray(self, gaze_px):
        u, v = gaze_px
        origin = np.array([u / self.px_per_mm, v / self.px_per_mm, self.height_mm])
        return origin, np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class PinholeCamera:
    """Perspective camera; ``rotation`` maps camera axes to world axes.

    Camera convention: +z looks forward, +x right, +y down in the image.
    """

    position: tuple[float, float, float]
    rotation: tuple[tuple[float, ...], ...]
    focal_px: float
    principal_point: tuple[float, float]

    def ray(self, gaze_px):
        u, v = gaze_px
        cx, cy = self.principal_point
        d_cam = np.array([(u - cx) / self.focal_px, (v - cy) / self.focal_px, 1.0])
        d = np.asarray(self.rotation, dtype=float) @ d_cam
        return np.asarray(self.position, dtype=float), d / np.linalg.norm(d)


@dataclass(frozen=True)
class TablePlane:
    point: tuple[float, float, float] = (0.0, 0.0, 0.0)
    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)


def raycast_fixation(gaze_px, camera, table_plane: TablePlane = TablePlane()) -> np.ndarray:
    """Intersect the viewing ray through ``gaze_px`` with the table plane (mm)."""
    origin, direction = camera.ray(gaze_px)
    n = np.asarray(table_plane.normal, dtype=float)
    denom = float(direction @ n)
    if abs(denom) < 1e-12:
        raise NoIntersection("viewing ray is parallel to the table plane")
    t = float((np.asarray(table_plane.point, dtype=float) - origin) @ n) / denom
    if t < 0:
        raise NoIntersection("table plane lies behind the camera")
    return origin + t * direction


# -- scenes -----------------------------------------------------------------

@dataclass(frozen=True)
class SceneObject:
    id: int
    colour_class: str
    base_rgb: tuple[int, int, int]
    shape_class: str
    footprint: tuple[int, int]  # (width, height) in pixels
    center_mm: tuple[float, float]

    def __post_init__(self):
        if min(self.footprint) <= 0:
            raise ValueError("footprint must be positive")

    @property
    def symbols(self) -> tuple[str, str]:
        return (self.colour_class, self.shape_class)

    def to_dict(self) -> dict:
        return {"id": self.id, "colour_class": self.colour_class,
                "base_rgb": list(self.base_rgb), "shape_class": self.shape_class,
                "footprint": list(self.footprint), "center_mm": list(self.center_mm)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SceneObject":
        return cls(int(d["id"]), d["colour_class"], tuple(d["base_rgb"]), d["shape_class"],
                   tuple(d["footprint"]), tuple(d["center_mm"]))


def _pixel_box(obj: SceneObject, camera: OrthoCamera) -> tuple[int, int, int, int]:
    """``(x0, y0, x1, y1)`` half-open pixel rectangle covered by ``obj``."""
    cx, cy = camera.mm_to_px(obj.center_mm)
    w, h = obj.footprint
    x0 = int(math.floor(cx - w / 2 + 0.5))
    y0 = int(math.floor(cy - h / 2 + 0.5))
    return x0, y0, x0 + w, y0 + h


@dataclass(frozen=True)
class Scene:
    table_size_mm: tuple[float, float]
    objects: tuple[SceneObject, ...]
    camera: OrthoCamera
    background_rgb: tuple[int, int, int] = BACKGROUND_RGB

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        W, H = self.camera.image_size
        for obj in self.objects:
            x0, y0, x1, y1 = _pixel_box(obj, self.camera)
            if x0 < 0 or y0 < 0 or x1 > W or y1 > H:
                raise ValueError(f"object {obj.id} is not fully inside the image")
        if self.objects:
            dimmest = min(luminance(o.base_rgb) for o in self.objects)
            if luminance(self.background_rgb) >= 0.25 * dimmest:
                raise ValueError("background is not dark enough to separate objects")

    def object(self, obj_id: int) -> SceneObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    def centers_px(self) -> np.ndarray:
        return np.array([self.camera.mm_to_px(o.center_mm) for o in self.objects]).reshape(-1, 2)

    def to_dict(self) -> dict:
        return {
            "table_size_mm": list(self.table_size_mm),
            "background_rgb": list(self.background_rgb),
            "camera": {"px_per_mm": self.camera.px_per_mm,
                       "image_size": list(self.camera.image_size)},
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scene":
        cam = OrthoCamera(float(d["camera"]["px_per_mm"]), tuple(d["camera"]["image_size"]))
        return cls(tuple(d["table_size_mm"]), tuple(SceneObject.from_dict(o) for o in d["objects"]),
                   cam, tuple(d["background_rgb"]))


@dataclass(frozen=True)
class SceneParams:
    table_size_mm: tuple[float, float] = (480.0, 360.0)
    px_per_mm: float = 1.0
    min_gap_px: int = 24
    colour_jitter: float = COLOUR_JITTER
    pixel_noise: float = PIXEL_NOISE
    background_rgb: tuple[int, int, int] = BACKGROUND_RGB

    def camera(self) -> OrthoCamera:
        w, h = self.table_size_mm
        return OrthoCamera(self.px_per_mm, (int(round(w * self.px_per_mm)),
                                            int(round(h * self.px_per_mm))))


def jittered_colour(prototype, jitter: float, rng: np.random.Generator) -> tuple[int, int, int]:
    rgb = np.asarray(prototype, dtype=float) + rng.normal(0.0, jitter, 3)
    return tuple(int(v) for v in np.clip(np.rint(rgb), 0, 255))


def _normalise_mix(mix: Mapping[str, float] | None, keys) -> tuple[list[str], np.ndarray]:
    if mix is None:
        return list(keys), np.full(len(keys), 1.0 / len(keys))
    names = list(mix)
    w = np.array([mix[k] for k in names], dtype=float)
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
        raise ValueError("mix weights must be non-negative and sum to 1")
    return names, w / w.sum()


def generate_scene(n_objects: int, seed=None, colour_mix: Mapping[str, float] | None = None,
                   shape_mix: Mapping[str, float] | None = None,
                   params: SceneParams = SceneParams(), distinct: bool = False) -> Scene:
    """Random non-overlapping layout of ``n_objects`` blocks.

    Mixes map class name to weight (uniform over the known classes when
    omitted). With ``distinct`` the colour/shape combinations are instead
    dealt from shuffled decks of all combinations, so no combination repeats
    until every one has been used. Objects keep at least
    ``params.min_gap_px`` of clear table between their rectangles.
    """
    if n_objects < 1:
        raise ValueError("need at least one object")
    if distinct and (colour_mix is not None or shape_mix is not None):
        raise ValueError("distinct scenes take no class mix")
    rng = _rng(seed)
    colours, cw = _normalise_mix(colour_mix, COLOUR_PROTOTYPES)
    shapes, sw = _normalise_mix(shape_mix, SHAPE_FOOTPRINTS)
    deck: list[tuple[str, str]] = []
    camera = params.camera()
    W, H = camera.image_size
    gap = params.min_gap_px

    objects: list[SceneObject] = []
    boxes: list[tuple[int, int, int, int]] = []
    rejections = 0
    while len(objects) < n_objects:
        if distinct:
            if not deck:
                combos = [(c, sh) for c in colours for sh in shapes]
                deck = [combos[i] for i in rng.permutation(len(combos))]
            colour, shape = deck.pop()
        else:
            colour = colours[rng.choice(len(colours), p=cw)]
            shape = shapes[rng.choice(len(shapes), p=sw)]
        w, h = SHAPE_FOOTPRINTS[shape]
        if shape == "block" and rng.random() < 0.5:
            w, h = h, w
        while True:
            cx = rng.uniform(w / 2, W - w / 2) / camera.px_per_mm
            cy = rng.uniform(h / 2, H - h / 2) / camera.px_per_mm
            cand = SceneObject(len(objects), colour, (0, 0, 0), shape, (w, h), (cx, cy))
            x0, y0, x1, y1 = _pixel_box(cand, camera)
            inside = x0 >= 0 and y0 >= 0 and x1 <= W and y1 <= H
            clear = all(x0 >= bx1 + gap or x1 + gap <= bx0 or y0 >= by1 + gap or y1 + gap <= by0
                        for bx0, by0, bx1, by1 in boxes)
            if inside and clear:
                break
            rejections += 1
            if rejections >= MAX_REJECTIONS:
                raise PlacementFailure(
                    f"placed {len(objects)} of {n_objects} objects before "
                    f"{MAX_REJECTIONS} rejections")
        base = COLOUR_PROTOTYPES.get(colour) or OTHER_COLOURS[colour]
        rgb = jittered_colour(base, params.colour_jitter, rng)
        objects.append(SceneObject(len(objects), colour, rgb, shape, (w, h), (cx, cy)))
        boxes.append((x0, y0, x1, y1))
    return Scene(tuple(params.table_size_mm), tuple(objects), camera, params.background_rgb)


# -- rendering --------------------------------------------------------------

def shape_mask(shape_class: str, footprint: tuple[int, int]) -> np.ndarray:
    """Boolean ``(h, w)`` stamp; cells get rounded corners."""
    w, h = footprint
    mask = np.ones((h, w), dtype=bool)
    if shape_class == "cell":
        r = min(CELL_CORNER_RADIUS, w / 2, h / 2)
        yy, xx = np.mgrid[0:h, 0:w] + 0.5
        dx = xx - np.clip(xx, r, w - r)
        dy = yy - np.clip(yy, r, h - r)
        mask = dx * dx + dy * dy <= r * r
    return mask


def render_frame(scene: Scene, seed=None, pixel_noise: float = PIXEL_NOISE) -> np.ndarray:
    """Overhead ``(H, W, 3)`` uint8 image of the scene, no anti-aliasing."""
    W, H = scene.camera.image_size
    img = np.empty((H, W, 3), dtype=np.float32)
    img[:] = scene.background_rgb
    for obj in scene.objects:
        x0, y0, x1, y1 = _pixel_box(obj, scene.camera)
        img[y0:y1, x0:x1][shape_mask(obj.shape_class, obj.footprint)] = obj.base_rgb
    return _quantise(add_pixel_noise(img, seed, pixel_noise))


def add_pixel_noise(raster: np.ndarray, seed=None, pixel_noise: float = PIXEL_NOISE) -> np.ndarray:
    """Float32 copy of ``raster`` with i.i.d. Normal sensor noise added."""
    img = np.asarray(raster, dtype=np.float32).copy()
    if pixel_noise > 0:
        img += _rng(seed).standard_normal(img.shape, dtype=np.float32) * np.float32(pixel_noise)
    return img


def _quantise(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def noisy_patch(raster: np.ndarray, seed=None, pixel_noise: float = PIXEL_NOISE) -> np.ndarray:
    """Sensor noise applied to an already-rendered (noise-free) raster."""
    return _quantise(add_pixel_noise(raster, seed, pixel_noise))


def crop_patch(frame: np.ndarray, center_px, patch_size: int, fill=(0, 0, 0)) -> np.ndarray:
    """``patch_size`` square around ``center_px``; off-image pixels take ``fill``."""
    H, W = frame.shape[:2]
    cx, cy = center_px
    x0 = int(math.floor(cx + 0.5)) - patch_size // 2
    y0 = int(math.floor(cy + 0.5)) - patch_size // 2
    patch = np.empty((patch_size, patch_size, 3), dtype=frame.dtype)
    patch[:] = fill
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + patch_size, W), min(y0 + patch_size, H)
    if sx0 < sx1 and sy0 < sy1:
        patch[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = frame[sy0:sy1, sx0:sx1]
    return patch


def render_object_patch(rgb, shape_class: str, footprint, patch_size: int, seed=None,
                        pixel_noise: float = PIXEL_NOISE,
                        background_rgb=BACKGROUND_RGB) -> np.ndarray:
    """A single object centred in a ``patch_size`` square, as a crop would see it."""
    cam = OrthoCamera(1.0, (patch_size, patch_size))
    obj = SceneObject(0, "test", tuple(rgb), shape_class, tuple(footprint),
                      (patch_size / 2, patch_size / 2))
    scene = Scene((patch_size, patch_size), (obj,), cam, tuple(background_rgb))
    return render_frame(scene, seed, pixel_noise)


# -- demonstrations -----------------------------------------------------------

@dataclass(frozen=True)
class DemoScript:
    plan: Plan
    target_ids: tuple[int, ...]
    locations_mm: tuple[tuple[float, float], ...]
    durations: tuple[int, ...]
    sentences: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.plan.steps)
        if not (len(self.target_ids) == len(self.locations_mm) == len(self.durations) == n):
            raise ValueError("script fields must have one entry per plan step")
        if any(d < 5 for d in self.durations):
            raise ValueError("nominal durations must be at least 5 samples")

    def to_dict(self) -> dict:
        return {"plan": self.plan.to_dict(), "sentences": list(self.sentences),
                "steps": [{"target_id": t, "location_mm": list(loc), "duration": d}
                          for t, loc, d in zip(self.target_ids, self.locations_mm, self.durations)]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DemoScript":
        steps = d["steps"]
        return cls(Plan.from_dict(d["plan"]), tuple(int(s["target_id"]) for s in steps),
                   tuple(tuple(s["location_mm"]) for s in steps),
                   tuple(int(s["duration"]) for s in steps), tuple(d.get("sentences", ())))


_LANDMARK_PREPS = (("on", "left", "of"), ("on", "right", "of"), ("on", "top", "of"),
                   ("next", "to"), ("behind",), ("near",))


def make_script(scene: Scene, n_steps: int, seed=None, lexicon: Lexicon | None = None,
                duration: int = 60) -> DemoScript:
    """Alternating pick/place narration over random scene objects.

    Consecutive steps never target the same object (when there is a choice);
    place steps name another object as a landmark.
    """
    rng = _rng(seed)
    lexicon = Lexicon.default() if lexicon is None else lexicon
    ids = [o.id for o in scene.objects]
    targets: list[int] = []
    steps: list[AbstractStep] = []
    for k in range(n_steps):
        choices = [i for i in ids if not targets or i != targets[-1]] or ids
        tid = int(choices[rng.integers(len(choices))])
        obj = scene.object(tid)
        target = obj.symbols
        if k % 2 == 0:
            step = AbstractStep("pick", target, "-".join(target + ("location",)))
        else:
            others = [i for i in ids if i != tid]
            if others:
                lm = scene.object(int(others[rng.integers(len(others))]))
                preps = _LANDMARK_PREPS[rng.integers(len(_LANDMARK_PREPS))]
                location = "-".join(preps + lm.symbols)
            else:
                location = "-".join(target + ("location",))
            step = AbstractStep("place", target, location)
        targets.append(tid)
        steps.append(step)
    plan = Plan(tuple(steps))
    sentences = tuple(render_step(s, lexicon) for s in steps)
    locs = tuple(tuple(scene.object(t).center_mm) for t in targets)
    return DemoScript(plan, tuple(targets), locs, (duration,) * n_steps, sentences)


@dataclass(frozen=True)
class DemoParams:
    sigma_fix: float = 5.0
    alpha: float = 2.0
    transition_fraction: float = 0.2
    total_samples: int = 600
    min_segment: int = 5


@dataclass(frozen=True)
class FixationTrace:
    t: np.ndarray
    gaze_px: np.ndarray  # (T, 2)
    image_size: tuple[int, int]
    gaze_mm: np.ndarray | None = None
    truth_changepoints: tuple[int, ...] | None = None  # segment start indices
    truth_assignment: np.ndarray | None = None  # action index, -1 in transitions

    def __post_init__(self):
        if len(self.t) != len(self.gaze_px):
            raise ValueError("t and gaze_px differ in length")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")

    def __len__(self):
        return len(self.t)


def _split_counts(total: int, k: int, weights, alpha: float, min_len: int,
                  rng: np.random.Generator) -> list[int]:
    if k == 0:
        return []
    spare = total - k * min_len
    if spare < 0:
        raise ValueError(f"{total} samples cannot hold {k} segments of {min_len}")
    props = rng.dirichlet(alpha * np.asarray(weights, dtype=float))
    raw = props * spare
    counts = np.floor(raw).astype(int)
    # largest remainder keeps the total exact
    for i in np.argsort(-(raw - counts), kind="stable")[: spare - counts.sum()]:
        counts[i] += 1
    return [int(c) + min_len for c in counts]


def simulate_demo(scene: Scene, script: DemoScript, params: DemoParams = DemoParams(),
                  seed=None) -> FixationTrace:
    """Fixation trace: L gaze clusters separated by L-1 uniform transitions."""
    rng = _rng(seed)
    L = len(script.plan.steps)
    T = params.total_samples
    n_trans = int(round(params.transition_fraction * T)) if L > 1 else 0
    n_act = T - n_trans
    nominal = np.asarray(script.durations, dtype=float)
    act = _split_counts(n_act, L, nominal / nominal.mean(), params.alpha, params.min_segment, rng)
    trans = _split_counts(n_trans, L - 1, np.ones(L - 1), params.alpha, params.min_segment, rng)

    W, H = scene.camera.image_size
    gaze = np.empty((T, 2))
    truth = np.empty(T, dtype=int)
    starts = []
    pos = 0
    for k in range(L):
        for kind, n in (("act", act[k]), ("trans", trans[k] if k < L - 1 else 0)):
            if n == 0:
                continue
            starts.append(pos)
            if kind == "act":
                center = scene.camera.mm_to_px(script.locations_mm[k])
                gaze[pos:pos + n] = center + rng.normal(0.0, 1.0, (n, 2)) * params.sigma_fix
                truth[pos:pos + n] = k
            else:
                gaze[pos:pos + n] = rng.uniform((0, 0), (W, H), (n, 2))
                truth[pos:pos + n] = -1
            pos += n
    gaze[:, 0] = np.clip(gaze[:, 0], 0, np.nextafter(W, 0))
    gaze[:, 1] = np.clip(gaze[:, 1], 0, np.nextafter(H, 0))
    gaze_mm = gaze / scene.camera.px_per_mm
    return FixationTrace(np.arange(T), gaze, (W, H), gaze_mm, tuple(starts), truth)
