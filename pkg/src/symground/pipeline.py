"""End-to-end run: narrated demonstrations in, evaluated symbol models out.

Every stage draws its randomness from one root seed split with
``numpy.random.SeedSequence``, so a config fully determines the report.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import LengthMismatch, NoLearnableSymbols, StageError
from .features import FEATURES, FeatureDataset, featurize_patch, featurize_records
from .glide_lite import (SegmentParams, assignment_accuracy, extract_labeled_patches,
                         infer_locations, infer_segmentation, inject_label_noise)
from .io import dump_json
from .learner import UNKNOWN, KnowledgeBase, LearnerConfig, classify, group_key, learn
from .plan_parser import Lexicon, parse_plan
from .scene_sim import (BACKGROUND_RGB, COLOUR_PROTOTYPES, OTHER_COLOURS, SHAPE_FOOTPRINTS,
                        DemoParams, SceneParams, generate_scene, make_script,
                        render_frame, render_object_patch, shape_mask, simulate_demo)

log = logging.getLogger(__name__)

COLOURS = tuple(sorted(COLOUR_PROTOTYPES))
SHAPES = tuple(sorted(SHAPE_FOOTPRINTS))
FAR_FOOTPRINTS = ((8, 8), (40, 40), (40, 30))


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    # scenes
    table_size_mm: tuple[float, float] = (480.0, 360.0)
    px_per_mm: float = 1.0
    n_objects: int = 6
    distinct_classes: bool = True
    min_gap_px: int = 24
    colour_jitter: float = 8.0
    pixel_noise: float = 3.0
    # demonstrations and segmentation
    n_demos: int = 50
    steps_per_demo: int = 8
    frames_per_step: int = 5
    sigma_fix: float = 5.0
    alpha: float = 2.0
    transition_fraction: float = 0.2
    total_samples: int = 600
    min_segment: int = 5
    # patches
    patch_size: int = 48
    theta_bg: float = 60.0
    theta_noise: float = 0.02
    noise_rate: float = 0.25
    # learner
    sigma_thresh: float = 0.05
    d_max: float = 4.0
    n_min: int = 10
    clean_passes: int | None = 5
    # test set
    test_counts: Mapping[str, int] = field(
        default_factory=lambda: {"Seen": 18, "NearUnseen": 18, "FarUnseen": 12})

    def __post_init__(self):
        object.__setattr__(self, "table_size_mm", tuple(float(v) for v in self.table_size_mm))
        object.__setattr__(self, "test_counts", dict(self.test_counts))
        unknown = set(self.test_counts) - {c.value for c in Category}
        if unknown:
            raise ValueError(f"unknown test categories {sorted(unknown)}")
        if any(int(n) < 0 for n in self.test_counts.values()):
            raise ValueError("test counts must be non-negative")
        if not 0 <= self.noise_rate < 1:
            raise ValueError("noise_rate must lie in [0, 1)")
        if min(self.n_demos, self.steps_per_demo, self.frames_per_step, self.n_objects) < 1:
            raise ValueError("dataset sizes must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["table_size_mm"] = list(self.table_size_mm)
        return d

    def scene_params(self) -> SceneParams:
        return SceneParams(self.table_size_mm, self.px_per_mm, self.min_gap_px,
                           self.colour_jitter, self.pixel_noise)

    def demo_params(self) -> DemoParams:
        return DemoParams(self.sigma_fix, self.alpha, self.transition_fraction,
                          self.total_samples, self.min_segment)

    def segment_params(self) -> SegmentParams:
        return SegmentParams(self.sigma_fix, self.alpha, self.min_segment)

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(self.sigma_thresh, self.d_max, self.n_min, self.clean_passes)


# -- training data --------------------------------------------------------------

@dataclass
class TrainingSet:
    patches: list  # LabeledPatch, after label noise
    stats: dict


def all_classes() -> list[tuple[str, str]]:
    return [(c, s) for c in COLOURS for s in SHAPES]


def build_training_set(config: PipelineConfig, seed=None, lexicon: Lexicon | None = None,
                       stage_log: list | None = None) -> TrainingSet:
    """Simulate, segment and label ``n_demos`` demonstrations, then corrupt labels.

    ``stage_log`` (if given) receives the name of each stage as it starts, so
    a caller can tell which stage raised.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(
        config.seed if seed is None else seed)
    demo_seeds, noise_seed = ss.spawn(2)
    lexicon = Lexicon.default() if lexicon is None else lexicon
    mark = stage_log.append if stage_log is not None else (lambda s: None)

    patches, seg_acc, label_hits, expected = [], [], 0, 0
    scene_classes: dict[int, list[tuple[str, ...]]] = {}
    for demo, dss in enumerate(demo_seeds.spawn(config.n_demos)):
        rng = np.random.default_rng(dss)
        mark("gen-demo")
        scene = generate_scene(config.n_objects, rng, params=config.scene_params(),
                               distinct=config.distinct_classes)
        scene_classes[demo] = sorted({o.symbols for o in scene.objects})
        script = make_script(scene, config.steps_per_demo, rng, lexicon)
        mark("parse")
        plan = parse_plan(script.sentences, lexicon)
        mark("gen-demo")
        trace = simulate_demo(scene, script, config.demo_params(), rng)
        mark("segment")
        partition = infer_segmentation(trace, len(plan.steps), config.segment_params())
        seg_acc.append(assignment_accuracy(partition, trace))
        locations = infer_locations(trace, partition)
        mark("extract")
        clean = render_frame(scene, None, 0.0)
        for f in range(config.frames_per_step):
            got = extract_labeled_patches(clean, scene, plan, locations, config.patch_size,
                                          demo, f, config.theta_bg, config.theta_noise,
                                          rng, config.pixel_noise)
            expected += len(plan.steps)
            for p in got:
                if p.object_id is not None and scene.object(p.object_id).symbols == p.symbols:
                    label_hits += 1
            patches.extend(got)

    mark("noise")
    noisy = inject_label_noise(patches, config.noise_rate, np.random.default_rng(noise_seed),
                               scene_classes)
    stats = {
        "demos": config.n_demos,
        "segmentation_accuracy_mean": float(np.mean(seg_acc)),
        "segmentation_accuracy_min": float(np.min(seg_acc)),
        "patches_expected": expected,
        "patches_extracted": len(patches),
        "patches_dropped_background": expected - len(patches),
        "patch_label_accuracy": label_hits / len(patches) if patches else 0.0,
        "patches_corrupted": sum(p.corrupted for p in noisy),
    }
    return TrainingSet(noisy, stats)


# -- test set -------------------------------------------------------------------

class Category(str, enum.Enum):
    SEEN = "Seen"
    NEAR = "NearUnseen"
    FAR = "FarUnseen"


@dataclass(frozen=True, eq=False)
class TestCase:
    """One test object. ``colour``/``shape`` hold the gold symbol or ``Unknown``."""

    __test__ = False  # keep pytest from collecting this class

    id: str
    patch: np.ndarray
    category: Category
    colour: str
    shape: str
    rgb: tuple[int, int, int]
    footprint: tuple[int, int]

    def gold(self, members: Sequence[str]) -> str:
        """Gold label for a concept group with the given members."""
        for s in (self.colour, self.shape):
            if s in members:
                return s
        return UNKNOWN

    def gold_map(self, kb: KnowledgeBase) -> dict[tuple[str, ...], str]:
        return {feats: self.gold(members) for feats, members in kb.groups}


def _mask_area(shape_class: str, footprint) -> int:
    return int(shape_mask(shape_class, tuple(footprint)).sum())


PROTOTYPE_AREAS = {s: _mask_area(s, fp) for s, fp in SHAPE_FOOTPRINTS.items()}


def nearest_colour(rgb) -> str:
    rgb = np.asarray(rgb, dtype=float)
    return min(COLOURS, key=lambda c: (float(np.sum((rgb - COLOUR_PROTOTYPES[c]) ** 2)), c))


def nearest_shape(area: int) -> str:
    return min(SHAPES, key=lambda s: (abs(area - PROTOTYPE_AREAS[s]), s))


def _perturbed_footprint(shape: str, rng: np.random.Generator) -> tuple[int, int]:
    """Footprint a pixel or two off the prototype, with a different area."""
    w, h = SHAPE_FOOTPRINTS[shape]
    while True:
        dw, dh = rng.choice([-2, -1, 1, 2], size=2)
        fp = (int(w + dw), int(h + dh))
        if _mask_area(shape, fp) != PROTOTYPE_AREAS[shape]:
            return fp


def build_test_set(counts: Mapping[str, int], seed=None, patch_size: int = 48,
                   colour_jitter: float = 8.0, pixel_noise: float = 3.0,
                   background_rgb=BACKGROUND_RGB) -> list[TestCase]:
    """Seen, near-unseen and far-unseen test objects, rendered as patches.

    Seen and near-unseen objects cycle through the nine colour/shape classes
    so every colour and every shape gets an equal share. Near-unseen objects
    move the colour by ``1.5 * colour_jitter`` in a random RGB direction and
    the footprint by one or two pixels per side; their gold is the nearest
    trained class. Far-unseen objects combine a colour and a footprint far
    from all training classes, and their gold is ``Unknown`` throughout.
    """
    rng = np.random.default_rng(seed)
    classes = all_classes()
    cases: list[TestCase] = []
    for cat in Category:
        for i in range(int(counts.get(cat.value, 0))):
            if cat is Category.FAR:
                cname = sorted(OTHER_COLOURS)[i % len(OTHER_COLOURS)]
                rgb = _jitter(OTHER_COLOURS[cname], colour_jitter, rng)
                style, fp = "novel", FAR_FOOTPRINTS[i % len(FAR_FOOTPRINTS)]
                colour, shape = UNKNOWN, UNKNOWN
            else:
                colour, shape = classes[i % len(classes)]
                style = shape
                if cat is Category.SEEN:
                    rgb = _jitter(COLOUR_PROTOTYPES[colour], colour_jitter, rng)
                    fp = SHAPE_FOOTPRINTS[shape]
                else:
                    u = rng.normal(size=3)
                    offset = 1.5 * colour_jitter * u / np.linalg.norm(u)
                    rgb = tuple(int(v) for v in np.clip(
                        np.rint(np.asarray(COLOUR_PROTOTYPES[colour]) + offset), 0, 255))
                    fp = _perturbed_footprint(shape, rng)
                    colour = nearest_colour(rgb)
                    shape = nearest_shape(_mask_area(shape, fp))
                if fp[0] != fp[1] and rng.random() < 0.5:
                    fp = (fp[1], fp[0])
            patch = render_object_patch(rgb, style, fp, patch_size, rng, pixel_noise,
                                        background_rgb)
            cases.append(TestCase(f"{cat.value}-{i:02d}", patch, cat, colour, shape,
                                  tuple(rgb), tuple(fp)))
    return cases


def _jitter(prototype, jitter: float, rng: np.random.Generator) -> tuple[int, int, int]:
    rgb = np.asarray(prototype, dtype=float) + rng.normal(0.0, jitter, 3)
    return tuple(int(v) for v in np.clip(np.rint(rgb), 0, 255))


def classify_cases(cases: Sequence[TestCase], kb: KnowledgeBase, theta_bg: float = 60.0,
                   theta_noise: float = 0.02) -> list[dict[tuple[str, ...], str]]:
    """Per-case group predictions; background-dominated patches are Unknown everywhere."""
    out = []
    for case in cases:
        x = featurize_patch(case.patch, theta_bg, theta_noise)
        if x is None:
            out.append({feats: UNKNOWN for feats, _ in kb.groups})
        else:
            out.append(classify(x, kb))
    return out


# -- evaluation -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with gold labels on rows and predicted labels on columns."""

    labels: tuple[str, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else math.nan

    def row_sums(self) -> dict[str, int]:
        return {lab: int(n) for lab, n in zip(self.labels, self.counts.sum(axis=1))}

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.tolist(),
                "accuracy": self.accuracy}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["gold\\predicted", *self.labels])
            for lab, row in zip(self.labels, self.counts):
                w.writerow([lab, *(int(v) for v in row)])


def confusion_matrix(predictions: Sequence[str], gold: Sequence[str],
                     labels: Sequence[str] | None = None) -> ConfusionMatrix:
    """Tally aligned predicted and gold labels.

    Without ``labels`` the table covers every label seen, sorted, with
    ``Unknown`` last.
    """
    if len(predictions) != len(gold):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(gold)} gold labels")
    if labels is None:
        seen = set(predictions) | set(gold)
        labels = sorted(seen - {UNKNOWN}) + [UNKNOWN]
    labels = tuple(labels)
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=int)
    for p, g in zip(predictions, gold):
        if p not in index or g not in index:
            raise ValueError(f"label {p if p not in index else g!r} is not in {labels}")
        counts[index[g], index[p]] += 1
    return ConfusionMatrix(labels, counts)


def group_confusions(cases: Sequence[TestCase], predictions: Sequence[Mapping],
                     kb: KnowledgeBase) -> dict[tuple[str, ...], ConfusionMatrix]:
    if len(cases) != len(predictions):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(cases)} test cases")
    out = {}
    for feats, members in kb.groups:
        gold = [c.gold(members) for c in cases]
        pred = [p[feats] for p in predictions]
        out[feats] = confusion_matrix(pred, gold, (*members, UNKNOWN))
    return out


def dimension_predictions(prediction: Mapping[tuple[str, ...], str],
                          vocabulary: Sequence[str]) -> str:
    """The single predicted symbol from ``vocabulary``; ``Unknown`` if none or several."""
    hits = sorted({s for s in prediction.values() if s in vocabulary})
    return hits[0] if len(hits) == 1 else UNKNOWN


def dimension_accuracy(cases: Sequence[TestCase], predictions: Sequence[Mapping],
                       dimension: str) -> float:
    """Fraction of cases whose colour (or shape) is named correctly.

    This reads the predictions of whatever groups the learner formed, so it
    stays meaningful when noisy training splits or merges groups.
    """
    if len(cases) != len(predictions):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(cases)} test cases")
    if not cases:
        return math.nan
    vocab = COLOURS if dimension == "colour" else SHAPES
    hits = [dimension_predictions(p, vocab) == getattr(c, dimension)
            for c, p in zip(cases, predictions)]
    return float(np.mean(hits))


def evaluate(cases: Sequence[TestCase], predictions: Sequence[Mapping],
             kb: KnowledgeBase) -> dict:
    confusions = group_confusions(cases, predictions, kb)
    by_cat = {}
    for cat in Category:
        idx = [i for i, c in enumerate(cases) if c.category is cat]
        sub_c = [cases[i] for i in idx]
        sub_p = [predictions[i] for i in idx]
        by_cat[cat.value] = {
            "n": len(idx),
            "colour_accuracy": _nan_to_none(dimension_accuracy(sub_c, sub_p, "colour")),
            "shape_accuracy": _nan_to_none(dimension_accuracy(sub_c, sub_p, "shape")),
        }
    far = [p for c, p in zip(cases, predictions) if c.category is Category.FAR]
    far_unknown = (float(np.mean([dimension_predictions(p, COLOURS) == UNKNOWN for p in far]))
                   if far else None)
    return {
        "n_cases": len(cases),
        "colour_accuracy": _nan_to_none(dimension_accuracy(cases, predictions, "colour")),
        "shape_accuracy": _nan_to_none(dimension_accuracy(cases, predictions, "shape")),
        "far_unseen_colour_unknown_rate": far_unknown,
        "by_category": by_cat,
        "groups": {group_key(f): cm.to_dict() for f, cm in confusions.items()},
    }


def _nan_to_none(v: float):
    return None if isinstance(v, float) and math.isnan(v) else v


# -- orchestration --------------------------------------------------------------

def run_pipeline(config: PipelineConfig = PipelineConfig(), out_dir=None,
                 lexicon: Lexicon | None = None) -> dict:
    """Run every stage and return the report; also write files to ``out_dir``.

    Any failure is re-raised as :class:`StageError` naming the stage.
    """
    root = np.random.SeedSequence(config.seed)
    train_seed, test_seed = root.spawn(2)
    stages: list[str] = []

    def stage(name, fn, *args, **kwargs):
        stages.append(name)
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as err:  # noqa: BLE001 - every failure is reported with its stage
            raise StageError(stages[-1], err) from err

    training = stage("gen-demo", build_training_set, config, train_seed, lexicon, stages)
    records, skipped = stage("featurize", featurize_records, training.patches,
                             config.theta_bg, config.theta_noise)
    dataset = FeatureDataset.from_records(records)
    kb = stage("train", _learn_or_empty, dataset, config.learner_config())
    cases = stage("test-set", build_test_set, config.test_counts, test_seed, config.patch_size,
                  config.colour_jitter, config.pixel_noise)
    predictions = stage("classify", classify_cases, cases, kb, config.theta_bg,
                        config.theta_noise)
    results = stage("evaluate", evaluate, cases, predictions, kb)

    report = {
        "config": config.to_dict(),
        "training": {**training.stats, "features_kept": len(records),
                     "features_skipped": skipped, "samples_per_symbol": dataset.counts()},
        "model": {
            "invariant_features": {m.symbol: list(m.features) for m in kb.models},
            "groups": [{"features": list(f), "symbols": list(s)} for f, s in kb.groups],
            "warnings": list(kb.warnings),
        },
        "test": results,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(report, out / "report.json")
        dump_json(kb.to_dict(), out / "model.json")
        for feats, cm in group_confusions(cases, predictions, kb).items():
            cm.write_csv(out / f"confusion_{'-'.join(feats)}.csv")
    return report


def _learn_or_empty(dataset, config: LearnerConfig) -> KnowledgeBase:
    """Like :func:`learn`, but an all-unlearnable dataset gives an empty model.

    The run then carries on and reports every test case as Unknown, which is
    the honest outcome for training data too noisy to learn from.
    """
    try:
        return learn(dataset, config)
    except NoLearnableSymbols as err:
        log.warning("no symbol learned: %s", err)
        return KnowledgeBase((), (), config.sigma_thresh, config.d_max, (str(err),))


def report_json(report: Mapping) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


__all__ = [
    "PipelineConfig", "TrainingSet", "Category", "TestCase", "ConfusionMatrix",
    "build_training_set", "build_test_set", "classify_cases", "confusion_matrix",
    "group_confusions", "dimension_accuracy", "evaluate", "run_pipeline", "report_json",
    "FEATURES",
]
