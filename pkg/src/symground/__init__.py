"""Ground colour and shape words in pixels from narrated, eye-tracked demonstrations.

The stages are importable on their own:

* :mod:`symground.plan_parser` turns instructions into ``(action target location)`` steps;
* :mod:`symground.scene_sim` renders tabletop scenes and simulates fixation traces;
* :mod:`symground.glide_lite` segments traces into plan steps and cuts labelled patches;
* :mod:`symground.features` and :mod:`symground.learner` learn per-symbol models;
* :mod:`symground.pipeline` runs everything and scores the result.
"""
from .errors import SymgroundError
from .learner import KnowledgeBase, LearnerConfig, classify, learn
from .pipeline import PipelineConfig, run_pipeline
from .plan_parser import AbstractStep, Plan, parse_plan, parse_sentence

__version__ = "0.1.0"

__all__ = [
    "AbstractStep", "KnowledgeBase", "LearnerConfig", "PipelineConfig", "Plan",
    "SymgroundError", "classify", "learn", "parse_plan", "parse_sentence", "run_pipeline",
]
