"""Controlled-language instruction parser.

Sentences are mapped onto ``(action target location)`` steps in three moves:
a small deterministic dependency grammar builds an EDS-like graph, the graph
is pruned down to verb/noun/adjective/preposition nodes, and the pruned graph
is traversed to read off the action, the target noun phrase and the location.

Accepted shape::

    VERB [PART] ( PRON | [DET] ADJ* NOUN ) [PART] [PREP-CHAIN]
    PREP-CHAIN := PREP ( PREP-CHAIN | [DET] ADJ* NOUN [PREP-CHAIN] )

with at most ``MAX_PREP_DEPTH`` prepositions in the chain.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    DisconnectedGraph,
    EmptyPlan,
    EmptySentence,
    GrammarViolation,
    NoTargetNoun,
    ParseError,
    PronounTarget,
    UnknownVerb,
    UnknownWord,
)

MAX_PREP_DEPTH = 4

ACTIONS = ("pick", "place")

VERB_FILTER = {
    "pick": "pick", "grab": "pick", "take": "pick", "get": "pick",
    "place": "place", "put": "place", "move": "place", "drop": "place",
}


class Kind(enum.Enum):
    VERB = "verb"
    NOUN = "noun"
    ADJ = "adj"
    PREP = "prep"
    # function words: present in the raw graph, removed by prune_graph
    DET = "det"
    PART = "part"
    PRON = "pron"


CONTENT_KINDS = frozenset({Kind.VERB, Kind.NOUN, Kind.ADJ, Kind.PREP})


@dataclass(frozen=True)
class Token:
    text: str
    index: int


@dataclass(frozen=True)
class LexEntry:
    kind: Kind
    lemma: str


class Lexicon(dict):
    """Mapping ``word -> LexEntry``."""

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Lexicon":
        lex = cls()
        lex.update_lines(lines)
        return lex

    @classmethod
    def load(cls, path) -> "Lexicon":
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)

    @classmethod
    def default(cls) -> "Lexicon":
        text = resources.files("symground").joinpath("data/lexicon.tsv").read_text("utf-8")
        return cls.from_lines(text.splitlines())

    def update_lines(self, lines: Iterable[str]) -> None:
        for lineno, raw in enumerate(lines, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ValueError(f"lexicon line {lineno}: expected 2 or 3 tab-separated fields")
            word = parts[0].strip().lower()
            kind = Kind(parts[1].strip().lower())
            lemma = parts[2].strip().lower() if len(parts) == 3 and parts[2].strip() else word
            self[word] = LexEntry(kind, lemma)

    def words(self, kind: Kind) -> list[str]:
        """Canonical words of one category (entries that are their own lemma)."""
        return sorted(w for w, e in self.items() if e.kind is kind and e.lemma == w)


def load_lexicon(paths: Sequence[str | Path] = ()) -> Lexicon:
    """The shipped lexicon, overlaid with any extra lexicon files."""
    lex = Lexicon.default()
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            lex.update_lines(fh)
    return lex


# -- graph ------------------------------------------------------------------

@dataclass(frozen=True)
class DepNode:
    id: int
    kind: Kind
    lemma: str


@dataclass(frozen=True)
class DepGraph:
    nodes: tuple[DepNode, ...]
    edges: tuple[tuple[int, int, str], ...]
    top: int

    def __post_init__(self):
        ids = {n.id for n in self.nodes}
        if self.top not in ids:
            raise GrammarViolation("top node missing from graph")
        if self.node(self.top).kind is not Kind.VERB:
            raise GrammarViolation("top node must be a verb")
        for a, b, _ in self.edges:
            if a not in ids or b not in ids:
                raise ValueError(f"edge ({a}, {b}) references a missing node")

    def node(self, node_id: int) -> DepNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def neighbours(self, node_id: int) -> list[int]:
        """Adjacent node ids regardless of edge direction, in sentence order."""
        out = {b for a, b, _ in self.edges if a == node_id}
        out |= {a for a, b, _ in self.edges if b == node_id}
        return sorted(out)

    def summary(self) -> set[tuple[str, str]]:
        """Edges as ``(from_lemma, to_lemma)`` pairs, handy for comparisons."""
        lemma = {n.id: n.lemma for n in self.nodes}
        return {(lemma[a], lemma[b]) for a, b, _ in self.edges}


def tokenize(sentence: str) -> list[Token]:
    words = re.findall(r"[a-z0-9]+(?:'[a-z]+)?", sentence.lower())
    if not words:
        raise EmptySentence("sentence contains no words")
    return [Token(w, i) for i, w in enumerate(words)]


class _GraphBuilder:
    def __init__(self, tokens: Sequence[Token], lexicon: Mapping[str, LexEntry]):
        self.entries = []
        for tok in tokens:
            entry = lexicon.get(tok.text)
            if entry is None:
                raise UnknownWord(f"'{tok.text}' is not in the lexicon")
            self.entries.append(entry)
        self.tokens = tokens
        self.pos = 0
        self.nodes: list[DepNode] = []
        self.edges: list[tuple[int, int, str]] = []

    def peek(self) -> Kind | None:
        return self.entries[self.pos].kind if self.pos < len(self.entries) else None

    def take(self) -> DepNode:
        entry = self.entries[self.pos]
        node = DepNode(self.tokens[self.pos].index, entry.kind, entry.lemma)
        self.nodes.append(node)
        self.pos += 1
        return node

    def where(self) -> str:
        if self.pos < len(self.tokens):
            return f"'{self.tokens[self.pos].text}' (word {self.pos})"
        return "end of sentence"

    def noun_phrase(self, allow_pronoun: bool) -> DepNode:
        if self.peek() is Kind.PRON:
            node = self.take()
            if allow_pronoun:
                return node
            raise GrammarViolation(f"pronoun '{node.lemma}' inside a prepositional phrase")
        det = self.take() if self.peek() is Kind.DET else None
        adjs = []
        while self.peek() is Kind.ADJ:
            adjs.append(self.take())
        if self.peek() is Kind.PRON and allow_pronoun:
            return self.take()
        if self.peek() is not Kind.NOUN:
            raise GrammarViolation(f"expected a noun at {self.where()}")
        noun = self.take()
        if det is not None:
            self.edges.append((det.id, noun.id, "BV"))
        for adj in adjs:
            self.edges.append((noun.id, adj.id, "ARG1-of"))
        return noun

    def prep_chain(self, head: DepNode, depth: int) -> None:
        prep = self.take()
        if depth > MAX_PREP_DEPTH:
            raise GrammarViolation(f"preposition chain deeper than {MAX_PREP_DEPTH}")
        label = "ARG2" if head.kind is Kind.PREP else "ARG1-of"
        self.edges.append((head.id, prep.id, label))
        if self.peek() is Kind.PREP:
            self.prep_chain(prep, depth + 1)
            return
        noun = self.noun_phrase(allow_pronoun=False)
        self.edges.append((prep.id, noun.id, "ARG2"))
        if self.peek() is Kind.PREP:
            self.prep_chain(noun, depth + 1)

    def build(self) -> DepGraph:
        kinds = [e.kind for e in self.entries]
        if Kind.VERB not in kinds:
            raise GrammarViolation("sentence has no verb")
        if kinds.count(Kind.VERB) > 1:
            raise GrammarViolation("sentence has more than one verb")
        if self.peek() is not Kind.VERB:
            raise GrammarViolation(f"sentence must start with its verb, found {self.where()}")
        verb = self.take()
        if self.peek() is Kind.PART:
            self.edges.append((verb.id, self.take().id, "ARG1-of"))
        obj = self.noun_phrase(allow_pronoun=True)
        self.edges.append((verb.id, obj.id, "ARG2"))
        if self.peek() is Kind.PART:
            self.edges.append((verb.id, self.take().id, "ARG1-of"))
        if self.peek() is Kind.PREP:
            self.prep_chain(verb, 1)
        if self.pos != len(self.entries):
            raise GrammarViolation(f"unexpected {self.where()}")
        if obj.kind is Kind.PRON:
            raise PronounTarget(f"target is the pronoun '{obj.lemma}'; coreference is not resolved")
        return DepGraph(tuple(self.nodes), tuple(self.edges), verb.id)


def build_dep_graph(tokens: Sequence[Token], lexicon: Mapping[str, LexEntry],
                    prune: bool = True) -> DepGraph:
    """Dependency graph for one tokenized instruction.

    With ``prune=False`` the determiner/particle nodes are kept so that
    :func:`prune_graph` can be exercised on its own.
    """
    graph = _GraphBuilder(tokens, lexicon).build()
    return prune_graph(graph) if prune else graph


def prune_graph(g: DepGraph) -> DepGraph:
    keep = {n.id for n in g.nodes if n.kind in CONTENT_KINDS}
    edges = [(a, b, lab) for a, b, lab in g.edges if a in keep and b in keep]

    # nodes cut off from the verb can no longer contribute to the step
    adj: dict[int, set[int]] = {i: set() for i in keep}
    for a, b, _ in edges:
        adj[a].add(b)
        adj[b].add(a)
    reached = {g.top}
    stack = [g.top]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in reached:
                reached.add(nxt)
                stack.append(nxt)

    nodes = tuple(n for n in g.nodes if n.id in reached)
    if not any(n.kind is Kind.NOUN for n in nodes):
        raise DisconnectedGraph("no noun remains connected to the verb after pruning")
    edges = tuple(e for e in edges if e[0] in reached and e[1] in reached)
    return DepGraph(nodes, edges, g.top)


# -- traversal --------------------------------------------------------------

def extract_action(g: DepGraph, verb_filter: Mapping[str, str] = VERB_FILTER) -> str:
    lemma = g.node(g.top).lemma
    try:
        return verb_filter[lemma]
    except KeyError:
        raise UnknownVerb(f"verb '{lemma}' does not map to an action") from None


def _target_noun(g: DepGraph) -> DepNode:
    nouns = [g.node(i) for i in g.neighbours(g.top) if g.node(i).kind is Kind.NOUN]
    if not nouns:
        raise NoTargetNoun("no noun is attached to the verb")
    if len(nouns) > 1:
        raise GrammarViolation("more than one noun attached to the verb")
    return nouns[0]


def extract_target(g: DepGraph) -> list[str]:
    noun = _target_noun(g)
    adjs = [g.node(i).lemma for i in g.neighbours(noun.id) if g.node(i).kind is Kind.ADJ]
    return adjs + [noun.lemma]


def extract_location(g: DepGraph, target: Sequence[str]) -> str:
    """Location symbol for a step.

    Walks the prepositional chain hanging off the verb depth-first, with
    backtracking, and joins the visited lemmas in sentence order. Without a
    preposition the location defaults to ``<target>-location``.
    """
    preps = [i for i in g.neighbours(g.top) if g.node(i).kind is Kind.PREP]
    if not preps:
        return "-".join(list(target) + ["location"])

    walkable = {Kind.PREP, Kind.NOUN, Kind.ADJ}
    visited = {g.top}
    order = []

    def visit(node_id):
        visited.add(node_id)
        order.append(node_id)
        for nxt in g.neighbours(node_id):
            if nxt not in visited and g.node(nxt).kind in walkable:
                visit(nxt)

    visit(preps[0])
    return "-".join(g.node(i).lemma for i in sorted(order))


# -- plans ------------------------------------------------------------------

@dataclass(frozen=True)
class AbstractStep:
    action: str
    target: tuple[str, ...]
    location: str

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(self.target))
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if not self.target:
            raise ValueError("target needs a noun")
        if not self.location or self.location != self.location.lower() or " " in self.location:
            raise ValueError(f"malformed location symbol {self.location!r}")

    def to_dict(self) -> dict:
        return {"action": self.action, "target": list(self.target), "location": self.location}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AbstractStep":
        return cls(d["action"], tuple(d["target"]), d["location"])


@dataclass(frozen=True)
class Plan:
    steps: tuple[AbstractStep, ...]
    symbol_set: frozenset[str] = field(default=frozenset())

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "symbol_set",
                           frozenset(s for step in self.steps for s in step.target))

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "symbols": sorted(self.symbol_set)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Plan":
        return cls(tuple(AbstractStep.from_dict(s) for s in d["steps"]))


def parse_sentence(sentence: str, lexicon: Mapping[str, LexEntry] | None = None) -> AbstractStep:
    lexicon = Lexicon.default() if lexicon is None else lexicon
    g = build_dep_graph(tokenize(sentence), lexicon)
    target = extract_target(g)
    return AbstractStep(extract_action(g), tuple(target), extract_location(g, target))


def parse_plan(sentences: Sequence[str], lexicon: Mapping[str, LexEntry] | None = None) -> Plan:
    if not sentences:
        raise EmptyPlan("a plan needs at least one sentence")
    lexicon = Lexicon.default() if lexicon is None else lexicon
    steps = []
    for i, sentence in enumerate(sentences):
        try:
            steps.append(parse_sentence(sentence, lexicon))
        except ParseError as err:
            err.sentence_index = i
            raise
    return Plan(tuple(steps))


# -- rendering ----------------------------------------------------------------

_VERB_PHRASE = {"pick": "Pick up", "place": "Put"}


def render_step(step: AbstractStep, lexicon: Mapping[str, LexEntry] | None = None,
                verb: str | None = None) -> str:
    """A sentence that parses back to ``step``.

    Prepositional locations are spelled out word by word, with a determiner in
    front of every noun phrase; default locations are left implicit.
    """
    lexicon = Lexicon.default() if lexicon is None else lexicon
    words = [verb.capitalize() if verb else _VERB_PHRASE[step.action], "the", *step.target]
    default = "-".join(list(step.target) + ["location"])
    if step.location != default:
        prev = Kind.PREP
        for w in step.location.split("-"):
            entry = lexicon.get(w)
            if entry is None:
                raise UnknownWord(f"location word '{w}' is not in the lexicon")
            if entry.kind in (Kind.ADJ, Kind.NOUN) and prev is Kind.PREP:
                words.append("the")
            words.append(w)
            prev = entry.kind
    elif step.action == "place":
        words.append("down")
    return " ".join(words) + "."


def render_plan(plan: Plan, lexicon: Mapping[str, LexEntry] | None = None) -> list[str]:
    return [render_step(s, lexicon) for s in plan.steps]
