import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symground.errors import (DisconnectedGraph, EmptyPlan, EmptySentence, GrammarViolation,
                              NoTargetNoun, PronounTarget, UnknownVerb, UnknownWord)
from symground.plan_parser import (VERB_FILTER, AbstractStep, DepGraph, DepNode, Kind, Lexicon,
                                   Plan, build_dep_graph, extract_action, extract_location,
                                   extract_target, load_lexicon, parse_plan, parse_sentence,
                                   prune_graph, render_plan, render_step, tokenize)

CORPUS = json.loads((Path(__file__).parent / "data" / "parser_corpus.json").read_text())
LEX = Lexicon.default()


def graph(sentence, prune=True):
    return build_dep_graph(tokenize(sentence), LEX, prune=prune)


# -- tokenize ------------------------------------------------------------------

def test_tokenize_splits_words_and_drops_punctuation():
    assert [t.text for t in tokenize("Pick up the blue cube.")] == ["pick", "up", "the", "blue", "cube"]


def test_tokenize_lowercases():
    assert [t.text for t in tokenize("PUT it DOWN")] == ["put", "it", "down"]


@pytest.mark.parametrize("text", ["", "  ", "..."])
def test_tokenize_rejects_empty(text):
    with pytest.raises(EmptySentence):
        tokenize(text)


# -- graph construction ------------------------------------------------------------

def test_graph_for_simple_pick():
    g = graph("pick up the blue cube")
    assert g.node(g.top).lemma == "pick"
    assert g.summary() == {("pick", "cube"), ("cube", "blue")}


def test_graph_for_prepositional_chain():
    g = graph("put the red block on the left of the cube")
    assert g.node(g.top).lemma == "put"
    assert g.summary() == {("put", "block"), ("block", "red"), ("put", "on"), ("on", "left"),
                           ("left", "of"), ("of", "cube")}


def test_graph_edge_labels():
    g = graph("put the red block on the left of the cube", prune=False)
    labels = {(g.node(a).lemma, g.node(b).lemma): lab for a, b, lab in g.edges}
    assert labels[("put", "block")] == "ARG2"
    assert labels[("block", "red")] == "ARG1-of"
    assert labels[("the", "block")] == "BV"
    assert labels[("put", "on")] == "ARG1-of"
    assert labels[("on", "left")] == "ARG2"


def test_graph_without_verb_is_rejected():
    with pytest.raises(GrammarViolation):
        graph("blue cube")


@pytest.mark.parametrize("text", ["pick the blue", "pick cube block", "pick the cube put the cell",
                                  "the cube pick"])
def test_ungrammatical_sentences(text):
    with pytest.raises(GrammarViolation):
        graph(text)


def test_unknown_word():
    with pytest.raises(UnknownWord):
        graph("pick the flurble")


def test_prep_chain_depth_limit():
    with pytest.raises(GrammarViolation):
        graph("put the cube on the left of the block in the box on the tray at the edge")


# -- pruning ---------------------------------------------------------------------

def test_prune_removes_function_words():
    raw = graph("pick up the blue cube", prune=False)
    assert {n.kind for n in raw.nodes} >= {Kind.DET, Kind.PART}
    pruned = prune_graph(raw)
    assert {n.lemma for n in pruned.nodes} == {"pick", "blue", "cube"}
    assert pruned.summary() == {("pick", "cube"), ("cube", "blue")}


def test_prune_is_idempotent():
    g = graph("put the red block on the left of the cube")
    assert prune_graph(g) == g


def test_prune_noun_behind_determiner_chain_is_disconnected():
    nodes = (DepNode(0, Kind.VERB, "pick"), DepNode(1, Kind.DET, "the"), DepNode(2, Kind.NOUN, "cube"))
    g = DepGraph(nodes, ((0, 1, "ARG2"), (1, 2, "BV")), 0)
    with pytest.raises(DisconnectedGraph):
        prune_graph(g)


def test_graph_top_must_be_a_verb():
    with pytest.raises(GrammarViolation):
        DepGraph((DepNode(0, Kind.NOUN, "cube"),), (), 0)


# -- traversal --------------------------------------------------------------------

@pytest.mark.parametrize("verb", sorted(VERB_FILTER))
def test_every_verb_synonym_maps_to_its_action(verb):
    assert extract_action(graph(f"{verb} the cube")) == VERB_FILTER[verb]


def test_grab_is_pick_and_put_is_place():
    assert extract_action(graph("grab the cube")) == "pick"
    assert extract_action(graph("put the cube")) == "place"


def test_unmapped_verb():
    lex = Lexicon(LEX)
    lex.update_lines(["sing\tverb"])
    g = build_dep_graph(tokenize("sing the cube"), lex)
    with pytest.raises(UnknownVerb):
        extract_action(g)


def test_extract_target_keeps_adjectives_in_sentence_order():
    assert extract_target(graph("pick up the blue cube")) == ["blue", "cube"]
    assert extract_target(graph("pick up the cell")) == ["cell"]
    assert extract_target(graph("pick the big blue cube")) == ["big", "blue", "cube"]


def test_extract_target_without_noun():
    g = DepGraph((DepNode(0, Kind.VERB, "pick"),), (), 0)
    with pytest.raises(NoTargetNoun):
        extract_target(g)


def test_location_from_prepositional_chain():
    g = graph("put the red block on the left of the cube")
    assert extract_location(g, ["red", "block"]) == "on-left-of-cube"


def test_default_locations():
    assert extract_location(graph("pick up the blue cube"), ["blue", "cube"]) == "blue-cube-location"
    assert extract_location(graph("pick up the cell"), ["cell"]) == "cell-location"


# -- sentences and plans -----------------------------------------------------------

@pytest.mark.parametrize("case", CORPUS, ids=[c["text"] for c in CORPUS])
def test_corpus_sentence(case):
    step = parse_sentence(case["text"])
    assert step == AbstractStep(case["action"], tuple(case["target"]), case["location"])


def test_corpus_covers_the_grammar():
    verbs = {tokenize(c["text"])[0].text for c in CORPUS}
    lemmas = {LEX[v].lemma for v in verbs}
    assert lemmas == set(VERB_FILTER)
    n_adj = {len(c["target"]) - 1 for c in CORPUS}
    assert {0, 1, 2} <= n_adj
    assert any(c["location"].endswith("-location") for c in CORPUS)
    assert any(c["location"] == "on-left-of-cube" for c in CORPUS)
    assert len(CORPUS) >= 25


def test_pronoun_target_is_an_error_with_sentence_index():
    with pytest.raises(PronounTarget) as info:
        parse_plan(["Pick up the blue cube.", "Put it on the left of the cube."])
    assert info.value.sentence_index == 1
    assert str(info.value).startswith("sentence 1:")


def test_single_step_plan():
    plan = parse_plan(["Grab the yellow cell."])
    assert plan.steps == (AbstractStep("pick", ("yellow", "cell"), "yellow-cell-location"),)
    assert plan.symbol_set == {"yellow", "cell"}


def test_empty_plan():
    with pytest.raises(EmptyPlan):
        parse_plan([])


def test_plan_round_trips_through_dict():
    plan = parse_plan([c["text"] for c in CORPUS[:5]])
    assert Plan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan


@pytest.mark.parametrize("bad", [("jump", ("cube",), "cube-location"),
                                 ("pick", (), "x-location"),
                                 ("pick", ("cube",), "Cube Location")])
def test_abstract_step_validation(bad):
    with pytest.raises(ValueError):
        AbstractStep(*bad)


def test_extra_lexicon_layers_over_default(tmp_path):
    extra = tmp_path / "extra.tsv"
    extra.write_text("# more colours\nteal\tadj\nfetch\tverb\tgrab\n")
    lex = load_lexicon([extra])
    step = parse_sentence("Fetch the teal cube.", lex)
    assert step == AbstractStep("pick", ("teal", "cube"), "teal-cube-location")


def test_malformed_lexicon_line():
    with pytest.raises(ValueError):
        Lexicon.from_lines(["word\tnoun\tlemma\textra"])


# -- properties --------------------------------------------------------------------

ADJS = LEX.words(Kind.ADJ)
NOUNS = [n for n in LEX.words(Kind.NOUN)]
PREP_PHRASES = [("on", "left", "of"), ("on", "top", "of"), ("next", "to"), ("near",), ("behind",),
                ("in", "front", "of"), ("from",), ("into",)]


@st.composite
def steps(draw):
    action = draw(st.sampled_from(["pick", "place"]))
    target = tuple(draw(st.lists(st.sampled_from(ADJS), max_size=2))) + (draw(st.sampled_from(NOUNS)),)
    if draw(st.booleans()):
        location = "-".join(target + ("location",))
    else:
        landmark = tuple(draw(st.lists(st.sampled_from(ADJS), max_size=2))) + (
            draw(st.sampled_from(NOUNS)),)
        location = "-".join(draw(st.sampled_from(PREP_PHRASES)) + landmark)
    return AbstractStep(action, target, location)


@settings(max_examples=200, deadline=None)
@given(steps())
def test_rendered_step_parses_back(step):
    assert parse_sentence(render_step(step)) == step


@settings(max_examples=100, deadline=None)
@given(st.lists(steps(), min_size=1, max_size=6))
def test_rendered_plan_parses_back(step_list):
    plan = Plan(tuple(step_list))
    assert parse_plan(render_plan(plan)) == plan


@settings(max_examples=100, deadline=None)
@given(steps(), st.sampled_from(sorted(VERB_FILTER)))
def test_verb_synonyms_only_change_the_action_word(step, verb):
    step = AbstractStep(VERB_FILTER[verb], step.target, step.location)
    assert parse_sentence(render_step(step, verb=verb)) == step


@settings(max_examples=100, deadline=None)
@given(steps())
def test_pruned_graph_holds_only_content_words(step):
    g = graph(render_step(step))
    assert all(n.kind in (Kind.VERB, Kind.NOUN, Kind.ADJ, Kind.PREP) for n in g.nodes)
    assert sum(n.kind is Kind.VERB for n in g.nodes) == 1
