import pytest
from hypothesis import given
from hypothesis import strategies as st

from areatag.corpus import CleanRecord, to_clean, RawRecord
from areatag.prompting import (
    RETRY_APPENDIX,
    ChainStage,
    FewShot,
    OneShot,
    PromptError,
    ZeroShot,
    format_options,
    parse_icl_answer,
    parse_options,
    render_chain_stage,
    render_icl,
)
from areatag.taxonomy import LabelPath, Level

from conftest import GOLDEN, golden_prompts


@pytest.fixture(scope="module")
def goldens(small_taxonomy, records30, pool):
    return golden_prompts(small_taxonomy, records30, pool)


@pytest.mark.parametrize("name", [
    "zero.txt", "zero_taxonomy.txt", "one.txt", "few.txt",
    "chain_domain.txt", "chain_subject.txt", "chain_topic.txt",
])
def test_golden_prompt(goldens, name):
    assert goldens[name].encode("utf-8") == (GOLDEN / name).read_bytes()


def test_zero_shot_shape(small_taxonomy, records30):
    record = records30[0]
    text = render_icl(ZeroShot(), small_taxonomy, record).text
    assert text.startswith("Suppose you are a data annotator who finds the research area "
                           "of scientific texts using ORKG taxonomy.")
    assert text.count(record.input_text) == 1
    assert "Scientific text to annotate is: " in text
    assert "  Biology" not in text  # taxonomy named, not embedded
    assert "domain: <domain>\nsubject: <subject>\ntopic: <topic>" in text


def test_one_shot_exemplar_precedes_record(small_taxonomy, records30, pool):
    record, exemplar = records30[0], pool[0]
    text = render_icl(OneShot(exemplar), small_taxonomy, record).text
    assert "one example of scientific text" in text
    first = text.index(exemplar.title)
    assert first < text.index(str(exemplar.label)) < text.index(record.input_text)


def test_few_shot_keeps_exemplar_order(small_taxonomy, records30, pool):
    order = [pool[4], pool[1], pool[2]]
    text = render_icl(FewShot(tuple(order)), small_taxonomy, records30[0]).text
    positions = [text.index(e.title) for e in order]
    assert positions == sorted(positions)


def test_exemplar_collision(small_taxonomy, records30):
    record = records30[0]
    with pytest.raises(PromptError, match="record being classified"):
        render_icl(OneShot(record), small_taxonomy, record)


def test_strategy_invariants(pool):
    with pytest.raises(PromptError):
        FewShot((pool[0],))
    with pytest.raises(PromptError):
        ChainStage(Level.DOMAIN, ())
    with pytest.raises(PromptError):
        render_icl(ChainStage(Level.DOMAIN, ("x",)), None, pool[0])


def test_domain_stage(small_taxonomy, records30):
    options = small_taxonomy.options_at()
    p = render_chain_stage(Level.DOMAIN, options, records30[0])
    assert f"The list of valid domains is: {format_options(options)}." in p.text
    assert ("return only one of the domain names exactly as written, "
            "without providing any explanation.") in p.text
    assert p.level is Level.DOMAIN and p.options == tuple(options)


def test_subject_stage_lists_only_children(small_taxonomy, records30):
    p = render_chain_stage(Level.SUBJECT, small_taxonomy.options_at(["Life Sciences"]), records30[0],
                           LabelPath("Life Sciences"))
    assert "The identified domain is: Life Sciences." in p.text
    assert parse_options(p.text) == ["Biology", "Medicine"]
    assert "Physics" not in p.text


def test_single_option_topic_stage(records30):
    p = render_chain_stage(Level.TOPIC, ["Virology"], records30[0], ["Life Sciences", "Medicine"])
    assert parse_options(p.text) == ["Virology"]
    assert p.text.count('"Virology"') == 1


def test_ancestor_count_checked(records30):
    with pytest.raises(PromptError, match="ancestor"):
        render_chain_stage(Level.TOPIC, ["Virology"], records30[0], ["Life Sciences"])


def test_retry_appendix(records30):
    p = render_chain_stage(Level.DOMAIN, ["A", "B"], records30[0])
    again = p.with_appendix()
    assert again.text == p.text + "\n" + RETRY_APPENDIX
    assert again.prompt_id != p.prompt_id
    assert len(p.prompt_id) == 16


def test_rendering_is_pure(small_taxonomy, records30, pool):
    a = render_icl(FewShot(tuple(pool[:3])), small_taxonomy, records30[5])
    b = render_icl(FewShot(tuple(pool[:3])), small_taxonomy, records30[5])
    assert a == b and a.prompt_id == b.prompt_id


option = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=15)


@given(st.lists(option, min_size=1, max_size=8, unique=True), st.sampled_from(list(Level)))
def test_option_list_round_trip(options, level):
    record = to_clean(RawRecord("10.1/x", "Title", "Body text", LabelPath("D")))
    ancestors = ["D", "S"][: int(level)]
    p = render_chain_stage(level, options, record, ancestors)
    assert parse_options(p.text) == options
    for o in options:
        assert p.text.count(format_options([o])[1:-1]) >= 1


def test_commas_inside_labels_stay_atomic():
    record = CleanRecord("d", "t", "a", LabelPath("D"), input_text="t.\na")
    labels = ["Hydrogeology, Hydrology, Limnology", "Geochemistry"]
    p = render_chain_stage(Level.DOMAIN, labels, record)
    assert parse_options(p.text) == labels


def test_prompt_grows_linearly_with_options(records30):
    sizes = [len(render_chain_stage(Level.DOMAIN, [f"opt{i:03d}" for i in range(n)], records30[0]).text)
             for n in (1, 11, 21)]
    assert sizes[2] - sizes[1] == sizes[1] - sizes[0]


def test_parse_icl_answer():
    raw = "Sure!\n**Domain:** Life Sciences\nsubject: Medicine\nsubject: Biology\n- topic: Virology."
    assert parse_icl_answer(raw) == {
        Level.DOMAIN: "Life Sciences", Level.SUBJECT: "Medicine", Level.TOPIC: "Virology.",
    }
    assert parse_icl_answer("domain: Engineering Sciences") == {Level.DOMAIN: "Engineering Sciences"}
    assert parse_icl_answer("no idea") == {}
