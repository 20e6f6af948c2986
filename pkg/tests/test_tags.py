"""Turn grammar: parsing, rendering, diagnostics, and the format score."""

from __future__ import annotations

import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from searchagent.tags import (
    TAG_LIKE_RE,
    AgentAction,
    Answer,
    Diagnostic,
    DiagnosticKind,
    ImageSearchCrop,
    ImageSearchWhole,
    ParseOutcome,
    TextSearch,
    format_score,
    parse_turn,
    render_action,
    render_information,
)


def kinds(outcome) -> list[str]:
    return [d.kind.value for d in outcome.diagnostics]


def error_kinds(outcome) -> list[str]:
    return [d.kind.value for d in outcome.diagnostics if d.is_error]


class TestDirectiveDiscrimination:
    def test_text_search(self):
        o = parse_turn("<reason>look it up</reason><text_search>eiffel height</text_search>")
        assert o.action == AgentAction(reason="look it up", directive=TextSearch("eiffel height"))
        assert o.diagnostics == ()

    def test_answer(self):
        o = parse_turn("<reason>done</reason><answer>330 meters</answer>")
        assert o.action.directive == Answer("330 meters")

    def test_whole_image_is_the_verbatim_img_payload(self):
        o = parse_turn("<reason>scan</reason><img_search>img</img_search>")
        assert o.action.directive == ImageSearchWhole()

    def test_whole_image_payload_tolerates_surrounding_space(self):
        o = parse_turn("<reason>scan</reason><img_search> img </img_search>")
        assert o.action.directive == ImageSearchWhole()

    def test_any_other_image_payload_is_a_crop_expression(self):
        o = parse_turn("<reason>zoom</reason><img_search>the statue on the left</img_search>")
        assert o.action.directive == ImageSearchCrop("the statue on the left")

    def test_crop_type_refuses_the_whole_image_sentinel(self):
        with pytest.raises(ValueError):
            ImageSearchCrop("img")


class TestNestedTagRejection:
    def test_forbidden_nested_form(self):
        o = parse_turn("<img_search><img></img></img_search>")
        assert o.action is None
        assert "nested_tag" in error_kinds(o)

    def test_unbalanced_nested_variant(self):
        o = parse_turn("<img_search><img></img_search>")
        assert o.action is None
        assert "nested_tag" in error_kinds(o)

    def test_tag_markup_inside_query_payload(self):
        o = parse_turn("<text_search>find <answer>this</answer></text_search>")
        assert o.action is None
        assert "nested_tag" in error_kinds(o)

    def test_reason_payload_may_not_hold_tags(self):
        o = parse_turn("<reason>see <img></reason><answer>x</answer>")
        assert o.action is None
        assert "nested_tag" in error_kinds(o)


class TestMalformedTurns:
    def test_unclosed_directive(self):
        o = parse_turn("<answer>dangling")
        assert "malformed_tag" in error_kinds(o)

    def test_stray_closing_tag(self):
        o = parse_turn("</answer><answer>x</answer>")
        assert "malformed_tag" in error_kinds(o)

    def test_empty_payload(self):
        o = parse_turn("<text_search>   </text_search>")
        assert o.action is None
        assert error_kinds(o)

    def test_two_reason_blocks(self):
        o = parse_turn("<reason>a</reason><reason>b</reason><answer>x</answer>")
        assert "malformed_tag" in error_kinds(o)

    def test_reason_after_directive(self):
        o = parse_turn("<answer>x</answer><reason>late</reason>")
        assert "malformed_tag" in error_kinds(o)

    def test_information_block_is_injected_only(self):
        o = parse_turn("<information>sneak</information><answer>x</answer>")
        assert o.action is None
        assert "malformed_tag" in error_kinds(o)

    def test_no_directive(self):
        o = parse_turn("<reason>hmm</reason>")
        assert error_kinds(o) == ["no_directive"]

    def test_empty_string(self):
        assert error_kinds(parse_turn("")) == ["no_directive"]

    def test_two_directives(self):
        o = parse_turn("<text_search>a</text_search><answer>b</answer>")
        assert "multiple_directives" in error_kinds(o)

    def test_unrecognized_tag_is_stray_text_not_error(self):
        o = parse_turn("<reason>r</reason><ANSWER>x</ANSWER><answer>x</answer>")
        assert o.action is not None
        assert "stray_text" in kinds(o)
        assert not error_kinds(o)


class TestWarnings:
    def test_missing_reason(self):
        o = parse_turn("<answer>x</answer>")
        assert o.action is not None
        assert kinds(o) == ["missing_reason"]

    def test_empty_reason(self):
        o = parse_turn("<reason></reason><answer>x</answer>")
        assert o.action is not None
        assert kinds(o) == ["empty_reason"]

    def test_stray_text_between_blocks(self):
        o = parse_turn("<reason>r</reason> um <answer>x</answer>")
        assert o.action is not None
        assert kinds(o) == ["stray_text"]

    def test_diagnostics_sorted_by_position(self):
        o = parse_turn("junk <reason>r</reason> more <answer>x</answer> tail")
        positions = [d.position for d in o.diagnostics]
        assert positions == sorted(positions)


class TestOutcomeInvariant:
    def test_action_with_error_diagnostic_is_rejected(self):
        bad = Diagnostic(0, DiagnosticKind.MALFORMED_TAG, "boom")
        with pytest.raises(ValueError):
            ParseOutcome(action=AgentAction(None, Answer("x")), diagnostics=(bad,))

    def test_no_action_without_error_is_rejected(self):
        with pytest.raises(ValueError):
            ParseOutcome(action=None, diagnostics=())


class TestRendering:
    def test_render_information(self):
        assert render_information("facts") == "<information>facts</information>"

    def test_render_with_reason(self):
        a = AgentAction(reason="why", directive=TextSearch("q"))
        assert render_action(a) == "<reason>why</reason><text_search>q</text_search>"

    def test_render_whole_image(self):
        a = AgentAction(reason=None, directive=ImageSearchWhole())
        assert render_action(a) == "<img_search>img</img_search>"


# Payload text: any unicode except "<" (which could open a tag-like token),
# trimmed and non-empty.  The extra filter is belt and braces.
_payload = (
    st.text(
        alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="<"),
        min_size=1,
        max_size=60,
    )
    .map(str.strip)
    .filter(lambda s: s and not TAG_LIKE_RE.search(s))
)
_crop_payload = _payload.filter(lambda s: s != "img")
_reasons = st.none() | _payload
_directives = st.one_of(
    st.builds(Answer, _payload),
    st.builds(TextSearch, _payload),
    st.just(ImageSearchWhole()),
    st.builds(ImageSearchCrop, _crop_payload),
)
_actions = st.builds(AgentAction, reason=_reasons, directive=_directives)


class TestRoundTripProperty:
    @given(_actions)
    @settings(max_examples=300)
    def test_parse_inverts_render(self, action):
        outcome = parse_turn(render_action(action))
        assert outcome.action == action
        assert not [d for d in outcome.diagnostics if d.is_error]
        warn = {d.kind for d in outcome.diagnostics}
        expected = {DiagnosticKind.MISSING_REASON} if action.reason is None else set()
        assert warn == expected

    @given(_actions)
    @settings(max_examples=100)
    def test_canonical_form_is_stable(self, action):
        once = render_action(action)
        again = render_action(parse_turn(once).action)
        assert once == again


_fragments = st.sampled_from(
    [
        "<reason>", "</reason>", "<answer>", "</answer>", "<text_search>",
        "</text_search>", "<img_search>", "</img_search>", "<information>",
        "</information>", "<img>", "</img>", "img", "330 meters", " ", "\n",
        "<", ">", "</", "plain words", "<unknown>", "</unknown>",
    ]
)


class TestFuzzInvariant:
    @given(st.lists(_fragments | st.text(max_size=12), max_size=12).map("".join))
    @settings(max_examples=400)
    def test_any_input_yields_a_lawful_outcome(self, raw):
        outcome = parse_turn(raw)
        has_error = any(d.is_error for d in outcome.diagnostics)
        assert (outcome.action is None) == has_error
        positions = [d.position for d in outcome.diagnostics]
        assert positions == sorted(positions)

    @given(_actions, st.data())
    @settings(max_examples=200)
    def test_mangling_a_tag_token_never_returns_the_same_action(self, action, data):
        raw = render_action(action)
        spans = [m.span() for m in TAG_LIKE_RE.finditer(raw)]
        start, end = data.draw(st.sampled_from(spans))
        # Drop one character from inside the token, keeping the angle
        # brackets so the damage stays within the tag itself.
        cut = data.draw(st.integers(min_value=start + 1, max_value=end - 2))
        mangled = raw[:cut] + raw[cut + 1 :]
        outcome = parse_turn(mangled)
        assert outcome.action != action


class TestFormatScore:
    def test_clean_trajectory_scores_one(self):
        turns = [
            "<reason>search first</reason><text_search>eiffel height</text_search>",
            "<reason>got it</reason><answer>330 meters</answer>",
        ]
        assert format_score(turns) == 1

    def test_answer_before_the_end_scores_zero(self):
        turns = [
            "<reason>jump</reason><answer>330 meters</answer>",
            "<reason>extra</reason><text_search>eiffel</text_search>",
        ]
        assert format_score(turns) == 0

    def test_any_malformed_turn_scores_zero(self):
        turns = [
            "<reason>search</reason><text_search>eiffel</text_search>",
            "<answer>330 meters",
        ]
        assert format_score(turns) == 0

    def test_missing_final_answer_scores_zero(self):
        turns = ["<reason>search</reason><text_search>eiffel</text_search>"]
        assert format_score(turns) == 0

    def test_empty_trajectory_scores_zero(self):
        assert format_score([]) == 0

    def test_strict_mode_rejects_stray_text(self):
        turns = ["<reason>r</reason> um <answer>x</answer>"]
        assert format_score(turns) == 1
        assert format_score(turns, strict=True) == 0

    def test_two_turn_truth_table(self):
        # Variants with known properties; expected score derived from those
        # properties alone: every turn errorless, answers only at the end.
        search = ("search", True, False)
        answer = ("answer", True, True)
        broken = ("broken", False, False)
        double = ("double", False, False)  # two directives in one turn
        raw = {
            "search": "<reason>s</reason><text_search>q</text_search>",
            "answer": "<reason>a</reason><answer>x</answer>",
            "broken": "<answer>x",
            "double": "<text_search>q</text_search><answer>x</answer>",
        }
        variants = [search, answer, broken, double]
        for first in variants:
            for second in variants:
                ok = (
                    first[1]
                    and second[1]
                    and second[2]
                    and not first[2]
                )
                got = format_score([raw[first[0]], raw[second[0]]])
                assert got == int(ok), (first[0], second[0])

    @given(st.lists(st.sampled_from(["search", "answer", "broken"]), min_size=1, max_size=5))
    @settings(max_examples=200)
    def test_score_matches_positional_rule(self, names):
        raw = {
            "search": "<reason>s</reason><text_search>q</text_search>",
            "answer": "<reason>a</reason><answer>x</answer>",
            "broken": "<answer>x",
        }
        expected = int(
            "broken" not in names
            and names[-1] == "answer"
            and "answer" not in names[:-1]
        )
        assert format_score([raw[n] for n in names]) == expected
