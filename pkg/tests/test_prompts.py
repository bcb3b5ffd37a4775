"""Conversation structure law and answer decoding."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s2p.annotator import fpv_overlay
from s2p.core import (AnnotatedFrame, Label, LabelKind, PlanAnswer, Setup)
from s2p.errors import (NoJsonFoundError, SchemaViolationError,
                        SetupMismatchError, UnknownLabelError)
from s2p.prompts import (ChatTurn, Conversation, Role, TaskSpec,
                         build_conversation, parse_answer, parse_with_retry,
                         serialize_answer)

from conftest import make_frame, make_sample


def tpv_af(n_labels=13):
    frame = make_frame(400, 400, fill=60)
    labels = [Label(id=0, pos=(200, 200), kind=LabelKind.ROBOT_ORIGIN)]
    for i in range(1, n_labels):
        labels.append(Label(id=i, pos=(40 + 24 * i, 100 + 9 * i),
                            kind=LabelKind.WAYPOINT))
    return AnnotatedFrame(base=frame, labels=tuple(labels), setup=Setup.TPV)


def fpv_af():
    return fpv_overlay(make_frame(320, 240, fill=80))


def tpv_task():
    return TaskSpec(setup=Setup.TPV)


def fpv_task():
    return TaskSpec(setup=Setup.FPV, target_object="microwave")


def samples(n, setup=Setup.TPV):
    vec = [1.0] + [0.0] * 7
    return [make_sample(f"s{i:03d}", vec, setup=setup,
                        commands=(1, 2) if setup is Setup.FPV else (1,))
            for i in range(n)]


LOAD = lambda s: make_frame(320, 240, fill=10)  # noqa: E731


class TestConversationShape:
    @pytest.mark.parametrize("k", [0, 1, 3, 10])
    def test_turn_count_law(self, k):
        conv = build_conversation(samples(k), tpv_af(), "", tpv_task(),
                                  load_frame=LOAD)
        assert len(conv.turns) == 2 * k + 1
        for i, turn in enumerate(conv.turns):
            assert turn.role is (Role.USER if i % 2 == 0 else Role.MODEL)
        assert conv.turns[-1].role is Role.USER

    def test_zero_shot_single_turn(self):
        conv = build_conversation([], tpv_af(), "", tpv_task())
        assert len(conv.turns) == 1
        assert len(conv.turns[0].images) == 1

    def test_context_turns_replay_stored_pairs(self):
        ctx = samples(2)
        conv = build_conversation(ctx, tpv_af(), "", tpv_task(),
                                  load_frame=LOAD)
        assert conv.turns[0].text == ctx[0].prompt
        assert len(conv.turns[0].images) == 1
        assert json.loads(conv.turns[1].text)["commands"] == [1]
        assert conv.turns[1].images == ()

    def test_episodic_text_verbatim(self):
        recap = "Known objects...\n- microwave at 340 degrees"
        conv = build_conversation(samples(1, Setup.FPV), fpv_af(), recap,
                                  fpv_task(), load_frame=LOAD)
        assert recap in conv.turns[-1].text
        assert "microwave" in conv.turns[-1].text

    def test_final_turn_mentions_task_and_format(self):
        conv = build_conversation([], tpv_af(), "", tpv_task())
        text = conv.turns[-1].text
        assert "red circle" in text
        assert "JSON" in text

    def test_setup_mismatch_context(self):
        with pytest.raises(SetupMismatchError):
            build_conversation(samples(1, Setup.FPV), tpv_af(), "",
                               tpv_task(), load_frame=LOAD)

    def test_setup_mismatch_task(self):
        with pytest.raises(SetupMismatchError):
            build_conversation([], tpv_af(), "", fpv_task())

    def test_deterministic(self):
        a = build_conversation(samples(2), tpv_af(), "", tpv_task(),
                               load_frame=LOAD)
        b = build_conversation(samples(2), tpv_af(), "", tpv_task(),
                               load_frame=LOAD)
        assert [t.text for t in a.turns] == [t.text for t in b.turns]
        for x, y in zip(a.turns, b.turns):
            assert [f.digest() for f in x.images] == \
                   [f.digest() for f in y.images]

    def test_invalid_shapes_rejected(self):
        user = ChatTurn(role=Role.USER, text="q")
        model = ChatTurn(role=Role.MODEL, text="a")
        with pytest.raises(ValueError):
            Conversation(turns=(user, model))  # ends on MODEL
        with pytest.raises(ValueError):
            Conversation(turns=(model,))
        with pytest.raises(ValueError):
            Conversation(turns=())
        with pytest.raises(ValueError):
            ChatTurn(role=Role.MODEL, text="a", images=(make_frame(),))


class TestParseAnswer:
    def test_plain_json(self):
        raw = '{"commands":[3,9,12],"explanation":"avoids the chair"}'
        ans = parse_answer(raw, tpv_af())
        assert ans.commands == (3, 9, 12)
        assert ans.explanation == "avoids the chair"

    def test_fenced_json(self):
        raw = 'Sure! ```json\n{"commands":[4, 2],"explanation":"go"}\n```'
        ans = parse_answer(raw, fpv_af())
        assert ans.commands == (4, 2)

    def test_prose_with_braces_before_json(self):
        raw = ('I think {this} is best: '
               '{"commands":[1],"explanation":"turn"}')
        ans = parse_answer(raw, tpv_af())
        assert ans.commands == (1,)

    def test_unknown_label(self):
        raw = '{"commands":[99],"explanation":"?"}'
        with pytest.raises(UnknownLabelError) as err:
            parse_answer(raw, tpv_af())
        assert err.value.label_id == 99

    def test_no_json(self):
        with pytest.raises(NoJsonFoundError):
            parse_answer("I would simply move forward.", tpv_af())

    @pytest.mark.parametrize("raw,field", [
        ('{"commands":4,"explanation":"x"}', "commands"),
        ('{"commands":[],"explanation":"x"}', "commands"),
        ('{"commands":[true],"explanation":"x"}', "commands"),
        ('{"commands":["4"],"explanation":"x"}', "commands"),
        ('{"commands":[4]}', "explanation"),
        ('{"commands":[4],"explanation":7}', "explanation"),
        ('{"commands":[4],"explanation":"x","objects":"sofa"}', "objects"),
        ('{"commands":[4],"explanation":"x","dangerous":["3"]}', "dangerous"),
    ])
    def test_schema_violations(self, raw, field):
        with pytest.raises(SchemaViolationError) as err:
            parse_answer(raw, tpv_af())
        assert err.value.field == field

    def test_fpv_requires_exactly_two(self):
        with pytest.raises(SchemaViolationError):
            parse_answer('{"commands":[4],"explanation":"x"}', fpv_af())
        with pytest.raises(SchemaViolationError):
            parse_answer('{"commands":[4,4,0],"explanation":"x"}', fpv_af())
        ans = parse_answer('{"commands":[4,0],"explanation":"x"}', fpv_af())
        assert ans.commands == (4, 0)

    def test_tpv_truncates_to_four(self):
        raw = '{"commands":[1,2,3,4,5,6],"explanation":"long"}'
        ans = parse_answer(raw, tpv_af())
        assert ans.commands == (1, 2, 3, 4)

    def test_fpv_undrawn_codes_accepted(self):
        ans = parse_answer('{"commands":[9,4],"explanation":"look down"}',
                           fpv_af())
        assert ans.commands == (9, 4)

    def test_objects_and_dangerous_kept(self):
        raw = ('{"commands":[3],"explanation":"x","objects":["sofa","tv"],'
               '"dangerous":[5,7]}')
        ans = parse_answer(raw, tpv_af())
        assert ans.objects_seen == ("sofa", "tv")
        assert ans.dangerous_ids == (5, 7)

    def test_absent_optional_fields_stay_absent(self):
        ans = parse_answer('{"commands":[3],"explanation":"x"}', tpv_af())
        assert ans.objects_seen is None and ans.dangerous_ids is None

    @given(st.lists(st.integers(0, 12), min_size=1, max_size=4),
           st.text(max_size=40),
           st.one_of(st.none(), st.lists(st.text(
               alphabet=st.characters(codec="utf-8",
                                      exclude_categories=("Cs",)),
               max_size=8), max_size=3)))
    @settings(max_examples=150)
    def test_roundtrip_identity(self, commands, explanation, objects):
        ans = PlanAnswer(commands=tuple(commands), explanation=explanation,
                         objects_seen=None if objects is None
                         else tuple(objects))
        back = parse_answer(serialize_answer(ans), tpv_af())
        assert back == ans

    def test_retry_policy(self):
        calls = []

        def raw_of(error):
            calls.append(error)
            if error is None:
                return "no json here"
            return '{"commands":[1],"explanation":"fixed"}'

        ans = parse_with_retry(raw_of, tpv_af())
        assert ans.commands == (1,)
        assert calls[0] is None and "JSON" in calls[1].upper()

    def test_retry_gives_up_after_second_failure(self):
        with pytest.raises(NoJsonFoundError):
            parse_with_retry(lambda e: "still nothing", tpv_af())
