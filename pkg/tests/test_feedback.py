from __future__ import annotations

import random
import string

import pytest

from oversight.feedback import UserFeedback, parse_feedback, render_feedback


class TestPublishedAnswerStrings:
    def test_ranking_answer(self):
        fb = parse_feedback("[A > C > B]- Conf[0.8]")
        assert fb.kind == "ranking"
        assert fb.payload == ("A", "C", "B")
        assert fb.confidence == 0.8

    def test_selection_answer(self):
        fb = parse_feedback("[A]- Conf[0.9]")
        assert fb.kind == "selection"
        assert fb.payload == ("A",)
        assert fb.confidence == 0.9

    def test_answer_confidence_long_form(self):
        fb = parse_feedback("Answer: [B] - Confidence: [0.6]")
        assert fb.kind == "selection"
        assert fb.payload == ("B",)
        assert fb.confidence == 0.6

    def test_refusal_tokens(self):
        for raw in ("[DontCare]", "DontCare", "dontcare", "DONTCARE", "[dont care]", "don't care"):
            fb = parse_feedback(raw)
            assert fb.kind == "dont_care", raw
            assert fb.payload == ()
            assert fb.confidence is None
        for raw in ("[DontKnow]", "dontknow", "Dont Know"):
            fb = parse_feedback(raw)
            assert fb.kind == "dont_know", raw
            assert fb.confidence is None


class TestGrammarEdges:
    def test_free_text_fallback(self):
        raw = "I would prefer something colorful with large headlines."
        fb = parse_feedback(raw)
        assert fb.kind == "free_text"
        assert fb.payload == (raw,)

    def test_empty_and_whitespace(self):
        for raw in ("", "   ", "\n\t"):
            fb = parse_feedback(raw)
            assert fb.kind == "free_text"

    def test_bare_label_is_selection(self):
        fb = parse_feedback("B")
        assert fb.kind == "selection" and fb.payload == ("B",)

    def test_bare_sentence_is_not_selection(self):
        fb = parse_feedback("the blue one please")
        assert fb.kind == "free_text"

    def test_bracketed_multiword_label(self):
        fb = parse_feedback("[Option two] - Conf[0.5]")
        assert fb.kind == "selection"
        assert fb.payload == ("Option two",)
        assert fb.confidence == 0.5

    def test_bare_ranking(self):
        fb = parse_feedback("A > B")
        assert fb.kind == "ranking" and fb.payload == ("A", "B")

    def test_confidence_without_brackets(self):
        fb = parse_feedback("[C] - confidence: 0.75")
        assert fb.kind == "selection" and fb.confidence == 0.75

    def test_confidence_clamped(self):
        assert parse_feedback("[A]- Conf[1.5]").confidence == 1.0
        assert parse_feedback("[A]- Conf[-2]").confidence == 0.0

    def test_unparseable_confidence_degrades(self):
        fb = parse_feedback("[A]- Conf[high]")
        # Bracketed label still recognized; the bad confidence is dropped.
        assert fb.kind == "selection" and fb.confidence is None

    def test_refusal_with_conf_drops_confidence(self):
        fb = parse_feedback("[DontCare] - Conf[0.3]")
        assert fb.kind == "dont_care" and fb.confidence is None

    def test_empty_brackets_are_free_text(self):
        assert parse_feedback("[]").kind == "free_text"
        assert parse_feedback("[ > ]").kind == "free_text"

    def test_kind_validation(self):
        with pytest.raises(ValueError):
            UserFeedback(kind="bogus")


class TestRoundTrip:
    CASES = [
        UserFeedback(kind="selection", payload=("A",), confidence=0.9),
        UserFeedback(kind="selection", payload=("Option 2",), confidence=None),
        UserFeedback(kind="ranking", payload=("A", "C", "B"), confidence=0.8),
        UserFeedback(kind="dont_care"),
        UserFeedback(kind="dont_know"),
    ]

    def test_render_parse_round_trip(self):
        for fb in self.CASES:
            back = parse_feedback(render_feedback(fb))
            assert back.kind == fb.kind
            assert back.payload == fb.payload
            assert back.confidence == fb.confidence

    def test_canonical_render_shapes(self):
        assert render_feedback(UserFeedback(kind="ranking", payload=("A", "C", "B"),
                                            confidence=0.8)) == "[A > C > B]- Conf[0.8]"
        assert render_feedback(UserFeedback(kind="selection", payload=("A",),
                                            confidence=0.9)) == "[A]- Conf[0.9]"
        assert render_feedback(UserFeedback(kind="dont_care")) == "[DontCare]"
        assert render_feedback(UserFeedback(kind="dont_know")) == "[DontKnow]"


def _random_grammar_string(rng: random.Random) -> str:
    """Generator covering the grammar plus adversarial noise."""
    roll = rng.random()
    labels = [rng.choice("ABCDEF") for _ in range(rng.randint(1, 4))]
    conf = f"{rng.random():.2f}"
    if roll < 0.2:
        return f"[{' > '.join(labels)}]- Conf[{conf}]"
    if roll < 0.35:
        return f"[{labels[0]}]- Conf[{conf}]"
    if roll < 0.45:
        return f"Answer: [{labels[0]}] - Confidence: [{conf}]"
    if roll < 0.55:
        return rng.choice(["[DontCare]", "dontknow", "DONT CARE", "[dont know]"])
    if roll < 0.7:
        alphabet = string.printable
        return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 80)))
    if roll < 0.85:
        # Near-miss structures.
        return rng.choice([
            "[[A]]", "[A > ]", "Conf[0.8]", "[A]- Conf[]", "Answer:",
            "[A > B - Conf[0.5]", "]A[", "[A][B]", "> > >", "[" * 50,
        ])
    return " ".join(rng.choice(["the", "user", "wants", "fast", "pages", ">"])
                    for _ in range(rng.randint(1, 12)))


class TestFuzz:
    def test_parse_never_throws_on_1000_fuzzed_inputs(self):
        rng = random.Random(424242)
        for _ in range(1000):
            raw = _random_grammar_string(rng)
            fb = parse_feedback(raw)
            assert fb.kind in ("selection", "ranking", "free_text", "dont_care", "dont_know")
            if fb.is_refusal:
                assert fb.payload == () and fb.confidence is None
            if fb.confidence is not None:
                assert 0.0 <= fb.confidence <= 1.0

    def test_fuzzed_canonical_values_round_trip(self):
        rng = random.Random(99)
        for _ in range(1000):
            kind = rng.choice(["selection", "ranking", "dont_care", "dont_know"])
            if kind == "selection":
                fb = UserFeedback(kind=kind, payload=(rng.choice("ABCDEFG"),),
                                  confidence=rng.choice([None, round(rng.random(), 2)]))
            elif kind == "ranking":
                n = rng.randint(2, 5)
                fb = UserFeedback(kind=kind,
                                  payload=tuple(rng.sample("ABCDEFG", n)),
                                  confidence=rng.choice([None, round(rng.random(), 2)]))
            else:
                fb = UserFeedback(kind=kind)
            back = parse_feedback(render_feedback(fb))
            assert (back.kind, back.payload, back.confidence) == (
                fb.kind, fb.payload, fb.confidence)
