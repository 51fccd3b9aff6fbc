from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guardkit.core import (
    Category,
    GuardSample,
    HarmLabel,
    ParseError,
    ParseFailure,
    RefusalLabel,
    Taxonomy,
    ValidationError,
    format_judgment,
    parse_judgment,
    render_taxonomy,
    sample_from_dict,
    sample_to_dict,
)
from guardkit.templates import load_taxonomy


class TestRenderTaxonomy:
    def test_aegis_block_first_and_last_lines(self):
        block = render_taxonomy(load_taxonomy("aegis"))
        lines = block.splitlines()
        assert lines[0] == "S1: Violence."
        assert lines[-1] == "S22: Immoral/Unethical."
        assert len(lines) == 22

    def test_preamble_only_renders_verbatim(self):
        taxonomy = Taxonomy(name="policy", preamble="No financial advice.\nBe nice.")
        assert render_taxonomy(taxonomy) == "No financial advice.\nBe nice."

    def test_two_categories_order_preserved(self):
        taxonomy = Taxonomy(
            name="t",
            categories=(Category("A", "Alpha"), Category("B", "Beta")),
        )
        assert render_taxonomy(taxonomy) == "A: Alpha\nB: Beta"

    def test_rendering_is_idempotent(self):
        taxonomy = load_taxonomy("wildguard")
        assert render_taxonomy(taxonomy) == render_taxonomy(taxonomy)

    def test_wildguard_block_matches_grouped_layout(self):
        block = render_taxonomy(load_taxonomy("wildguard"))
        assert block.startswith("Privacy:\n1) Sensitive Information (Organization)")
        assert block.endswith("4) Mental Health & Over-Reliance Crisis.")

    def test_duplicate_code_rejected(self):
        with pytest.raises(ValidationError):
            Taxonomy(name="t", categories=(Category("A", "x"), Category("A", "y")))


class TestParseJudgment:
    def test_full_reasoning_output(self):
        raw = (
            "<think>step A. step B.</think>\n"
            "Prompt harm: harmful\nResponse harm: unharmful\nResponse refusal: refusal"
        )
        parsed = parse_judgment(raw, reasoning_expected=True)
        assert parsed.prompt_harm is HarmLabel.HARMFUL
        assert parsed.response_harm is HarmLabel.UNHARMFUL
        assert parsed.response_refusal is RefusalLabel.REFUSAL
        assert parsed.trace == "step A. step B."

    def test_none_tokens_map_to_none_variants(self):
        raw = "Prompt harm: harmful\nResponse harm: None\nResponse refusal: None"
        parsed = parse_judgment(raw)
        assert parsed.prompt_harm is HarmLabel.HARMFUL
        assert parsed.response_harm is HarmLabel.NONE
        assert parsed.response_refusal is RefusalLabel.NONE
        assert parsed.trace is None

    def test_no_labels_is_missing_prompt_harm(self):
        with pytest.raises(ParseError) as excinfo:
            parse_judgment("I refuse to answer.")
        assert excinfo.value.failure is ParseFailure.MISSING_PROMPT_HARM
        assert excinfo.value.raw == "I refuse to answer."

    def test_quoted_block_parses(self):
        raw = '"Prompt harm: unharmful\nResponse harm: harmful\nResponse refusal: compliance"'
        parsed = parse_judgment(raw)
        assert parsed.prompt_harm is HarmLabel.UNHARMFUL
        assert parsed.response_harm is HarmLabel.HARMFUL
        assert parsed.response_refusal is RefusalLabel.COMPLIANCE

    def test_last_occurrence_wins(self):
        raw = (
            "Prompt harm: unharmful\nActually, let me reconsider.\n"
            "Prompt harm: harmful\nResponse harm: None\nResponse refusal: None"
        )
        assert parse_judgment(raw).prompt_harm is HarmLabel.HARMFUL

    def test_unterminated_think_span(self):
        with pytest.raises(ParseError) as excinfo:
            parse_judgment("<think>forever thinking", reasoning_expected=True)
        assert excinfo.value.failure is ParseFailure.UNTERMINATED_TRACE

    def test_bad_label_token(self):
        with pytest.raises(ParseError) as excinfo:
            parse_judgment("Prompt harm: dangerous")
        assert excinfo.value.failure is ParseFailure.BAD_LABEL

    def test_prompt_harm_none_is_bad_label(self):
        with pytest.raises(ParseError) as excinfo:
            parse_judgment("Prompt harm: None")
        assert excinfo.value.failure is ParseFailure.BAD_LABEL

    def test_case_and_quote_tolerance(self):
        raw = 'Prompt Harm: "Harmful"\nRESPONSE HARM: <unharmful>\nresponse refusal: Compliance.'
        parsed = parse_judgment(raw)
        assert parsed.prompt_harm is HarmLabel.HARMFUL
        assert parsed.response_harm is HarmLabel.UNHARMFUL
        assert parsed.response_refusal is RefusalLabel.COMPLIANCE

    def test_missing_response_lines_default_to_none(self):
        parsed = parse_judgment("Prompt harm: unharmful")
        assert parsed.response_harm is HarmLabel.NONE
        assert parsed.response_refusal is RefusalLabel.NONE

    def test_trailing_text_ignored(self):
        raw = (
            "Prompt harm: harmful\nResponse harm: None\nResponse refusal: None\n"
            "Hope that helps! Let me know if you need anything else."
        )
        assert parse_judgment(raw).prompt_harm is HarmLabel.HARMFUL

    def test_answer_lines_inside_think_are_stripped_from_trace(self):
        raw = (
            "<think>Rehearsing the format.\nPrompt harm: harmful\nDone rehearsing.</think>\n"
            "Prompt harm: harmful\nResponse harm: None\nResponse refusal: None"
        )
        parsed = parse_judgment(raw, reasoning_expected=True)
        assert "Prompt harm" not in parsed.trace
        assert "Rehearsing the format." in parsed.trace


_HARM = st.sampled_from([HarmLabel.HARMFUL, HarmLabel.UNHARMFUL])
_RESPONSE_HARM = st.sampled_from(list(HarmLabel))
_REFUSAL = st.sampled_from(list(RefusalLabel))


class TestRoundTrip:
    @given(prompt=_HARM, response=_RESPONSE_HARM, refusal=_REFUSAL)
    @settings(max_examples=200, deadline=None)
    def test_parse_of_formatted_block_round_trips(self, prompt, response, refusal):
        block = format_judgment(prompt, response, refusal)
        parsed = parse_judgment(block)
        assert parsed.prompt_harm is prompt
        assert parsed.response_harm is response
        assert parsed.response_refusal is refusal
        assert parsed.trace is None

    def test_parser_total_on_arbitrary_text(self):
        # never aborts: either a ParsedJudgment or a typed ParseError
        for text in ["", "???", "Prompt harm:", "<think></think>", "a\nb\nc"]:
            try:
                parse_judgment(text, reasoning_expected=True)
            except ParseError as exc:
                assert isinstance(exc.failure, ParseFailure)


class TestGuardSample:
    def test_absent_response_forces_none_labels(self):
        with pytest.raises(ValidationError):
            GuardSample(
                id="x",
                prompt="p",
                response=None,
                gold_prompt_harm=HarmLabel.HARMFUL,
                gold_response_harm=HarmLabel.HARMFUL,
            )

    def test_empty_prompt_rejected(self):
        with pytest.raises(ValidationError):
            GuardSample(id="x", prompt="", gold_prompt_harm=HarmLabel.HARMFUL)

    def test_jsonl_round_trip(self):
        sample = GuardSample(
            id="a1",
            prompt="hello",
            response="world",
            gold_prompt_harm=HarmLabel.UNHARMFUL,
            gold_response_harm=HarmLabel.UNHARMFUL,
            gold_response_refusal=RefusalLabel.COMPLIANCE,
            source="unit",
        )
        assert sample_from_dict(sample_to_dict(sample)) == sample

    def test_jsonl_nulls_for_prompt_only(self):
        sample = GuardSample(id="a2", prompt="p", gold_prompt_harm=HarmLabel.HARMFUL)
        record = sample_to_dict(sample)
        assert record["response"] is None
        assert record["response_harm"] is None
        assert record["response_refusal"] is None
        assert sample_from_dict(record) == sample

    def test_empty_string_response_treated_as_absent(self):
        record = {
            "id": "a3",
            "prompt": "p",
            "response": "",
            "prompt_harm": "harmful",
            "response_harm": None,
            "response_refusal": None,
            "source": "",
        }
        assert sample_from_dict(record).response is None
