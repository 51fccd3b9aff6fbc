from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guardkit.budget import (
    BudgetConfig,
    budget_stats,
    count_sentences,
    shorten_trace,
    stats_to_csv,
)
from guardkit.client import ChatClient, EndpointConfig
from guardkit.core import ValidationError
from guardkit.distill import STATUS_ACCEPTED, STATUS_REJECTED
from guardkit.mock import MockBackend
from guardkit.templates import TemplateKind, load_template

from fixtures import planted_defect_corpus

SHORTEN = load_template(TemplateKind.SHORTEN_BUDGET)


def accepted_record():
    records, _ = planted_defect_corpus(clean=1, leaks=0, repetitions=0, overthinking=0)
    from dataclasses import replace

    return replace(records[0], status=STATUS_ACCEPTED)


def scripted_client(texts, no_sleep):
    backend = MockBackend(entries=[{"match": "Rephrase or summarize", "texts": list(texts)}])
    client = ChatClient(
        EndpointConfig(base_url="mock://shorten", model_name="m"),
        transport=backend, sleep=no_sleep,
    )
    return client, backend


class TestCountSentences:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("This is one sentence.", 1),
            ("First. Second! Third?", 3),
            ("We use e.g. two rules. Done.", 2),
            ("", 0),
            ("Dr. Smith arrived. He left.", 2),
            ("An unterminated trailing fragment here", 1),
            ("No", 0),  # fragment under 3 words
            ("One sentence. And a trailing fragment of words", 2),
            ("Ends with i.e. mid thought. Fine.", 2),
        ],
    )
    def test_examples(self, text, expected):
        assert count_sentences(text) == expected

    def test_abbreviations_configurable(self):
        text = "See fig. 3 for details."
        assert count_sentences(text) == 1
        assert count_sentences(text, abbreviations=frozenset()) == 2


_WORDS = st.lists(
    st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=8),
    min_size=1,
    max_size=8,
)


@st.composite
def well_formed(draw):
    """1-4 sentences, each words + terminal punctuation, joined by spaces."""
    sentences = []
    for _ in range(draw(st.integers(1, 4))):
        words = draw(_WORDS)
        terminator = draw(st.sampled_from([".", "!", "?"]))
        sentences.append(" ".join(words) + terminator)
    return " ".join(sentences), len(sentences)


class TestAdditivity:
    @given(a=well_formed(), b=well_formed())
    @settings(max_examples=250, deadline=None)
    def test_concatenation_adds_counts(self, a, b):
        text_a, count_a = a
        text_b, count_b = b
        assert count_sentences(text_a) == count_a
        assert count_sentences(text_b) == count_b
        assert count_sentences(text_a + " " + text_b) == count_a + count_b


class TestShortenTrace:
    def make_rewrite(self, sentences):
        return " ".join(f"Rewritten point number {i} stands alone." for i in range(sentences))

    def test_exact_budget_accepted(self, no_sleep):
        client, _ = scripted_client([self.make_rewrite(1)], no_sleep)
        config = BudgetConfig(n_sentences=1, shorten_template=SHORTEN)
        result = shorten_trace(accepted_record(), config, client)
        assert result.status == STATUS_ACCEPTED
        assert result.budget == 1
        assert count_sentences(result.trace) == 1

    def test_over_budget_rejected_with_measured_count(self, no_sleep):
        client, _ = scripted_client([self.make_rewrite(3)], no_sleep)
        config = BudgetConfig(n_sentences=1, shorten_template=SHORTEN)
        result = shorten_trace(accepted_record(), config, client, max_attempts=1)
        assert result.status == STATUS_REJECTED
        assert result.reasons == ("budget_violation",)
        assert "measured 3" in result.findings[0].detail

    def test_identity_budget_echo_accepted(self, no_sleep):
        record = accepted_record()
        original_count = count_sentences(record.trace)
        client, _ = scripted_client([record.trace], no_sleep)
        config = BudgetConfig(n_sentences=original_count, shorten_template=SHORTEN)
        result = shorten_trace(record, config, client)
        assert result.status == STATUS_ACCEPTED
        assert result.trace == record.trace

    def test_retry_until_budget_met(self, no_sleep):
        client, backend = scripted_client(
            [self.make_rewrite(4), self.make_rewrite(2)], no_sleep
        )
        config = BudgetConfig(n_sentences=2, shorten_template=SHORTEN)
        result = shorten_trace(accepted_record(), config, client, max_attempts=3)
        assert result.status == STATUS_ACCEPTED
        assert len(backend.call_log) == 2

    def test_leaky_rewrite_rejected(self, no_sleep):
        leaky = "The ground truth labels say it all."
        client, _ = scripted_client([leaky], no_sleep)
        config = BudgetConfig(n_sentences=1, shorten_template=SHORTEN)
        result = shorten_trace(accepted_record(), config, client, max_attempts=1)
        assert result.status == STATUS_REJECTED

    def test_think_span_stripped_from_rewrite(self, no_sleep):
        wrapped = "<think>planning the rewrite.</think>\nOne clean rewritten sentence here."
        client, _ = scripted_client([wrapped], no_sleep)
        config = BudgetConfig(n_sentences=1, shorten_template=SHORTEN)
        result = shorten_trace(accepted_record(), config, client)
        assert result.status == STATUS_ACCEPTED
        assert "think" not in result.trace

    def test_acceptance_predicate_over_random_rewrites(self, no_sleep):
        # accepted iff |measured - n| <= tolerance, across budgets and tolerances
        rng = random.Random(11)
        for _ in range(60):
            budget = rng.randint(1, 10)
            tolerance = rng.choice([0, 0, 1])
            measured = rng.randint(1, 12)
            client, _ = scripted_client([self.make_rewrite(measured)], no_sleep)
            config = BudgetConfig(n_sentences=budget, tolerance=tolerance,
                                  shorten_template=SHORTEN)
            result = shorten_trace(accepted_record(), config, client, max_attempts=1)
            expected = abs(measured - budget) <= tolerance
            assert (result.status == STATUS_ACCEPTED) is expected

    def test_budget_range_enforced(self):
        with pytest.raises(ValidationError):
            BudgetConfig(n_sentences=0, shorten_template=SHORTEN)
        with pytest.raises(ValidationError):
            BudgetConfig(n_sentences=11, shorten_template=SHORTEN)

    def test_pending_record_rejected_as_input(self, no_sleep):
        records, _ = planted_defect_corpus(clean=1, leaks=0, repetitions=0,
                                           overthinking=0)
        client, _ = scripted_client(["x."], no_sleep)
        config = BudgetConfig(n_sentences=1, shorten_template=SHORTEN)
        with pytest.raises(ValidationError):
            shorten_trace(records[0], config, client)


class TestBudgetStats:
    def test_ten_word_sentence_mean(self):
        stats = budget_stats(
            {1: ["Ten words exactly in this single test sentence here now."]}
        )
        assert stats.rows[0].mean_words_per_sentence == 10.0
        assert stats.rows[0].mean_total_words == 10.0
        assert stats.rows[0].sample_count == 1

    def test_identical_corpora_identical_rows(self):
        corpus = ["One two three. Four five six.", "Seven eight nine ten."]
        stats = budget_stats({2: corpus, 5: corpus})
        row_a, row_b = stats.rows
        assert (row_a.mean_words_per_sentence, row_a.mean_total_words) == (
            row_b.mean_words_per_sentence,
            row_b.mean_total_words,
        )

    def test_empty_trace_skipped(self):
        stats = budget_stats({1: ["A fine sentence here.", ""]})
        assert stats.skipped == 1
        assert stats.rows[0].sample_count == 1

    def test_rows_sorted_by_budget(self):
        stats = budget_stats({3: ["A b c."], 1: ["D e f."], 2: ["G h i."]})
        assert [r.n_sentences for r in stats.rows] == [1, 2, 3]

    def test_permutation_invariant(self):
        corpus = [f"Sentence number {i} is short." for i in range(10)]
        shuffled = list(corpus)
        random.Random(5).shuffle(shuffled)
        assert budget_stats({1: corpus}).rows == budget_stats({1: shuffled}).rows

    def test_empty_list_is_error(self):
        with pytest.raises(ValidationError):
            budget_stats({1: []})

    def test_csv_shape(self):
        csv = stats_to_csv(budget_stats({1: ["A short one."]}))
        lines = csv.strip().splitlines()
        assert lines[0] == "budget,mean_words_per_sentence,mean_total_words,n"
        assert lines[1].startswith("1,")
