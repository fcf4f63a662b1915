import json

import numpy as np
import pytest

from app.core.errors import BudgetError, PartitionError, VocabularyError
from app.models.prompt import BOS_ID, PAD_ID, PromptPair, Vocabulary
from app.services.tokenizer_service import (
    SCENE_WORDS, changed_token_indices, detokenize, null_prompt, tokenize, validate_partition,
)


def ids_of(vocab, *words):
    return [vocab.word_to_id[w] for w in words]


def test_layout_with_both_sides(vocab):
    tokens = tokenize(PromptPair.parse("red circle|checker background"), vocab, 4)
    red, circle, checker, background = ids_of(vocab, "red", "circle", "checker", "background")
    assert list(tokens.ids) == [BOS_ID, red, circle, PAD_ID, PAD_ID, checker, background, PAD_ID, PAD_ID]
    assert tokens.j_in == (1, 2, 3, 4)
    assert tokens.j_out == (5, 6, 7, 8)


def test_empty_outside_keeps_partition(vocab):
    tokens = tokenize(PromptPair(inside=("red",), outside=()), vocab, 2)
    assert tokens.ids[3:] == (PAD_ID, PAD_ID)
    assert tokens.j_out == (3, 4)


def test_partition_covers_all_positions(vocab):
    for budget in (1, 2, 5, 8):
        tokens = null_prompt(budget)
        j_in, j_out = set(tokens.j_in), set(tokens.j_out)
        assert len(j_in) == len(j_out) == budget
        assert not j_in & j_out
        assert j_in | j_out | {tokens.bos_index} == set(range(tokens.length))


def test_round_trip_random_prompts(vocab):
    rng = np.random.default_rng(7)
    for _ in range(100):
        inside = tuple(str(w) for w in rng.choice(SCENE_WORDS, size=rng.integers(1, 5)))
        outside = tuple(str(w) for w in rng.choice(SCENE_WORDS, size=rng.integers(0, 5)))
        prompt = PromptPair(inside=inside, outside=outside)
        assert detokenize(tokenize(prompt, vocab, 4), vocab) == prompt


def test_injective(vocab):
    a = tokenize(PromptPair.parse("red circle|"), vocab, 4)
    b = tokenize(PromptPair.parse("red|circle"), vocab, 4)
    c = tokenize(PromptPair.parse("circle red|"), vocab, 4)
    assert len({a.ids, b.ids, c.ids}) == 3


def test_unknown_word_named(vocab):
    with pytest.raises(VocabularyError) as info:
        tokenize(PromptPair.parse("red dog|"), vocab, 4)
    assert info.value.word == "dog"
    assert "dog" in str(info.value)


def test_overflow_is_budget_error(vocab):
    with pytest.raises(BudgetError):
        tokenize(PromptPair.parse("striped red circle|"), vocab, 2)
    with pytest.raises(BudgetError):
        tokenize(PromptPair.parse("red|solid checker background"), vocab, 2)


def test_null_prompt():
    tokens = null_prompt(2)
    assert list(tokens.ids) == [BOS_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]
    assert tokens.word_positions == []


def test_changed_token_indices(vocab):
    src = tokenize(PromptPair.parse("red circle|solid background"), vocab, 4)
    edit = tokenize(PromptPair.parse("cyan circle|solid background"), vocab, 4)
    assert changed_token_indices(src, edit) == (1,)
    assert changed_token_indices(src, src) == ()


def test_validate_partition_rejects_overlap_and_range():
    with pytest.raises(PartitionError):
        validate_partition([1, 2], [2, 3], 0, 5)
    with pytest.raises(PartitionError):
        validate_partition([1], [5], 0, 5)
    with pytest.raises(PartitionError):
        validate_partition([0, 1], [2], 0, 3)


def test_vocabulary_json_round_trip(vocab):
    raw = json.loads(vocab.to_json())
    assert raw["<bos>"] == 0 and raw["<pad>"] == 1
    assert Vocabulary.from_json(vocab.to_json()) == vocab
    assert sorted(raw.values()) == list(range(vocab.size))


def test_vocabulary_rejects_reserved_words():
    with pytest.raises(ValueError):
        Vocabulary(word_to_id={"<pad>": 2})


def test_prompt_pair_parse_and_format():
    prompt = PromptPair.parse(" striped  red circle | gradient background ")
    assert prompt.inside == ("striped", "red", "circle")
    assert prompt.outside == ("gradient", "background")
    assert PromptPair.parse(prompt.format()) == prompt
