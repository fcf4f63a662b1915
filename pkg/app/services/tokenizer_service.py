"""
Tokenizer for inside/outside prompt pairs
"""
from typing import List, Tuple

from app.core.errors import BudgetError, ContractError, PartitionError, VocabularyError
from app.models.prompt import BOS_ID, PAD_ID, PromptPair, TokenizedPrompt, Vocabulary


SCENE_COLORS = ["red", "cyan", "orange", "blue", "lime", "purple", "green", "pink"]
SCENE_SHAPES = ["circle", "square", "triangle", "star"]
SCENE_BACKGROUNDS = ["solid", "gradient", "checker"]
SCENE_WORDS = SCENE_COLORS + ["striped"] + SCENE_SHAPES + SCENE_BACKGROUNDS + ["background"]


def default_vocabulary() -> Vocabulary:
    """Vocabulary covering every word the synthetic scene generator emits"""
    return Vocabulary.from_words(SCENE_WORDS)


def _side_ids(words: Tuple[str, ...], vocab: Vocabulary, budget: int, side: str) -> List[int]:
    if len(words) > budget:
        raise BudgetError(f"{side} text has {len(words)} words, budget is {budget}")
    ids = []
    for word in words:
        token_id = vocab.word_to_id.get(word)
        if token_id is None:
            raise VocabularyError(word)
        ids.append(token_id)
    return ids + [PAD_ID] * (budget - len(ids))


def tokenize(prompt: PromptPair, vocab: Vocabulary, budget: int) -> TokenizedPrompt:
    """
    Lay a prompt pair out as [<bos>, B inside slots, B outside slots]

    Args:
        prompt: inside (object) and outside (background) words
        vocab: word to id map
        budget: per-side slot count B

    Returns:
        TokenizedPrompt: ids of length 1 + 2B
    """
    if budget < 1:
        raise BudgetError(f"token budget must be >= 1, got {budget}")
    inside = _side_ids(prompt.inside, vocab, budget, "inside")
    outside = _side_ids(prompt.outside, vocab, budget, "outside")
    return TokenizedPrompt(ids=tuple([BOS_ID] + inside + outside), budget=budget)


def null_prompt(budget: int) -> TokenizedPrompt:
    if budget < 1:
        raise BudgetError(f"token budget must be >= 1, got {budget}")
    return TokenizedPrompt(ids=tuple([BOS_ID] + [PAD_ID] * (2 * budget)), budget=budget)


def detokenize(tokens: TokenizedPrompt, vocab: Vocabulary) -> PromptPair:
    words = vocab.id_to_word()
    try:
        inside = tuple(words[i] for i in tokens.ids[1:tokens.budget + 1] if i != PAD_ID)
        outside = tuple(words[i] for i in tokens.ids[tokens.budget + 1:] if i != PAD_ID)
    except KeyError as exc:
        raise ContractError(f"token id {exc.args[0]} is not in the vocabulary") from exc
    return PromptPair(inside=inside, outside=outside)


def changed_token_indices(src: TokenizedPrompt, edit: TokenizedPrompt) -> Tuple[int, ...]:
    """Columns whose token differs between the source and edit layouts"""
    if src.budget != edit.budget:
        raise PartitionError(f"budgets differ: {src.budget} vs {edit.budget}")
    return tuple(i for i, (a, b) in enumerate(zip(src.ids, edit.ids)) if a != b)


def validate_partition(j_in, j_out, bos_index: int, token_count: int) -> None:
    """Raise PartitionError unless J_in, J_out and bos are disjoint and in range"""
    j_in, j_out = set(j_in), set(j_out)
    if j_in & j_out:
        raise PartitionError(f"J_in and J_out overlap at {sorted(j_in & j_out)}")
    if bos_index in j_in or bos_index in j_out:
        raise PartitionError("bos column cannot belong to J_in or J_out")
    for j in j_in | j_out | {bos_index}:
        if not 0 <= j < token_count:
            raise PartitionError(f"column {j} out of range [0, {token_count})")
