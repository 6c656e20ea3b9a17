import random

import pytest

from uzbert.tokenizer import build_fsm, default_fsm, join_morphemes, load_fsm, segment_morph


@pytest.mark.parametrize("word, expected", [
    ("менинг", ["мен", "нинг"]),
    ("ютганларданмисиз", ["ют", "ган", "лар", "дан", "ми", "сиз"]),
    ("уйдагилар", ["уй", "да", "ги", "лар"]),
    ("уйдагилардагилар", ["уй", "да", "ги", "лар", "да", "ги", "лар"]),
    ("уйдагилардагилардагилар", ["уй"] + ["да", "ги", "лар"] * 3),
    ("ютган", ["ют", "ган"]),
    ("уй", ["уй"]),
])
def test_fixture_segmentations(word, expected):
    assert segment_morph(word, default_fsm()) == expected


@pytest.mark.parametrize("word", ["меннинг", "уйдаги", "ютлар", "китоб", "уйдагилардаги", ""])
def test_no_parse(word):
    assert segment_morph(word, default_fsm()) is None


def test_long_cycle_parses_without_recursion_limit():
    word = "уй" + "дагилар" * 500
    parse = segment_morph(word, default_fsm())
    assert parse is not None and len(parse) == 1 + 3 * 500
    assert join_morphemes(parse) == word


def test_degemination_can_be_disabled():
    fsm = build_fsm(["мен"], [["нинг"]], degeminate=False)
    assert segment_morph("меннинг", fsm) == ["мен", "нинг"]
    assert segment_morph("менинг", fsm) is None


def test_random_accepted_sequences_round_trip():
    fsm = default_fsm()
    rng = random.Random(3)
    chains = [["нинг"], ["ган", "лар", "дан", "ми", "сиз"]]
    for _ in range(300):
        stem = rng.choice(["мен", "уй", "ют"])
        if rng.random() < 0.5:
            chain = rng.choice(chains)
            suffixes = chain[: rng.randint(1, len(chain))]
        else:
            suffixes = ["да", "ги", "лар"] * rng.randint(1, 6)
        word = join_morphemes([stem, *suffixes])
        parse = segment_morph(word, fsm)
        assert parse is not None
        assert join_morphemes(parse) == word
        assert fsm.accepts_suffixes(parse[1:])


def test_fsm_file(tmp_path):
    path = tmp_path / "lexicon.fsm"
    path.write_text("# toy lexicon\n[stems]\nкитоб\n[suffixes]\nлар да\n[cycles]\nни\n", encoding="utf-8")
    fsm = load_fsm(path)
    assert segment_morph("китоблар", fsm) == ["китоб", "лар"]
    assert segment_morph("китоблар" + "да", fsm) == ["китоб", "лар", "да"]
    assert segment_morph("китобнини", fsm) == ["китоб", "ни", "ни"]
    bad = tmp_path / "bad.fsm"
    bad.write_text("[roots]\nуй\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_fsm(bad)
