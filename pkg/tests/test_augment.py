import pytest

from csmt.aligner import AlignmentLinks
from csmt.augment import (
    AugmentedPair,
    Occurrence,
    apply_replacements,
    build_match_index,
    build_training_set,
    load_augmented,
    sample_augmented,
    save_augmented,
)
from csmt.corpus import Lang, SentencePair, tokenize
from csmt.phrases import PhrasePair, PhraseTable


def pair(src, tgt):
    return SentencePair(tuple(tokenize(src)), tuple(tokenize(tgt, Lang.TGT)))


def table_of(*entries):
    return PhraseTable({PhrasePair(tuple(s.split()), tuple(t.split())): 1 for s, t in entries})


A_TO_X = PhrasePair(("a",), ("X",))
B_TO_Y = PhrasePair(("b",), ("Y",))


def test_index_records_aligned_occurrence():
    corpus = [pair("a b", "X Y")]
    links = [AlignmentLinks.of({(0, 0), (1, 1)})]
    idx = build_match_index(corpus, table_of(("a", "X")), links)
    assert idx.single == {A_TO_X: [Occurrence(0, (0, 0), (0, 0))]}
    assert idx.double == {}


def test_index_requires_supporting_link():
    corpus = [pair("a b", "X Y")]
    # both phrases present but nothing links a to X
    links = [AlignmentLinks.of({(1, 1)})]
    idx = build_match_index(corpus, table_of(("a", "X")), links)
    assert idx.single == {}


def test_index_rejects_link_escaping_target_span():
    corpus = [pair("a b", "X Y")]
    links = [AlignmentLinks.of({(0, 0), (0, 1)})]
    idx = build_match_index(corpus, table_of(("a", "X")), links)
    assert idx.single == {}


def test_index_double_requires_disjoint_spans():
    corpus = [pair("a b", "X Y")]
    links = [AlignmentLinks.of({(0, 0), (1, 1)})]
    idx = build_match_index(corpus, table_of(("a", "X"), ("b", "Y")), links)
    assert set(idx.single) == {A_TO_X, B_TO_Y}
    assert list(idx.double) == [(A_TO_X, B_TO_Y)]
    (docc,) = idx.double[(A_TO_X, B_TO_Y)]
    assert docc.first == ((0, 0), (0, 0))
    assert docc.second == ((1, 1), (1, 1))


def test_index_double_keys_are_sorted_pairs():
    corpus = [pair("b a", "Y X")]
    links = [AlignmentLinks.of({(0, 0), (1, 1)})]
    idx = build_match_index(corpus, table_of(("a", "X"), ("b", "Y")), links)
    # key order is by sorted entry, independent of sentence position
    assert list(idx.double) == [(A_TO_X, B_TO_Y)]


def test_index_counts_repeated_matches_once_per_position():
    corpus = [pair("a c a", "X Z X")]
    links = [AlignmentLinks.of({(0, 0), (1, 1), (2, 2)})]
    idx = build_match_index(corpus, table_of(("a", "X")), links)
    spans = {(occ.src_span, occ.tgt_span) for occ in idx.single[A_TO_X]}
    assert spans == {((0, 0), (0, 0)), ((2, 2), (2, 2))}


def test_apply_replacements_splices_target_tokens():
    p = pair("a b c", "X Y Z")
    aug = apply_replacements(p, [((1, 1), ("Q", "R"))])
    assert aug.source_surfaces() == ["a", "Q", "R", "c"]
    assert [t.lang for t in aug.source] == [Lang.SRC, Lang.TGT, Lang.TGT, Lang.SRC]
    assert aug.target_surfaces() == ["X", "Y", "Z"]
    assert aug.to_sentence_pair().source == aug.source


def test_apply_replacements_multiple_spans_any_order():
    p = pair("a b c d", "X")
    aug = apply_replacements(p, [((2, 3), ("Q",)), ((0, 0), ("R",))])
    assert aug.source_surfaces() == ["R", "b", "Q"]


def test_apply_replacements_validates_spans():
    p = pair("a b", "X")
    with pytest.raises(ValueError):
        apply_replacements(p, [((0, 2), ("Q",))])
    with pytest.raises(ValueError):
        apply_replacements(p, [((0, 1), ("Q",)), ((1, 1), ("R",))])
    with pytest.raises(ValueError):
        apply_replacements(p, [])  # AugmentedPair requires a replacement


def engineered_index(n_sents):
    corpus = [pair("a b", "X Y") for _ in range(n_sents)]
    links = [AlignmentLinks.of({(0, 0), (1, 1)})] * n_sents
    return build_match_index(corpus, table_of(("a", "X"), ("b", "Y")), links)


def test_sampling_caps_are_exact():
    idx = engineered_index(8)
    sample = sample_augmented(idx, k1=5, k2=2, seed=0)
    singles = [aug for aug in sample if len(aug.replacements) == 1]
    doubles = [aug for aug in sample if len(aug.replacements) == 2]
    per_entry = {
        "X": sum(1 for aug in singles if aug.replacements[0][1] == ("X",)),
        "Y": sum(1 for aug in singles if aug.replacements[0][1] == ("Y",)),
    }
    assert per_entry == {"X": 5, "Y": 5}
    assert len(doubles) == 2


def test_sampling_takes_all_matches_under_cap():
    idx = engineered_index(3)
    sample = sample_augmented(idx, k1=5, k2=2, seed=0)
    singles = [aug for aug in sample if len(aug.replacements) == 1]
    doubles = [aug for aug in sample if len(aug.replacements) == 2]
    assert len(singles) == 6  # 3 per entry
    assert len(doubles) == 2


def test_sampling_is_deterministic():
    idx = engineered_index(10)
    a = sample_augmented(idx, k1=4, k2=3, seed=7)
    b = sample_augmented(idx, k1=4, k2=3, seed=7)
    assert a == b
    c = sample_augmented(idx, k1=4, k2=3, seed=8)
    assert len(c) == len(a)


def test_sampled_source_is_code_switched():
    idx = engineered_index(2)
    for aug in sample_augmented(idx, k1=5, k2=5, seed=0):
        for (lo, hi), phrase in aug.replacements:
            assert phrase in {("X",), ("Y",)}
        assert any(tok.lang is Lang.TGT for tok in aug.source)


def test_build_training_set_appends_without_dedup():
    corpus = [pair("a b", "X Y"), pair("a b", "X Y")]
    idx = engineered_index(1)
    augmented = sample_augmented(idx, k1=1, k2=1, seed=0)
    merged = build_training_set(corpus, augmented)
    assert len(merged) == len(corpus) + len(augmented)
    assert merged[0] is corpus[0]
    assert merged[-1].source == augmented[-1].source


def test_augmented_jsonl_roundtrip(tmp_path):
    idx = engineered_index(4)
    sample = sample_augmented(idx, k1=3, k2=2, seed=1)
    p = tmp_path / "augmented.jsonl"
    save_augmented(sample, p)
    back = load_augmented(p)
    assert back == sample
    # language tags survive the round trip
    assert all(
        [t.lang for t in a.source] == [t.lang for t in b.source]
        for a, b in zip(sample, back)
    )


def test_save_empty_augmented(tmp_path):
    p = tmp_path / "augmented.jsonl"
    save_augmented([], p)
    assert load_augmented(p) == []
