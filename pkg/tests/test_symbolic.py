import math

import pytest

from gwfract.symbolic import (
    FiniteTree,
    InvalidInputError,
    ResourceLimitError,
    Section,
    StarTree,
    Word,
    WeightedAlphabet,
    block_decode,
    block_encode,
    compress_along_pi_rho,
    compress_k,
    rho_index,
    section_pi_rho,
    validate_section,
)


def test_word_roundtrip_and_order():
    w = Word.parse("2-0-1")
    assert w.text == "2-0-1"
    assert w == Word((2, 0, 1))
    assert w.parent == Word((2, 0))
    assert Word((2,)).is_prefix_of(w)
    assert not Word((0,)).is_prefix_of(w)
    assert w.suffix_after(Word((2,))) == Word((0, 1))
    assert Word() < Word((0,)) < Word((0, 1)) < Word((1,))


def test_word_empty_parent_raises():
    with pytest.raises(InvalidInputError):
        Word().parent


def test_weighted_alphabet_products():
    wa = WeightedAlphabet((0.5, 0.25))
    assert wa.weight(Word((0, 1, 1))) == pytest.approx(0.5 * 0.25 * 0.25)
    assert wa.r_min == 0.25 and wa.r_max == 0.5
    with pytest.raises(InvalidInputError):
        WeightedAlphabet((1.0,))
    with pytest.raises(InvalidInputError):
        WeightedAlphabet(())


def test_section_equal_ratios_is_a_full_level():
    wa = WeightedAlphabet((1 / 3.0,) * 9)
    sec = section_pi_rho(wa, 0.1)
    words = sec.sorted_words()
    # (1/3)^3 <= 0.1 < (1/3)^2, so the section is the whole third level
    assert len(words) == 9 ** 3
    assert all(len(w) == 3 for w in words)
    assert validate_section(9, words)


def test_section_unequal_ratios_explicit():
    wa = WeightedAlphabet((0.5, 0.25))
    sec = section_pi_rho(wa, 0.2)
    got = set(sec.sorted_words())
    assert got == {Word((0, 0, 0)), Word((0, 0, 1)), Word((0, 1)),
                   Word((1, 0)), Word((1, 1))}
    assert validate_section(2, got)
    for w in got:
        assert wa.weight(w) <= 0.2 * (1 + 1e-12)
        assert wa.weight(w) > 0.2 * wa.r_min * (1 - 1e-12)


def test_section_rejects_rho_at_or_above_r_min():
    wa = WeightedAlphabet((0.5, 0.25))
    with pytest.raises(InvalidInputError):
        section_pi_rho(wa, 0.5)
    # the extended switch lifts the restriction for derived thresholds
    sec = section_pi_rho(wa, 0.5, extended=True)
    assert validate_section(2, sec.sorted_words())


def test_section_budget():
    wa = WeightedAlphabet((0.9, 0.9))
    with pytest.raises(ResourceLimitError):
        section_pi_rho(wa, 1e-9, node_budget=500)


def test_validate_section_rejects_non_antichain_and_gaps():
    assert not validate_section(2, [Word((0,)), Word((0, 1)), Word((1,))])
    assert not validate_section(2, [Word((0,))])
    assert validate_section(2, [Word((0,)), Word((1, 0)), Word((1, 1))])


def test_rho_index_equal_ratios():
    wa = WeightedAlphabet((1 / 3.0,) * 3)
    # a tie within comparison tolerance grades a length-5 word into level 5
    n, a = rho_index(wa, (1 / 3.0) * (1 - 1e-13), Word((0, 1, 2, 0, 1)))
    assert n == 5
    assert a == pytest.approx(1.0, rel=1e-9)
    assert rho_index(wa, 0.2, Word()) == (0, 1.0)


def test_rho_index_leftover_range():
    wa = WeightedAlphabet((0.5, 0.25))
    rho = 0.2
    for w in section_pi_rho(wa, rho).sorted_words():
        n, a = rho_index(wa, rho, w)
        assert n == 1
        assert wa.r_min < a <= 1.0 + 1e-12


def test_full_tree_levels():
    t = FiniteTree.full(3, 2)
    assert t.level_sizes() == [1, 3, 9]
    assert len(t.level(2)) == 9
    assert t.extinct_level() is None


def test_tree_text_roundtrip():
    t = FiniteTree.full(2, 3).restrict(
        [Word((0, 0, 0)), Word((0, 1, 1)), Word((1, 0, 0))])
    back = FiniteTree.from_text(t.to_text())
    assert back == t


def test_tree_restrict_prunes_to_ancestors():
    t = FiniteTree.full(2, 2).restrict([Word((1, 0))])
    assert t.level(1) == [Word((1,))]
    assert t.level(2) == [Word((1, 0))]


def test_subtree_at_reroots():
    t = FiniteTree.full(2, 3)
    sub = t.subtree_at(Word((1,)))
    assert sub.depth == 2
    assert sub.level_sizes() == [1, 2, 4]


def test_tree_validation_rejects_orphans():
    with pytest.raises(InvalidInputError):
        FiniteTree(2, 1, {Word(): (3,)})


def test_block_encode_decode_roundtrip():
    for base, k in ((2, 3), (9, 2), (4, 4)):
        for idx in range(min(base ** k, 64)):
            block = block_decode(idx, base, k)
            assert len(block) == k
            assert block_encode(block, base) == idx


def test_compress_k_levels_match():
    t = FiniteTree.full(2, 4)
    c = compress_k(t, 2)
    assert c.alphabet_size == 4
    assert c.depth == 2
    # level n of the compressed tree encodes level 2n of the original
    lv = [tuple(block_decode(int(a), 2, 2)[j] for a in w for j in (0, 1))
          for w in c.level(1)]
    assert sorted(tuple(x for x in w) for w in lv) == \
        sorted(tuple(w) for w in t.level(2))


def test_compress_along_pi_rho_equal_weights_matches_compress_k():
    t = FiniteTree.full(2, 4)
    wa = WeightedAlphabet((0.5, 0.5))
    star = compress_along_pi_rho(t, wa, 0.25)
    assert isinstance(star, StarTree)
    assert star.max_height() == 2
    for h in (1, 2):
        assert set(star.level(h)) == set(t.level(2 * h))


def test_compress_along_pi_rho_heights_agree_with_rho_index():
    wa = WeightedAlphabet((0.5, 0.25))
    rho = 0.2
    t = FiniteTree.full(2, 6)
    star = compress_along_pi_rho(t, wa, rho)
    for h in range(1, star.max_height() + 1):
        for w in star.level(h):
            assert rho_index(wa, rho, w)[0] == h


def test_compress_along_pi_rho_needs_depth():
    t = FiniteTree.full(2, 2)
    wa = WeightedAlphabet((0.5, 0.25))
    with pytest.raises(InvalidInputError):
        compress_along_pi_rho(t, wa, 0.2, n_levels=5)


def test_section_sorted_words_are_sorted():
    wa = WeightedAlphabet((0.6, 0.3, 0.45))
    words = section_pi_rho(wa, 0.25).sorted_words()
    assert words == sorted(words)
    assert words == sorted(set(words))
