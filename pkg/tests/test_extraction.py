import math

import numpy as np
import pytest

from gwfract.symbolic import (CapabilityError, FiniteTree, InvalidInputError,
                              Word, compress_k)
from gwfract.branching import Binomial, sample_gw
from gwfract.geometry import percolation_ifs, render_words, sierpinski_ifs, word_map
from gwfract.extraction import (
    Ary,
    CardinalityAtLeast,
    DiffuseBlock,
    Intersection,
    NotFoundError,
    SectionLaw,
    diffuse_block_collection,
    find_subtree,
    general_pipeline,
    natural_measure,
    percolation_pipeline,
    predicted_presence,
    section_reduction,
)


def test_ary_member_and_witness():
    pred = Ary(3)
    assert not pred.member(frozenset({0, 5}))
    assert pred.member(frozenset({0, 5, 7}))
    w = pred.witness_subset(frozenset({9, 2, 7, 4}))
    assert w == frozenset({2, 4, 7})  # smallest labels win
    assert pred.witness_subset(frozenset({1})) is None
    assert pred.min_arity() == 3
    assert CardinalityAtLeast(2).member({3, 4})


def test_ary_rejects_bad_arity():
    with pytest.raises(InvalidInputError):
        Ary(0)


def test_diffuse_block_member():
    pred = DiffuseBlock(2, 3, 2)
    assert pred.block == 16
    full = frozenset(range(32, 48))  # all extensions of prefix 2
    assert pred.member(full)
    assert pred.witness_core(full | {3, 99}) == full
    assert not pred.member(full - {40})
    assert pred.witness_subset(full - {40}) is None
    assert pred.min_arity() == 16


def test_diffuse_block_needs_two_levels():
    with pytest.raises(InvalidInputError):
        DiffuseBlock(2, 1, 2)


def test_intersection_pads_witness():
    pred = Intersection([DiffuseBlock(2, 2, 2), Ary(20)])
    labels = frozenset(range(30))
    assert pred.member(labels)
    w = pred.witness_subset(labels)
    assert len(w) >= 20
    assert all(p.member(w) for p in pred.parts)
    assert pred.min_arity() == 20
    assert not pred.member(frozenset(range(15)))


def test_diffuse_block_collection_matches_predicate():
    coll = diffuse_block_collection(2, 2, 2)
    pred = DiffuseBlock(2, 2, 2)
    for S in (frozenset(range(16)), frozenset(range(15)), frozenset({1, 2})):
        assert coll.closure_member(S) == pred.member(S)


def test_find_subtree_full_tree():
    tree = FiniteTree.full(3, 2)
    sub = find_subtree(tree, Ary(2), 2)
    assert [len(sub.level(m)) for m in range(3)] == [1, 2, 4]
    for v, cs in sub.children.items():
        if len(v) < 2:
            assert len(cs) == 2


def test_find_subtree_absent():
    tree = FiniteTree(3, 1, {Word(): frozenset({1}), Word((1,)): frozenset()})
    assert find_subtree(tree, Ary(2), 1) is None


def test_find_subtree_depth_guard_and_trivial():
    tree = FiniteTree.full(2, 1)
    with pytest.raises(InvalidInputError):
        find_subtree(tree, Ary(1), 3)
    sub = find_subtree(tree, Ary(2), 0)
    assert sub.depth == 0


def test_find_subtree_star_dp():
    star = compress_k(FiniteTree.full(2, 4), 2)
    sub = find_subtree(star, Ary(3), 2)
    assert [len(sub.level(m)) for m in range(3)] == [1, 3, 9]


def test_natural_measure_mass_law():
    tree = FiniteTree.full(3, 2)
    sub = find_subtree(tree, Ary(2), 2)
    masses = natural_measure(sub, 0.5, 1.0)
    assert masses[Word()] == 1.0
    level1 = [masses[w] for w in sub.level(1)]
    assert level1 == [0.5, 0.5]
    assert sum(masses[w] for w in sub.level(2)) == pytest.approx(1.0)


def test_natural_measure_rejects_ragged_tree():
    tree = FiniteTree(3, 1, {Word(): frozenset({0}), Word((0,)): frozenset()})
    with pytest.raises(InvalidInputError):
        natural_measure(tree, 0.5, 1.0)  # A=2 but root has one child
    with pytest.raises(InvalidInputError):
        natural_measure(tree, 0.5, 1.5)  # A not an integer


def test_predicted_presence_fields():
    res = predicted_presence(Binomial(4, 0.95), 3, 27, 1, mode="block")
    for key in ("tau", "g_iterate", "flagged", "mode", "k", "arity", "levels"):
        assert key in res
    assert 0.0 <= res["tau"] <= 1.0
    weak = predicted_presence(Binomial(4, 0.55), 3, 27, 1, mode="block")
    assert weak["tau"] < res["tau"]


def test_percolation_pipeline_frozen():
    es = percolation_pipeline(2, 2, 0.95, 3, 3, seed=0)
    assert es.root_word.text == "0-0-1"
    assert es.arity == 27
    assert es.levels() == 1
    assert es.beta == pytest.approx(0.010524339857755478, rel=1e-9)
    assert es.stats["block_constant"] == pytest.approx(0.23813862658978446,
                                                       rel=1e-12)
    leaves = es.leaf_words()
    assert len(leaves) == 27
    assert all(len(w) == 6 for w in leaves)
    assert len(set(leaves)) == 27
    # the witness children really contain a full two-level block
    pred = DiffuseBlock(2, 3, 2)
    root_children = es.subtree.children[Word()]
    assert len(root_children) == 27
    assert pred.member(root_children)


def test_percolation_pipeline_determinism():
    a = percolation_pipeline(2, 2, 0.95, 3, 3, seed=0)
    b = percolation_pipeline(2, 2, 0.95, 3, 3, seed=0)
    assert a.to_json() == b.to_json()


def test_percolation_pipeline_not_found_stats():
    with pytest.raises(NotFoundError) as ei:
        percolation_pipeline(2, 2, 0.60, 2, 4, seed=0, scan_budget=8)
    stats = ei.value.stats
    assert stats["candidates_tested"] <= 8
    assert "predicted" in stats
    assert stats["predicted"]["tau"] < 0.5


def test_general_pipeline_grid_frozen():
    ifs = percolation_ifs(3, 2)
    alpha = math.log(100) / math.log(81)
    es = general_pipeline(ifs, Binomial(9, 0.95), rho=3.0 ** -4, alpha=alpha,
                         c=0.05, seed=11)
    assert es.root_word.text == ""
    assert es.arity == 100
    assert es.levels() == 2
    assert len(es.leaf_words()) == 10_000
    assert es.beta == pytest.approx(7.274761123318391e-05, rel=1e-9)
    assert es.stats["predicted"]["tau"] > 0.999
    masses = es.measure()
    assert masses[Word()] == 1.0
    mc = es.measured_cloud()
    assert len(mc.points) == 10_000
    assert mc.masses.sum() == pytest.approx(1.0)


def test_general_pipeline_sierpinski_reduced():
    es = general_pipeline(sierpinski_ifs(), Binomial(3, 0.95), rho=1.0 / 64,
                         alpha=7.0 / 6, c=0.05, seed=3)
    assert es.arity == 128
    assert es.levels() == 2
    assert len(es.leaf_words()) == 16_384
    assert es.params["reduced_level"] == 2
    assert es.beta == pytest.approx(9.765625e-05, rel=1e-9)


def test_general_pipeline_rejects_non_integral_arity():
    ifs = percolation_ifs(3, 2)
    with pytest.raises(InvalidInputError):
        general_pipeline(ifs, Binomial(9, 0.95), rho=3.0 ** -4, alpha=1.05,
                        c=0.05, seed=0)


def test_section_reduction_composes_maps():
    base = sierpinski_ifs()
    reduced, law = section_reduction(base, Binomial(3, 0.9), 2)
    assert reduced.alphabet_size == 9
    words = law.words
    assert all(len(w) == 2 for w in words)
    x = np.array([[0.2, 0.6]])
    for m, w in zip(reduced.maps, words):
        assert np.allclose(m.apply(x), word_map(base, w).apply(x))
    assert law.mean() == pytest.approx(2.7 ** 2)
    assert law.alphabet_size == 9


def test_section_law_declines_closed_forms():
    _, law = section_reduction(sierpinski_ifs(), Binomial(3, 0.9), 2)
    with pytest.raises(CapabilityError):
        law.pgf(0.5)
    with pytest.raises(CapabilityError):
        law.thinned(0.5)
    doc = law.to_json()
    assert doc["kind"] == "section_law"
    assert len(doc["section"]) == 9


def test_leaf_words_render_inside_unit_square():
    es = percolation_pipeline(2, 2, 0.95, 3, 3, seed=0)
    cloud = es.cloud()
    assert cloud.points.min() >= -1e-9
    assert cloud.points.max() <= 1.0 + 1e-9
