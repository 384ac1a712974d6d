"""Law-level checks: exact cover, grading, closure, thinning, width, seeds.

This file is self-contained and cheap enough to run standalone.
"""

import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2_contingency

from gwfract.symbolic import Word, WeightedAlphabet, rho_index, section_pi_rho, validate_section
from gwfract.branching import (Binomial, PerLetterBernoulli, labeled_seed,
                               parallel_map, sample_gw, thin)
from gwfract.fixpoint import ary_collection, generator_collection
from gwfract.geometry import PointCloud, width
from gwfract.experiments import exp_convergence_g_k


# ---------------------------------------------------------------------------
# sections partition the boundary exactly

ratio_lists = st.lists(st.floats(0.3, 0.45), min_size=2, max_size=3)


@settings(max_examples=60, deadline=None)
@given(ratio_lists, st.floats(0.4, 0.95))
def test_section_exact_cover(ratios, frac):
    weights = WeightedAlphabet(ratios)
    rho = weights.r_min * frac
    section = section_pi_rho(weights, rho)
    assert validate_section(len(ratios), section)


@settings(max_examples=40, deadline=None)
@given(ratio_lists, st.floats(0.4, 0.95), st.integers(1, 3))
def test_section_exact_cover_deeper_levels(ratios, frac, power):
    weights = WeightedAlphabet(ratios)
    rho = weights.r_min * frac
    section = section_pi_rho(weights, rho ** power)
    assert validate_section(len(ratios), section)
    # every word weight sits in the half-open window (rho^p * r_min, rho^p]
    for w in section.sorted_words():
        r_w = weights.weight(w)
        assert r_w <= rho ** power * (1 + 1e-12)
        assert r_w > rho ** power * weights.r_min * (1 - 1e-12)


# ---------------------------------------------------------------------------
# grading law: children of a graded word live in the shifted section

def test_next_element_equivalence_1000_tuples():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 1000:
        n_letters = int(rng.integers(2, 4))
        ratios = rng.uniform(0.3, 0.45, size=n_letters)
        weights = WeightedAlphabet(ratios)
        rho = weights.r_min * float(rng.uniform(0.4, 0.95))
        # graded words only: the index is undefined between rho and r_min
        pick = rng.random()
        if pick < 0.15:
            i = Word()
        else:
            power = 1 if pick < 0.7 else 2
            base = section_pi_rho(weights, rho ** power).sorted_words()
            i = base[int(rng.integers(0, len(base)))]
        m = int(rng.integers(1, 3))
        n, a = rho_index(weights, rho, i)

        full = section_pi_rho(weights, rho ** (n + m))
        stripped = {Word(w[len(i):]) for w in full.sorted_words()
                    if tuple(w[: len(i)]) == tuple(i)}
        shifted = section_pi_rho(weights, rho ** m / a, extended=True)
        assert stripped == set(shifted.sorted_words()), (ratios, rho, i, m)
        checked += 1
    assert checked == 1000


# ---------------------------------------------------------------------------
# monotone collections are upward closed

gen_families = st.lists(st.sets(st.integers(0, 7), min_size=1, max_size=3),
                        min_size=1, max_size=3)
subsets = st.sets(st.integers(0, 7), max_size=8)


@settings(max_examples=80, deadline=None)
@given(gen_families, subsets, subsets)
def test_generator_closure_laws(gens, S, T):
    coll = generator_collection([frozenset(g) for g in gens])
    member = coll.closure_member(frozenset(S))
    assert member == any(g <= S for g in gens)
    if member:
        assert coll.closure_member(frozenset(S | T))  # upward closure


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), subsets, subsets)
def test_ary_closure_laws(a, S, T):
    coll = ary_collection(a)
    assert coll.closure_member(frozenset(S)) == (len(S) >= a)
    if coll.closure_member(frozenset(S)) and S <= T:
        assert coll.closure_member(frozenset(T))


def test_no_monotonicity_violations_on_samples():
    coll = generator_collection([frozenset({0, 1}), frozenset({3})])
    assert coll.monotonicity_violations(6, samples=300, seed=4) == []
    assert ary_collection(3).monotonicity_violations(6, samples=300, seed=5) == []


# ---------------------------------------------------------------------------
# thinning composes: two rounds equal one round at the composed parameter

def test_thinning_composition_exact_parameters():
    for s1, s2 in ((0.3, 0.25), (0.0, 0.4), (0.6, 0.6)):
        s = 1.0 - (1.0 - s1) * (1.0 - s2)
        b = Binomial(9, 0.7)
        assert b.thinned(s1).thinned(s2).p == pytest.approx(b.thinned(s).p)
        pl = PerLetterBernoulli((0.9, 0.5, 0.7))
        two = pl.thinned(s1).thinned(s2).probs
        one = pl.thinned(s).probs
        assert np.allclose(two, one)


def test_thinning_composition_distribution():
    s1, s2 = 0.3, 0.25
    s = 1.0 - (1.0 - s1) * (1.0 - s2)
    base = frozenset(range(9))
    n = 3000
    sizes_two = np.zeros(10, dtype=int)
    sizes_one = np.zeros(10, dtype=int)
    for t in range(n):
        w = thin(thin(base, s1, labeled_seed(t, "r1")), s2, labeled_seed(t, "r2"))
        sizes_two[len(w)] += 1
        sizes_one[len(thin(base, s, labeled_seed(t, "one")))] += 1
    keep = (sizes_two + sizes_one) > 0
    table = np.stack([sizes_two[keep], sizes_one[keep]])
    _, pval, _, _ = chi2_contingency(table)
    assert pval > 1e-3, (pval, sizes_two.tolist(), sizes_one.tolist())


# ---------------------------------------------------------------------------
# width is an isometry invariant and scales linearly

point_lists = st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)),
                       min_size=3, max_size=10)


@settings(max_examples=80, deadline=None)
@given(point_lists, st.floats(0, 2 * math.pi), st.floats(-5, 5), st.floats(-5, 5))
def test_width_isometry_invariance(pts, angle, tx, ty):
    arr = np.array(pts, dtype=float)
    R = np.array([[math.cos(angle), -math.sin(angle)],
                  [math.sin(angle), math.cos(angle)]])
    moved = arr @ R.T + np.array([tx, ty])
    w0 = width(PointCloud(arr, 0.0)).w
    w1 = width(PointCloud(moved, 0.0)).w
    assert abs(w0 - w1) <= 1e-8 * max(1.0, w0)


@settings(max_examples=60, deadline=None)
@given(point_lists, st.floats(0.1, 3.0))
def test_width_scaling(pts, lam):
    arr = np.array(pts, dtype=float)
    w0 = width(PointCloud(arr, 0.0)).w
    w1 = width(PointCloud(lam * arr, 0.0)).w
    assert abs(w1 - lam * w0) <= 1e-8 * max(1.0, lam * w0)


# ---------------------------------------------------------------------------
# seeded runs do not depend on the thread count

def test_parallel_map_thread_count_invariance():
    fn = lambda k: math.sin(k) * k
    one = parallel_map(fn, range(40), threads=1)
    four = parallel_map(fn, range(40), threads=4)
    assert one == four


def test_sampling_deterministic_per_seed():
    a = sample_gw(Binomial(9, 0.6), 4, seed=123).tree
    b = sample_gw(Binomial(9, 0.6), 4, seed=123).tree
    assert a.children == b.children
    c = sample_gw(Binomial(9, 0.6), 4, seed=124).tree
    assert a.children != c.children


def test_experiment_payload_thread_invariance():
    kw = dict(b=3, d=2, p=0.9, c=2, k_range=(1, 2), trials=400, seed=3)
    one = exp_convergence_g_k(threads=1, **kw).to_json()
    two = exp_convergence_g_k(threads=2, **kw).to_json()
    assert one == two
    old = os.environ.get("GWFRACT_THREADS")
    os.environ["GWFRACT_THREADS"] = "3"
    try:
        env = exp_convergence_g_k(**kw).to_json()
    finally:
        if old is None:
            os.environ.pop("GWFRACT_THREADS", None)
        else:
            os.environ["GWFRACT_THREADS"] = old
    assert env == one
