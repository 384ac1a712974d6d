"""Offspring laws, Galton-Watson sampling, thinning, and extinction diagnostics.

Randomness is counter-based: every tree node owns a 64-bit stream key derived
from (seed, path), so regeneration is bit-identical and independent of
traversal order or thread count.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .symbolic import (
    DEFAULT_NODE_BUDGET,
    DegenerateSampleError,
    FiniteTree,
    InvalidInputError,
    ResourceLimitError,
    Word,
)

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_CHILD_SALT = 0xD1B54A32D192ED03
_THIN_SALT = 0x8CB92BA72F3D8DD7


def mix64(x):
    """SplitMix64 finalizer on a python int."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix64_vec(x):
    """SplitMix64 finalizer on a uint64 ndarray (bit-compatible with mix64)."""
    x = np.asarray(x, dtype=np.uint64).copy()
    x ^= x >> np.uint64(30)
    x *= np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(27)
    x *= np.uint64(0x94D049BB133111EB)
    x ^= x >> np.uint64(31)
    return x


def _unit(u):
    # top 53 bits -> [0,1)
    return (u >> np.uint64(11)) * (2.0 ** -53)


def _unit_scalar(u):
    return (u >> 11) * (2.0 ** -53)


def root_key(seed):
    return mix64(int(seed) & MASK64)


def child_key(parent_key, letter):
    return mix64(parent_key ^ (((letter + 1) * _CHILD_SALT) & MASK64))


def _child_keys_vec(parent_keys, letters):
    mults = (((letters.astype(np.uint64) + np.uint64(1)) * np.uint64(_CHILD_SALT)))
    return mix64_vec(parent_keys ^ mults)


def word_key(seed, word):
    k = root_key(seed)
    for a in word:
        k = child_key(k, a)
    return k


def stream_uniforms(key, count):
    """Deterministic uniforms u_0..u_{count-1} for one stream key."""
    offs = (np.arange(1, count + 1, dtype=np.uint64)) * np.uint64(_GAMMA)
    return _unit(mix64_vec(np.uint64(key) + offs))


def labeled_seed(seed, label):
    """Derive an independent 64-bit sub-seed from a master seed and a label."""
    h = hashlib.blake2b(("%s:%d" % (label, int(seed))).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def parallel_map(fn, items, threads=None):
    """Order-preserving map over a thread pool; result independent of pool size."""
    if threads is None:
        threads = int(os.environ.get("GWFRACT_THREADS", "0")) or (os.cpu_count() or 1)
    threads = max(1, int(threads))
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# offspring laws


class Binomial:
    """Each letter of the alphabet kept independently with probability p."""

    kind = "binomial"

    def __init__(self, n, p):
        n = int(n)
        p = float(p)
        if n < 1:
            raise InvalidInputError("alphabet size must be >= 1")
        if not (0.0 < p <= 1.0):
            raise InvalidInputError("p must lie in (0,1]; every letter needs positive probability")
        self.n = n
        self.p = p

    @property
    def alphabet_size(self):
        return self.n

    def mean(self):
        return self.n * self.p

    def letter_probs(self):
        return np.full(self.n, self.p)

    def pgf(self, s):
        return (1.0 - self.p + self.p * s) ** self.n

    def size_pmf(self):
        from scipy.stats import binom

        return binom.pmf(np.arange(self.n + 1), self.n, self.p)

    def thinned(self, s):
        return Binomial(self.n, self.p * (1.0 - s))

    def sample_matrix(self, keys):
        offs = np.arange(1, self.n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        u = _unit(mix64_vec(keys[:, None] + offs[None, :]))
        return u < self.p

    def to_json(self):
        return {"kind": "binomial", "n": self.n, "p": self.p}


class PerLetterBernoulli:
    """Letter i kept independently with its own probability p_i."""

    kind = "bernoulli"

    def __init__(self, probs):
        probs = tuple(float(p) for p in probs)
        if not probs:
            raise InvalidInputError("need at least one letter")
        for p in probs:
            if not (0.0 < p <= 1.0):
                raise InvalidInputError("every letter needs probability in (0,1]")
        self.probs = probs

    @property
    def alphabet_size(self):
        return len(self.probs)

    def mean(self):
        return float(sum(self.probs))

    def letter_probs(self):
        return np.array(self.probs)

    def pgf(self, s):
        out = 1.0
        for p in self.probs:
            out *= 1.0 - p + p * s
        return out

    def size_pmf(self):
        pmf = np.array([1.0])
        for p in self.probs:
            pmf = np.convolve(pmf, [1.0 - p, p])
        return pmf

    def thinned(self, s):
        return PerLetterBernoulli(tuple(p * (1.0 - s) for p in self.probs))

    def sample_matrix(self, keys):
        n = len(self.probs)
        offs = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        u = _unit(mix64_vec(keys[:, None] + offs[None, :]))
        return u < np.asarray(self.probs)[None, :]

    def to_json(self):
        return {"kind": "bernoulli", "p": list(self.probs)}


class ExplicitTable:
    """Explicit law over subsets of the alphabet, given as (subset, prob) rows."""

    kind = "table"
    MAX_ALPHABET = 20

    def __init__(self, alphabet_size, rows):
        alphabet_size = int(alphabet_size)
        if alphabet_size > self.MAX_ALPHABET:
            raise InvalidInputError(
                "table laws limited to alphabets of size <= %d" % self.MAX_ALPHABET
            )
        self.n = alphabet_size
        self.rows = tuple((frozenset(int(a) for a in sub), float(pr)) for sub, pr in rows)
        total = sum(pr for _, pr in self.rows)
        if abs(total - 1.0) > 1e-12:
            raise InvalidInputError("row probabilities must sum to 1, got %.17g" % total)
        for sub, pr in self.rows:
            if pr < 0:
                raise InvalidInputError("negative probability")
            for a in sub:
                if not (0 <= a < alphabet_size):
                    raise InvalidInputError("subset letter out of range")
        marg = [0.0] * alphabet_size
        for sub, pr in self.rows:
            for a in sub:
                marg[a] += pr
        if any(m <= 0.0 for m in marg):
            raise InvalidInputError("every letter needs positive probability of appearing")
        self._cum = np.cumsum([pr for _, pr in self.rows])
        self._masks = np.zeros((len(self.rows), alphabet_size), dtype=bool)
        for r, (sub, _) in enumerate(self.rows):
            for a in sub:
                self._masks[r, a] = True

    @property
    def alphabet_size(self):
        return self.n

    def mean(self):
        return float(sum(pr * len(sub) for sub, pr in self.rows))

    def letter_probs(self):
        out = np.zeros(self.n)
        for sub, pr in self.rows:
            for a in sub:
                out[a] += pr
        return out

    def pgf(self, s):
        return float(sum(pr * s ** len(sub) for sub, pr in self.rows))

    def size_pmf(self):
        pmf = np.zeros(self.n + 1)
        for sub, pr in self.rows:
            pmf[len(sub)] += pr
        return pmf

    def sample_matrix(self, keys):
        u = _unit(mix64_vec(keys + np.uint64(_GAMMA)))
        idx = np.minimum(np.searchsorted(self._cum, u, side="right"), len(self.rows) - 1)
        return self._masks[idx]

    def to_json(self):
        return {
            "kind": "table",
            "n": self.n,
            "rows": [{"subset": sorted(sub), "prob": pr} for sub, pr in self.rows],
        }


def offspring_from_json(doc):
    """Parse an offspring law from a JSON document or dict."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    kind = doc.get("kind")
    if kind == "binomial":
        return Binomial(doc["n"], doc["p"])
    if kind == "bernoulli":
        return PerLetterBernoulli(doc["p"])
    if kind == "table":
        rows = [(r["subset"], r["prob"]) for r in doc["rows"]]
        n = doc.get("n")
        if n is None:
            n = max((max(r["subset"]) + 1 for r in doc["rows"] if r["subset"]), default=1)
        return ExplicitTable(n, rows)
    raise InvalidInputError("unknown offspring kind %r" % (kind,))


# ---------------------------------------------------------------------------
# sampling


@dataclass
class GWSample:
    tree: FiniteTree
    seed: int
    params: object
    extinct_at: int | None = None

    def level_sizes(self):
        return self.tree.level_sizes()


class LazyGW:
    """On-demand Galton-Watson realization; a pure function of (params, seed).

    Child sets are memoized, so exploring the same node twice (in any order,
    from any thread count) yields identical results.
    """

    def __init__(self, offspring, seed, node_budget=DEFAULT_NODE_BUDGET):
        self.offspring = offspring
        self.seed = int(seed)
        self.node_budget = node_budget
        self._keys = {Word(): root_key(self.seed)}
        self._children = {}
        self.nodes_sampled = 0

    def key(self, word):
        word = Word(word)
        k = self._keys.get(word)
        if k is None:
            k = child_key(self.key(word.parent), word[-1])
            self._keys[word] = k
        return k

    def children(self, word):
        word = Word(word)
        cs = self._children.get(word)
        if cs is None:
            keep = self.offspring.sample_matrix(np.array([self.key(word)], dtype=np.uint64))[0]
            cs = frozenset(int(j) for j in np.nonzero(keep)[0])
            self._children[word] = cs
            self.nodes_sampled += 1
            if self.nodes_sampled > self.node_budget:
                raise ResourceLimitError("lazy sampling exceeded node budget", partial=self.nodes_sampled)
        return cs

    def expand(self, word, rel_depth):
        """Materialize the subtree below `word` to a relative depth (vectorized)."""
        word = Word(word)
        words = [Word()]
        keys = np.array([self.key(word)], dtype=np.uint64)
        children = {}
        for lvl in range(rel_depth):
            if not words:
                break
            keep = self.offspring.sample_matrix(keys)
            counts = keep.sum(axis=1)
            rows, cols = np.nonzero(keep)
            self.nodes_sampled += len(words)
            if self.nodes_sampled > self.node_budget:
                raise ResourceLimitError(
                    "lazy sampling exceeded node budget at relative depth %d" % lvl,
                    partial=lvl,
                )
            next_words = []
            pos = 0
            for i, w in enumerate(words):
                c = int(counts[i])
                letters = cols[pos:pos + c]
                children[w] = frozenset(int(j) for j in letters)
                next_words.extend(w.child(int(j)) for j in letters)
                pos += c
            keys = _child_keys_vec(np.repeat(keys, counts), cols)
            words = next_words
        for w in words:
            children[w] = frozenset()
        # nodes whose parents died never appear; fill the root if it vanished
        if Word() not in children:
            children[Word()] = frozenset()
        return FiniteTree(self.offspring.alphabet_size, rel_depth, children, validate=False)

    def level_codes(self, word, rel_depth):
        """Packed codes of the relative words alive at depth `rel_depth`.

        Codes are big-endian base-alphabet integers (first letter most
        significant), matching `block_encode`; the walk stays vectorized and
        never materializes intermediate words.
        """
        word = Word(word)
        keys = np.array([self.key(word)], dtype=np.uint64)
        codes = np.zeros(1, dtype=np.int64)
        for lvl in range(rel_depth):
            if len(codes) == 0:
                break
            keep = self.offspring.sample_matrix(keys)
            counts = keep.sum(axis=1)
            _, cols = np.nonzero(keep)
            self.nodes_sampled += len(codes)
            if self.nodes_sampled > self.node_budget:
                raise ResourceLimitError("lazy sampling exceeded node budget", partial=lvl)
            codes = np.repeat(codes, counts) * self.offspring.alphabet_size + cols
            keys = _child_keys_vec(np.repeat(keys, counts), cols)
        return codes

    def level_words(self, word, rel_depth):
        """Words (relative to `word`) alive at the given relative depth."""
        word = Word(word)
        words = [Word()]
        keys = np.array([self.key(word)], dtype=np.uint64)
        for lvl in range(rel_depth):
            if not words:
                return []
            keep = self.offspring.sample_matrix(keys)
            counts = keep.sum(axis=1)
            rows, cols = np.nonzero(keep)
            self.nodes_sampled += len(words)
            if self.nodes_sampled > self.node_budget:
                raise ResourceLimitError("lazy sampling exceeded node budget", partial=lvl)
            next_words = []
            pos = 0
            for i, w in enumerate(words):
                c = int(counts[i])
                next_words.extend(w.child(int(j)) for j in cols[pos:pos + c])
                pos += c
            keys = _child_keys_vec(np.repeat(keys, counts), cols)
            words = next_words
        return words


def sample_gw(offspring, depth, seed, node_budget=DEFAULT_NODE_BUDGET):
    """Sample a Galton-Watson tree to the given depth, deterministically in seed."""
    depth = int(depth)
    if depth < 1:
        raise InvalidInputError("depth must be >= 1")
    lazy = LazyGW(offspring, seed, node_budget=node_budget)
    tree = lazy.expand(Word(), depth)
    sample = GWSample(tree=tree, seed=int(seed), params=offspring)
    sample.extinct_at = tree.extinct_level()
    return sample


# ---------------------------------------------------------------------------
# thinning


def thin_uniforms(key, labels):
    """Per-label uniforms for a thinning stream (shared-randomness friendly)."""
    labels = np.asarray(sorted(labels), dtype=np.uint64)
    base = np.uint64(mix64(key ^ _THIN_SALT))
    offs = (labels + np.uint64(1)) * np.uint64(_GAMMA)
    return labels, _unit(mix64_vec(base + offs))


def thin(subset, s, seed):
    """Keep each element independently with probability 1-s."""
    s = float(s)
    if not (0.0 <= s <= 1.0):
        raise InvalidInputError("thinning parameter must lie in [0,1]")
    subset = sorted(int(a) for a in subset)
    if not subset:
        return frozenset()
    labels, u = thin_uniforms(root_key(seed), subset)
    return frozenset(int(a) for a, ua in zip(labels, u) if ua >= s)


# ---------------------------------------------------------------------------
# extinction and diagnostics


def pgf(offspring, s):
    return offspring.pgf(float(s))


def extinction_prob(offspring, tol=1e-12, max_iter=10_000_000):
    """Smallest fixed point of the offspring pgf, by monotone iteration from 0."""
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    pmf = offspring.size_pmf()
    if len(pmf) > 1 and abs(pmf[1] - 1.0) < 1e-15:
        return 0.0  # one child always: the line never dies
    if offspring.mean() <= 1.0:
        return 1.0
    q = 0.0
    for _ in range(max_iter):
        q_next = offspring.pgf(q)
        if abs(q_next - q) < tol:
            return q_next
        q = q_next
    return q


def kesten_stigum_series(sample, m):
    """Ratios Z_k / m^k for a sampled tree; diagnostic only."""
    if m <= 1.0:
        raise InvalidInputError("requires a supercritical mean m > 1")
    return [z / m ** k for k, z in enumerate(sample.level_sizes())]


def descendant_property_frequency(
    offspring, prop, level, trials, seed, retry_cap=100_000
):
    """Fraction of level-`level` nodes whose descendant tree satisfies prop,
    pooled over nonextinct samples (rejection sampling)."""
    need_depth = level + prop.depth
    hits = 0
    total = 0
    used = 0
    attempts = 0
    t = 0
    while used < trials and attempts < retry_cap:
        attempts += 1
        s = sample_gw(offspring, need_depth, labeled_seed(seed, "dpf%d" % t))
        t += 1
        if s.extinct_at is not None:
            continue
        used += 1
        for v in s.tree.level(level):
            total += 1
            if prop(s.tree.subtree_at(v, prop.depth)):
                hits += 1
    if total == 0:
        raise DegenerateSampleError(
            "no surviving samples with occupied level %d after %d attempts" % (level, attempts)
        )
    return {
        "frequency": hits / total,
        "nodes_scanned": total,
        "trials_used": used,
        "attempts": attempts,
    }


def _population_step(offspring, z, rng):
    """One generation of total population counts, vectorized over trials."""
    if isinstance(offspring, Binomial):
        return rng.binomial(z * offspring.n, offspring.p)
    if isinstance(offspring, PerLetterBernoulli):
        out = np.zeros_like(z)
        for p in offspring.probs:
            out += rng.binomial(z, p)
        return out
    if isinstance(offspring, ExplicitTable):
        out = np.zeros_like(z)
        remaining = z.copy()
        cum = 1.0
        for (sub, pr) in offspring.rows[:-1]:
            take = rng.binomial(remaining, min(1.0, pr / cum))
            out += take * len(sub)
            remaining -= take
            cum -= pr
        out += remaining * len(offspring.rows[-1][0])
        return out
    raise InvalidInputError("unsupported offspring type for population simulation")


def mc_extinction_frequency(offspring, depth, trials, seed, cap=100_000_000):
    """Monte-Carlo frequency of dying out by `depth`, via exact population counts.

    Populations above `cap` individuals are frozen as survivors; the neglected
    extinction mass is below q^cap, far under any tolerance in use.
    """
    rng = np.random.Generator(np.random.Philox(key=labeled_seed(seed, "mcext")))
    z = np.ones(trials, dtype=np.int64)
    for _ in range(depth):
        active = (z > 0) & (z < cap)
        if not active.any():
            break
        znew = _population_step(offspring, z[active], rng)
        z[active] = np.minimum(znew, cap)
    freq = float(np.mean(z == 0))
    se = math.sqrt(max(freq * (1.0 - freq), 1e-300) / trials)
    return {"frequency": freq, "se": se, "trials": trials, "depth": depth}
