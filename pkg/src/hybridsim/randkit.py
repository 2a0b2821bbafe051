"""k-wise independent hashing over GF(2^w) and seeded per-node sampling."""
from __future__ import annotations

import hashlib
import math
from typing import Sequence

import numpy as np

# Exponents of a fixed irreducible polynomial for each field width w: the
# lowest-weight one (trinomial if any exists, else pentanomial), smallest
# middle exponents first. Irreducibility is re-checked in the test suite.
IRREDUCIBLE: dict[int, tuple[int, ...]] = {
    1: (1, 0), 2: (2, 1, 0), 3: (3, 1, 0), 4: (4, 1, 0), 5: (5, 2, 0), 6: (6, 1, 0),
    7: (7, 1, 0), 8: (8, 4, 3, 1, 0), 9: (9, 1, 0), 10: (10, 3, 0), 11: (11, 2, 0),
    12: (12, 3, 0), 13: (13, 4, 3, 1, 0), 14: (14, 5, 0), 15: (15, 1, 0),
    16: (16, 5, 3, 1, 0), 17: (17, 3, 0), 18: (18, 3, 0), 19: (19, 5, 2, 1, 0),
    20: (20, 3, 0), 21: (21, 2, 0), 22: (22, 1, 0), 23: (23, 5, 0), 24: (24, 4, 3, 1, 0),
    25: (25, 3, 0), 26: (26, 4, 3, 1, 0), 27: (27, 5, 2, 1, 0), 28: (28, 1, 0),
    29: (29, 2, 0), 30: (30, 1, 0), 31: (31, 3, 0), 32: (32, 7, 3, 2, 0), 33: (33, 10, 0),
    34: (34, 7, 0), 35: (35, 2, 0), 36: (36, 9, 0), 37: (37, 6, 4, 1, 0),
    38: (38, 6, 5, 1, 0), 39: (39, 4, 0), 40: (40, 5, 4, 3, 0), 41: (41, 3, 0),
    42: (42, 7, 0), 43: (43, 6, 4, 3, 0), 44: (44, 5, 0), 45: (45, 4, 3, 1, 0),
    46: (46, 1, 0), 47: (47, 5, 0), 48: (48, 5, 3, 2, 0), 49: (49, 9, 0),
    50: (50, 4, 3, 2, 0), 51: (51, 6, 3, 1, 0), 52: (52, 3, 0), 53: (53, 6, 2, 1, 0),
    54: (54, 9, 0), 55: (55, 7, 0), 56: (56, 7, 4, 2, 0), 57: (57, 4, 0), 58: (58, 19, 0),
    59: (59, 7, 4, 2, 0), 60: (60, 1, 0), 61: (61, 5, 2, 1, 0), 62: (62, 29, 0),
    63: (63, 1, 0), 64: (64, 4, 3, 1, 0),
}


def ceil_log2(n: int) -> int:
    """Smallest t with 2**t >= n (0 for n <= 1)."""
    return 0 if n <= 1 else (int(n) - 1).bit_length()


def poly_int(w: int) -> int:
    return sum(1 << e for e in IRREDUCIBLE[w])


def _low(w: int) -> int:
    return poly_int(w) ^ (1 << w)


def gf_mul(x: int, y: int, w: int) -> int:
    """Product in GF(2^w): shift-and-add with reduction at every step."""
    mask = (1 << w) - 1
    low = _low(w)
    acc = 0
    while y:
        if y & 1:
            acc ^= x
        y >>= 1
        carry = (x >> (w - 1)) & 1
        x = (x << 1) & mask
        if carry:
            x ^= low
    return acc


def gf_mul_vec(x: np.ndarray, y: np.ndarray, w: int) -> np.ndarray:
    """Element-wise GF(2^w) product of two uint64 arrays."""
    x = x.astype(np.uint64, copy=True)
    y = y.astype(np.uint64, copy=True)
    mask = np.uint64((1 << w) - 1)
    low = np.uint64(_low(w))
    top = np.uint64(w - 1)
    one = np.uint64(1)
    acc = np.zeros(np.broadcast(x, y).shape, dtype=np.uint64)
    for _ in range(w):
        acc ^= np.where(y & one, x, np.uint64(0))
        y >>= one
        carry = (x >> top) & one
        x = (x << one) & mask
        x ^= np.where(carry.astype(bool), low, np.uint64(0))
    return acc


class SeedLengthError(ValueError):
    pass


class KeyOutOfRange(ValueError):
    pass


class HashFamilyMember:
    """h(x) = sum_j c_j x^j over GF(2^w), w = max(a, b); the input is zero
    extended to w bits and the output truncated to its low b bits."""

    def __init__(self, a: int, b: int, k: int, coeffs: Sequence[int]):
        if a < 1 or b < 1 or k < 1:
            raise ValueError("a, b, k must be positive")
        self.a, self.b, self.k = int(a), int(b), int(k)
        self.w = max(self.a, self.b)
        if self.w > 64:
            raise ValueError("field width above 64 bits is not supported")
        if len(coeffs) != k:
            raise SeedLengthError(f"need {k} coefficients, got {len(coeffs)}")
        limit = 1 << self.w
        if any(not (0 <= c < limit) for c in coeffs):
            raise SeedLengthError("coefficient wider than the field")
        self.coeffs = tuple(int(c) for c in coeffs)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, HashFamilyMember) and (self.a, self.b, self.coeffs) == (
            other.a,
            other.b,
            other.coeffs,
        )

    def __hash__(self) -> int:
        return hash((self.a, self.b, self.coeffs))

    @property
    def seed_bits(self) -> int:
        return self.k * self.w

    def __call__(self, key: int) -> int:
        return self.eval(key)

    def eval(self, key: int) -> int:
        if not (0 <= key < (1 << self.a)):
            raise KeyOutOfRange(f"key {key} needs more than {self.a} bits")
        acc = self.coeffs[-1]
        for c in reversed(self.coeffs[:-1]):
            acc = gf_mul(acc, key, self.w) ^ c
        return acc & ((1 << self.b) - 1)

    def eval_many(self, keys: np.ndarray | Sequence[int]) -> np.ndarray:
        x = np.asarray(keys, dtype=np.uint64)
        if x.size and self.a < 64 and int(x.max()) >> self.a:
            raise KeyOutOfRange(f"a key needs more than {self.a} bits")
        acc = np.full(x.shape, self.coeffs[-1], dtype=np.uint64)
        for c in reversed(self.coeffs[:-1]):
            acc = gf_mul_vec(acc, x, self.w) ^ np.uint64(c)
        if self.b < 64:
            acc &= np.uint64((1 << self.b) - 1)
        return acc

    def target(self, key: int, n: int) -> int:
        return 1 + self.eval(key) % n

    def targets(self, keys: np.ndarray | Sequence[int], n: int) -> np.ndarray:
        return (self.eval_many(keys) % np.uint64(n)).astype(np.int64) + 1

    def seed_words(self, word_bits: int) -> list[int]:
        """Split the seed into chunks of at most ``word_bits`` bits, for
        broadcasting it as tokens."""
        big = 0
        for c in self.coeffs:
            big = (big << self.w) | c
        total = self.seed_bits
        words = []
        for start in range(0, total, word_bits):
            width = min(word_bits, total - start)
            words.append((big >> (total - start - width)) & ((1 << width) - 1))
        return words


def family_new(a: int, b: int, k: int, seed_bits: Sequence[int] | str) -> HashFamilyMember:
    """Build a member from exactly k*max(a,b) seed bits (most significant first,
    coefficient c_0 first)."""
    bits = [int(c) for c in seed_bits]
    w = max(a, b)
    if len(bits) != k * w:
        raise SeedLengthError(f"need {k * w} seed bits, got {len(bits)}")
    coeffs = []
    for j in range(k):
        chunk = bits[j * w : (j + 1) * w]
        coeffs.append(int("".join(map(str, chunk)), 2) if chunk else 0)
    return HashFamilyMember(a, b, k, coeffs)


def random_member(a: int, b: int, k: int, rng: np.random.Generator) -> HashFamilyMember:
    w = max(a, b)
    coeffs = [int(rng.integers(0, 1 << 32)) << 32 | int(rng.integers(0, 1 << 32)) for _ in range(k)]
    coeffs = [c & ((1 << w) - 1) for c in coeffs]
    return HashFamilyMember(a, b, k, coeffs)


def member_from_words(a: int, b: int, k: int, words: Sequence[int], word_bits: int) -> HashFamilyMember:
    """Inverse of ``HashFamilyMember.seed_words``."""
    w = max(a, b)
    total = k * w
    big = 0
    consumed = 0
    for word in words:
        width = min(word_bits, total - consumed)
        big = (big << width) | word
        consumed += width
    if consumed != total:
        raise SeedLengthError(f"words carry {consumed} bits, need {total}")
    coeffs = [(big >> (total - (j + 1) * w)) & ((1 << w) - 1) for j in range(k)]
    return HashFamilyMember(a, b, k, coeffs)


def routing_independence(n: int, c: int = 2) -> int:
    """Independence degree used for intermediate selection."""
    return max(2, math.ceil(3 * c * ceil_log2(n)))


class LabelCodec:
    """Packs (tag, sender, receiver, index) into one integer key.

    Three ID-width fields plus the index field; the extra ID-width field holds
    a routing-instance tag so different instances hash independently."""

    def __init__(self, n: int, max_index: int):
        self.id_bits = max(1, ceil_log2(n + 1))
        self.index_bits = max(1, ceil_log2(max_index + 1))
        self.a = 3 * self.id_bits + self.index_bits

    def pack(self, s: int, r: int, i: int, tag: int = 0) -> int:
        L, I = self.id_bits, self.index_bits
        if i >> I:
            raise KeyOutOfRange(f"index {i} needs more than {I} bits")
        return (((tag % (1 << L)) << L | s) << L | r) << I | i

    def pack_many(self, s: np.ndarray, r: np.ndarray, i: np.ndarray, tag: int = 0) -> np.ndarray:
        L, I = np.uint64(self.id_bits), np.uint64(self.index_bits)
        t = np.uint64(tag % (1 << self.id_bits))
        s = np.asarray(s, dtype=np.uint64)
        r = np.asarray(r, dtype=np.uint64)
        i = np.asarray(i, dtype=np.uint64)
        return (((t << L | s) << L | r) << I) | i


def output_bits(n: int) -> int:
    """Hash output width for node targeting; keeps the mod-n bias under 1%."""
    return ceil_log2(n) + 7


def routing_member(n: int, max_index: int, rng: np.random.Generator, c: int = 2) -> tuple[HashFamilyMember, LabelCodec]:
    codec = LabelCodec(n, max_index)
    b = output_bits(n)
    return random_member(codec.a, b, routing_independence(n, c), rng), codec


def node_uniform(seed: int, v: int, stream: str = "") -> float:
    """Uniform [0,1) value computable by node v alone from (seed, ID)."""
    digest = hashlib.blake2b(f"{stream}:{seed}:{v}".encode(), digest_size=8).digest()
    return (int.from_bytes(digest, "big") >> 11) / float(1 << 53)


def sample_subset(n: int, p: float, seed: int, stream: str = "sample") -> np.ndarray:
    """Boolean membership per node (index v-1), each node deciding from
    (seed, ID) alone."""
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must lie in [0, 1]")
    if p >= 1.0:
        return np.ones(n, dtype=bool)
    if p <= 0.0:
        return np.zeros(n, dtype=bool)
    return np.array([node_uniform(seed, v, stream) < p for v in range(1, n + 1)], dtype=bool)


def stable_hash64(*parts: object) -> int:
    """Process-independent 64-bit hash of a tuple of printable parts."""
    text = "\x1f".join(map(str, parts)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "big")
