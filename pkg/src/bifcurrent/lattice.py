"""Arithmetic once-punctured-torus lattice: orbit balls, closed geodesics.

This module works with a discrete free group of hyperbolic isometries given
by two generator matrices, concretely the commutator subgroup of the modular
group acting on the upper half plane.  It provides

* ``modular_torus`` -- the standard once-punctured hyperbolic torus,
* ``reduce_point`` -- fold a point into the Dirichlet domain around ``i``
  while recording the group word that undoes the folding,
* ``enumerate_ball`` -- all orbit points of ``i`` within a given hyperbolic
  radius, with words, displacements and integer matrices (disk-cached),
* ``enumerate_geodesics`` -- one representative word per conjugacy class of
  closed geodesics up to a length bound, via the positive ``R``/``L``
  continued-fraction coding of hyperbolic matrices in the modular group,
* ``sample_geodesic_classes`` -- uniform random conjugacy classes below a
  length bound without full enumeration (rejection sampling on the coding),
* ``sample_ball_uniform`` -- uniform draws from an enumerated orbit ball,
* ``matrix_to_word`` -- invert the evaluation map on integer matrices.

Words are strings over the four letters ``a``, ``A``, ``b``, ``B`` where the
capital letter is the inverse of the lowercase one.  The fixed letter order
used for tie-breaking and lexicographic comparisons everywhere in this
package is ``a < A < b < B`` (codes 0..3).
"""

from __future__ import annotations

import hashlib
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    InvalidPointError,
    ReductionFailureError,
    ResourceLimitError,
)
from .moebius import (
    BASE_POINT,
    MoebiusElement,
    distance_h2,
    ensure_h2_point,
)

__all__ = [
    "FuchsianSurface",
    "BallTable",
    "BallEntry",
    "GeodesicClass",
    "ReducedPoint",
    "modular_torus",
    "reduce_point",
    "reduction_candidates",
    "enumerate_ball",
    "enumerate_geodesics",
    "sample_geodesic_classes",
    "sample_ball_uniform",
    "sample_ball_indices",
    "matrix_to_word",
    "orbit_growth_ratio",
    "write_ball_csv",
    "free_reduce",
    "word_inverse",
    "canonical_class_word",
    "word_codes",
    "codes_to_word",
]

LETTER_CHARS = "aAbB"
_CHAR_TO_CODE = {c: k for k, c in enumerate(LETTER_CHARS)}
_DEFAULT_BALL_CAP = 14.0
_DEFAULT_GEODESIC_CAP = 12.5
_CACHE_ENV = "BIFCURRENT_CACHE_DIR"
_CACHE_VERSION = 1
_CHUNK = 1 << 20


# --------------------------------------------------------------------------
# words


def word_codes(word: str) -> np.ndarray:
    """Translate a word string into int8 letter codes (a=0, A=1, b=2, B=3)."""
    try:
        return np.fromiter((_CHAR_TO_CODE[c] for c in word), dtype=np.int8, count=len(word))
    except KeyError as exc:  # pragma: no cover - defensive
        raise ValueError(f"invalid letter {exc.args[0]!r} in word {word!r}") from None


def codes_to_word(codes) -> str:
    return "".join(LETTER_CHARS[int(c)] for c in codes)


def _free_reduce_codes(codes) -> list:
    out: list = []
    for c in codes:
        c = int(c)
        if out and out[-1] == c ^ 1:
            out.pop()
        else:
            out.append(c)
    return out


def free_reduce(word: str) -> str:
    """Cancel adjacent inverse pairs until the word is freely reduced."""
    return codes_to_word(_free_reduce_codes(word_codes(word)))


def word_inverse(word: str) -> str:
    return codes_to_word([int(c) ^ 1 for c in reversed(word_codes(word))])


def _cyclic_reduce_codes(codes: list) -> list:
    codes = _free_reduce_codes(codes)
    while len(codes) >= 2 and codes[0] == codes[-1] ^ 1:
        codes = codes[1:-1]
    return codes


def _least_rotation(seq: tuple) -> tuple:
    if not seq:
        return seq
    doubled = seq + seq
    n = len(seq)
    return min(doubled[i : i + n] for i in range(n))


def canonical_class_word(word: str) -> str:
    """Conjugacy-invariant normal form: cyclic reduction, then the
    lexicographically least rotation in the fixed letter order."""
    codes = _cyclic_reduce_codes(list(word_codes(word)))
    return codes_to_word(_least_rotation(tuple(codes)))


def _pair_tuple_period(exps: tuple) -> int:
    """Smallest period (in pairs) of a block-exponent tuple (a1,b1,...)."""
    k = len(exps) // 2
    for q in range(1, k + 1):
        if k % q:
            continue
        if exps == exps[2 * q :] + exps[: 2 * q]:
            return q
    return k


def _least_pair_rotation(exps: tuple) -> tuple:
    """Least rotation of a block-exponent tuple, rotating by whole (a,b)
    pairs so that blocks keep their R/L roles."""
    k = len(exps) // 2
    return min(exps[2 * i :] + exps[: 2 * i] for i in range(k))


# --------------------------------------------------------------------------
# surface


def _mat_mul_int(x, y):
    (a, b), (c, d) = x
    (p, q), (r, s) = y
    return ((a * p + b * r, a * q + b * s), (c * p + d * r, c * q + d * s))


def _mat_inv_int(x):
    (a, b), (c, d) = x
    return ((d, -b), (-c, a))


def _frob2_int(x) -> int:
    (a, b), (c, d) = x
    return a * a + b * b + c * c + d * d


_ID_INT = ((1, 0), (0, 1))


@dataclass(frozen=True)
class FuchsianSurface:
    """A hyperbolic surface presented by integer generator matrices of a
    discrete free group, with its area and shortest-geodesic length."""

    name: str
    generator_names: tuple
    generator_ints: tuple  # one ((a,b),(c,d)) int matrix per generator
    area: float
    systole: float

    @property
    def letters(self) -> tuple:
        """Exact matrices in code order: gen0, gen0^-1, gen1, gen1^-1, ..."""
        out = []
        for m in self.generator_ints:
            out.append(m)
            out.append(_mat_inv_int(m))
        return tuple(out)

    @property
    def letter_elements(self) -> tuple:
        return tuple(
            MoebiusElement(m[0][0], m[0][1], m[1][0], m[1][1]) for m in self.letters
        )

    @property
    def letter_arrays(self) -> np.ndarray:
        return np.array(self.letters, dtype=np.int64)

    @property
    def max_letter_displacement(self) -> float:
        f = max(_frob2_int(m) for m in self.letters)
        return math.acosh(f / 2.0)

    def exact_word_matrix(self, word: str):
        """Evaluate a word to an exact integer matrix (arbitrary precision)."""
        mats = self.letters
        out = _ID_INT
        for c in word_codes(word):
            out = _mat_mul_int(out, mats[int(c)])
        return out

    def element(self, word: str) -> MoebiusElement:
        (a, b), (c, d) = self.exact_word_matrix(word)
        return MoebiusElement(a, b, c, d)

    def cache_key(self) -> str:
        blob = repr((self.name, self.generator_ints)).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def modular_torus() -> FuchsianSurface:
    """The once-punctured hyperbolic torus uniformized by the commutator
    subgroup of the modular group: free on two generators with traces
    (3, 3, 6), commutator trace -2, area 2*pi, and all four generator
    letters displacing the base point ``i`` by exactly the systole."""
    a = ((2, 1), (1, 1))
    b = ((1, 1), (1, 2))
    return FuchsianSurface(
        name="modular-torus",
        generator_names=("a", "b"),
        generator_ints=(a, b),
        area=2.0 * math.pi,
        systole=2.0 * math.acosh(1.5),
    )


# --------------------------------------------------------------------------
# point reduction


@dataclass(frozen=True)
class ReducedPoint:
    """A point folded into the Dirichlet domain around ``i`` together with
    the word ``w`` such that ``element(w) . point`` is the original input."""

    point: complex
    word: str


_CANDIDATE_RADIUS = 4.5
_candidate_memo: dict = {}


def _descent_candidates(surface: FuchsianSurface, radius: float):
    """Non-identity elements with displacement <= radius, as (words, inverse
    matrices).  Greedy descent over this set reaches the true Dirichlet
    domain: the set contains every wall-pairing element (generator letters,
    their two-letter products and the parabolic commutator conjugates that
    bound the cusp horns), which the tests validate against a radius-9 ball.
    """
    key = (surface.cache_key(), radius)
    hit = _candidate_memo.get(key)
    if hit is not None:
        return hit
    table = enumerate_ball(surface, radius)
    words = [table.word(i) for i in range(1, len(table))]
    mats = table.matrices[1:]
    invs = np.empty((len(words), 2, 2), dtype=np.complex128)
    invs[:, 0, 0] = mats[:, 1, 1]
    invs[:, 0, 1] = -mats[:, 0, 1]
    invs[:, 1, 0] = -mats[:, 1, 0]
    invs[:, 1, 1] = mats[:, 0, 0]
    _candidate_memo[key] = (words, invs)
    return words, invs


def reduction_candidates(surface: FuchsianSurface):
    """The candidate set ``reduce_point`` descends over, as ``(words, mats)``.

    ``words`` is a tuple of the non-identity orbit words with displacement
    <= 4.5 in table order (displacement, then length, then letters) and
    ``mats`` the matching exact int64 matrices, shape (len(words), 2, 2).
    Samplers that fold a moving point into the fundamental domain reuse this
    set so their wall bookkeeping agrees with ``reduce_point``.
    """
    table = enumerate_ball(surface, _CANDIDATE_RADIUS)
    words = tuple(table.word(i) for i in range(1, len(table)))
    return words, table.matrices[1:].copy()


def reduce_point(surface: FuchsianSurface, z: complex, *, tol: float = 1e-9,
                 max_steps: int = 10000) -> ReducedPoint:
    """Fold ``z`` into the Dirichlet domain around the base point ``i``.

    Greedy descent: repeatedly replace the point by its image under the
    inverse of the orbit candidate that brings it closest to ``i``, until no
    candidate strictly improves.  The returned point ``p`` satisfies
    d(i, p) <= d(i, g.p) + tol for every generator letter g (and in fact for
    every element of displacement <= 4.5), and ``element(word).p`` recovers
    ``z``.  Ties are broken by the fixed table order (displacement, then
    word length, then letters), making the result deterministic.
    """
    cur = ensure_h2_point(z)
    words, invs = _descent_candidates(surface, _CANDIDATE_RADIUS)
    parts: list = []
    d_cur = distance_h2(BASE_POINT, cur)
    for _ in range(max_steps):
        w = (invs[:, 0, 0] * cur + invs[:, 0, 1]) / (invs[:, 1, 0] * cur + invs[:, 1, 1])
        with np.errstate(invalid="ignore"):
            d = 2.0 * np.arcsinh(np.abs(w - BASE_POINT) / (2.0 * np.sqrt(w.imag)))
        k = int(np.nanargmin(d))
        if not (d[k] < d_cur - 1e-12):
            word = codes_to_word(_free_reduce_codes(
                [c for part in parts for c in word_codes(part)]))
            return ReducedPoint(point=cur, word=word)
        parts.append(words[k])
        cur = complex(w[k])
        d_cur = float(d[k])
    raise ReductionFailureError(
        f"point reduction did not converge within {max_steps} steps"
    )


# --------------------------------------------------------------------------
# orbit ball enumeration


@dataclass(frozen=True)
class BallEntry:
    word: str
    displacement: float
    matrix: np.ndarray  # (2,2) int64

    def element(self) -> MoebiusElement:
        m = self.matrix
        return MoebiusElement(int(m[0, 0]), int(m[0, 1]), int(m[1, 0]), int(m[1, 1]))


class BallTable:
    """Array-backed table of all orbit points of ``i`` within radius r.

    Rows are sorted by (displacement, word length, word letters) and carry
    the letter codes, word length, displacement and exact integer matrix of
    each group element.  Indexing yields :class:`BallEntry` objects.
    """

    def __init__(self, letters: np.ndarray, lengths: np.ndarray,
                 displacements: np.ndarray, matrices: np.ndarray, radius: float):
        self.letters = letters
        self.lengths = lengths
        self.displacements = displacements
        self.matrices = matrices
        self.radius = float(radius)

    def __len__(self) -> int:
        return int(self.lengths.shape[0])

    def word(self, i: int) -> str:
        n = int(self.lengths[i])
        return codes_to_word(self.letters[i, :n])

    def words(self) -> list:
        return [self.word(i) for i in range(len(self))]

    def __getitem__(self, i: int) -> BallEntry:
        return BallEntry(self.word(i), float(self.displacements[i]),
                         self.matrices[i].copy())

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def trace_sq(self) -> np.ndarray:
        tr = self.matrices[:, 0, 0] + self.matrices[:, 1, 1]
        return (tr * tr).astype(np.float64)

    def restricted(self, r: float) -> "BallTable":
        """Sub-table of entries within the smaller radius r (same order)."""
        frob = _frob_of(self.matrices)
        keep = frob <= _frob_threshold(r)
        lengths = self.lengths[keep]
        width = int(lengths.max()) if lengths.size else 0
        return BallTable(self.letters[keep][:, :width], lengths,
                         self.displacements[keep], self.matrices[keep], r)


def _frob_threshold(r: float) -> float:
    return 2.0 * math.cosh(r)


def _frob_of(mats: np.ndarray) -> np.ndarray:
    m = mats.astype(np.float64)
    return np.einsum("nij,nij->n", m, m)


def _ball_bfs(surface: FuchsianSurface, r: float):
    """Breadth-first search over freely reduced words, pruned at radius
    r + 2 * (max letter displacement); returns per-level parent/letter
    chains plus the emitted rows with displacement <= r."""
    letters = surface.letter_arrays  # (2g*2, 2, 2) int64
    n_letters = letters.shape[0]
    emit_thresh = _frob_threshold(r)
    margin_thresh = _frob_threshold(r + 2.0 * surface.max_letter_displacement)

    allowed = np.array(
        [[j for j in range(n_letters) if j != (i ^ 1)] for i in range(n_letters)],
        dtype=np.int64,
    )

    level_letters: list = []
    level_parents: list = []
    emitted: list = []  # (level_index, node_idx array, mats, frob)

    cur_mats = letters.copy()
    cur_letter = np.arange(n_letters, dtype=np.int8)
    cur_parent = np.full(n_letters, -1, dtype=np.int64)
    frob = _frob_of(cur_mats)
    keep = frob <= margin_thresh
    cur_mats, cur_letter, cur_parent = cur_mats[keep], cur_letter[keep], cur_parent[keep]
    frob = frob[keep]

    level = 0
    while cur_mats.shape[0]:
        level_letters.append(cur_letter)
        level_parents.append(cur_parent)
        hit = frob <= emit_thresh
        if hit.any():
            idx = np.flatnonzero(hit)
            emitted.append((level, idx, cur_mats[idx], frob[idx]))

        nxt_mats, nxt_letter, nxt_parent, nxt_frob = [], [], [], []
        n = cur_mats.shape[0]
        for lo in range(0, n, _CHUNK):
            hi = min(lo + _CHUNK, n)
            blk = cur_mats[lo:hi]
            blk_letter = cur_letter[lo:hi]
            child_letter = allowed[blk_letter.astype(np.int64)].reshape(-1)
            rep = np.repeat(blk, n_letters - 1, axis=0)
            child = rep @ letters[child_letter]
            cf = _frob_of(child)
            ok = cf <= margin_thresh
            nxt_mats.append(child[ok])
            nxt_letter.append(child_letter[ok].astype(np.int8))
            nxt_parent.append(np.repeat(np.arange(lo, hi, dtype=np.int64),
                                        n_letters - 1)[ok])
            nxt_frob.append(cf[ok])
        cur_mats = np.concatenate(nxt_mats) if nxt_mats else np.empty((0, 2, 2), np.int64)
        cur_letter = np.concatenate(nxt_letter) if nxt_letter else np.empty(0, np.int8)
        cur_parent = np.concatenate(nxt_parent) if nxt_parent else np.empty(0, np.int64)
        frob = np.concatenate(nxt_frob) if nxt_frob else np.empty(0, np.float64)
        level += 1

    return level_letters, level_parents, emitted


def _assemble_table(surface: FuchsianSurface, r: float) -> BallTable:
    level_letters, level_parents, emitted = _ball_bfs(surface, r)
    max_len = 1 + max((lev for lev, *_ in emitted), default=-1)

    rows_letters = [np.full((1, max_len), -1, dtype=np.int8)]
    rows_lengths = [np.zeros(1, dtype=np.int16)]
    rows_mats = [np.eye(2, dtype=np.int64)[None]]
    rows_frob = [np.array([2.0])]
    for lev, idx, mats, frob in emitted:
        m = idx.shape[0]
        letters_arr = np.full((m, max_len), -1, dtype=np.int8)
        ptr = idx.copy()
        for depth in range(lev, -1, -1):
            letters_arr[:, depth] = level_letters[depth][ptr]
            ptr = level_parents[depth][ptr]
        rows_letters.append(letters_arr)
        rows_lengths.append(np.full(m, lev + 1, dtype=np.int16))
        rows_mats.append(mats)
        rows_frob.append(frob)

    letters_arr = np.concatenate(rows_letters)
    lengths = np.concatenate(rows_lengths)
    mats = np.concatenate(rows_mats)
    frob = np.concatenate(rows_frob)
    disp = np.arccosh(np.maximum(frob, 2.0) / 2.0)

    sort_keys = [letters_arr[:, k] for k in range(letters_arr.shape[1] - 1, -1, -1)]
    order = np.lexsort((*sort_keys, lengths, disp))
    letters_arr, lengths, mats, disp = (
        letters_arr[order], lengths[order], mats[order], disp[order])

    # safety dedup on the exact matrix up to overall sign (never triggers for
    # a free group, but the table contract promises distinct group elements)
    flat = mats.reshape(-1, 4).copy()
    for col in range(4):
        undecided = np.all(flat[:, :col] == 0, axis=1) if col else np.ones(len(flat), bool)
        flip = undecided & (flat[:, col] < 0)
        flat[flip] *= -1
    _, first = np.unique(flat, axis=0, return_index=True)
    keep = np.sort(first)
    return BallTable(letters_arr[keep], lengths[keep], disp[keep], mats[keep], r)


def _cache_dir() -> Path:
    root = os.environ.get(_CACHE_ENV)
    path = Path(root) if root else Path.home() / ".cache" / "bifcurrent"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cache_path(surface: FuchsianSurface, r: float) -> Path:
    return _cache_dir() / f"ball_{surface.cache_key()}_r{r:.6f}.npz"


def _save_table(path: Path, table: BallTable) -> None:
    tmp_fd, tmp_name = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
    try:
        with os.fdopen(tmp_fd, "wb") as fh:
            np.savez_compressed(
                fh,
                version=np.int64(_CACHE_VERSION),
                radius=np.float64(table.radius),
                letters=table.letters,
                lengths=table.lengths,
                displacements=table.displacements,
                matrices=table.matrices,
            )
        os.replace(tmp_name, path)  # atomic publish
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _load_table(path: Path) -> BallTable:
    with np.load(path) as data:
        if int(data["version"]) != _CACHE_VERSION:
            raise ValueError("cache version mismatch")
        return BallTable(
            data["letters"], data["lengths"], data["displacements"],
            data["matrices"], float(data["radius"]),
        )


def _find_cached(surface: FuchsianSurface, r: float):
    prefix = f"ball_{surface.cache_key()}_r"
    best = None
    for p in _cache_dir().glob(prefix + "*.npz"):
        try:
            r_file = float(p.name[len(prefix):-4])
        except ValueError:
            continue
        if r_file >= r - 1e-12 and (best is None or r_file < best[0]):
            best = (r_file, p)
    return best


def enumerate_ball(surface: FuchsianSurface, r: float, *,
                   cap: float = _DEFAULT_BALL_CAP, use_cache: bool = True) -> BallTable:
    """All group elements moving the base point ``i`` by at most ``r``.

    The table is complete and sorted by (displacement, word length, word).
    Radii above ``cap`` raise :class:`ResourceLimitError` because the element
    count grows like ``exp(r)``.  Results are cached on disk (directory from
    the ``BIFCURRENT_CACHE_DIR`` environment variable, defaulting to
    ``~/.cache/bifcurrent``); a cached table for a larger radius is reused by
    restriction.  Cache writes are atomic (write-then-rename).
    """
    if not (r >= 0.0) or math.isnan(r):
        raise ValueError(f"ball radius must be nonnegative, got {r!r}")
    if r > cap:
        raise ResourceLimitError(
            f"ball radius {r} exceeds cap {cap}; raise cap explicitly if the "
            f"~exp(r) memory and time cost is acceptable")
    if use_cache:
        found = _find_cached(surface, r)
        if found is not None:
            try:
                table = _load_table(found[1])
                return table if abs(table.radius - r) < 1e-12 else table.restricted(r)
            except Exception:
                pass  # unreadable or stale cache entry: recompute and rewrite
    table = _assemble_table(surface, r)
    if use_cache:
        try:
            _save_table(_cache_path(surface, r), table)
        except OSError:
            pass  # caching is best-effort
    return table


def sample_ball_indices(surface: FuchsianSurface, r: float, n: int, rng, *,
                        cap: float = _DEFAULT_BALL_CAP):
    """Uniform row indices into ``enumerate_ball(surface, r)``; returns
    ``(table, indices)``."""
    rng = np.random.default_rng(rng)
    table = enumerate_ball(surface, r, cap=cap)
    return table, rng.integers(0, len(table), size=int(n))


def sample_ball_uniform(surface: FuchsianSurface, r: float, n: int, rng, *,
                        cap: float = _DEFAULT_BALL_CAP) -> list:
    """n independent uniform draws from the orbit ball of radius r."""
    table, idx = sample_ball_indices(surface, r, n, rng, cap=cap)
    return [table[int(i)] for i in idx]


def orbit_growth_ratio(surface: FuchsianSurface, r: float, *,
                       normalization: str = "exponential",
                       cap: float = _DEFAULT_BALL_CAP) -> float:
    """Orbit-count growth diagnostic for the ball of radius r.

    ``normalization="exponential"``: count * area(X) / exp(r).
    ``normalization="area"``: count * area(X) / (2*pi*(cosh r - 1)), the
    hyperbolic ball area; this ratio converges to 1.
    """
    count = len(enumerate_ball(surface, r, cap=cap))
    if normalization == "exponential":
        return count * surface.area / math.exp(r)
    if normalization == "area":
        return count * surface.area / (2.0 * math.pi * (math.cosh(r) - 1.0))
    raise ValueError(f"unknown normalization {normalization!r}")


def write_ball_csv(table: BallTable, fh) -> None:
    """Write an enumerated ball as CSV: word, displacement, trace squared,
    and translation length (blank unless the element is loxodromic)."""
    close = False
    if isinstance(fh, (str, Path)):
        fh = open(fh, "w", encoding="utf-8")
        close = True
    try:
        fh.write("word,displacement,trace_sq,translation_length\n")
        tr2 = table.trace_sq
        for i in range(len(table)):
            t2 = float(tr2[i])
            if t2 > 4.0 + 1e-12:
                ell = f"{2.0 * math.acosh(math.sqrt(t2) / 2.0):.17g}"
            else:
                ell = ""
            fh.write(f"{table.word(i)},{table.displacements[i]:.17g},"
                     f"{t2:.17g},{ell}\n")
    finally:
        if close:
            fh.close()


# --------------------------------------------------------------------------
# matrices back to words


def _as_int_matrix(mat):
    if isinstance(mat, MoebiusElement):
        raise TypeError("matrix_to_word expects an exact integer matrix")
    arr = np.asarray(mat)
    if arr.shape != (2, 2):
        raise ValueError("expected a 2x2 matrix")
    ints = ((int(round(float(arr[0, 0]))), int(round(float(arr[0, 1])))),
            (int(round(float(arr[1, 0]))), int(round(float(arr[1, 1])))))
    if np.issubdtype(arr.dtype, np.floating):
        if not np.allclose(arr, np.array(ints, dtype=float), atol=1e-9):
            raise ValueError("matrix entries are not integers")
    det = ints[0][0] * ints[1][1] - ints[0][1] * ints[1][0]
    if det != 1:
        raise ValueError(f"matrix must have determinant 1, got {det}")
    return ints


def matrix_to_word(surface: FuchsianSurface, mat) -> str:
    """Recover the unique freely reduced word evaluating to ``+-mat``.

    Uses greedy left-peeling: repeatedly strip the letter whose removal
    decreases the integer Frobenius norm, with a two-letter lookahead as a
    fallback.  The result is verified against the input by exact
    multiplication; failure raises :class:`ReductionFailureError`.
    """
    target = _as_int_matrix(mat)
    letters = surface.letters
    inv_letters = [_mat_inv_int(m) for m in letters]
    cur = target
    fr = _frob2_int(cur)
    codes: list = []
    while fr > 2:
        best_code, best_mat, best_fr = -1, None, fr
        for code, linv in enumerate(inv_letters):
            cand = _mat_mul_int(linv, cur)
            f2 = _frob2_int(cand)
            if f2 < best_fr:
                best_code, best_mat, best_fr = code, cand, f2
        if best_code >= 0:
            codes.append(best_code)
            cur, fr = best_mat, best_fr
            continue
        found = False
        for c1, l1 in enumerate(inv_letters):
            m1 = _mat_mul_int(l1, cur)
            for c2, l2 in enumerate(inv_letters):
                if c2 == c1 ^ 1:
                    continue
                m2 = _mat_mul_int(l2, m1)
                f2 = _frob2_int(m2)
                if f2 < fr:
                    codes.extend((c1, c2))
                    cur, fr = m2, f2
                    found = True
                    break
            if found:
                break
        if not found:
            raise ReductionFailureError(
                "greedy peeling stalled; matrix is not in the group")
    if cur not in (_ID_INT, ((-1, 0), (0, -1))):
        raise ReductionFailureError("peeling terminated off the identity")
    codes = _free_reduce_codes(codes)
    word = codes_to_word(codes)
    check = surface.exact_word_matrix(word)
    if check != target and check != tuple(tuple(-v for v in row) for row in target):
        raise ReductionFailureError("word verification failed")
    return word


# --------------------------------------------------------------------------
# closed geodesics via the positive R/L coding
#
# Hyperbolic conjugacy classes of the modular group correspond one-to-one to
# aperiodic cyclic words R^{a1} L^{b1} ... R^{ak} L^{bk} in the two positive
# parabolic matrices R = [[1,1],[0,1]] and L = [[1,0],[1,1]].  The commutator
# subgroup is the kernel of the abelianization onto Z/6 which sends R to +1
# and L to -1; a primitive modular class with exponent sums (nR, nL) meets
# the subgroup after being raised to the power m = 6/g, g = gcd(nR-nL, 6),
# and its modular class splits into exactly g subgroup classes, conjugated
# into each other by powers of R.


_R_INT = ((1, 1), (0, 1))
_L_INT = ((1, 0), (1, 1))


def _mat_pow_int(m, p: int):
    out = _ID_INT
    base = m
    while p:
        if p & 1:
            out = _mat_mul_int(out, base)
        base = _mat_mul_int(base, base)
        p >>= 1
    return out


def _conj_by_r_power(m, j: int):
    rj = _mat_pow_int(_R_INT, j)
    rjinv = ((1, -j), (0, 1))
    return _mat_mul_int(rj, _mat_mul_int(m, rjinv))


def _rl_base_classes(trace_max: float) -> list:
    """All primitive hyperbolic modular classes with |trace| <= trace_max,
    one canonical (lexicographically least, aperiodic) block tuple each.
    Returns tuples (exps, mat, trace, nR, nL)."""
    results: list = []

    def rec(mat, exps):
        # append one more R^a L^b pair; traces only grow along extensions
        a_exp = 1
        cur_r = mat
        while True:
            cur_r = (
                (cur_r[0][0], cur_r[0][0] + cur_r[0][1]),
                (cur_r[1][0], cur_r[1][0] + cur_r[1][1]),
            )  # multiply by R on the right
            # minimal completion of the open pair appends a single L
            min_close = cur_r[0][0] + cur_r[0][1] + cur_r[1][1]
            if min_close > trace_max:
                break
            cur = cur_r
            b_exp = 1
            while True:
                cur = (
                    (cur[0][0] + cur[0][1], cur[0][1]),
                    (cur[1][0] + cur[1][1], cur[1][1]),
                )  # multiply by L on the right
                tr = cur[0][0] + cur[1][1]
                if tr > trace_max:
                    break
                exps2 = exps + (a_exp, b_exp)
                if _pair_tuple_period(exps2) == len(exps2) // 2 \
                        and exps2 == _least_pair_rotation(exps2):
                    results.append((exps2, cur, tr,
                                    sum(exps2[0::2]), sum(exps2[1::2])))
                rec(cur, exps2)
                b_exp += 1
            a_exp += 1

    rec(_ID_INT, ())
    return results


@dataclass(frozen=True)
class GeodesicClass:
    """A conjugacy class of closed geodesics: canonical representative word,
    geodesic length, |trace| of any representative, primitivity flag."""

    word: str
    length: float
    trace: float
    primitive: bool


def _require_modular_torus(surface: FuchsianSurface) -> None:
    if surface.generator_ints != modular_torus().generator_ints:
        raise NotImplementedError(
            "closed-geodesic enumeration is implemented for the modular torus")


def _lift_base_class(surface: FuchsianSurface, base, t: float,
                     primitive_only: bool) -> list:
    exps, mat, tr, n_r, n_l = base
    ell0 = 2.0 * math.acosh(tr / 2.0)
    g = math.gcd((n_r - n_l) % 6, 6)
    m = 6 // g
    ell = m * ell0
    if ell > t + 1e-9:
        return []
    p_max = 1 if primitive_only else int((t + 1e-9) / ell)
    m0m = _mat_pow_int(mat, m)
    out = []
    power = _ID_INT
    for p in range(1, p_max + 1):
        power = _mat_mul_int(power, m0m)
        tr_p = abs(power[0][0] + power[1][1])
        for j in range(g):
            lift = _conj_by_r_power(power, j) if j else power
            word = canonical_class_word(matrix_to_word(surface, lift))
            out.append(GeodesicClass(word=word, length=p * ell,
                                     trace=float(tr_p), primitive=(p == 1)))
    return out


def enumerate_geodesics(surface: FuchsianSurface, t: float, *,
                        primitive_only: bool = True,
                        identify_inverses: bool = False,
                        cap: float = _DEFAULT_GEODESIC_CAP) -> list:
    """One representative per conjugacy class of closed geodesics of length
    at most ``t``, sorted by (length, word).  Classes are oriented: a class
    and its inverse are listed separately unless ``identify_inverses`` is
    set.  Bounds above ``cap`` raise :class:`ResourceLimitError` (the class
    count grows like ``exp(t)/t``)."""
    _require_modular_torus(surface)
    if not (t >= 0.0) or math.isnan(t):
        raise ValueError(f"length bound must be nonnegative, got {t!r}")
    if t > cap:
        raise ResourceLimitError(
            f"length bound {t} exceeds cap {cap}; raise cap explicitly if the "
            f"~exp(t) cost is acceptable")
    classes: list = []
    for base in _rl_base_classes(2.0 * math.cosh(t / 2.0)):
        classes.extend(_lift_base_class(surface, base, t, primitive_only))
    if identify_inverses:
        seen = {}
        for cls in classes:
            inv = canonical_class_word(word_inverse(cls.word))
            key = min(cls.word, inv)
            if key not in seen:
                seen[key] = cls if cls.word <= inv else GeodesicClass(
                    word=key, length=cls.length, trace=cls.trace,
                    primitive=cls.primitive)
        classes = list(seen.values())
    classes.sort(key=lambda c: (c.length, c.word))
    return classes


# --------------------------------------------------------------------------
# uniform random classes without full enumeration


def _rl_string_bfs(trace_max: float, node_limit: int = 40_000_000):
    """Level arrays for all R/L strings that start with R, pruned so that
    every stored node extends to a complete string (ending in L) with trace
    at most trace_max.  Returns (level_letters, level_parents,
    level_complete_idx, complete_counts)."""
    level_letters: list = []
    level_parents: list = []
    level_complete: list = []
    counts: list = []

    cols = np.array([[1, 1, 0, 1]], dtype=np.int64)  # the string "R"
    letter = np.zeros(1, dtype=np.int8)  # 0 = R, 1 = L
    parent = np.full(1, -1, dtype=np.int64)
    total = 0
    while cols.shape[0]:
        total += cols.shape[0]
        if total > node_limit:
            raise ResourceLimitError("R/L string enumeration exceeds node limit")
        a, b, c, d = cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3]
        level_letters.append(letter)
        level_parents.append(parent)
        complete = (letter == 1) & (a + d <= trace_max)
        idx = np.flatnonzero(complete).astype(np.int64)
        level_complete.append(idx)
        counts.append(idx.shape[0])

        # children by appending R: (a, a+b, c, c+d); viable if one more L
        # can still close the string within the trace bound
        r_child = np.stack([a, a + b, c, c + d], axis=1)
        r_ok = (r_child[:, 0] + r_child[:, 1] + r_child[:, 3]) <= trace_max
        # children by appending L: (a+b, b, c+d, d); complete and extendable
        # while the trace bound holds
        l_child = np.stack([a + b, b, c + d, d], axis=1)
        l_ok = (l_child[:, 0] + l_child[:, 3]) <= trace_max

        n = cols.shape[0]
        cols = np.concatenate([r_child[r_ok], l_child[l_ok]])
        letter = np.concatenate([
            np.zeros(int(r_ok.sum()), dtype=np.int8),
            np.ones(int(l_ok.sum()), dtype=np.int8),
        ])
        parent = np.concatenate([
            np.arange(n, dtype=np.int64)[r_ok],
            np.arange(n, dtype=np.int64)[l_ok],
        ])

    return level_letters, level_parents, level_complete, np.array(counts, dtype=np.int64)


def _string_letters(level_letters, level_parents, level: int, idx: int) -> np.ndarray:
    out = np.empty(level + 1, dtype=np.int8)
    ptr = idx
    for depth in range(level, -1, -1):
        out[depth] = level_letters[depth][ptr]
        ptr = level_parents[depth][ptr]
    return out


def _string_to_exps(letters: np.ndarray) -> tuple:
    exps = []
    run_letter = letters[0]
    run = 1
    for c in letters[1:]:
        if c == run_letter:
            run += 1
        else:
            exps.append(run)
            run_letter = c
            run = 1
    exps.append(run)
    return tuple(exps)


def sample_geodesic_classes(surface: FuchsianSurface, t: float, n: int, rng, *,
                            include_non_primitive: bool = True,
                            cap: float = 15.5, max_draws_per_sample: int = 10000) -> list:
    """n independent uniform draws from the set of conjugacy classes of
    closed geodesics of length at most t (oriented; non-primitive classes
    included unless disabled).  Uses rejection sampling on the R/L coding
    instead of full enumeration, so bounds up to ``cap`` are practical."""
    _require_modular_torus(surface)
    if t > cap:
        raise ResourceLimitError(f"length bound {t} exceeds cap {cap}")
    if t < surface.systole - 1e-9:
        raise ValueError(f"no closed geodesics below the systole; t={t}")
    rng = np.random.default_rng(rng)
    trace_max = 2.0 * math.cosh(t / 2.0)
    lv_letters, lv_parents, lv_complete, counts = _rl_string_bfs(trace_max)
    cum = np.cumsum(counts)
    total = int(cum[-1])
    if total == 0:
        raise ValueError(f"no classes of length at most {t}")
    ell_min = 2.0 * math.acosh(1.5)
    weight_bound = 6.0 * max(1, int(t / ell_min)) if include_non_primitive else 6.0

    out: list = []
    draws = 0
    budget = max_draws_per_sample * n
    while len(out) < n:
        draws += 1
        if draws > budget:
            raise ResourceLimitError("rejection sampling exceeded its draw budget")
        u = int(rng.integers(0, total))
        level = int(np.searchsorted(cum, u, side="right"))
        within = u - (int(cum[level - 1]) if level else 0)
        idx = int(lv_complete[level][within])
        letters = _string_letters(lv_letters, lv_parents, level, idx)
        exps = _string_to_exps(letters)
        k = len(exps) // 2
        if _pair_tuple_period(exps) != k:
            continue  # periodic string: its class is a power of a shorter one
        n_r, n_l = sum(exps[0::2]), sum(exps[1::2])
        g = math.gcd((n_r - n_l) % 6, 6)
        m = 6 // g
        mat = _ID_INT
        for i in range(0, len(exps), 2):
            mat = _mat_mul_int(mat, _mat_pow_int(_R_INT, exps[i]))
            mat = _mat_mul_int(mat, _mat_pow_int(_L_INT, exps[i + 1]))
        ell0 = 2.0 * math.acosh((mat[0][0] + mat[1][1]) / 2.0)
        ell = m * ell0
        if ell > t + 1e-9:
            continue
        p_max = 1 if not include_non_primitive else int((t + 1e-9) / ell)
        weight = g * p_max
        if rng.random() >= weight / (k * weight_bound):
            continue
        j = int(rng.integers(0, g))
        p = int(rng.integers(1, p_max + 1))
        power = _mat_pow_int(mat, m * p)
        lift = _conj_by_r_power(power, j) if j else power
        tr_p = abs(lift[0][0] + lift[1][1])
        word = canonical_class_word(matrix_to_word(surface, lift))
        out.append(GeodesicClass(word=word, length=p * ell, trace=float(tr_p),
                                 primitive=(p == 1)))
    return out
