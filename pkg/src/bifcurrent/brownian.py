"""Hyperbolic Brownian motion with deck-word tracking.

The generator is the full half-plane Laplacian y^2 (d^2/dx^2 + d^2/dy^2)
(no factor 1/2), so the distance from the start grows with unit linear
drift and E[cosh d(i, Z_t)] = exp(2t) exactly; both facts are pinned by
tests.  Discretization is Euler--Maruyama in half-plane coordinates,

    dZ = sqrt(2 h) * Y * (xi_1 + i xi_2),

with a hard cap on the hyperbolic displacement of a single recorded
move.  A step whose endpoint would displace farther than the cap is
halved in time: a Brownian-bridge midpoint is inserted and each half is
checked again, recursively, so one nominal step may be committed as
several recorded sub-moves (each within the cap) while the step
endpoint keeps the exact one-draw law.  (Rejecting and redrawing
over-cap increments instead would truncate the noise and visibly bias
the diffusion -- at the default step the cap sits below one standard
deviation of the increment.)  An excessive halving cascade raises
:class:`~bifcurrent.errors.SamplerError`.

Paths run in one of two charts, both kept well-conditioned forever by
representing each position as a local point near the base plus an
isometry to the global lift (a rescaled float matrix with a separate
log-scale):

* plain chart (no surface): whenever a path drifts beyond a fixed local
  radius, the frame is recentered on the path and the recentering
  isometry is absorbed into the frame matrix.  Without this, literal
  half-plane coordinates die at displacement ~ 34: the height decays
  like e^{-t} until a single float ulp of the real coordinate exceeds
  the displacement cap;
* surface chart: after every move the representative point is folded
  back into the fundamental domain of the given surface and the folding
  word (the deck element) is carried along, together with the rescaled
  matrix.

Radial statistics (distance to the start) are computed from the frame
pair and are exact at any horizon.  The complex ``points`` arrays
reconstructed from the pair are naturally lossy once displacements
exceed roughly 35 (float64 cannot hold such lifts); the recorded
per-move displacements stay exact.

Sphere crossings (used by the exit-law sanity checks and by the
stopping-time discretization chain) are detected as a sign change of
d(base, Z) - radius across a sub-move and resolved by linear
interpolation of the crossing inside that sub-move; the small bias this
leaves is accepted and covered by the consumers' tolerances.  Crossing
detection is only offered for radii below half the systole, where the
ball around the base point embeds and no folding can interleave with a
crossing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidPointError,
    ResourceLimitError,
    SamplerError,
    WordTrackingError,
)
from .harness import derive_seed
from .lattice import (
    FuchsianSurface,
    codes_to_word,
    reduce_point,
    reduction_candidates,
    word_codes,
)
from .moebius import BASE_POINT, distance_h2, ensure_h2_point

__all__ = [
    "DISPLACEMENT_CAP",
    "DEFAULT_DT",
    "MAX_DT",
    "MAX_TIME",
    "BrownianPathSample",
    "BrownianEnsemble",
    "BrownianWalker",
    "ExitSample",
    "HeatKernelModel",
    "closed_loop_element",
    "radial_envelope_slope",
    "sample_ball_exits",
    "sample_ensemble",
    "sample_path",
    "track_word",
]

DISPLACEMENT_CAP = 0.1
DEFAULT_DT = 1e-2
MAX_DT = 1e-2
MAX_TIME = 100.0
MAX_STEP_HALVINGS = 40
FULL_CHECK_INTERVAL = 1024
DEFAULT_SHARD_SIZE = 256

_IMPROVE_TOL = 1e-12
_MAX_DESCENT_ROUNDS = 50
_MAX_PARABOLIC_POWER = 1.0e12
_MAX_REDRAWS = 100
_RECENTER_RADIUS = 2.0


def _radial(z: np.ndarray) -> np.ndarray:
    """d(i, z) for an array of upper-half-plane points (stable both ways)."""
    z = np.asarray(z)
    q = np.abs(z - BASE_POINT) / (2.0 * np.sqrt(z.imag))
    return 2.0 * np.arcsinh(q)


def _apply_matrix(mat: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Moebius action of batched 2x2 real matrices on complex points."""
    num = mat[..., 0, 0] * z + mat[..., 0, 1]
    den = mat[..., 1, 0] * z + mat[..., 1, 1]
    return num / den


def _stable_acosh_exp(log_cosh: np.ndarray) -> np.ndarray:
    """acosh(exp(L)) for L >= 0 without forming exp(L)."""
    log_cosh = np.maximum(np.asarray(log_cosh, dtype=float), 0.0)
    inner = -np.expm1(-2.0 * log_cosh)  # 1 - exp(-2L), accurate near 0
    return log_cosh + np.log1p(np.sqrt(np.maximum(inner, 0.0)))


_MAX_MATERIALIZED_CODES = 10_000_000


class _WordChain:
    """Shared suffix tree of letter codes; a node identifies a deck word.

    Node 0 is the empty word.  ``extend`` appends letters with free
    cancellation against the current tail, so every stored word is freely
    reduced.  Paths share ancestors, keeping memory linear in the number
    of wall crossings rather than in (paths x word length).

    Besides single-letter nodes the chain has run nodes (letter -1),
    holding a cyclically reduced block of codes raised to a positive
    power.  Cusp winding makes run powers astronomically large, so runs
    are never expanded during simulation; ``codes``/``word`` expand them
    and refuse beyond a fixed total length.
    """

    __slots__ = ("letter", "parent", "depth", "block", "count")

    def __init__(self):
        self.letter = [-1]
        self.parent = [-1]
        self.depth = [0]
        self.block = [None]
        self.count = [0]

    def _push_letter(self, node: int, c: int) -> int:
        self.letter.append(c)
        self.parent.append(node)
        self.depth.append(self.depth[node] + 1)
        self.block.append(None)
        self.count.append(1)
        return len(self.letter) - 1

    def _push_run(self, node: int, block: tuple, count: int) -> int:
        if count == 0:
            return node
        if count == 1 and len(block) == 1:
            return self._push_letter(node, block[0])
        self.letter.append(-1)
        self.parent.append(node)
        self.depth.append(self.depth[node] + len(block) * count)
        self.block.append(block)
        self.count.append(count)
        return len(self.letter) - 1

    def _last(self, node: int) -> int:
        """Last letter of the (nonempty) word at ``node``."""
        c = self.letter[node]
        return c if c >= 0 else self.block[node][-1]

    def _pop(self, node: int) -> int:
        """Node for the word at ``node`` minus its final letter."""
        if self.letter[node] >= 0:
            return self.parent[node]
        block = self.block[node]
        out = self._push_run(self.parent[node], block, self.count[node] - 1)
        for c in block[:-1]:
            out = self._push_letter(out, c)
        return out

    def extend(self, node: int, codes) -> int:
        for c in codes:
            c = int(c)
            if node != 0 and self._last(node) == c ^ 1:
                node = self._pop(node)
            else:
                node = self._push_letter(node, c)
        return node

    def extend_power(self, node: int, block: tuple, power: int) -> int:
        """Append ``block`` raised to ``power`` (either sign), reduced.

        ``block`` must be freely and cyclically reduced, so runs of it
        never cancel internally; cancellation against the current tail is
        resolved block-by-block and same/inverse runs merge in O(1).
        """
        if power < 0:
            block = tuple(c ^ 1 for c in reversed(block))
            power = -power
        inverse = tuple(c ^ 1 for c in reversed(block))
        while power > 0:
            if self.letter[node] == -1 and self.block[node] == block:
                prev, cnt = self.parent[node], self.count[node]
                return self._push_run(prev, block, cnt + power)
            if self.letter[node] == -1 and self.block[node] == inverse:
                prev, cnt = self.parent[node], self.count[node]
                if cnt > power:
                    return self._push_run(prev, inverse, cnt - power)
                node = prev
                power -= cnt
                continue
            if node == 0 or self._last(node) != block[0] ^ 1:
                return self._push_run(node, block, power)
            # The tail eats into this block copy; resolve it letter-wise.
            # A cyclically reduced block leaves a tail that cannot cancel
            # the next copy unless the whole copy was absorbed, so either
            # the next round attaches a run or the word strictly shrinks.
            node = self.extend(node, block)
            power -= 1
        return node

    def codes(self, node: int) -> list:
        if self.depth[node] > _MAX_MATERIALIZED_CODES:
            raise ResourceLimitError(
                f"refusing to expand a deck word of {self.depth[node]} letters"
            )
        out = []
        while node != 0:
            c = self.letter[node]
            if c >= 0:
                out.append(c)
            else:
                out.extend(reversed(self.block[node] * self.count[node]))
            node = self.parent[node]
        out.reverse()
        return out

    def word(self, node: int) -> str:
        return codes_to_word(self.codes(node))

    def depth_of(self, node: int) -> int:
        return self.depth[node]


def _exact_node_matrix(chain: _WordChain, node: int, letters_int, memo: dict):
    """Integer matrix (row-major 4-tuple) of the deck word at ``node``.

    Exact arbitrary-precision arithmetic; a power run contributes
    ``s^k (I + k N)`` directly, so enormous winding numbers cost one
    multiply.  ``memo`` caches finished nodes, which the per-path chains
    share heavily.
    """
    pending = []
    while node != 0 and node not in memo:
        pending.append(node)
        node = chain.parent[node]
    quad = (1, 0, 0, 1) if node == 0 else memo[node]
    for nd in reversed(pending):
        code = chain.letter[nd]
        if code >= 0:
            step = letters_int[code]
        else:
            e, f, g, h = 1, 0, 0, 1
            for c in chain.block[nd]:
                p, q, r, t = letters_int[c]
                e, f, g, h = e * p + f * r, e * q + f * t, g * p + h * r, g * q + h * t
            tr = e + h
            if abs(tr) != 2:
                raise WordTrackingError(
                    "power run recorded over a non-parabolic block"
                )
            s = tr // 2
            k = chain.count[nd]
            sk = s if k % 2 else 1
            step = (sk * (1 + k * (s * e - 1)), sk * k * s * f,
                    sk * k * s * g, sk * (1 + k * (s * h - 1)))
        a, b, c, d = quad
        e, f, g, h = step
        quad = (a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h)
        memo[nd] = quad
    return quad


_surface_data_memo: dict = {}


def _surface_data(surface: FuchsianSurface):
    """Candidate folding elements of the surface, in reduce_point order.

    Alongside the dense candidate tables this records every parabolic
    candidate (trace +-2, cyclically reduced word) in nilpotent form:
    ``g = s (I + N)`` with ``N^2 = 0``, so ``g^k = s^k (I + k N)`` and the
    base-point distance after applying ``g^{-k}`` is a quadratic in ``k``.
    Cusp excursions wind around such elements thousands of times, and the
    closed form lets the fold descent unwind any power in one move.
    """
    key = surface.cache_key()
    hit = _surface_data_memo.get(key)
    if hit is not None:
        return hit
    words, mats_int = reduction_candidates(surface)
    mats = mats_int.astype(np.float64)
    invs = np.empty_like(mats)
    invs[:, 0, 0] = mats[:, 1, 1]
    invs[:, 0, 1] = -mats[:, 0, 1]
    invs[:, 1, 0] = -mats[:, 1, 0]
    invs[:, 1, 1] = mats[:, 0, 0]
    codes = tuple(tuple(int(c) for c in word_codes(w)) for w in words)
    parabolic = []
    for j, m in enumerate(mats_int):
        tr = int(m[0, 0]) + int(m[1, 1])
        if abs(tr) != 2 or not codes[j]:
            continue
        if codes[j][0] == codes[j][-1] ^ 1:
            continue  # not cyclically reduced; powers would cancel inside
        s = tr // 2
        n_int = s * m.astype(np.int64) - np.eye(2, dtype=np.int64)
        if np.any(n_int @ n_int != 0) or not np.any(n_int != 0):
            continue
        k_float = (s * invs[j] - np.eye(2)).astype(np.float64)
        parabolic.append((j, float(s), n_int.astype(np.float64), k_float))
    data = (words, codes, mats, invs, tuple(parabolic))
    _surface_data_memo[key] = data
    return data


class BrownianWalker:
    """A vectorized batch of independent Brownian paths in lockstep.

    Every path is stored as a well-conditioned local point ``z`` together
    with an isometry sending the local frame to the global lift (a
    rescaled float matrix plus its log-scale).  Without a surface the
    isometry is an accumulated recentering: whenever a path drifts beyond
    a fixed local radius its frame is moved back to the base point, so
    coordinates never degenerate no matter how far the lift runs.  With a
    surface the isometry is the deck element instead: each path is folded
    into the fundamental domain after every move, and the folding word (a
    node of a shared letter chain) is carried along with the matrix.  A
    cheap per-path wall margin makes the fold check O(1) on most moves.

    ``advance`` moves the (masked) paths by a fixed time; sub-moves respect
    the displacement cap.  ``advance_with_barrier`` also freezes each path
    at its first crossing of the sphere of given radius around the base
    point, interpolated linearly inside the crossing sub-move; frozen paths
    keep their own clocks, so batch members may sit at different times.
    """

    def __init__(self, start, rng: np.random.Generator, *, surface: FuchsianSurface | None = None):
        z = np.atleast_1d(np.asarray(start, dtype=np.complex128)).copy()
        if z.ndim != 1:
            raise InvalidPointError("start points must form a 1-d array")
        if not (np.isfinite(z).all() and (z.imag > 0.0).all()):
            raise InvalidPointError("start points must lie in the upper half plane")
        self.z = z
        self.t = np.zeros(z.size, dtype=float)
        self.rng = rng
        self.surface = surface
        self._recorder = None
        self._moves_since_check = 0
        self._G = np.broadcast_to(np.eye(2), (z.size, 2, 2)).copy()
        self._logs = np.zeros(z.size, dtype=float)
        if surface is not None:
            words, codes, mats, invs, parabolic = _surface_data(surface)
            self._cand_words = words
            self._cand_codes = codes
            self._cand_mats = mats
            self._cand_invs = invs
            self._cand_parab = parabolic
            self._chain = _WordChain()
            self._node = np.zeros(z.size, dtype=np.int64)
            self._margin = np.full(z.size, -1.0)
            self._init_fold()

    # -- construction helpers ------------------------------------------------

    def _init_fold(self) -> None:
        """Fold the start points and seed words/matrices from scratch."""
        z = self.z
        if z.size and np.all(z == z[0]):
            red = reduce_point(self.surface, complex(z[0]))
            reds = [red] * z.size
        else:
            reds = [reduce_point(self.surface, complex(p)) for p in z]
        for i, red in enumerate(reds):
            self.z[i] = red.point
            node = self._chain.extend(0, word_codes(red.word))
            self._node[i] = node
            mat = np.array(self.surface.exact_word_matrix(red.word), dtype=float)
            scale = np.abs(mat).max()
            self._G[i] = mat / scale
            self._logs[i] = math.log(scale)
        self._reduce(np.arange(z.size))

    # -- public state views --------------------------------------------------

    @property
    def n_paths(self) -> int:
        return self.z.size

    def folded_radial(self) -> np.ndarray:
        """Distance of the current local representative from the base point.

        In the surface chart this is the distance, on the surface, to the
        base orbit; in the plain chart it is frame-local (it equals the
        base displacement only until the frame is first recentered).
        """
        return _radial(self.z)

    def base_displacements(self) -> np.ndarray:
        """d(base, lift) for every path, stable at any horizon."""
        return self._lift_radial(np.arange(self.n_paths), self.z)

    def _lift_radial(self, paths: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """d(base, frame(path) applied to pts) via the rescaled matrices."""
        g = self._G[paths]
        num = g[:, 0, 0] * pts + g[:, 0, 1]
        den = g[:, 1, 0] * pts + g[:, 1, 1]
        log_cosh = 2.0 * self._logs[paths] + np.log(
            (np.abs(num) ** 2 + np.abs(den) ** 2) / (2.0 * pts.imag)
        )
        return _stable_acosh_exp(log_cosh)

    def deck_log_norms(self) -> np.ndarray:
        """log of the operator norm of each path's deck matrix."""
        if self.surface is None:
            raise WordTrackingError("plain-chart walker carries no deck words")
        g = self._G
        f = np.sum(g * g, axis=(1, 2))
        det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
        top = (f + np.sqrt(np.maximum(f * f - 4.0 * det * det, 0.0))) / 2.0
        return self._logs + 0.5 * np.log(top)

    def word_nodes(self) -> np.ndarray:
        return self._node.copy()

    def word_lengths(self) -> np.ndarray:
        depth = self._chain.depth
        return np.fromiter((depth[int(n)] for n in self._node), dtype=np.int64,
                           count=self._node.size)

    def word(self, i: int) -> str:
        return self._chain.word(int(self._node[i]))

    def words(self) -> list:
        return [self._chain.word(int(n)) for n in self._node]

    def lift_points(self) -> np.ndarray:
        """Reconstructed complex lift (lossy once displacements are large)."""
        return _apply_matrix(self._G, self.z)

    # -- dynamics ------------------------------------------------------------

    def advance(self, h: float, mask=None) -> None:
        """Advance the (masked) paths by time ``h``."""
        idx = self._mask_to_index(mask)
        if idx.size:
            self._move(idx, float(h))
            self._count_tick()

    def advance_with_barrier(self, h: float, barrier, direction, mask=None) -> np.ndarray:
        """Advance by ``h`` but freeze paths at their first sphere crossing.

        ``barrier`` (radius around the base point, below half the systole)
        and ``direction`` (+1 outward, -1 inward) broadcast per path.
        Returns a boolean array marking paths frozen during this call;
        their clocks hold the interpolated crossing times.
        """
        idx = self._mask_to_index(mask)
        crossed = np.zeros(self.n_paths, dtype=bool)
        if not idx.size:
            return crossed
        barrier_arr = np.broadcast_to(np.asarray(barrier, dtype=float), (self.n_paths,))
        if self.surface is not None:
            limit = 0.5 * self.surface.systole
            if np.any(barrier_arr[idx] >= limit - 1e-12):
                raise ValueError(
                    "crossing detection requires the sphere to embed: "
                    f"radius must stay below half the systole ({limit:.6g})"
                )
        direction_arr = np.broadcast_to(np.asarray(direction, dtype=float), (self.n_paths,))
        hit = self._move(idx, float(h), barrier=barrier_arr[idx],
                         direction=direction_arr[idx])
        crossed[idx] = hit
        self._count_tick()
        return crossed

    def _count_tick(self) -> None:
        if self.surface is None:
            return
        self._moves_since_check += 1
        if self._moves_since_check >= FULL_CHECK_INTERVAL:
            self._full_check()

    def _mask_to_index(self, mask) -> np.ndarray:
        if mask is None:
            return np.arange(self.n_paths)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.n_paths,):
            raise ValueError("mask must have one entry per path")
        return np.flatnonzero(mask)

    def _draw_endpoints(self, paths: np.ndarray, h: float) -> np.ndarray:
        """Euler--Maruyama endpoints after time ``h`` for the given paths."""
        y = self.z[paths].imag
        scale = math.sqrt(2.0 * h) * y
        target = np.empty(paths.size, dtype=np.complex128)
        todo = np.arange(paths.size)
        for _ in range(_MAX_REDRAWS):
            if not todo.size:
                return target
            xi = self.rng.standard_normal((todo.size, 2))
            cand = self.z[paths[todo]] + scale[todo] * (xi[:, 0] + 1j * xi[:, 1])
            good = cand.imag > 0.0
            target[todo[good]] = cand[good]
            todo = todo[~good]
        raise SamplerError("could not draw an increment staying in the half plane")

    def _bridge_midpoints(self, left: np.ndarray, right: np.ndarray,
                          h: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Brownian-bridge midpoints of sub-segments (frozen noise scale y)."""
        std = y * np.sqrt(h / 2.0)
        mid = np.empty(left.size, dtype=np.complex128)
        todo = np.arange(left.size)
        base = 0.5 * (left + right)
        for _ in range(_MAX_REDRAWS):
            if not todo.size:
                return mid
            eta = self.rng.standard_normal((todo.size, 2))
            cand = base[todo] + std[todo] * (eta[:, 0] + 1j * eta[:, 1])
            good = cand.imag > 0.0
            mid[todo[good]] = cand[good]
            todo = todo[~good]
        raise SamplerError("could not draw a bridge midpoint in the half plane")

    def _move(self, idx: np.ndarray, h: float, barrier=None, direction=None) -> np.ndarray:
        """Advance the paths ``idx`` by time ``h`` (one nominal step).

        The step endpoint is a single Euler--Maruyama draw; whenever a
        (sub-)move would displace farther than the cap, the move is halved
        in time by inserting a Brownian-bridge midpoint, recursively, so
        the committed moves all respect the cap while the step endpoint
        keeps the exact one-draw law.  Returns per-position crossing flags
        (always False without a barrier).
        """
        z = self.z
        t = self.t
        k = idx.size
        crossed = np.zeros(k, dtype=bool)
        depth_cap = MAX_STEP_HALVINGS + 2
        stack_z = np.zeros((k, depth_cap), dtype=np.complex128)
        stack_h = np.zeros((k, depth_cap), dtype=float)
        size = np.zeros(k, dtype=np.int64)
        live0 = np.arange(k)
        if barrier is not None:
            if self.surface is not None:
                rad = _radial(z[idx])
            else:
                rad = self._lift_radial(idx, z[idx])
            already = ((direction > 0.0) & (rad >= barrier)) | \
                      ((direction < 0.0) & (rad <= barrier))
            if np.any(already):
                crossed[already] = True
                live0 = np.flatnonzero(~already)
        if live0.size:
            stack_z[live0, 0] = self._draw_endpoints(idx[live0], h)
            stack_h[live0, 0] = h
            size[live0] = 1
        live = live0
        while live.size:
            paths = idx[live]
            cur = z[paths]
            top = size[live] - 1
            zt = stack_z[live, top]
            ht = stack_h[live, top]
            q = np.abs(zt - cur) / (2.0 * np.sqrt(cur.imag * zt.imag))
            disp = 2.0 * np.arcsinh(q)
            fits = disp <= DISPLACEMENT_CAP
            split = live[~fits]
            if split.size:
                if np.any(size[split] + 1 >= depth_cap):
                    raise SamplerError(
                        f"displacement cap {DISPLACEMENT_CAP} still exceeded "
                        f"after {MAX_STEP_HALVINGS} step halvings"
                    )
                s_top = size[split] - 1
                left = z[idx[split]]
                right = stack_z[split, s_top]
                half = stack_h[split, s_top] / 2.0
                mid = self._bridge_midpoints(left, right, half * 2.0,
                                             left.imag)
                stack_h[split, s_top] = half
                stack_z[split, s_top + 1] = mid
                stack_h[split, s_top + 1] = half
                size[split] += 1
            commit = live[fits]
            if commit.size:
                moved_paths = idx[commit]
                zt_c = zt[fits]
                ht_c = ht[fits]
                disp_c = disp[fits]
                frozen = np.zeros(commit.size, dtype=bool)
                if barrier is not None:
                    if self.surface is not None:
                        radnew = _radial(zt_c)
                    else:
                        radnew = self._lift_radial(moved_paths, zt_c)
                    radold = rad[commit]
                    dirn = direction[commit]
                    hit = ((dirn > 0.0) & (radnew >= barrier[commit])) | \
                          ((dirn < 0.0) & (radnew <= barrier[commit]))
                    if np.any(hit):
                        denom = radnew[hit] - radold[hit]
                        with np.errstate(divide="ignore", invalid="ignore"):
                            frac = (barrier[commit][hit] - radold[hit]) / denom
                        frac = np.where(np.isfinite(frac), frac, 1.0)
                        frac = np.clip(frac, 0.0, 1.0)
                        pp = moved_paths[hit]
                        z[pp] = z[pp] + (zt_c[hit] - z[pp]) * frac
                        t[pp] += frac * ht_c[hit]
                        crossed[commit[hit]] = True
                        size[commit[hit]] = 0
                        frozen = hit
                    rad[commit[~hit]] = radnew[~hit]
                adv = ~frozen
                if np.any(adv):
                    ap = moved_paths[adv]
                    z[ap] = zt_c[adv]
                    t[ap] += ht_c[adv]
                    size[commit[adv]] -= 1
                if self.surface is not None:
                    done = moved_paths[adv]
                    self._margin[done] -= 2.0 * disp_c[adv]
                    stale = done[self._margin[done] <= 0.0]
                    if stale.size:
                        self._fold_with_stacks(stale, idx, stack_z, size)
                else:
                    done = moved_paths[adv]
                    far = done[_radial(z[done]) > _RECENTER_RADIUS]
                    if far.size:
                        self._recenter_with_stacks(far, idx, stack_z, size)
                if self._recorder is not None:
                    self._record(moved_paths[adv], disp_c[adv])
            live = live[size[live] > 0]
        return crossed

    def _recenter_with_stacks(self, far: np.ndarray, idx: np.ndarray,
                              stack_z: np.ndarray, size: np.ndarray) -> None:
        """Move the local frames of the given paths back to the base point.

        The recentering isometry is absorbed into the per-path frame
        matrix (rescaled, log-scale carried), the local point becomes the
        base point exactly, and pending sub-move targets are mapped into
        the new frame, so the represented lift is unchanged.
        """
        p = self.z[far]
        x = p.real
        y = p.imag
        root = np.sqrt(y)
        minv = np.zeros((far.size, 2, 2))
        minv[:, 0, 0] = root
        minv[:, 0, 1] = x / root
        minv[:, 1, 1] = 1.0 / root
        g = np.matmul(self._G[far], minv)
        mx = np.abs(g).max(axis=(1, 2))
        self._G[far] = g / mx[:, None, None]
        self._logs[far] += np.log(mx)
        self.z[far] = BASE_POINT
        pos_of = {int(q): j for j, q in enumerate(idx)}
        for j, q in enumerate(far):
            pos = pos_of[int(q)]
            n_pending = int(size[pos])
            if n_pending:
                pending = stack_z[pos, :n_pending]
                stack_z[pos, :n_pending] = (pending - x[j]) / y[j]

    def _fold_with_stacks(self, stale: np.ndarray, idx: np.ndarray,
                          stack_z: np.ndarray, size: np.ndarray) -> None:
        """Fold mid-step: reduce the given paths and carry their pending
        sub-move targets into the new chart with the same deck change.

        The chart map is accumulated from the small candidate matrices the
        descent actually applied; composing the old and new deck matrices
        instead would cancel catastrophically once the deck is large.
        """
        net: dict = {}
        self._reduce(stale, collect=net)
        if not net:
            return
        pos_of = {int(p): j for j, p in enumerate(idx)}
        for p, tmap in net.items():
            pos = pos_of[p]
            n_pending = int(size[pos])
            if n_pending <= 0:
                continue
            pending = stack_z[pos, :n_pending]
            stack_z[pos, :n_pending] = _apply_matrix(tmap[None, :, :], pending)

    def _record(self, moved_paths: np.ndarray, disp: np.ndarray) -> None:
        rec = self._recorder
        for j, p in enumerate(moved_paths):
            p = int(p)
            if self.surface is None:
                g = self._G[p]
                zp = self.z[p]
                point = (g[0, 0] * zp + g[0, 1]) / (g[1, 0] * zp + g[1, 1])
            else:
                point = complex(self.z[p])
            entry = {
                "time": float(self.t[p]),
                "point": complex(point),
                "displacement": float(disp[j]),
            }
            if self.surface is not None:
                entry["node"] = int(self._node[p])
                entry["deck"] = self._G[p].copy()
                entry["deck_log"] = float(self._logs[p])
            rec.append(entry)

    # -- folding -------------------------------------------------------------

    def _reduce(self, paths: np.ndarray, collect: dict | None = None) -> None:
        """Candidate descent for the given paths; updates words and margins.

        Same candidate set, ordering, and improvement threshold as
        ``lattice.reduce_point``, so tracked words agree with from-scratch
        reduction away from wall ties.  When ``collect`` is given, the net
        chart transform (product of the applied candidate inverses) is
        accumulated per path, for mapping auxiliary points into the new
        chart without going through the ill-conditioned deck matrices.
        """
        invs = self._cand_invs
        mats = self._cand_mats
        chain = self._chain
        parab = self._cand_parab
        eye = np.eye(2)
        current = np.asarray(paths, dtype=np.int64)
        for _ in range(_MAX_DESCENT_ROUNDS):
            if not current.size:
                return
            zc = self.z[current]
            y = zc.imag
            num = invs[None, :, 0, 0] * zc[:, None] + invs[None, :, 0, 1]
            den = invs[None, :, 1, 0] * zc[:, None] + invs[None, :, 1, 1]
            cosh_d = (np.abs(num) ** 2 + np.abs(den) ** 2) / (2.0 * y[:, None])
            d = np.arccosh(np.maximum(cosh_d, 1.0))
            best = np.argmin(d, axis=1)
            rows = np.arange(current.size)
            d_best = d[rows, best]
            d_cur = _radial(zc)
            improved = d_best < d_cur - _IMPROVE_TOL
            self._margin[current] = d_best - d_cur

            # Closed-form parabolic powers.  A cusp excursion winds around a
            # parabolic element an exponential-in-depth number of times, so
            # unwinding candidate by candidate would never settle; the
            # base-point distance after k twists is a quadratic in k, and the
            # integer minimiser jumps the whole winding in one move.
            jump_d = np.full(current.size, np.inf)
            jump_pj = np.full(current.size, -1, dtype=np.int64)
            jump_k = np.zeros(current.size, dtype=np.int64)
            for pj, (_, _, _, k_mat) in enumerate(parab):
                u = k_mat[0, 0] * zc + k_mat[0, 1]
                v = k_mat[1, 0] * zc + k_mat[1, 1]
                qa = np.abs(u) ** 2 + np.abs(v) ** 2
                qb = 2.0 * (zc * np.conj(u) + np.conj(v)).real
                qc = np.abs(zc) ** 2 + 1.0
                with np.errstate(divide="ignore", invalid="ignore"):
                    k_star = np.clip(np.round(-qb / (2.0 * qa)),
                                     0.0, _MAX_PARABOLIC_POWER)
                usable = k_star >= 2.0
                if not np.any(usable):
                    continue
                cosh_j = (qa * k_star * k_star + qb * k_star + qc) / (2.0 * y)
                d_j = np.arccosh(np.maximum(cosh_j, 1.0))
                taken = usable & (d_j < jump_d)
                jump_d[taken] = d_j[taken]
                jump_pj[taken] = pj
                jump_k[taken] = k_star[taken].astype(np.int64)
            take_jump = (jump_d < d_best) & (jump_d < d_cur - _IMPROVE_TOL)

            if not (np.any(improved) or np.any(take_jump)):
                return
            std = improved & ~take_jump
            if np.any(std):
                sel = current[std]
                cand = best[std]
                self.z[sel] = num[rows[std], cand] / den[rows[std], cand]
                self._G[sel] = np.matmul(self._G[sel], mats[cand])
                mx = np.max(np.abs(self._G[sel]), axis=(1, 2))
                self._G[sel] /= mx[:, None, None]
                self._logs[sel] += np.log(mx)
                for p, c in zip(sel, cand):
                    self._node[p] = chain.extend(int(self._node[p]),
                                                 self._cand_codes[int(c)])
                    if collect is not None:
                        p = int(p)
                        prev = collect.get(p)
                        step = invs[int(c)]
                        collect[p] = step if prev is None else step @ prev
            for li in np.nonzero(take_jump)[0]:
                p = int(current[li])
                j, s, n_mat, k_mat = parab[int(jump_pj[li])]
                k = int(jump_k[li])
                zp = self.z[p]
                self.z[p] = ((1.0 + k * k_mat[0, 0]) * zp + k * k_mat[0, 1]) / (
                    k * k_mat[1, 0] * zp + (1.0 + k * k_mat[1, 1]))
                sign = -1.0 if (s < 0.0 and k % 2) else 1.0
                gnew = self._G[p] @ (sign * (eye + k * n_mat))
                mx = np.abs(gnew).max()
                self._G[p] = gnew / mx
                self._logs[p] += math.log(mx)
                self._node[p] = chain.extend_power(int(self._node[p]),
                                                   self._cand_codes[j], k)
                if collect is not None:
                    step = sign * (eye + k * k_mat)
                    prev = collect.get(p)
                    collect[p] = step if prev is None else step @ prev
            current = current[improved | take_jump]
        raise WordTrackingError(
            f"fold descent did not settle within {_MAX_DESCENT_ROUNDS} rounds"
        )

    def _full_check(self) -> None:
        """Periodic guard: rebuild deck matrices from the words and compare.

        The rebuild runs in exact integer arithmetic — power runs through
        their nilpotent closed form, never expanded — so it catches any
        drift between the word chain and the incrementally multiplied
        float matrices.  It also refreshes every wall margin from scratch.
        """
        self._moves_since_check = 0
        letters_int = [tuple(int(e) for e in m.ravel())
                       for m in self.surface.letter_arrays]
        memo: dict = {}
        for i in range(self.n_paths):
            quad = _exact_node_matrix(self._chain, int(self._node[i]),
                                      letters_int, memo)
            mx = max(abs(q) for q in quad)
            matf = np.array([[quad[0] / mx, quad[1] / mx],
                             [quad[2] / mx, quad[3] / mx]])
            logs = math.log(mx)
            inc_mx = np.abs(self._G[i]).max()
            inc_logs = self._logs[i] + math.log(inc_mx)
            entries_agree = np.allclose(matf, self._G[i] / inc_mx, rtol=0.0, atol=1e-8)
            scales_agree = abs(logs - inc_logs) <= 1e-6 * max(1.0, abs(logs))
            if not (entries_agree and scales_agree):
                raise WordTrackingError(
                    f"deck word and deck matrix diverged on path {i}"
                )
        self._margin[:] = -1.0
        self._reduce(np.arange(self.n_paths))


class BrownianPathSample:
    """One sampled Brownian path with checkpoints at every recorded move.

    ``times`` increase from 0; every recorded move respects the
    displacement cap (``step_displacements`` stores the exact values;
    distances recomputed from the reconstructed ``points`` drift from
    them once the path is far out).  When the path was sampled or
    tracked on a surface, ``word_trace`` holds the deck word of the
    fundamental domain translate occupied at each checkpoint (empty at a
    start on the base point), ``reduced_points`` the folded
    representatives, and all base-displacement queries use the exact
    pair representation.
    """

    def __init__(self, times, points, seed, dt, *, surface=None,
                 reduced_points=None, chain=None, nodes=None,
                 decks=None, deck_logs=None, step_disp=None):
        self.times = np.asarray(times, dtype=float)
        self.points = np.asarray(points, dtype=np.complex128)
        self.seed = int(seed)
        self.dt = float(dt)
        self.surface = surface
        self.reduced_points = None if reduced_points is None else np.asarray(reduced_points)
        self._chain = chain
        self._nodes = None if nodes is None else np.asarray(nodes, dtype=np.int64)
        self._decks = decks
        self._deck_logs = deck_logs
        self._step_disp = None if step_disp is None else np.asarray(step_disp, dtype=float)
        self._word_trace = None

    @property
    def tracked(self) -> bool:
        return self._nodes is not None

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def n_checkpoints(self) -> int:
        return self.times.size

    @property
    def word_trace(self):
        """Deck words at every checkpoint (materialized lazily), or None."""
        if self._nodes is None:
            return None
        if self._word_trace is None:
            self._word_trace = tuple(self._chain.word(int(n)) for n in self._nodes)
        return self._word_trace

    def word_at(self, k: int) -> str:
        if self._nodes is None:
            raise WordTrackingError("path has no word trace; run track_word first")
        return self._chain.word(int(self._nodes[k]))

    def word_lengths(self) -> np.ndarray:
        if self._nodes is None:
            raise WordTrackingError("path has no word trace; run track_word first")
        depth = self._chain.depth
        return np.fromiter((depth[int(n)] for n in self._nodes), dtype=np.int64,
                           count=self._nodes.size)

    def step_displacements(self) -> np.ndarray:
        """Hyperbolic length of every move (each within the cap)."""
        if self._step_disp is not None:
            return self._step_disp.copy()
        return np.array([
            distance_h2(self.points[k], self.points[k + 1])
            for k in range(self.points.size - 1)
        ])

    def base_displacements(self) -> np.ndarray:
        """d(base, path point) at every checkpoint (stable at any horizon)."""
        if self._decks is not None:
            g = self._decks
            z = self.reduced_points
            num = g[:, 0, 0] * z + g[:, 0, 1]
            den = g[:, 1, 0] * z + g[:, 1, 1]
            log_cosh = 2.0 * self._deck_logs + np.log(
                (np.abs(num) ** 2 + np.abs(den) ** 2) / (2.0 * z.imag)
            )
            return _stable_acosh_exp(log_cosh)
        return _radial(self.points)

    def deck_log_norms(self) -> np.ndarray:
        """log operator norm of the deck matrix at every checkpoint."""
        if self._decks is None:
            raise WordTrackingError("path has no word trace; run track_word first")
        g = self._decks
        f = np.sum(g * g, axis=(1, 2))
        det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
        top = (f + np.sqrt(np.maximum(f * f - 4.0 * det * det, 0.0))) / 2.0
        return self._deck_logs + 0.5 * np.log(top)


def _tick_sizes(t_max: float, dt: float) -> list:
    full = int(t_max / dt + 1e-12)
    ticks = [dt] * full
    rem = t_max - full * dt
    if rem > 1e-12:
        ticks.append(rem)
    return ticks


def _validate_step(t_max: float, dt: float) -> None:
    if not (0.0 < dt <= MAX_DT + 1e-15):
        raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    if not (0.0 < t_max <= MAX_TIME):
        raise ValueError(f"t_max must lie in (0, {MAX_TIME}], got {t_max}")


def sample_path(start, t_max: float, dt: float = DEFAULT_DT, seed: int = 0,
                surface: FuchsianSurface | None = None) -> BrownianPathSample:
    """Sample one Brownian path from ``start`` up to time ``t_max``.

    Without ``surface`` the path is plain half-plane Brownian motion.  With
    a surface the sampler folds the moving point into the fundamental
    domain after every move and fills the word trace as it goes, so the
    returned sample is already tracked.  Reproducible from ``seed``.
    """
    start = ensure_h2_point(start)
    _validate_step(t_max, dt)
    rng = np.random.default_rng(int(seed) & ((1 << 64) - 1))
    walker = BrownianWalker(np.array([start]), rng, surface=surface)
    trace: list = []
    walker._recorder = trace
    first = {"time": 0.0, "point": complex(walker.z[0]), "displacement": 0.0}
    if surface is not None:
        first["node"] = int(walker._node[0])
        first["deck"] = walker._G[0].copy()
        first["deck_log"] = float(walker._logs[0])
    for h in _tick_sizes(t_max, dt):
        walker.advance(h)
    walker._recorder = None
    records = [first] + trace
    times = np.array([r["time"] for r in records])
    reps = np.array([r["point"] for r in records], dtype=np.complex128)
    step_disp = np.array([r["displacement"] for r in records[1:]])
    if surface is None:
        return BrownianPathSample(times, reps, seed, dt, step_disp=step_disp)
    nodes = np.array([r["node"] for r in records], dtype=np.int64)
    decks = np.stack([r["deck"] for r in records])
    deck_logs = np.array([r["deck_log"] for r in records])
    points = _apply_matrix(decks, reps)
    return BrownianPathSample(
        times, points, seed, dt, surface=surface, reduced_points=reps,
        chain=walker._chain, nodes=nodes, decks=decks, deck_logs=deck_logs,
        step_disp=step_disp,
    )


def track_word(surface: FuchsianSurface, path: BrownianPathSample, *,
               tol: float = 1e-6) -> BrownianPathSample:
    """Fill the deck-word trace of a path sampled in the plain chart.

    Walks the stored points once, folding incrementally: the previous deck
    matrix maps each new point near the domain, then the same candidate
    descent as ``reduce_point`` settles it, changing the word by one
    folding element per wall crossing.  Every 1024 moves the word is
    checked against a from-scratch reduction of the stored point; a
    disagreement beyond a wall tie of size ``tol`` raises
    :class:`~bifcurrent.errors.WordTrackingError`.  Paths already tracked
    are returned unchanged.
    """
    if path.tracked:
        return path
    pts = path.points
    walker = BrownianWalker(np.array([pts[0]]), np.random.default_rng(0),
                            surface=surface)
    sel = np.array([0])
    nodes = np.empty(pts.size, dtype=np.int64)
    decks = np.empty((pts.size, 2, 2))
    deck_logs = np.empty(pts.size)
    reps = np.empty(pts.size, dtype=np.complex128)
    nodes[0] = walker._node[0]
    decks[0] = walker._G[0]
    deck_logs[0] = walker._logs[0]
    reps[0] = walker.z[0]
    for k in range(1, pts.size):
        g = walker._G[0]
        # Adjugate action: same Moebius map as the inverse deck matrix.
        rep = (g[1, 1] * pts[k] - g[0, 1]) / (-g[1, 0] * pts[k] + g[0, 0])
        walker.z[0] = rep
        walker._margin[0] -= 2.0 * distance_h2(pts[k - 1], pts[k])
        if walker._margin[0] <= 0.0:
            walker._reduce(sel)
        if k % FULL_CHECK_INTERVAL == 0:
            fresh = reduce_point(surface, complex(pts[k]))
            incremental = walker._chain.word(int(walker._node[0]))
            if fresh.word != incremental:
                d_fresh = distance_h2(BASE_POINT, fresh.point)
                d_inc = distance_h2(BASE_POINT, complex(walker.z[0]))
                if abs(d_fresh - d_inc) > tol:
                    raise WordTrackingError(
                        f"incremental word {incremental!r} disagrees with "
                        f"from-scratch reduction {fresh.word!r} at move {k}"
                    )
        nodes[k] = walker._node[0]
        decks[k] = walker._G[0]
        deck_logs[k] = walker._logs[0]
        reps[k] = walker.z[0]
    return BrownianPathSample(
        path.times, pts, path.seed, path.dt, surface=surface,
        reduced_points=reps, chain=walker._chain, nodes=nodes, decks=decks,
        deck_logs=deck_logs, step_disp=path._step_disp,
    )


def closed_loop_element(surface: FuchsianSurface, path: BrownianPathSample,
                        t: float) -> str:
    """Deck word of the domain translate occupied at the checkpoint nearest t.

    This is the group element obtained by closing the path at time ``t``
    with a short arc back to the base point; the choice among nearby
    closings is settled by always using the fundamental-domain word.
    """
    if not 0.0 <= t <= path.duration + 1e-9:
        raise ValueError(f"t={t} outside the sampled duration {path.duration}")
    if not path.tracked:
        path = track_word(surface, path)
    k = int(np.argmin(np.abs(path.times - t)))
    return path.word_at(k)


class BrownianEnsemble:
    """Checkpoint statistics of a batch of independent Brownian paths.

    Arrays are indexed (checkpoint, path).  Word columns are present only
    for surface-chart ensembles; word strings are recorded only on request
    (they are the one expensive column).
    """

    def __init__(self, times, displacements, seed, dt, n_paths, *,
                 word_lengths=None, word_log_norms=None, reduced_points=None,
                 words=None):
        self.times = np.asarray(times, dtype=float)
        self.displacements = np.asarray(displacements, dtype=float)
        self.seed = int(seed)
        self.dt = float(dt)
        self.n_paths = int(n_paths)
        self.word_lengths = word_lengths
        self.word_log_norms = word_log_norms
        self.reduced_points = reduced_points
        self.words = words

    @property
    def final_displacements(self) -> np.ndarray:
        return self.displacements[-1]


def sample_ensemble(n_paths: int, t_max: float, dt: float = DEFAULT_DT,
                    seed: int = 0, *, start=BASE_POINT,
                    surface: FuchsianSurface | None = None,
                    checkpoint_times=None, record_words: bool = False,
                    shard_size: int = DEFAULT_SHARD_SIZE) -> BrownianEnsemble:
    """Sample ``n_paths`` independent paths, recording checkpoint statistics.

    Paths are fanned out in shards of ``shard_size``; shard ``j`` draws its
    noise from the seed derived for task ``"shard/j"``, so shards are
    independent tasks and the whole ensemble is reproducible from
    ``seed``.  Checkpoints default to the final time only and otherwise
    snap to the step grid.
    """
    start = ensure_h2_point(start)
    _validate_step(t_max, dt)
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    if checkpoint_times is None:
        checkpoint_times = [t_max]
    ticks = _tick_sizes(t_max, dt)
    tick_ends = np.cumsum(ticks)
    cp_idx = sorted({int(np.argmin(np.abs(tick_ends - ct))) for ct in checkpoint_times})
    cp_times = tick_ends[cp_idx]
    n_cp = len(cp_idx)

    disp = np.empty((n_cp, n_paths))
    wlen = np.empty((n_cp, n_paths), dtype=np.int64) if surface is not None else None
    wnorm = np.empty((n_cp, n_paths)) if surface is not None else None
    reds = np.empty((n_cp, n_paths), dtype=np.complex128) if surface is not None else None
    words: list | None = [list() for _ in range(n_cp)] if (surface is not None and record_words) else None

    for lo in range(0, n_paths, shard_size):
        hi = min(lo + shard_size, n_paths)
        rng = np.random.default_rng(derive_seed(seed, f"shard/{lo // shard_size}"))
        walker = BrownianWalker(np.full(hi - lo, start, dtype=np.complex128),
                                rng, surface=surface)
        next_cp = 0
        for k, h in enumerate(ticks):
            walker.advance(h)
            walker.t[:] = tick_ends[k]
            while next_cp < n_cp and cp_idx[next_cp] == k:
                disp[next_cp, lo:hi] = walker.base_displacements()
                if surface is not None:
                    wlen[next_cp, lo:hi] = walker.word_lengths()
                    wnorm[next_cp, lo:hi] = walker.deck_log_norms()
                    reds[next_cp, lo:hi] = walker.z
                    if words is not None:
                        words[next_cp].extend(walker.words())
                next_cp += 1
    return BrownianEnsemble(
        cp_times, disp, seed, dt, n_paths, word_lengths=wlen,
        word_log_norms=wnorm, reduced_points=reds, words=words,
    )


@dataclass(frozen=True)
class ExitSample:
    """First-exit data from a sphere around the base point."""

    angles: np.ndarray
    times: np.ndarray
    radius: float


def sample_ball_exits(n_exits: int, radius: float, dt: float = 1e-3,
                      seed: int = 0, *, start=None,
                      max_time: float = MAX_TIME) -> ExitSample:
    """First exits of plain Brownian paths through the sphere d(base,.) = radius.

    All paths start at ``start`` (base point by default, which must lie
    inside the sphere); exit points are interpolated linearly inside the
    crossing move.  Returns disk-model polar angles around the base point
    and the exit times.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    _validate_step(max_time, dt)
    z0 = BASE_POINT if start is None else ensure_h2_point(start)
    if distance_h2(BASE_POINT, z0) >= radius:
        raise ValueError("start must lie strictly inside the exit sphere")
    rng = np.random.default_rng(int(seed) & ((1 << 64) - 1))
    walker = BrownianWalker(np.full(int(n_exits), z0, dtype=np.complex128), rng)
    active = np.ones(walker.n_paths, dtype=bool)
    elapsed = 0.0
    while active.any():
        if elapsed >= max_time:
            raise SamplerError(
                f"{int(active.sum())} paths failed to exit radius {radius} "
                f"within time {max_time}"
            )
        hit = walker.advance_with_barrier(dt, radius, +1.0, mask=active)
        active &= ~hit
        elapsed += dt
    pts = walker.lift_points()
    w = (pts - BASE_POINT) / (pts + BASE_POINT)
    return ExitSample(angles=np.angle(w), times=walker.t.copy(), radius=float(radius))


@dataclass(frozen=True)
class HeatKernelModel:
    """Radial density shape of the time-t distance from the start.

    The dominant factor is the Gaussian envelope exp(-(r-t)^2 / (4t))
    around the unit-drift front r = t; ``density_shape`` adds the slowly
    varying (1+r) prefactor.  Both are defined up to one overall constant,
    fitted when comparing with data.
    """

    t: float

    def envelope_log(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return -((r - self.t) ** 2) / (4.0 * self.t)

    def density_shape(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return (1.0 + r) * np.exp(self.envelope_log(r))

    def fitted_band(self, radii, *, n_bins: int = 24, span: float = 2.5):
        """Fit the free constant against a radial sample; return (offset,
        max abs log-residual) over the populated central bins."""
        mids, logdens = _binned_log_density(radii, self.t, n_bins=n_bins, span=span)
        shape = np.log(self.density_shape(mids))
        offset = float(np.mean(logdens - shape))
        resid = logdens - shape - offset
        return offset, float(np.max(np.abs(resid)))


def _binned_log_density(radii, t: float, *, n_bins: int, span: float):
    radii = np.asarray(radii, dtype=float)
    sigma = math.sqrt(2.0 * t)
    lo = max(t - span * sigma, 0.0)
    hi = t + span * sigma
    counts, edges = np.histogram(radii, bins=n_bins, range=(lo, hi))
    mids = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    keep = counts >= 5
    if keep.sum() < 4:
        raise ValueError("too few populated bins for a radial density fit")
    dens = counts[keep] / (radii.size * width)
    return mids[keep], np.log(dens)


def radial_envelope_slope(radii, t: float, *, n_bins: int = 24,
                          span: float = 2.5):
    """Least-squares slope of binned log-density against -(r-t)^2/(4t).

    A correctly normalized sampler gives slope 1 (unit linear drift and
    variance 2t of the radial fluctuation).  Returns (slope, stderr).
    """
    mids, logdens = _binned_log_density(radii, t, n_bins=n_bins, span=span)
    x = -((mids - t) ** 2) / (4.0 * t)
    design = np.column_stack([x, np.ones_like(x)])
    coef, residuals, *_ = np.linalg.lstsq(design, logdens, rcond=None)
    fitted = design @ coef
    dof = max(x.size - 2, 1)
    s2 = float(np.sum((logdens - fitted) ** 2)) / dof
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(s2 / sxx) if sxx > 0 else float("inf")
    return float(coef[0]), stderr
