"""Top Lyapunov exponent of a matrix representation along group words.

A representation of the free surface group assigns an SL(2, C) matrix to
each generator.  Words sampled by very different mechanisms — hyperbolic
Brownian paths, geodesic rays, the ball-exit random walk, or uniform draws
from displacement balls — all see their matrix images grow at a common
exponential rate, the top Lyapunov exponent of the representation.  This
module provides one estimator per sampling mechanism:

- :func:`chi_brown` — Brownian paths, regression of log-norm on time;
- :func:`chi_geodesic` — unit-speed geodesic rays, same regression;
- :func:`chi_mu` — products of ball-exit walk increments, normalized by
  the step count (so it estimates time-per-step times the Brownian rate);
- :func:`chi_lattice` — single uniform draws from balls along an
  admissible radius ladder, normalized by twice the displacement, using
  either the matrix norm or the squared trace.

Alongside the estimators, :func:`deviation_census` counts exactly how many
ball elements have an atypical squared-trace growth rate, and
:func:`fit_comparison_exponent` fits the smallest exponent comparing a
representation's norms to the canonical ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .brownian import BrownianWalker, sample_ensemble
from .errors import (
    ClassificationError,
    ConfigError,
    DegenerateElementError,
    SamplerError,
)
from .lattice import FuchsianSurface, enumerate_ball
from .moebius import (
    BASE_POINT,
    LOXODROMIC,
    MoebiusElement,
    ScaledElement,
    chordal_distance,
    classify,
    fixed_points,
    scaled_product_tuples,
)

__all__ = [
    "Representation",
    "LyapunovEstimate",
    "CensusResult",
    "cusp_word",
    "chi_brown",
    "chi_geodesic",
    "chi_mu",
    "chi_lattice",
    "draw_schedule_words",
    "trace_rays",
    "default_radius_schedule",
    "deviation_census",
    "fit_comparison_exponent",
]

ESTIMATOR_METHODS = ("brown", "geodesic", "mu", "lattice_norm", "lattice_trace")

DEFAULT_PARABOLIC_TOL = 1e-9

#: checkpoints used by the time-regression estimators (second half of the run)
_N_CHECKPOINTS = 9
#: relative floor keeping reported standard errors strictly positive
_SE_FLOOR = 1e-12
#: geodesic rays advance on this time grid
_RAY_STEP = 0.1
_RAY_RENORM_INTERVAL = 64
#: squared traces at or below this magnitude are treated as exactly zero
_TRACE_EXCLUDE_LOG = math.log(1e-12)
#: draws closer to the identity than this are excluded from lattice statistics
_MIN_DRAW_DISPLACEMENT = 1.0


def cusp_word(surface: FuchsianSurface) -> str:
    """The boundary word of the once-punctured torus: the generator
    commutator, whose image must be parabolic for a cusped representation."""
    if len(surface.generator_names) != 2:
        raise ConfigError("cusp word is defined for two-generator surfaces")
    x, y = surface.generator_names
    return x + y + x.upper() + y.upper()


class Representation:
    """A homomorphism from the free surface group into SL(2, C).

    ``images`` maps each generator name to a :class:`MoebiusElement` (or a
    2x2 matrix coerced through it, hence normalized to determinant one).
    Words use the usual letter convention: a lowercase generator name is
    the generator, its uppercase version the inverse.  Word evaluation
    runs through scaled products, so log-norms and log-traces of
    arbitrarily long words never overflow.
    """

    def __init__(self, surface: FuchsianSurface, images) -> None:
        names = surface.generator_names
        unknown = set(images) - set(names)
        if unknown:
            raise ConfigError(f"images given for unknown generators {sorted(unknown)}")
        coerced = {}
        for name in names:
            if name not in images:
                raise ConfigError(f"missing image for generator {name!r}")
            if not (len(name) == 1 and name.isalpha() and name.islower()):
                raise ConfigError(
                    f"generator name {name!r} is not a single lowercase letter"
                )
            g = images[name]
            if not isinstance(g, MoebiusElement):
                g = MoebiusElement.from_matrix(np.asarray(g, dtype=complex))
            coerced[name] = g
        self.surface = surface
        self.images = coerced
        by_char = {}
        for name, g in coerced.items():
            by_char[name] = g.as_tuple()
            by_char[name.upper()] = g.inverse().as_tuple()
        self._by_char = by_char

    @classmethod
    def canonical(cls, surface: FuchsianSurface) -> "Representation":
        """The defining representation: each generator to its own matrix."""
        images = {
            name: MoebiusElement(m[0][0], m[0][1], m[1][0], m[1][1])
            for name, m in zip(surface.generator_names, surface.generator_ints)
        }
        return cls(surface, images)

    def conjugated(self, h: MoebiusElement) -> "Representation":
        """The representation g -> h g h^-1."""
        hinv = h.inverse()
        return Representation(
            self.surface, {name: h @ g @ hinv for name, g in self.images.items()}
        )

    def evaluate(self, word: str) -> ScaledElement:
        """Scaled matrix image of a word (the empty word is the identity)."""
        by_char = self._by_char
        try:
            return scaled_product_tuples(by_char[ch] for ch in word)
        except KeyError as exc:
            raise ConfigError(f"word contains unknown letter {exc.args[0]!r}") from None

    def letter_tuple(self, letter: str) -> tuple:
        """Matrix 4-tuple of one letter (lowercase generator, uppercase inverse)."""
        try:
            return self._by_char[letter]
        except KeyError:
            raise ConfigError(f"unknown letter {letter!r}") from None

    def word_tuple(self, word: str) -> tuple:
        """Plain (unscaled) matrix 4-tuple of a word.

        Unlike :class:`MoebiusElement` products, no sign canonicalization is
        applied, so traces keep the sign determined by the generator images
        — which matters for quantities like trace-of-commutator that are
        not functions of the squared trace.  Long words can overflow; use
        :meth:`evaluate` for growth-rate work.
        """
        by_char = self._by_char
        m = (1.0 + 0.0j, 0.0j, 0.0j, 1.0 + 0.0j)
        try:
            for ch in word:
                t = by_char[ch]
                m = (
                    m[0] * t[0] + m[1] * t[2],
                    m[0] * t[1] + m[1] * t[3],
                    m[2] * t[0] + m[3] * t[2],
                    m[2] * t[1] + m[3] * t[3],
                )
        except KeyError as exc:
            raise ConfigError(f"word contains unknown letter {exc.args[0]!r}") from None
        return m

    def trace_sq(self, word: str) -> complex:
        """Squared trace of the (plain) word image."""
        m = self.word_tuple(word)
        tr = m[0] + m[3]
        return tr * tr

    def parabolic_defect(self, word: str | None = None) -> float:
        """|trace^2 - 4| of the boundary-word image (0 for a true cusp)."""
        if word is None:
            word = cusp_word(self.surface)
        log_defect = self.evaluate(word).log_abs_trace_sq_minus(4.0)
        if log_defect == -math.inf:
            return 0.0
        try:
            return math.exp(log_defect)
        except OverflowError:
            return math.inf

    @property
    def parabolic_ok(self) -> bool:
        """Whether the boundary word maps to a parabolic (within 1e-9)."""
        return self.parabolic_defect() <= DEFAULT_PARABOLIC_TOL

    def is_nonelementary(self, *, max_len: int = 6, separation: float = 1e-6) -> bool:
        """Search short words for two loxodromic images whose fixed-point
        pairs are disjoint on the sphere; such a pair rules out every
        elementary (finite-orbit or shared-fixed-point) configuration."""
        found: list = []
        stack: list = [("", -1)]
        while stack:
            word, last = stack.pop()
            if word:
                try:
                    el = self.evaluate(word).to_element()
                except DegenerateElementError:
                    el = None
                if el is not None and classify(el) == LOXODROMIC:
                    pts = fixed_points(el)
                    for other in found:
                        gap = min(
                            chordal_distance(p, q) for p in pts for q in other
                        )
                        if gap > separation:
                            return True
                    found.append(pts)
            if len(word) < max_len:
                for code, ch in enumerate(_letter_chars(self.surface)):
                    if last >= 0 and code == last ^ 1:
                        continue
                    stack.append((word + ch, code))
        return False


def _letter_chars(surface: FuchsianSurface) -> tuple:
    out = []
    for name in surface.generator_names:
        out.append(name)
        out.append(name.upper())
    return tuple(out)


@dataclass(frozen=True)
class LyapunovEstimate:
    """A growth-rate estimate: value, standard error, and the sampling
    method that produced it, with the run parameters snapshotted."""

    value: float
    stderr: float
    method: str
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.method not in ESTIMATOR_METHODS:
            raise ConfigError(f"unknown estimator method {self.method!r}")
        if not math.isfinite(self.value):
            raise DegenerateElementError("estimate value is not finite")
        if not (math.isfinite(self.stderr) and self.stderr > 0.0):
            raise ConfigError("estimate standard error must be finite and positive")


def _check_rep(surface: FuchsianSurface, rep: Representation,
               require_parabolic: bool) -> None:
    if not isinstance(rep, Representation):
        raise ConfigError("rep must be a Representation")
    if rep.surface != surface:
        raise ConfigError("representation was built for a different surface")
    if require_parabolic and not rep.parabolic_ok:
        raise ClassificationError(
            "boundary word is not parabolic "
            f"(defect {rep.parabolic_defect():.3g}); pass "
            "require_parabolic=False to estimate anyway"
        )


def _evaluate_log_norms(rep: Representation, words_per_checkpoint) -> np.ndarray:
    rows = []
    for words in words_per_checkpoint:
        rows.append([rep.evaluate(w).log_op_norm() for w in words])
    out = np.asarray(rows, dtype=float)
    if not np.isfinite(out).all():
        raise DegenerateElementError(
            "non-finite log-norm along a sampled word; the representation "
            "is degenerate on this sample"
        )
    return out


def _regression_estimate(times: np.ndarray, log_norms: np.ndarray,
                         method: str, params: dict) -> LyapunovEstimate:
    """Slope of log-norm against time, path-batched standard error.

    The per-path regression slope is linear in the observations, so its
    average equals the slope fitted to the mean curve; the spread across
    paths gives the batching error.  A residual-based error from the mean
    curve keeps the estimate usable for deterministic inputs (single rays).
    """
    k, n = log_norms.shape
    centered = times - times.mean()
    denom = float(centered @ centered)
    if k < 2 or denom <= 0.0:
        raise ConfigError("need at least two distinct checkpoint times")
    weights = centered / denom
    slopes = weights @ log_norms
    value = float(slopes.mean())
    batch_se = float(slopes.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    mean_curve = log_norms.mean(axis=1)
    resid = mean_curve - (mean_curve.mean() + value * centered)
    fit_se = (
        math.sqrt(float(resid @ resid) / (k - 2) / denom) if k > 2 else 0.0
    )
    stderr = max(batch_se, fit_se, _SE_FLOOR * (1.0 + abs(value)))
    endpoint = log_norms[-1] / times[-1]
    params = dict(params)
    params["checkpoint_times"] = [float(t) for t in times]
    params["endpoint_value"] = float(endpoint.mean())
    params["endpoint_stderr"] = float(
        max(endpoint.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0,
            _SE_FLOOR * (1.0 + abs(float(endpoint.mean()))))
    )
    return LyapunovEstimate(value, stderr, method, params)


def _checkpoint_grid(t_max: float) -> np.ndarray:
    return np.linspace(0.5 * t_max, t_max, _N_CHECKPOINTS)


def chi_brown(surface: FuchsianSurface, rep: Representation,
              t_max: float = 40.0, n_paths: int = 400, dt: float = 5e-3,
              seed: int = 0, *, require_parabolic: bool = True) -> LyapunovEstimate:
    """Brownian estimator of the top Lyapunov exponent.

    Samples ``n_paths`` Brownian paths on the surface up to time ``t_max``,
    reads off the deck word at checkpoints spanning the second half of the
    run, and regresses the mean log matrix norm of the word images on
    time.  The regression slope (value) suppresses the bounded transient
    that biases the endpoint quotient, which is reported alongside it in
    ``params['endpoint_value']``.
    """
    _check_rep(surface, rep, require_parabolic)
    if not t_max > 0.0:
        raise ConfigError("t_max must be positive")
    ens = sample_ensemble(
        n_paths, t_max, dt=dt, seed=seed, surface=surface,
        checkpoint_times=_checkpoint_grid(t_max), record_words=True,
    )
    log_norms = _evaluate_log_norms(rep, ens.words)
    params = {"t_max": float(t_max), "n_paths": int(n_paths),
              "dt": float(dt), "seed": int(seed)}
    return _regression_estimate(ens.times, log_norms, "brown", params)


def trace_rays(surface: FuchsianSurface, directions: np.ndarray,
                checkpoint_times: np.ndarray):
    """Trace unit-speed geodesic rays from the base point with word tracking.

    Each ray carries a real frame matrix mapping the model ray (straight up
    from the base point) to its current chart position; advancing is one
    right-multiplication by a diagonal flow step, and every fold event
    left-multiplies by the net chart transform reported by the reduction.
    Returns the checkpoint times actually used (snapped to the step grid)
    and the deck words per checkpoint.
    """
    n = directions.size
    walker = BrownianWalker(
        np.full(n, BASE_POINT, dtype=complex),
        np.random.default_rng(0),
        surface=surface,
    )
    half = 0.5 * (directions - 0.5 * math.pi)
    frames = np.zeros((n, 2, 2))
    frames[:, 0, 0] = np.cos(half)
    frames[:, 0, 1] = np.sin(half)
    frames[:, 1, 0] = -np.sin(half)
    frames[:, 1, 1] = np.cos(half)
    h = _RAY_STEP
    cp_steps = np.unique(np.maximum(np.round(np.asarray(checkpoint_times) / h), 1.0))
    cp_steps = cp_steps.astype(np.int64)
    flow = np.array([[math.exp(0.5 * h), 0.0], [0.0, math.exp(-0.5 * h)]])
    cp_set = set(int(s) for s in cp_steps)
    out_words = []
    out_times = []
    for step in range(1, int(cp_steps[-1]) + 1):
        frames = frames @ flow
        num = frames[:, 0, 0] * 1j + frames[:, 0, 1]
        den = frames[:, 1, 0] * 1j + frames[:, 1, 1]
        walker.z[:] = num / den
        walker._margin -= 2.0 * h
        due = np.flatnonzero(walker._margin <= 0.0)
        if due.size:
            moved: dict = {}
            walker._reduce(due, collect=moved)
            for p, transform in moved.items():
                frames[p] = transform @ frames[p]
        if step % _RAY_RENORM_INTERVAL == 0:
            det = (frames[:, 0, 0] * frames[:, 1, 1]
                   - frames[:, 0, 1] * frames[:, 1, 0])
            frames /= np.sqrt(det)[:, None, None]
        if step in cp_set:
            out_words.append(walker.words())
            out_times.append(step * h)
    walker._full_check()
    return np.array(out_times), out_words


def chi_geodesic(surface: FuchsianSurface, rep: Representation,
                 t_max: float = 40.0, n_rays: int = 400, seed: int = 0, *,
                 directions=None,
                 require_parabolic: bool = True) -> LyapunovEstimate:
    """Geodesic-ray estimator of the top Lyapunov exponent.

    Shoots rays from the base point in uniformly random directions, tracks
    the deck word with the same reduction machinery as the Brownian
    sampler, and applies the same time regression to the log matrix norms
    of the word images.  ``directions`` (tangent angles at the base point)
    overrides the random draw, which makes deterministic smoke tests — such
    as a ray along a generator axis — possible.
    """
    _check_rep(surface, rep, require_parabolic)
    if not t_max > 0.0:
        raise ConfigError("t_max must be positive")
    if directions is None:
        if n_rays < 1:
            raise ConfigError("need at least one ray")
        rng = np.random.default_rng(seed)
        directions = rng.uniform(-math.pi, math.pi, n_rays)
    else:
        directions = np.atleast_1d(np.asarray(directions, dtype=float))
        if directions.size == 0:
            raise ConfigError("need at least one ray direction")
    times, words = trace_rays(surface, directions, _checkpoint_grid(t_max))
    log_norms = _evaluate_log_norms(rep, words)
    params = {"t_max": float(t_max), "n_rays": int(directions.size),
              "seed": int(seed), "step": _RAY_STEP}
    return _regression_estimate(times, log_norms, "geodesic", params)


def chi_mu(surface: FuchsianSurface, rep: Representation, runs, *,
           n_steps: int | None = None,
           require_parabolic: bool = True) -> LyapunovEstimate:
    """Per-step estimator over ball-exit walk increments.

    For each chain in ``runs`` (an ensemble of discretization runs on the
    same surface), multiplies the images of the first ``n_steps``
    increments and divides the log norm by the step count; the average
    over chains estimates the mean time-per-step times the Brownian rate.
    """
    _check_rep(surface, rep, require_parabolic)
    runs = tuple(runs)
    if not runs:
        raise ConfigError("need at least one discretization run")
    available = min(run.n_steps for run in runs)
    n = available if n_steps is None else int(n_steps)
    if not 1 <= n <= available:
        raise ConfigError(
            f"n_steps must lie in [1, {available}] for this ensemble, got {n}"
        )
    values = np.empty(len(runs))
    for j, run in enumerate(runs):
        word = "".join(run.increments[:n])
        values[j] = rep.evaluate(word).log_op_norm() / n
    if not np.isfinite(values).all():
        raise DegenerateElementError("non-finite log-norm along a chain product")
    value = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(len(runs))) if len(runs) > 1 else 0.0
    stderr = max(se, _SE_FLOOR * (1.0 + abs(value)))
    params = {"n_steps": n, "n_chains": len(runs)}
    return LyapunovEstimate(value, stderr, "mu", params)


def default_radius_schedule(start: float = 6.0, exponent: float = 0.7,
                            cap: float = 12.0) -> np.ndarray:
    """Radius ladder start + n**exponent truncated at ``cap``.

    With exponent below 1 the ladder still grows without bound, so its
    exponential tail sums converge for every positive rate — dense enough
    to average over, sparse enough to enumerate.
    """
    if not 0.0 < exponent < 1.0:
        raise ConfigError("schedule exponent must lie in (0, 1)")
    radii = []
    n = 1
    while True:
        r = start + n ** exponent
        if r > cap:
            break
        radii.append(r)
        n += 1
    if not radii:
        raise ConfigError("enumeration cap leaves no radii in the schedule")
    return np.array(radii)


def draw_schedule_words(surface: FuchsianSurface, radii, seed: int,
                        draws_per_radius: int = 1) -> list:
    """Uniform ball draws along a radius ladder.

    Returns one ``(radius, word, displacement)`` triple per draw, in
    schedule order.  Shared by the lattice estimator and the grid
    machinery, whose common-random-numbers protocol evaluates the same
    drawn words under every representation of a family.
    """
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    if radii.size == 0 or not (radii > 0.0).all():
        raise ConfigError("radius schedule must be non-empty and positive")
    if draws_per_radius < 1:
        raise ConfigError("draws_per_radius must be at least 1")
    table = enumerate_ball(surface, float(radii.max()))
    rng = np.random.default_rng(seed)
    draws = []
    for r in radii:
        sub = table if r >= table.radius else table.restricted(float(r))
        for _ in range(draws_per_radius):
            i = int(rng.integers(len(sub)))
            draws.append((float(r), sub.word(i), float(sub.displacements[i])))
    return draws


def chi_lattice(surface: FuchsianSurface, rep: Representation, radii=None,
                seed: int = 0, *, use_trace: bool = False,
                draws_per_radius: int = 1, tail_fraction: float = 0.5,
                require_parabolic: bool = True) -> LyapunovEstimate:
    """Lattice-draw estimator of the top Lyapunov exponent.

    Draws one (or a few) uniform elements from the displacement ball at
    each radius of an admissible ladder and evaluates the per-draw
    statistic log squared-norm (or log squared-trace) over twice the
    displacement; the two variants share the same normalizer and the same
    limit.
    The estimate is the tail average: early rungs are discarded as
    transient.  Draws with displacement below 1 are excluded (the identity
    has no growth rate); with ``use_trace``, draws whose squared trace
    vanishes to within 1e-12 carry no information and are excluded too.
    Exclusions are logged in ``params['excluded']``.
    """
    _check_rep(surface, rep, require_parabolic)
    if radii is None:
        radii = default_radius_schedule()
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    if not 0.0 < tail_fraction <= 1.0:
        raise ConfigError("tail_fraction must lie in (0, 1]")
    draws = draw_schedule_words(surface, radii, seed, draws_per_radius)
    stats: list = []
    excluded: list = []
    for r, word, disp in draws:
        if disp < _MIN_DRAW_DISPLACEMENT:
            excluded.append(
                {"radius": r, "word": word, "reason": "displacement below 1"}
            )
            continue
        image = rep.evaluate(word)
        if use_trace:
            log_stat = image.log_abs_trace_sq()
            if log_stat <= _TRACE_EXCLUDE_LOG:
                excluded.append(
                    {"radius": r, "word": word,
                     "reason": "squared trace within 1e-12 of zero"}
                )
                continue
        else:
            log_stat = 2.0 * image.log_op_norm()
        stats.append(log_stat / (2.0 * disp))
    if not stats:
        raise SamplerError("every lattice draw was excluded; enlarge the radii")
    arr = np.array(stats)
    tail_start = min(arr.size - 1, int(math.floor(arr.size * (1.0 - tail_fraction))))
    tail = arr[tail_start:]
    value = float(tail.mean())
    se = float(tail.std(ddof=1) / math.sqrt(tail.size)) if tail.size > 1 else 0.0
    stderr = max(se, _SE_FLOOR * (1.0 + abs(value)))
    params = {
        "radii": [float(r) for r in radii],
        "seed": int(seed),
        "draws_per_radius": int(draws_per_radius),
        "tail_count": int(tail.size),
        "per_draw": [float(s) for s in arr],
        "excluded": excluded,
    }
    method = "lattice_trace" if use_trace else "lattice_norm"
    return LyapunovEstimate(value, stderr, method, params)


@dataclass(frozen=True)
class CensusResult:
    """Exact deviation counts over displacement balls.

    For each radius r of the ladder, ``fractions`` holds the share of ball
    elements whose squared-trace growth rate, normalized by the ball
    radius, deviates from the reference rate by more than epsilon.
    Iterating the result yields ``(bad_fraction, exponent)``: the fraction
    at the largest radius and the fitted decay exponent of the fraction
    across the ladder (nan when fewer than two rungs have positive
    fractions).
    """

    radii: np.ndarray
    fractions: np.ndarray
    counts: np.ndarray
    sizes: np.ndarray
    epsilon: float
    chi_ref: float
    exponent: float

    @property
    def bad_fraction(self) -> float:
        return float(self.fractions[-1])

    def __iter__(self):
        return iter((self.bad_fraction, self.exponent))


def deviation_census(surface: FuchsianSurface, rep: Representation, radii,
                     epsilon: float, *, chi_ref: float) -> CensusResult:
    """Count ball elements with atypical squared-trace growth.

    An element of the radius-r ball is "bad" when its statistic
    log|trace^2| over 2r differs from ``chi_ref`` by more than ``epsilon``
    (note the normalization by the ball radius, not the element's own
    displacement, so shallow elements are bad by default and the fraction
    measures how much of the ball concentrates near the boundary shell
    with the typical growth).  ``chi_ref`` is a supplied reference — use a
    measured Brownian estimate, since no closed form exists in general.
    """
    if not epsilon > 0.0:
        raise ConfigError("epsilon must be positive")
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    if radii.size == 0 or not (radii > 0.0).all():
        raise ConfigError("radius ladder must be non-empty and positive")
    if not (np.diff(radii) > 0.0).all():
        raise ConfigError("radius ladder must be strictly increasing")
    table = enumerate_ball(surface, float(radii[-1]))
    counts = np.zeros(radii.size, dtype=np.int64)
    sizes = np.zeros(radii.size, dtype=np.int64)
    for k, r in enumerate(radii):
        sub = table if r >= table.radius else table.restricted(float(r))
        log_tr2 = np.array(
            [rep.evaluate(sub.word(i)).log_abs_trace_sq() for i in range(len(sub))]
        )
        stat = log_tr2 / (2.0 * r)
        deviation = np.abs(stat - chi_ref)
        bad = ~np.isfinite(stat) | (deviation > epsilon)
        counts[k] = int(bad.sum())
        sizes[k] = len(sub)
    fractions = counts / sizes
    positive = fractions > 0.0
    if positive.sum() >= 2:
        exponent = float(
            np.polyfit(radii[positive], np.log(fractions[positive]), 1)[0]
        )
    else:
        exponent = math.nan
    return CensusResult(radii=radii, fractions=fractions, counts=counts,
                        sizes=sizes, epsilon=float(epsilon),
                        chi_ref=float(chi_ref), exponent=exponent)


def fit_comparison_exponent(surface: FuchsianSurface, rep: Representation,
                            r: float) -> float:
    """Smallest exponent comparing word norms to the canonical ones.

    Returns the maximum over non-identity ball elements of the ratio
    log-norm of the representation image to log-norm of the canonical
    image, so that ``norm(rep(w)) <= norm(canonical(w)) ** beta_hat``
    holds exactly on the enumerated ball.  Nondecreasing in r (the maximum
    runs over a larger set).
    """
    table = enumerate_ball(surface, float(r))
    canonical = Representation.canonical(surface)
    best = -math.inf
    for i in range(len(table)):
        if float(table.displacements[i]) <= 1e-9:
            continue
        word = table.word(i)
        numerator = rep.evaluate(word).log_op_norm()
        denominator = canonical.evaluate(word).log_op_norm()
        best = max(best, numerator / denominator)
    if best == -math.inf:
        raise SamplerError("ball contains no non-identity elements")
    return best
