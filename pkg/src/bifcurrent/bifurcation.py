"""Parameter families of representations and their growth-rate geometry.

A one-complex-parameter holomorphic family assigns to each parameter a
representation of the surface group, normalized so the boundary word stays
parabolic.  Over a rectangle of parameters this module computes:

- a grid of Lyapunov-exponent values with common random numbers across
  nodes (:func:`lyapunov_grid`), so the noise field is smooth in the
  parameter and discrete second derivatives are meaningful;
- the discrete complex-Laplacian mass of that grid (:func:`ddc_density`),
  normalized so the Laplacian of ``log|lambda - c|`` carries unit mass;
- zero divisors of squared-trace level sets by boundary winding numbers
  (:func:`divisor_zeros`), with the mass normalization that makes them
  comparable to the Laplacian mass;
- random closed geodesics under three sampling models
  (:func:`random_geodesic`) and the equidistribution experiment comparing
  their normalized level-set potentials to the Lyapunov field
  (:func:`equidist_experiment`);
- a necessary-condition discreteness score (:func:`discreteness_heuristic`).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .brownian import sample_ensemble
from .errors import ConfigError, SamplerError
from .harness import derive_seed
from .lattice import (
    FuchsianSurface,
    canonical_class_word,
    modular_torus,
    sample_geodesic_classes,
    word_codes,
    word_inverse,
)
from .lyapunov import (
    Representation,
    default_radius_schedule,
    draw_schedule_words,
    trace_rays,
)

__all__ = [
    "ParameterFamily",
    "CurrentGrid",
    "DivisorResult",
    "GeodesicSample",
    "EquidistReport",
    "maskit_family",
    "markov_family",
    "lyapunov_grid",
    "grid_from_function",
    "ddc_density",
    "divisor_zeros",
    "random_geodesic",
    "equidist_experiment",
    "discreteness_heuristic",
    "GEODESIC_MODELS",
]

GEODESIC_MODELS = ("thurston", "brownian", "length_based")

#: node-count caps per grid estimator (cost grows linearly in nodes)
_NODE_CAPS = {"lattice_trace": 101 * 101, "brown": 41 * 41}
#: level-set potentials are clamped below at this log value
DEFAULT_CLAMP = -40.0
#: |f| below this (relative) threshold counts as a boundary zero hit
_BOUNDARY_ZERO_TOL = 1e-12
#: level perturbation on retries: magnitude 1e-9, complex direction so that
#: zeros pinned to symmetry lines of the rectangle move off them
_LEVEL_PERTURBATION = 1e-9 * (0.6 + 0.8j)
#: lattice offsets (in cell fractions) tried when a winding stays ambiguous;
#: incommensurate fractions dodge zeros sitting exactly on grid lines
_LATTICE_OFFSETS = ((0.0, 0.0), (0.05, 0.037), (-0.11, 0.083))


# --------------------------------------------------------------------------
# parameter families


@dataclass(frozen=True)
class ParameterFamily:
    """A holomorphic family of representations over a parameter rectangle.

    ``evaluator`` maps a complex parameter to a :class:`Representation`;
    ``rectangle`` is (re_min, re_max, im_min, im_max); ``constraint_words``
    must stay parabolic across the rectangle (the family lives in the
    relative character variety).
    """

    name: str
    evaluator: object = field(repr=False)
    rectangle: tuple
    constraint_words: tuple

    def rep(self, lam: complex) -> Representation:
        return self.evaluator(complex(lam))

    def constraint_defect(self, lam: complex) -> float:
        """Largest |trace^2 - 4| over the constraint words at ``lam``."""
        rep = self.rep(lam)
        return max(
            (abs(rep.trace_sq(w) - 4.0) for w in self.constraint_words),
            default=0.0,
        )


def maskit_family(surface: FuchsianSurface | None = None) -> ParameterFamily:
    """The standard one-parameter slice of punctured-torus representations.

    The first generator maps to [[-i*mu, -i], [-i, 0]] and the second to
    the constant parabolic [[1, 2], [0, 1]]; the generator commutator has
    trace -2 identically, so the boundary stays parabolic for every
    parameter.  The default rectangle covers the classically interesting
    strip above the real axis.
    """
    surface = modular_torus() if surface is None else surface
    x_name, y_name = surface.generator_names

    def evaluator(mu: complex) -> Representation:
        images = {
            x_name: np.array([[-1j * mu, -1j], [-1j, 0.0]], dtype=complex),
            y_name: np.array([[1.0, 2.0], [0.0, 1.0]], dtype=complex),
        }
        return Representation(surface, images)

    return ParameterFamily(
        name="maskit",
        evaluator=evaluator,
        rectangle=(-1.0, 1.0, 1.0, 2.2),
        constraint_words=(_commutator_word(surface),),
    )


def markov_family(surface: FuchsianSurface | None = None, *, x: float = 3.0,
                  z_sign: int = 1, xi_sign: int = 1) -> ParameterFamily:
    """Trace-coordinate slice: fix the first generator trace, vary the second.

    Given traces (x fixed, y the parameter), the third trace z solves
    x^2 + y^2 + z^2 = xyz (so the commutator trace is -2 and the boundary
    is parabolic by construction), and matrices are rebuilt from the trace
    triple.  The two square roots (z and the matrix parameter) each pick a
    branch via ``z_sign``/``xi_sign``; the default rectangle
    [2.8, 4.4] x [-0.7, 0.7] avoids both branch cuts, and at y = 3 the
    default branch reproduces the canonical trace triple (3, 3, 6).
    Custom rectangles may cross the cuts; continuity is then the caller's
    responsibility.
    """
    surface = modular_torus() if surface is None else surface
    x_name, y_name = surface.generator_names
    if z_sign not in (-1, 1) or xi_sign not in (-1, 1):
        raise ConfigError("branch signs must be +1 or -1")

    def evaluator(y: complex) -> Representation:
        z = 0.5 * (x * y + z_sign * cmath.sqrt(x * x * y * y - 4.0 * (x * x + y * y)))
        xi = 0.5 * (-z + xi_sign * cmath.sqrt(z * z - 4.0))
        if xi == 0.0:
            raise ConfigError(f"degenerate matrix parameter at y={y}")
        images = {
            x_name: np.array([[x, 1.0], [-1.0, 0.0]], dtype=complex),
            y_name: np.array([[0.0, xi], [-1.0 / xi, y]], dtype=complex),
        }
        return Representation(surface, images)

    return ParameterFamily(
        name="markov",
        evaluator=evaluator,
        rectangle=(2.8, 4.4, -0.7, 0.7),
        constraint_words=(_commutator_word(surface),),
    )


def _commutator_word(surface: FuchsianSurface) -> str:
    x_name, y_name = surface.generator_names
    return x_name + y_name + x_name.upper() + y_name.upper()


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class CurrentGrid:
    """Node grid of growth-rate values over a parameter rectangle.

    ``chi_values`` and ``stderr_values`` are (ny, nx) arrays over the node
    lattice (edges included, row j fixed imaginary part); nan marks a hole.
    ``ddc_density`` holds the discrete complex-Laplacian mass per interior
    node (nan on edges and next to holes); ``ddc_smooth`` a locally
    averaged nonnegative version for display.
    """

    rectangle: tuple
    nx: int
    ny: int
    chi_values: np.ndarray
    stderr_values: np.ndarray
    ddc_density: np.ndarray | None = None
    ddc_smooth: np.ndarray | None = None
    metadata: dict = field(default_factory=dict, repr=False)

    @property
    def xs(self) -> np.ndarray:
        re_min, re_max, _, _ = self.rectangle
        return np.linspace(re_min, re_max, self.nx)

    @property
    def ys(self) -> np.ndarray:
        _, _, im_min, im_max = self.rectangle
        return np.linspace(im_min, im_max, self.ny)

    @property
    def dx(self) -> float:
        re_min, re_max, _, _ = self.rectangle
        return (re_max - re_min) / (self.nx - 1)

    @property
    def dy(self) -> float:
        _, _, im_min, im_max = self.rectangle
        return (im_max - im_min) / (self.ny - 1)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def lambdas(self) -> np.ndarray:
        """Complex node coordinates, shape (ny, nx)."""
        return self.xs[None, :] + 1j * self.ys[:, None]


def _validate_grid_shape(nx: int, ny: int) -> None:
    if nx < 3 or ny < 3:
        raise ConfigError("grids need at least 3 nodes per side")


def _grid_letter_arrays(family: ParameterFamily, lambdas_flat: np.ndarray) -> np.ndarray:
    """Letter matrices per node: shape (n_nodes, 4, 2, 2), code order."""
    n = lambdas_flat.size
    out = np.empty((n, 4, 2, 2), dtype=complex)
    chars = None
    for k in range(n):
        rep = family.rep(lambdas_flat[k])
        if chars is None:
            chars = []
            for name in rep.surface.generator_names:
                chars.append(name)
                chars.append(name.upper())
        for code, ch in enumerate(chars):
            out[k, code] = np.asarray(rep.letter_tuple(ch), dtype=complex).reshape(2, 2)
    return out


def _word_field(letters: np.ndarray, word: str):
    """Product of a word's letter matrices at every node simultaneously.

    Returns (matrices, log_scales): the true per-node matrix is
    ``matrices[k] * exp(log_scales[k])``.  Rescaling keeps entries tame for
    long words.
    """
    n = letters.shape[0]
    m = np.broadcast_to(np.eye(2, dtype=complex), (n, 2, 2)).copy()
    logs = np.zeros(n)
    codes = word_codes(word)
    for idx, code in enumerate(codes):
        m = m @ letters[:, int(code)]
        if (idx + 1) % 16 == 0:
            mx = np.abs(m).max(axis=(1, 2))
            m /= mx[:, None, None]
            logs += np.log(mx)
    return m, logs


def _field_log_op_norm(m: np.ndarray, logs: np.ndarray) -> np.ndarray:
    """Per-node log operator norm of a determinant-1 scaled matrix field."""
    frob = (np.abs(m) ** 2).sum(axis=(1, 2))
    log_f = np.log(frob)
    ratio_log = math.log(4.0) - 4.0 * logs - 2.0 * log_f
    corr = np.zeros_like(log_f)
    live = ratio_log >= -50.0
    ratio = np.minimum(np.exp(ratio_log[live]), 1.0)
    corr[live] = np.log((1.0 + np.sqrt(1.0 - ratio)) / 2.0)
    return logs + 0.5 * (log_f + corr)


def _field_trace_sq(m: np.ndarray, logs: np.ndarray) -> np.ndarray:
    """Per-node true squared trace (complex); may overflow to inf."""
    tr = m[:, 0, 0] + m[:, 1, 1]
    with np.errstate(over="ignore"):
        return tr * tr * np.exp(2.0 * logs)


def lyapunov_grid(family: ParameterFamily, nx: int, ny: int,
                  estimator: str = "lattice_trace", master_seed: int = 0, *,
                  rectangle: tuple | None = None,
                  estimator_params: dict | None = None,
                  node_cap: int | None = None) -> CurrentGrid:
    """Growth-rate values over a node grid with common random numbers.

    The same random draws (lattice words, or Brownian path words) are
    evaluated under the representation at every node — only the family
    parameter changes — so the sampled noise field is smooth in the
    parameter and discrete Laplacians of the grid are dominated by the
    signal.  Per-node standard errors are recorded; estimator failures at
    a node leave nan holes.
    """
    if estimator not in _NODE_CAPS:
        raise ConfigError(
            f"estimator must be one of {sorted(_NODE_CAPS)}, got {estimator!r}"
        )
    _validate_grid_shape(nx, ny)
    cap = _NODE_CAPS[estimator] if node_cap is None else int(node_cap)
    if nx * ny > cap:
        raise ConfigError(f"grid has {nx * ny} nodes, above the cap {cap}")
    rectangle = family.rectangle if rectangle is None else tuple(rectangle)
    params = dict(estimator_params or {})
    surface = family.rep(_rect_center(rectangle)).surface

    xs = np.linspace(rectangle[0], rectangle[1], nx)
    ys = np.linspace(rectangle[2], rectangle[3], ny)
    lambdas = (xs[None, :] + 1j * ys[:, None]).ravel()
    letters = _grid_letter_arrays(family, lambdas)

    if estimator == "lattice_trace":
        radii = np.asarray(params.pop("radii", default_radius_schedule()), dtype=float)
        draws_per_radius = int(params.pop("draws_per_radius", 1))
        tail_fraction = float(params.pop("tail_fraction", 0.5))
        if params:
            raise ConfigError(f"unknown estimator params {sorted(params)}")
        draws = draw_schedule_words(
            surface, radii, derive_seed(master_seed, "grid/lattice"),
            draws_per_radius,
        )
        kept = [(r, w, d) for r, w, d in draws if d >= 1.0]
        if not kept:
            raise SamplerError("every grid draw fell below the displacement floor")
        stats = np.empty((len(kept), lambdas.size))
        for row, (_, word, disp) in enumerate(kept):
            m, logs = _word_field(letters, word)
            tr2 = _field_trace_sq(m, logs)
            with np.errstate(divide="ignore"):
                stats[row] = np.log(np.abs(tr2)) / (2.0 * disp)
        tail_start = min(len(kept) - 1,
                         int(math.floor(len(kept) * (1.0 - tail_fraction))))
        tail = stats[tail_start:]
        tail = np.where(np.isfinite(tail), tail, np.nan)
        with np.errstate(invalid="ignore"):
            chi = np.nanmean(tail, axis=0)
            spread = np.nanstd(tail, axis=0, ddof=1)
        live = np.sum(np.isfinite(tail), axis=0)
        stderr = np.where(live > 1, spread / np.sqrt(np.maximum(live, 1)), np.nan)
        stderr = np.maximum(stderr, 1e-12 * (1.0 + np.abs(chi)))
        excluded = int(np.sum(~np.isfinite(stats))) + (len(draws) - len(kept))
        metadata = {
            "estimator": estimator,
            "master_seed": int(master_seed),
            "radii": [float(r) for r in radii],
            "draws": [(r, w, d) for r, w, d in kept],
            "tail_count": int(tail.shape[0]),
            "excluded": excluded,
            "surface": surface.name,
        }
    else:  # brown
        t_max = float(params.pop("t_max", 40.0))
        n_paths = int(params.pop("n_paths", 100))
        dt = float(params.pop("dt", 5e-3))
        if params:
            raise ConfigError(f"unknown estimator params {sorted(params)}")
        checkpoints = np.linspace(0.5 * t_max, t_max, 9)
        ens = sample_ensemble(
            n_paths, t_max, dt=dt, seed=derive_seed(master_seed, "grid/brown"),
            surface=surface, checkpoint_times=checkpoints, record_words=True,
        )
        n_cp = len(ens.times)
        log_norms = np.empty((n_cp, lambdas.size, n_paths))
        for k in range(n_cp):
            for p in range(n_paths):
                m, logs = _word_field(letters, ens.words[k][p])
                log_norms[k, :, p] = _field_log_op_norm(m, logs)
        centered = ens.times - ens.times.mean()
        weights = centered / float(centered @ centered)
        slopes = np.einsum("k,knp->np", weights, log_norms)
        chi = slopes.mean(axis=1)
        stderr = slopes.std(axis=1, ddof=1) / math.sqrt(n_paths)
        stderr = np.maximum(stderr, 1e-12 * (1.0 + np.abs(chi)))
        metadata = {
            "estimator": estimator,
            "master_seed": int(master_seed),
            "t_max": t_max,
            "n_paths": n_paths,
            "dt": dt,
            "checkpoint_times": [float(t) for t in ens.times],
            "surface": surface.name,
        }

    return CurrentGrid(
        rectangle=rectangle, nx=nx, ny=ny,
        chi_values=chi.reshape(ny, nx),
        stderr_values=np.asarray(stderr).reshape(ny, nx),
        metadata=metadata,
    )


def grid_from_function(rectangle, nx: int, ny: int, fn) -> CurrentGrid:
    """Grid whose values come from an analytic function of the parameter.

    Used to calibrate the Laplacian stencil against model potentials with
    known mass and to build constant-family baselines.
    """
    _validate_grid_shape(nx, ny)
    rectangle = tuple(float(v) for v in rectangle)
    xs = np.linspace(rectangle[0], rectangle[1], nx)
    ys = np.linspace(rectangle[2], rectangle[3], ny)
    chi = np.empty((ny, nx))
    for j in range(ny):
        for i in range(nx):
            chi[j, i] = float(fn(complex(xs[i], ys[j])))
    stderr = np.full((ny, nx), 1e-12)
    return CurrentGrid(rectangle=rectangle, nx=nx, ny=ny, chi_values=chi,
                       stderr_values=stderr,
                       metadata={"estimator": "analytic"})


def _rect_center(rectangle) -> complex:
    re_min, re_max, im_min, im_max = rectangle
    return complex(0.5 * (re_min + re_max), 0.5 * (im_min + im_max))


# --------------------------------------------------------------------------
# discrete complex Laplacian


def ddc_density(grid: CurrentGrid, *, smooth_rounds: int = 200) -> CurrentGrid:
    """Fill the discrete complex-Laplacian mass per interior node.

    The five-point Laplacian of the value field, times cell area over 2*pi,
    gives a mass normalized so the field log|lambda - c| carries total
    mass 1 over any node set surrounding c.  Negative cells are genuine
    stencil noise and are reported as-is; ``ddc_smooth`` additionally
    carries a locally averaged version, re-averaged until nonnegative (or
    the round cap), for display only.
    """
    chi = grid.chi_values
    mass = np.full_like(chi, np.nan)
    dx2 = grid.dx ** 2
    dy2 = grid.dy ** 2
    lap = (
        (chi[1:-1, 2:] + chi[1:-1, :-2] - 2.0 * chi[1:-1, 1:-1]) / dx2
        + (chi[2:, 1:-1] + chi[:-2, 1:-1] - 2.0 * chi[1:-1, 1:-1]) / dy2
    )
    mass[1:-1, 1:-1] = lap * grid.cell_area / (2.0 * math.pi)
    smooth = _smooth_until_nonnegative(mass, smooth_rounds)
    return replace(grid, ddc_density=mass, ddc_smooth=smooth)


def _smooth_until_nonnegative(mass: np.ndarray, max_rounds: int) -> np.ndarray:
    out = mass.copy()
    for _ in range(max_rounds):
        finite = np.isfinite(out)
        if not finite.any() or out[finite].min() >= -1e-12:
            break
        acc = np.zeros_like(out)
        cnt = np.zeros_like(out)
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                shifted = np.full_like(out, np.nan)
                js = slice(max(dj, 0), out.shape[0] + min(dj, 0))
                jd = slice(max(-dj, 0), out.shape[0] + min(-dj, 0))
                is_ = slice(max(di, 0), out.shape[1] + min(di, 0))
                id_ = slice(max(-di, 0), out.shape[1] + min(-di, 0))
                shifted[jd, id_] = out[js, is_]
                good = np.isfinite(shifted)
                acc[good] += shifted[good]
                cnt[good] += 1.0
        with np.errstate(invalid="ignore"):
            averaged = acc / cnt
        out = np.where(np.isfinite(mass) & (cnt > 0), averaged, mass)
    return out


# --------------------------------------------------------------------------
# divisors by winding numbers


@dataclass(frozen=True)
class DivisorResult:
    """Zero divisor of a squared-trace level set over the grid cells.

    ``cells`` holds (row, col, multiplicity) per cell with nonzero winding
    (cell (j, i) spans nodes (j..j+1, i..i+1), shifted by
    ``lattice_offset`` cells when the winding lattice had to move off a
    zero); ``mass_field`` the multiplicities divided by twice the
    normalizer, per cell; ``ambiguous`` cells where the winding never
    stabilized; ``level`` the (possibly perturbed) level actually used;
    ``z_equals_lambda`` flags the everything-vanishes convention (mass 0
    by definition).
    """

    word: str
    level: complex
    normalizer: float
    cells: tuple
    mass_field: np.ndarray
    ambiguous: tuple
    z_equals_lambda: bool
    lattice_offset: tuple = (0.0, 0.0)

    @property
    def total_mass(self) -> float:
        return float(sum(mult for _, _, mult in self.cells)) / (2.0 * self.normalizer)


class _RetryDivisor(Exception):
    pass


def divisor_zeros(family: ParameterFamily, word: str, t: complex,
                  grid: CurrentGrid, *, normalizer: float | None = None,
                  initial_samples: int = 4, max_level: int = 6) -> DivisorResult:
    """Count zeros of trace^2(rep(word)) - t per grid cell by winding number.

    Each cell boundary is sampled (adaptively refined until each argument
    increment stays below pi/2, which rules out aliasing); the winding
    number is the cell's zero count with multiplicity, since the function
    is holomorphic in the parameter.  A zero sitting on a probed boundary
    — detected either as an exact hit or as a winding that refuses to
    stabilize — perturbs the level by 1e-9 and shifts the winding lattice
    a small fraction of a cell, then restarts.  The default mass
    normalizer is the displacement of the word on the canonical surface;
    geodesic samples should pass their own length instead.
    """
    if normalizer is None:
        normalizer = _word_displacement(family, word)
    if normalizer <= 0.0:
        raise ConfigError("divisor normalizer must be positive (non-identity word)")
    result = None
    for attempt, (fx, fy) in enumerate(_LATTICE_OFFSETS):
        level = complex(t) + attempt * _LEVEL_PERTURBATION
        offset = (fx * grid.dx, fy * grid.dy)
        try:
            result = _divisor_at_level(family, word, level, grid, normalizer,
                                       initial_samples, max_level, offset)
        except _RetryDivisor:
            continue
        if not result.ambiguous:
            return result
    if result is None:
        raise SamplerError(
            f"level {t} kept hitting zeros on cell boundaries after perturbation"
        )
    return result


def _word_displacement(family: ParameterFamily, word: str) -> float:
    surface = family.rep(_rect_center(family.rectangle)).surface
    (a, b), (c, d) = surface.exact_word_matrix(word)
    frob = float(a * a + b * b + c * c + d * d)
    return math.acosh(max(frob / 2.0, 1.0))


def _divisor_at_level(family: ParameterFamily, word: str, t: complex,
                      grid: CurrentGrid, normalizer: float,
                      initial_samples: int, max_level: int,
                      offset: tuple) -> DivisorResult:
    xs = grid.xs + offset[0]
    ys = grid.ys + offset[1]
    scale = 1.0 + abs(t)
    values: dict = {}

    def f(x: float, y: float) -> complex:
        key = (x, y)
        got = values.get(key)
        if got is None:
            rep = family.rep(complex(x, y))
            got = rep.trace_sq(word) - t
            values[key] = got
        if abs(got) <= _BOUNDARY_ZERO_TOL * scale:
            raise _RetryDivisor
        return got

    # the everything-vanishes convention: the function is identically zero
    probes = [
        (xs[0], ys[0]), (xs[-1], ys[0]), (xs[0], ys[-1]), (xs[-1], ys[-1]),
        (xs[len(xs) // 2], ys[len(ys) // 2]),
    ]
    probe_vals = []
    for x, y in probes:
        rep = family.rep(complex(x, y))
        probe_vals.append(rep.trace_sq(word) - t)
    if all(abs(v) <= _BOUNDARY_ZERO_TOL * scale for v in probe_vals):
        empty = np.zeros((grid.ny - 1, grid.nx - 1))
        return DivisorResult(word=word, level=t, normalizer=normalizer,
                             cells=(), mass_field=empty, ambiguous=(),
                             z_equals_lambda=True, lattice_offset=offset)

    def edge_values(i: int, j: int, horizontal: bool, level: int) -> np.ndarray:
        # values along one cell edge, both endpoints included
        k = initial_samples * (1 << level)
        if horizontal:
            x0, x1, y0 = xs[i], xs[i + 1], ys[j]
            pts = [(x0 + (x1 - x0) * s / k, y0) for s in range(k + 1)]
        else:
            x0, y0, y1 = xs[i], ys[j], ys[j + 1]
            pts = [(x0, y0 + (y1 - y0) * s / k) for s in range(k + 1)]
        return np.array([f(x, y) for x, y in pts])

    def cell_winding(i: int, j: int):
        for level in range(max_level + 1):
            bottom = edge_values(i, j, True, level)
            right = edge_values(i + 1, j, False, level)
            top = edge_values(i, j + 1, True, level)[::-1]
            left = edge_values(i, j, False, level)[::-1]
            loop = np.concatenate([bottom[:-1], right[:-1], top[:-1], left[:-1]])
            args = np.angle(loop)
            inc = np.diff(np.concatenate([args, args[:1]]))
            inc = (inc + math.pi) % (2.0 * math.pi) - math.pi
            if np.max(np.abs(inc)) < 0.5 * math.pi:
                return int(round(float(inc.sum()) / (2.0 * math.pi))), False
        return 0, True

    cells = []
    ambiguous = []
    mass = np.zeros((grid.ny - 1, grid.nx - 1))
    for j in range(grid.ny - 1):
        for i in range(grid.nx - 1):
            mult, unstable = cell_winding(i, j)
            if unstable:
                ambiguous.append((j, i))
            elif mult != 0:
                cells.append((j, i, mult))
                mass[j, i] = mult / (2.0 * normalizer)
    return DivisorResult(word=word, level=t, normalizer=normalizer,
                         cells=tuple(cells), mass_field=mass,
                         ambiguous=tuple(ambiguous), z_equals_lambda=False,
                         lattice_offset=offset)


# --------------------------------------------------------------------------
# random closed geodesics


@dataclass(frozen=True)
class GeodesicSample:
    """A random closed geodesic: canonical class word, its geodesic length,
    the sampling model, and the model cutoff.  ``resamples`` counts draws
    rejected for closing onto the identity or a parabolic."""

    word: str
    length: float
    model: str
    t: float
    primitive: bool
    resamples: int = 0


_MAX_GEODESIC_RESAMPLES = 64


def random_geodesic(surface: FuchsianSurface, model: str, t: float,
                    seed: int = 0, *, dt: float = 1e-2) -> GeodesicSample:
    """Draw one random closed geodesic under the chosen model.

    ``thurston``: shoot a geodesic ray of length t in a uniform direction
    and close it through its fundamental-domain word.  ``brownian``: same
    with a Brownian path of duration t.  ``length_based``: uniform over
    primitive closed-geodesic classes of length at most t.  Closures that
    land on the identity or a parabolic are redrawn (exponentially rare;
    the count is recorded).
    """
    if model not in GEODESIC_MODELS:
        raise ConfigError(f"model must be one of {GEODESIC_MODELS}, got {model!r}")
    if not t > 0.0:
        raise ConfigError("cutoff t must be positive")
    if model == "length_based":
        if t < surface.systole:
            raise ConfigError("cutoff below the systole: no classes to draw")
        rng = np.random.default_rng(seed)
        cls = sample_geodesic_classes(surface, t, 1, rng,
                                      include_non_primitive=False)[0]
        return GeodesicSample(word=cls.word, length=cls.length, model=model,
                              t=float(t), primitive=True, resamples=0)

    for attempt in range(_MAX_GEODESIC_RESAMPLES):
        draw_seed = derive_seed(seed, f"geodesic/{model}/{attempt}")
        if model == "thurston":
            rng = np.random.default_rng(draw_seed)
            theta = rng.uniform(-math.pi, math.pi)
            _, words = trace_rays(surface, np.array([theta]), np.array([t]))
            raw = words[0][0]
        else:
            ens = sample_ensemble(1, t, dt=dt, seed=draw_seed, surface=surface,
                                  checkpoint_times=np.array([t]),
                                  record_words=True)
            raw = ens.words[0][0]
        cls_word = canonical_class_word(raw)
        if not cls_word:
            continue
        (a, b), (c, d) = surface.exact_word_matrix(cls_word)
        tr = a + d
        if tr * tr <= 4:
            continue
        length = 2.0 * math.acosh(abs(tr) / 2.0)
        return GeodesicSample(word=cls_word, length=length, model=model,
                              t=float(t), primitive=_is_primitive_word(cls_word),
                              resamples=attempt)
    raise SamplerError(
        f"no loxodromic closure in {_MAX_GEODESIC_RESAMPLES} draws (model {model})"
    )


def _is_primitive_word(cls_word: str) -> bool:
    n = len(cls_word)
    for q in range(1, n):
        if n % q == 0 and cls_word == cls_word[:q] * (n // q):
            return False
    return True


# --------------------------------------------------------------------------
# equidistribution experiment


@dataclass(frozen=True)
class EquidistReport:
    """Distances between random-geodesic level-set potentials and the
    growth-rate field, along a cutoff schedule.

    ``l1_distances[n]`` is the area-weighted L1 grid distance between the
    n-th normalized potential and the grid's values; ``mass_distances[n]``
    the binned L1 distance between the n-th divisor mass and the grid's
    Laplacian mass.  Draws hitting the everything-vanishes convention are
    recorded in ``skipped`` and contribute nothing.
    """

    model: str
    level: complex
    schedule: tuple
    samples: tuple
    l1_distances: np.ndarray
    mass_distances: np.ndarray
    skipped: tuple
    metadata: dict = field(repr=False, default_factory=dict)


def equidist_experiment(family: ParameterFamily, model: str, schedule,
                        t: complex, grid: CurrentGrid, master_seed: int = 0, *,
                        clamp: float = DEFAULT_CLAMP,
                        mass_bins: int = 6) -> EquidistReport:
    """Compare normalized level-set potentials of random geodesics to the grid.

    For each cutoff r_n of the schedule, draws one closed geodesic, forms
    the potential log|trace^2(rep(word)) - t| / (2 * length) over the grid
    nodes (log clamped below to keep the integral finite near zeros), and
    reports its L1 distance to the grid's values, along with the binned
    mass distance between the word's divisor and the grid's Laplacian
    mass.
    """
    if not np.isfinite(grid.chi_values).any():
        raise ConfigError("grid values must be filled before the experiment")
    schedule = tuple(float(r) for r in schedule)
    if not schedule:
        raise ConfigError("schedule must be non-empty")
    surface = family.rep(_rect_center(grid.rectangle)).surface
    if grid.ddc_density is None:
        grid = ddc_density(grid)
    lambdas = grid.lambdas().ravel()
    letters = _grid_letter_arrays(family, lambdas)
    chi_flat = grid.chi_values.ravel()
    finite = np.isfinite(chi_flat)
    area = grid.cell_area

    samples = []
    l1 = []
    mass_dist = []
    skipped = []
    ddc_bins = _binned_mass(grid.ddc_density[1:-1, 1:-1], mass_bins)
    for n, r_n in enumerate(schedule):
        sample = random_geodesic(surface, model, r_n,
                                 derive_seed(master_seed, f"equidist/draw/{n}"))
        samples.append(sample)
        m, logs = _word_field(letters, sample.word)
        f_vals = _field_trace_sq(m, logs) - complex(t)
        with np.errstate(divide="ignore"):
            log_abs = np.log(np.abs(f_vals))
        u = np.maximum(log_abs, clamp) / (2.0 * sample.length)
        l1.append(float(np.sum(np.abs(u[finite] - chi_flat[finite])) * area))
        div = divisor_zeros(family, sample.word, t, grid,
                            normalizer=sample.length)
        if div.z_equals_lambda:
            skipped.append((n, "level set fills the rectangle; mass 0 by convention"))
            mass_dist.append(math.nan)
            continue
        div_bins = _binned_mass(div.mass_field, mass_bins)
        mass_dist.append(float(np.nansum(np.abs(div_bins - ddc_bins))))
    return EquidistReport(
        model=model, level=complex(t), schedule=schedule,
        samples=tuple(samples),
        l1_distances=np.array(l1), mass_distances=np.array(mass_dist),
        skipped=tuple(skipped),
        metadata={"clamp": float(clamp), "mass_bins": int(mass_bins),
                  "master_seed": int(master_seed)},
    )


def _binned_mass(field: np.ndarray, bins: int) -> np.ndarray:
    """Sum a cell field into a coarse bins x bins partition (nan-aware)."""
    ny, nx = field.shape
    out = np.zeros((bins, bins))
    j_edges = np.linspace(0, ny, bins + 1).astype(int)
    i_edges = np.linspace(0, nx, bins + 1).astype(int)
    for bj in range(bins):
        for bi in range(bins):
            block = field[j_edges[bj]:j_edges[bj + 1],
                          i_edges[bi]:i_edges[bi + 1]]
            good = np.isfinite(block)
            out[bj, bi] = block[good].sum() if good.any() else 0.0
    return out


# --------------------------------------------------------------------------
# discreteness heuristic


def discreteness_heuristic(rep: Representation, depth: int = 6) -> float:
    """Necessary-condition score for discreteness (heuristic only).

    Minimizes |trace^2(A) - 4| + |trace(A B A^-1 B^-1) - 2| over words A up
    to the given depth paired with each generator B.  Pairs whose matrix
    commutator is plus or minus the identity generate elementary groups,
    where the inequality does not apply, and are skipped.  Discrete
    nonelementary groups keep the quantity at least 1 on the remaining
    pairs, so a score below 1 flags a violation.
    """
    if not 1 <= depth <= 8:
        raise ConfigError("depth must lie in 1..8")
    gen_chars = [name for name in rep.surface.generator_names]
    letter_chars = []
    for name in rep.surface.generator_names:
        letter_chars.append(name)
        letter_chars.append(name.upper())
    best = math.inf
    stack = [("", -1)]
    while stack:
        word, last = stack.pop()
        if word:
            m = rep.word_tuple(word)
            tr_a = m[0] + m[3]
            term_a = abs(tr_a * tr_a - 4.0)
            for b in gen_chars:
                comm = word + b + word_inverse(word) + b.upper()
                cm = rep.word_tuple(comm)
                if _is_plus_minus_identity(cm):
                    continue
                q = term_a + abs(cm[0] + cm[3] - 2.0)
                if q < best:
                    best = q
        if len(word) < depth:
            for code, ch in enumerate(letter_chars):
                if last >= 0 and code == last ^ 1:
                    continue
                stack.append((word + ch, code))
    return float(best)


def _is_plus_minus_identity(m: tuple, tol: float = 1e-9) -> bool:
    for sign in (1.0, -1.0):
        if (abs(m[0] - sign) <= tol and abs(m[3] - sign) <= tol
                and abs(m[1]) <= tol and abs(m[2]) <= tol):
            return True
    return False
