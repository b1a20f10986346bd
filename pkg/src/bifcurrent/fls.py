"""Stopping-time discretization of surface Brownian motion into a random walk.

A Brownian path on the surface is watched against two families of spheres
around the orbit of the base point, with radii ``r < R`` chosen so the
R-balls embed and are pairwise disjoint (``2R`` below the systole).  Each
step of the chain runs the path to its next hit of an inner sphere, lets it
diffuse on to the surrounding R-sphere, and accepts that excursion with
probability ``p / b``, where ``b`` is the harmonic density of the realized
exit angle seen from the entry point.  Thinning by exactly that ratio makes
accepted exit points uniform on their sphere regardless of where the path
entered, so the group elements read off at successive acceptances are
independent with a common law — the discretization measure of the walk.
The mean time between acceptances converts between path time and walk steps.

Sphere hits are detected in the folded chart of :class:`BrownianWalker`,
where the nearest orbit center is always the base point: the inner-sphere
hit is the first time the folded radius drops to ``r``, the deck word names
the ball just entered, and no wall is crossed while the path stays inside
the embedded R-ball, so entry and exit angles live in one fixed chart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .brownian import MAX_DT, BrownianWalker
from .errors import ChainError, ConfigError
from .harness import derive_seed
from .lattice import FuchsianSurface, codes_to_word
from .moebius import BASE_POINT

__all__ = [
    "FLSConfig",
    "DiscretizationRun",
    "harmonic_exit_density",
    "radius_ratio",
    "max_acceptance_probability",
    "run_chain",
    "run_chain_ensemble",
    "estimate_tau",
    "empirical_mu",
]

DEFAULT_CHAIN_DT = 1e-3


def radius_ratio(r: float, R: float) -> float:
    """Euclidean radius of the r-sphere after scaling the R-ball to the disk."""
    if not 0.0 < r < R:
        raise ConfigError(f"radii must satisfy 0 < r < R, got r={r}, R={R}")
    return math.tanh(r / 2.0) / math.tanh(R / 2.0)


def max_acceptance_probability(r: float, R: float) -> float:
    """Largest valid thinning probability: the minimum exit density."""
    u = radius_ratio(r, R)
    return (1.0 - u) / (1.0 + u)


def harmonic_exit_density(u: float, theta) -> np.ndarray | float:
    """Exit-angle density on the unit circle seen from radius ``u``.

    This is the harmonic-measure (Poisson) density for planar Brownian
    motion started at Euclidean radius ``u`` inside the unit disk, per
    normalized arc, so its mean over angles is 1; by conformal invariance
    it is also the hyperbolic exit law through a sphere of any radius,
    with ``u`` the scaled radius from :func:`radius_ratio`.  ``theta`` is
    the angle between the start point and the exit point.
    """
    if not 0.0 <= u < 1.0:
        raise ConfigError(f"radius ratio must lie in [0, 1), got {u}")
    theta = np.asarray(theta, dtype=float)
    dens = (1.0 - u * u) / (1.0 - 2.0 * u * np.cos(theta) + u * u)
    return float(dens) if dens.ndim == 0 else dens


@dataclass(frozen=True)
class FLSConfig:
    """Sphere radii, thinning probability and cycle budget of the chain.

    ``p`` must not exceed the minimum harmonic exit density
    ``(1-u)/(1+u)`` or the thinning ratio would leave [0, 1]; the default
    0.49 sits just under the 0.4945 bound of the default radii.
    ``max_cycles`` bounds rejected cycles per step (failure probability
    (1-p)^max_cycles, negligible at the default).
    """

    r: float = 0.15
    R: float = 0.45
    p: float = 0.49
    max_cycles: int = 200

    def __post_init__(self):
        if not 0.0 < self.r < self.R:
            raise ConfigError(
                f"radii must satisfy 0 < r < R, got r={self.r}, R={self.R}"
            )
        if not 0.0 < self.p < 1.0:
            raise ConfigError(f"acceptance probability must lie in (0,1), got {self.p}")
        bound = max_acceptance_probability(self.r, self.R)
        if self.p > bound + 1e-12:
            raise ConfigError(
                f"p={self.p} exceeds the minimum exit density {bound:.6f} "
                f"for r={self.r}, R={self.R}; thinning would not be a probability"
            )
        if int(self.max_cycles) < 1:
            raise ConfigError("max_cycles must be a positive integer")

    @property
    def u(self) -> float:
        return radius_ratio(self.r, self.R)

    def validate_for(self, surface: FuchsianSurface) -> None:
        """Check the disjoint-balls condition on a concrete surface."""
        if not 2.0 * self.R < surface.systole:
            raise ConfigError(
                f"R={self.R} violates 2R < systole ({surface.systole:.6f}); "
                "the R-balls around distinct orbit points must be disjoint"
            )


@dataclass(frozen=True)
class DiscretizationRun:
    """Record of one chain: group increments and their acceptance times.

    ``increments[k]`` is the reduced word of the group element carrying the
    ball accepted at step k relative to the previous accepted ball;
    ``stop_times`` are the strictly increasing acceptance times;
    ``rejected_cycles[k]`` counts rejected excursions before acceptance k.
    ``exit_angles``/``exit_radii`` locate each accepted exit on its sphere
    (angle around the accepted ball's center; folded radius, equal to R up
    to crossing-interpolation error).  ``matrices`` optionally carries the
    exact integer matrices of the increments (recorded when the run is
    built with ``rep_can_only=False``).
    """

    increments: tuple
    stop_times: np.ndarray
    rejected_cycles: np.ndarray
    exit_angles: np.ndarray
    exit_radii: np.ndarray
    seed: int
    config: FLSConfig
    matrices: tuple | None = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.increments)

    def increment_displacements(self, surface: FuchsianSurface) -> np.ndarray:
        """Base-point displacement d(base, g.base) of every increment."""
        out = np.empty(self.n_steps)
        for k, w in enumerate(self.increments):
            (a, b), (c, d) = surface.exact_word_matrix(w)
            frob = float(a * a + b * b + c * c + d * d)
            out[k] = math.acosh(max(frob / 2.0, 1.0))
        return out


def _disk_angle(z: complex) -> float:
    w = (z - BASE_POINT) / (z + BASE_POINT)
    return math.atan2(w.imag, w.real)


def _word_between(chain, prev_node: int, node: int) -> str:
    """Reduced word of (word at prev_node)^{-1} * (word at node)."""
    prev = chain.codes(prev_node)
    cur = chain.codes(node)
    shared = 0
    for a, b in zip(prev, cur):
        if a != b:
            break
        shared += 1
    out = [c ^ 1 for c in reversed(prev[shared:])] + cur[shared:]
    return codes_to_word(out)


def run_chain_ensemble(surface: FuchsianSurface, cfg: FLSConfig | None,
                       n_steps: int, n_chains: int, seed: int = 0, *,
                       rep_can_only: bool = True, dt: float = DEFAULT_CHAIN_DT,
                       start_angles=None) -> list:
    """Run ``n_chains`` independent chains in lockstep for ``n_steps`` each.

    Every chain starts at a uniform angle on the R-sphere of the base ball
    (``start_angles`` overrides the draw, for equivariance checks).  All
    chains share one seeded generator, so the ensemble is reproducible from
    ``seed`` alone.
    """
    cfg = FLSConfig() if cfg is None else cfg
    cfg.validate_for(surface)
    if int(n_steps) < 1:
        raise ConfigError("n_steps must be a positive integer")
    if int(n_chains) < 1:
        raise ConfigError("n_chains must be a positive integer")
    if not 0.0 < dt <= MAX_DT:
        raise ConfigError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    m = int(n_chains)
    rng = np.random.default_rng(int(seed) & ((1 << 64) - 1))
    if start_angles is None:
        angles = rng.uniform(-math.pi, math.pi, m)
    else:
        angles = np.broadcast_to(np.asarray(start_angles, dtype=float), (m,)).copy()
    disk = math.tanh(cfg.R / 2.0) * np.exp(1j * angles)
    starts = 1j * (1.0 + disk) / (1.0 - disk)
    walker = BrownianWalker(starts, rng, surface=surface)

    inball = np.zeros(m, dtype=bool)
    entry = np.zeros(m)
    barrier = np.full(m, cfg.r)
    direction = np.full(m, -1.0)
    cur_rej = np.zeros(m, dtype=np.int64)
    prev_node = walker.word_nodes()
    active = np.ones(m, dtype=bool)
    increments: list = [[] for _ in range(m)]
    stops: list = [[] for _ in range(m)]
    rejects: list = [[] for _ in range(m)]
    out_angles: list = [[] for _ in range(m)]
    out_radii: list = [[] for _ in range(m)]
    mats: list | None = None if rep_can_only else [[] for _ in range(m)]

    while active.any():
        hit = walker.advance_with_barrier(dt, barrier, direction, mask=active)
        for q in np.flatnonzero(hit):
            q = int(q)
            zq = complex(walker.z[q])
            ang = _disk_angle(zq)
            if not inball[q]:
                entry[q] = ang
                inball[q] = True
                barrier[q] = cfg.R
                direction[q] = 1.0
                continue
            inball[q] = False
            barrier[q] = cfg.r
            direction[q] = -1.0
            dens = harmonic_exit_density(cfg.u, ang - entry[q])
            if rng.random() * dens <= cfg.p:
                node = int(walker._node[q])
                word = _word_between(walker._chain, int(prev_node[q]), node)
                increments[q].append(word)
                stops[q].append(float(walker.t[q]))
                rejects[q].append(int(cur_rej[q]))
                out_angles[q].append(ang)
                out_radii[q].append(
                    math.acosh(1.0 + abs(zq - 1j) ** 2 / (2.0 * zq.imag))
                )
                if mats is not None:
                    mats[q].append(surface.exact_word_matrix(word))
                cur_rej[q] = 0
                prev_node[q] = node
                if len(stops[q]) >= n_steps:
                    active[q] = False
            else:
                cur_rej[q] += 1
                if cur_rej[q] > cfg.max_cycles:
                    raise ChainError(
                        f"chain {q} rejected {cfg.max_cycles} consecutive "
                        f"excursions at step {len(stops[q])}"
                    )
    return [
        DiscretizationRun(
            increments=tuple(increments[q]),
            stop_times=np.array(stops[q]),
            rejected_cycles=np.array(rejects[q], dtype=np.int64),
            exit_angles=np.array(out_angles[q]),
            exit_radii=np.array(out_radii[q]),
            seed=int(seed),
            config=cfg,
            matrices=None if mats is None else tuple(mats[q]),
        )
        for q in range(m)
    ]


def run_chain(surface: FuchsianSurface, cfg: FLSConfig | None = None,
              n_steps: int = 100, seed: int = 0, *,
              rep_can_only: bool = True, dt: float = DEFAULT_CHAIN_DT,
              start_angle: float | None = None) -> DiscretizationRun:
    """Run a single discretization chain (see :func:`run_chain_ensemble`)."""
    angles = None if start_angle is None else np.array([float(start_angle)])
    return run_chain_ensemble(
        surface, cfg, n_steps, 1, seed, rep_can_only=rep_can_only, dt=dt,
        start_angles=angles,
    )[0]


def estimate_tau(run: DiscretizationRun, *, n_batches: int = 20):
    """Mean acceptance time per step, with a batch-means standard error.

    Returns ``(tau_hat, stderr)`` where ``tau_hat = T_n / n``.  Batch means
    over consecutive step times keep the error estimate honest if the step
    times carry residual correlation.
    """
    n = run.n_steps
    if n < 100:
        raise ConfigError(f"tau estimation needs at least 100 steps, got {n}")
    deltas = np.diff(run.stop_times, prepend=0.0)
    tau_hat = float(run.stop_times[-1]) / n
    b = max(2, min(int(n_batches), n // 5))
    size = n // b
    means = deltas[: b * size].reshape(b, size).mean(axis=1)
    stderr = float(means.std(ddof=1) / math.sqrt(b))
    return tau_hat, stderr


def empirical_mu(runs) -> dict:
    """Empirical law of the first increment over an ensemble of chains.

    Uses only each run's first step (independent across chains by
    construction), returning word -> frequency with total mass 1.
    """
    counts: dict = {}
    total = 0
    for run in runs:
        if not run.increments:
            continue
        w = run.increments[0]
        counts[w] = counts.get(w, 0) + 1
        total += 1
    if total == 0:
        raise ConfigError("empirical law needs at least one completed step")
    return {w: c / total for w, c in counts.items()}
