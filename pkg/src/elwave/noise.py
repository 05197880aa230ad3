"""Wiener increment families on dyadic time grids.

The two-step scheme consumes two families of scalar noise increments per
step [t_n, t_n+1] of size tau:

* ``bar``:  plain increments W(t_n+1) - W(t_n);
* ``hat``:  tau * W(t_n+1) - tau^3 * sum_l W(t_n,l), where the subgrid
  t_n,l = t_n + (l - 1) tau^3, l = 1..tau^-2, resolves the path inside the
  step.  This is the computable surrogate of the time-integrated increment
  int_tn^tn+1 (W(t_n+1) - W(s)) ds.

Both are accumulated in a single streaming pass over N(0, tau^3) subgrid
increments; the subgrid itself is never stored.  Streams are counter-based
(Philox keyed by seed and sample index), so parallel samples need no shared
state and every increment set is reproducible across machines and across
scheduling orders.

`sample_coupled_ladder` derives increment sets for tau_f, 2 tau_f, 4 tau_f,
... from one master path sampled at the finest subgrid resolution tau_f^3,
which is what strong convergence studies need: all levels see the same
Brownian path.  `tilde_oracle` refines that same path by Brownian bridging
and returns trapezoidal estimates of the exact time-integrated increment;
it is test machinery, not part of the scheme.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

__all__ = [
    "NoiseConfig",
    "IncrementSet",
    "sample_increments",
    "sample_coupled_ladder",
    "tilde_oracle",
    "increment_moments",
    "zero_normals",
]

#: largest streaming block (master subgrid points per coarsest step)
_BLOCK_BUDGET = 2**24

#: guard on total refined-grid work in `tilde_oracle`
_ORACLE_BUDGET = 10**8

NormalSource = Callable[[int], np.ndarray]


def zero_normals(n: int) -> np.ndarray:
    """Normal-variate hook that forces the zero path (W identically 0)."""
    return np.zeros(n)


@dataclass(frozen=True)
class NoiseConfig:
    """Time grid and stream identity for one sampled path.

    T and tau are exact rationals; tau must equal T * 2**-k so that the step
    count N and the subgrid count tau**-2 are exact integers.
    """

    T: Fraction
    tau: Fraction
    seed: int
    sample_index: int

    def __post_init__(self):
        T, tau = Fraction(self.T), Fraction(self.tau)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "tau", tau)
        if T <= 0 or tau <= 0:
            raise ValueError(f"T and tau must be positive, got T={T}, tau={tau}")
        ratio = T / tau
        if ratio.denominator != 1 or (ratio.numerator & (ratio.numerator - 1)) != 0:
            raise ValueError(
                f"tau must be T * 2**-k for integer k, got T={T}, tau={tau} (T/tau={ratio})"
            )
        sub = 1 / tau**2
        if sub.denominator != 1:
            raise ValueError(f"tau**-2 must be a positive integer, got {sub} for tau={tau}")
        if self.seed < 0 or self.sample_index < 0:
            raise ValueError("seed and sample_index must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(self.T / self.tau)

    @property
    def subcount(self) -> int:
        """Subgrid points per step, tau**-2."""
        return int(1 / self.tau**2)


@dataclass(frozen=True)
class IncrementSet:
    """Per-step noise increments of one path at one step size.

    endpoints[n] = W(n tau) for n = 0..N, with endpoints[0] = 0;
    bar[n] and hat[n] belong to the step [n tau, (n+1) tau].
    """

    tau: Fraction
    endpoints: np.ndarray
    bar: np.ndarray
    hat: np.ndarray
    seed: int
    sample_index: int
    level: int = 0

    @property
    def n_steps(self) -> int:
        return self.bar.size


def _master_source(cfg: NoiseConfig, stream: int, normal_source: NormalSource | None) -> NormalSource:
    if normal_source is not None:
        return normal_source
    key = np.array([cfg.seed, 2 * cfg.sample_index + stream], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal


def sample_coupled_ladder(
    cfg: NoiseConfig,
    levels: int,
    normal_source: NormalSource | None = None,
) -> list[IncrementSet]:
    """Increment sets at tau, 2 tau, ..., 2**(levels-1) tau from one path.

    The master path is sampled once at the finest subgrid spacing tau**3 and
    every level reads its endpoints and subgrid sums from it, so the returned
    sets are exactly consistent: coarse bar increments are sums of fine ones,
    and adding levels does not change the sets already produced.

    Returns the list finest-first; `level` on each set gives its dyadic
    offset from the base step size.
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    n_fine = cfg.n_steps
    if n_fine % 2 ** (levels - 1) != 0:
        raise ValueError(
            f"ladder of {levels} levels does not fit into {n_fine} base steps"
        )
    sub_f = cfg.subcount
    taus = [cfg.tau * 2**j for j in range(levels)]
    for t in taus:
        if (1 / t**2).denominator != 1:
            raise ValueError(f"level step {t} has non-integer tau**-2")

    tau_f = float(cfg.tau)
    # the master subgrid spacing is tau_f**3; level j reads every 8**j-th
    # master point, an exact subset by the dyadic construction
    if sub_f > _BLOCK_BUDGET:
        raise ValueError(
            f"subgrid of {sub_f} master points per step exceeds the budget "
            f"{_BLOCK_BUDGET}; choose a coarser base step"
        )
    # fine steps per streaming block; a function of the config alone, so the
    # rounding order (and with it every returned value) does not depend on
    # how many levels ride along
    block_steps = max(1, min(n_fine, _BLOCK_BUDGET // sub_f))

    draw = _master_source(cfg, 0, normal_source)
    sigma = np.sqrt(tau_f**3)

    ends_fine = np.empty(n_fine + 1)
    ends_fine[0] = 0.0
    contrib = [np.empty(n_fine) for _ in range(levels)]
    w_run = 0.0
    for n0 in range(0, n_fine, block_steps):
        nb = min(block_steps, n_fine - n0)
        z = np.asarray(draw(nb * sub_f), dtype=np.float64).reshape(nb, sub_f)
        c = np.cumsum(z * sigma, axis=1)  # path relative to each step's left end
        ends_fine[n0 + 1 : n0 + nb + 1] = w_run + np.cumsum(c[:, -1])
        w_lefts = ends_fine[n0 : n0 + nb]
        for j in range(levels):
            s = 8**j
            if s < sub_f:
                # every fine step holds sub_f/s subgrid points of level j:
                # its left end plus the interior points at offsets s, 2s, ...
                contrib[j][n0 : n0 + nb] = (sub_f // s) * w_lefts + c[
                    :, s - 1 : sub_f - 1 : s
                ].sum(axis=1)
            else:
                # only every (s/sub_f)-th fine step carries a subgrid point
                # of level j, namely its left end
                r = s // sub_f
                mask = np.arange(n0, n0 + nb) % r == 0
                contrib[j][n0 : n0 + nb] = np.where(mask, w_lefts, 0.0)
        w_run = ends_fine[n0 + nb]

    out = []
    for j in range(levels):
        tau_j = float(taus[j])
        ends = ends_fine[:: 2**j].copy()
        subsums = contrib[j].reshape(-1, 2**j).sum(axis=1)
        bar = np.diff(ends)
        hat = tau_j * ends[1:] - tau_j**3 * subsums
        out.append(
            IncrementSet(taus[j], ends, bar, hat, cfg.seed, cfg.sample_index, level=j)
        )
    return out


def sample_increments(cfg: NoiseConfig, normal_source: NormalSource | None = None) -> IncrementSet:
    """Bar and hat increments of a single path at the config's step size."""
    return sample_coupled_ladder(cfg, 1, normal_source)[0]


def tilde_oracle(
    cfg: NoiseConfig,
    refinement: int = 4,
    normal_source: NormalSource | None = None,
) -> np.ndarray:
    """Trapezoidal estimates of int (W(t_n+1) - W(s)) ds per step.

    The path is the one `sample_increments(cfg)` produces, extended inside
    each subgrid interval by Brownian bridge sampling on a grid `refinement`
    times finer.  The quadrature error this leaves is of a higher order in
    tau than anything the estimates are used to measure.

    Bridge variates come from a stream separate from the master path, so the
    coarse values are bit-identical to the sampled increment set.
    """
    if refinement < 4:
        raise ValueError(f"refinement must be >= 4, got {refinement}")
    m = cfg.subcount
    n = cfg.n_steps
    if n * m * refinement > _ORACLE_BUDGET:
        raise ValueError(
            f"oracle work {n * m * refinement} exceeds the budget {_ORACLE_BUDGET}"
        )
    draw = _master_source(cfg, 0, normal_source)
    bridge = _master_source(cfg, 1, normal_source)
    tau = float(cfg.tau)
    delta = tau**3
    sigma = np.sqrt(delta)
    delta_f = delta / refinement

    tilde = np.empty(n)
    w_left = 0.0
    for step in range(n):
        z = np.asarray(draw(m), dtype=np.float64) * sigma
        # bridge each subgrid interval: b[l, q] = W at offset q delta_f into
        # interval l, relative to the interval's left end; b[l, refinement] = z[l]
        b = np.empty((m, refinement + 1))
        b[:, 0] = 0.0
        b[:, refinement] = z
        for q in range(1, refinement):
            remain = refinement - q + 1
            mean = b[:, q - 1] + (z - b[:, q - 1]) / remain
            var = delta_f * (remain - 1) / remain
            b[:, q] = mean + np.sqrt(var) * np.asarray(bridge(m), dtype=np.float64)
        cz = np.cumsum(z)
        lefts = w_left + np.concatenate([[0.0], cz[:-1]])
        w_fine = (lefts[:, None] + b[:, :refinement]).ravel()
        w_end = w_left + cz[-1]
        # trapezoid over the m * refinement + 1 points covering the step
        integral = delta_f * (w_fine.sum() - 0.5 * w_fine[0] + 0.5 * w_end)
        tilde[step] = tau * w_end - integral
        w_left = w_end
    return tilde


def increment_moments(
    tau: Fraction,
    draws: int,
    seed: int,
    refinement: int = 4,
) -> dict[str, np.ndarray]:
    """Per-draw (bar, hat, tilde) triples for single-step moment studies.

    Each draw is an independent path over one step of size tau, keyed by its
    draw index, so the estimates are plain Monte Carlo over iid draws.
    """
    tau = Fraction(tau)
    bar = np.empty(draws)
    hat = np.empty(draws)
    tilde = np.empty(draws)
    for i in range(draws):
        cfg = NoiseConfig(T=tau, tau=tau, seed=seed, sample_index=i)
        inc = sample_increments(cfg)
        bar[i] = inc.bar[0]
        hat[i] = inc.hat[0]
        tilde[i] = tilde_oracle(cfg, refinement)[0]
    return {"bar": bar, "hat": hat, "tilde": tilde}
