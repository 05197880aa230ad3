"""Problem data: nonlinearities, initial fields, manufactured solutions.

The wave system is u_tt = div sigma(u) + F(t, u) + G(u) dW/dt with
sigma(u) = lam (div u) I + mu eps(u) and scalar noise.  F and G act
pointwise on the two displacement components; the scheme additionally needs
the derivative of G applied to a direction, DG(u) v.

Vector fields are passed around as arrays of shape (n, 2) (values at
points), matching the nodal layout in `fem`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Coefficients",
    "InitialData",
    "builtin_linear",
    "builtin_trig",
    "zero_coefficients",
    "default_initial_data",
    "mms_fields",
    "check_assumptions",
]

VectorFunc = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Coefficients:
    """Pointwise drift and diffusion of the semilinear terms.

    F(t, u) and G(u) map (n, 2) component arrays to (n, 2); DG_apply(u, v)
    is the Jacobian of G at u acting on v, also componentwise.  `forcing`
    is an optional extra right-hand side depending on time and position
    (not on u); manufactured-solution runs use it for their source term.
    """

    name: str
    F: Callable[[float, np.ndarray], np.ndarray]
    G: Callable[[np.ndarray], np.ndarray]
    DG_apply: Callable[[np.ndarray, np.ndarray], np.ndarray]
    forcing: Callable[[float, np.ndarray], np.ndarray] | None = None
    #: pointwise Lipschitz constant of u -> F(t, u) when known; lets the
    #: drift iteration certify its fixed-point error from one increment
    F_lipschitz: float | None = None


@dataclass(frozen=True)
class InitialData:
    """Initial displacement and velocity, with the displacement gradient.

    u0 and v0 map points (n, 2) to values (n, 2); u0_grad maps points to
    Jacobians (n, 2, 2) with entry [i, j] = d u_i / d x_j, which the
    energy-compatible projection of u0 needs.
    """

    name: str
    u0: VectorFunc
    u0_grad: Callable[[np.ndarray], np.ndarray]
    v0: VectorFunc


def builtin_linear() -> Coefficients:
    """F(u) = (-u1, -3 u2), G(u) = (u1, 3 u2); Lipschitz constant 3."""
    fscale = np.array([-1.0, -3.0])
    gscale = np.array([1.0, 3.0])

    def F(t, u):
        return u * fscale

    def G(u):
        return u * gscale

    def DG_apply(u, v):
        return v * gscale

    return Coefficients("linear", F, G, DG_apply, F_lipschitz=3.0)


def builtin_trig() -> Coefficients:
    """F(u) = (cos u1, 2 cos u2), G(u) = (sin u1, 2 sin u2); Lipschitz constant 2."""
    scale = np.array([1.0, 2.0])

    def F(t, u):
        return np.cos(u) * scale

    def G(u):
        return np.sin(u) * scale

    def DG_apply(u, v):
        return np.cos(u) * scale * v

    return Coefficients("trig", F, G, DG_apply, F_lipschitz=2.0)


def zero_coefficients() -> Coefficients:
    """F = G = 0: the plain (deterministic) elastic wave equation."""

    def zero(*args):
        return np.zeros_like(args[-1])

    return Coefficients("zero", zero, zero, zero, F_lipschitz=0.0)


def _product_sine(points: np.ndarray) -> np.ndarray:
    """First Dirichlet eigenfunction shape on (-1,1)^2, as a scalar array."""
    return np.sin(np.pi * (points[:, 0] + 1) / 2) * np.sin(np.pi * (points[:, 1] + 1) / 2)


def _product_sine_grad(points: np.ndarray) -> np.ndarray:
    a = np.pi * (points[:, 0] + 1) / 2
    b = np.pi * (points[:, 1] + 1) / 2
    gx = (np.pi / 2) * np.cos(a) * np.sin(b)
    gy = (np.pi / 2) * np.sin(a) * np.cos(b)
    return np.stack([gx, gy], axis=1)


def default_initial_data() -> InitialData:
    """Smooth bump data: u0 = (1-x^2)^3 (1-y^2)^3 (1, -1), v0 with squared factors (1, 1).

    The cubed factors make every second derivative of u0 vanish on the
    boundary, so the velocity the wave dynamics generates stays H^2-regular;
    with merely H^2 displacement data the velocity error stalls near first
    order in h.  The squared factors give v0 itself the same regularity.
    """

    def u0(points):
        x, y = points[:, 0], points[:, 1]
        s = (1.0 - x**2) ** 3 * (1.0 - y**2) ** 3
        return np.stack([s, -s], axis=1)

    def u0_grad(points):
        x, y = points[:, 0], points[:, 1]
        px, py = (1.0 - x**2) ** 3, (1.0 - y**2) ** 3
        dpx = -6.0 * x * (1.0 - x**2) ** 2
        dpy = -6.0 * y * (1.0 - y**2) ** 2
        out = np.empty((points.shape[0], 2, 2))
        out[:, 0, 0] = dpx * py
        out[:, 0, 1] = px * dpy
        out[:, 1, :] = -out[:, 0, :]
        return out

    def v0(points):
        x, y = points[:, 0], points[:, 1]
        s = (1.0 - x**2) ** 2 * (1.0 - y**2) ** 2
        return np.stack([s, s], axis=1)

    return InitialData("default", u0, u0_grad, v0)


def mms_fields(lam: float, mu: float):
    """Exact solution, data and source for a manufactured deterministic run.

    The target solution is u(t, x) = cos(pi t) s(x) (1, -1) with the product
    sine s; plugging it into u_tt - div sigma(u) = f and using
    s_xx = s_yy = -(pi^2/4) s, s_xy = (pi^2/4) c (c the matching product
    cosine) gives, componentwise with signs (+1, -1),

        f = cos(pi t) (1, -1) [ -pi^2 s
                                + (pi^2/4) ( lam (s + c) + (mu/2) (3 s + c) ) ].

    Returns (initial_data, coefficients, exact) where coefficients carries f
    as a position-dependent forcing and F = G = 0, and exact has callables
    u(t, points), u_grad(t, points), v(t, points).
    """

    def shape_pair(points):
        s = _product_sine(points)
        c = np.cos(np.pi * (points[:, 0] + 1) / 2) * np.cos(np.pi * (points[:, 1] + 1) / 2)
        return s, c

    def u(t, points):
        s = _product_sine(points)
        w = np.cos(np.pi * t) * s
        return np.stack([w, -w], axis=1)

    def u_grad(t, points):
        g = np.cos(np.pi * t) * _product_sine_grad(points)
        out = np.empty((points.shape[0], 2, 2))
        out[:, 0, :] = g
        out[:, 1, :] = -g
        return out

    def v(t, points):
        s = _product_sine(points)
        w = -np.pi * np.sin(np.pi * t) * s
        return np.stack([w, -w], axis=1)

    def forcing(t, points):
        s, c = shape_pair(points)
        radial = -np.pi**2 * s + (np.pi**2 / 4) * (lam * (s + c) + (mu / 2) * (3 * s + c))
        w = np.cos(np.pi * t) * radial
        return np.stack([w, -w], axis=1)

    def zero(*args):
        return np.zeros_like(args[-1])

    data = InitialData(
        "mms",
        u0=lambda pts: u(0.0, pts),
        u0_grad=lambda pts: u_grad(0.0, pts),
        v0=lambda pts: v(0.0, pts),
    )
    coeffs = Coefficients("mms", zero, zero, zero, forcing=forcing, F_lipschitz=0.0)
    exact = {"u": u, "u_grad": u_grad, "v": v}
    return data, coeffs, exact


def check_assumptions(
    coeffs: Coefficients,
    box: float = 10.0,
    samples: int = 4000,
    seed: int = 0,
) -> dict[str, float]:
    """Empirical Lipschitz and linear-growth constants of F and G.

    Probes pairs of states drawn from [-box, box]^2, including axis-aligned
    pairs that differ in one component only, which pick up diagonal
    coefficient maps exactly.  Returns the observed constants; callers decide
    what bound to demand.
    """
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    a = rng.uniform(-box, box, size=(samples, 2))
    b = rng.uniform(-box, box, size=(samples, 2))
    # axis probes: perturb one component at a time
    ax = a.copy()
    ax[: samples // 2, 0] = b[: samples // 2, 0]
    ax[samples // 2 :, 1] = b[samples // 2 :, 1]
    pairs = [(a, b), (a, ax)]

    def lip(func):
        worst = 0.0
        for x, y in pairs:
            dx = np.linalg.norm(x - y, axis=1)
            keep = dx > 1e-12
            df = np.linalg.norm(func(x) - func(y), axis=1)
            worst = max(worst, float(np.max(df[keep] / dx[keep])))
        return worst

    def growth(func):
        nx = np.linalg.norm(a, axis=1)
        nf = np.linalg.norm(func(a), axis=1)
        return float(np.max(nf / (1.0 + nx)))

    f0 = lambda u: coeffs.F(0.0, u)
    return {
        "F_lipschitz": lip(f0),
        "G_lipschitz": lip(coeffs.G),
        "F_growth": growth(f0),
        "G_growth": growth(coeffs.G),
    }
