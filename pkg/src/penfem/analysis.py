"""Closed-form reference flow and discretization-error measurement.

The reference flow is a divergence-free polynomial vortex on the unit
square with an exponential time factor and a linear pressure; its
momentum source is derived symbolically, so discrete solutions can be
compared against machine-accurate field evaluations at quadrature
points.  Velocity errors are reported in L2 and in the full H1 norm,
pressure errors in L2 after removing each field's mean (pressure is
only determined up to a constant).  Error sequences over uniformly
refined meshes convert to log-ratio convergence rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy

from .assembly import element_context, operator_degree


@dataclass(frozen=True)
class ManufacturedCase:
    """A closed-form flow with its derived momentum source.

    All callables take ``(x, y, t)`` with ``x, y`` flat arrays and a
    scalar time: ``u -> (2, npts)``, ``grad_u -> (2, 2, npts)`` with
    ``[i, j] = d u_i / d x_j``, ``p -> (npts,)``, ``f -> (2, npts)``.
    """

    u: callable
    grad_u: callable
    p: callable
    f: callable
    nu: float

    def velocity_at(self, t):
        """The velocity field frozen at time ``t`` (for projections)."""
        return lambda x, y: self.u(x, y, t)


def _broadcasting(fn):
    """Wrap a lambdified expression so constants broadcast to x's shape."""

    def wrapped(x, y, t):
        out = fn(x, y, t)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x))

    return wrapped


def polynomial_vortex(nu):
    """Divergence-free quartic vortex with exponential growth in time.

    The velocity components share the separable form
    ``2*exp(t) * a(x) * b(y)`` with quartic/cubic polynomial factors
    vanishing on the whole boundary; the pressure is ``2*exp(t)*(x-y)``
    (zero mean).  The momentum source follows by symbolic
    differentiation of the unsteady momentum balance; the convective
    term needs no divergence correction since the field is solenoidal.
    """
    if nu <= 0.0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    x, y, t = sympy.symbols("x y t")
    u_sym = [
        2 * sympy.exp(t) * x**2 * (x - 1) ** 2 * y * (y - 1) * (2 * y - 1),
        -2 * sympy.exp(t) * x * (x - 1) * (2 * x - 1) * y**2 * (y - 1) ** 2,
    ]
    p_sym = 2 * sympy.exp(t) * (x - y)
    assert sympy.simplify(sympy.diff(u_sym[0], x)
                          + sympy.diff(u_sym[1], y)) == 0

    f_sym = []
    for i in range(2):
        convect = (u_sym[0] * sympy.diff(u_sym[i], x)
                   + u_sym[1] * sympy.diff(u_sym[i], y))
        laplace = sympy.diff(u_sym[i], x, 2) + sympy.diff(u_sym[i], y, 2)
        grad_p = sympy.diff(p_sym, [x, y][i])
        f_sym.append(sympy.expand(
            sympy.diff(u_sym[i], t) + convect - nu * laplace + grad_p))

    args = (x, y, t)
    u_fn = [_broadcasting(sympy.lambdify(args, c, "numpy")) for c in u_sym]
    du_fn = [[_broadcasting(sympy.lambdify(args, sympy.diff(c, v), "numpy"))
              for v in (x, y)] for c in u_sym]
    p_fn = _broadcasting(sympy.lambdify(args, p_sym, "numpy"))
    f_fn = [_broadcasting(sympy.lambdify(args, c, "numpy")) for c in f_sym]

    def u(xv, yv, tv):
        return np.stack([u_fn[0](xv, yv, tv), u_fn[1](xv, yv, tv)])

    def grad_u(xv, yv, tv):
        return np.stack([
            np.stack([du_fn[i][j](xv, yv, tv) for j in range(2)])
            for i in range(2)])

    def p(xv, yv, tv):
        return p_fn(xv, yv, tv)

    def f(xv, yv, tv):
        return np.stack([f_fn[0](xv, yv, tv), f_fn[1](xv, yv, tv)])

    return ManufacturedCase(u=u, grad_u=grad_u, p=p, f=f, nu=float(nu))


@dataclass(frozen=True)
class ErrorTriple:
    """Velocity L2/H1 and mean-adjusted pressure L2 errors at one time."""

    velocity_l2: float
    velocity_h1: float
    pressure_l2: float
    time: float

    def __post_init__(self):
        for name in ("velocity_l2", "velocity_h1", "pressure_l2"):
            value = getattr(self, name)
            if not value >= 0.0:
                raise ValueError(f"{name} must be non-negative, got {value}")


def _components_at_quadrature(space, coeffs, ctx):
    """Discrete field values and gradients at the context's points.

    Returns ``vals`` with shape (mult, cells, npts) and ``grads`` with
    shape (mult, cells, npts, 2).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    vals, grads = [], []
    for a in range(space.multiplicity):
        cellwise = coeffs[space.cell_dofs + a * space.n_scalar]
        vals.append(np.einsum("qn,cn->cq", ctx.values, cellwise))
        grads.append(np.einsum("cqna,cn->cqa", ctx.grads, cellwise))
    return np.stack(vals), np.stack(grads)


def error_norms(vspace, pspace, state, case):
    """Errors of a discrete state against the closed-form flow.

    Velocity errors use a quadrature rule oversampled well beyond the
    element degree; the pressure comparison subtracts each field's own
    mean, realizing the quotient-space norm.
    """
    if len(state.U) != vspace.ndof or len(state.P) != pspace.ndof:
        raise ValueError("state does not match the given spaces")
    t = state.t
    degree = operator_degree(vspace, "error")

    ctx = element_context(vspace, degree)
    xq = ctx.points[..., 0].ravel()
    yq = ctx.points[..., 1].ravel()
    shape = ctx.points.shape[:2]
    wdet = ctx.weights[None, :] * ctx.det[:, None]

    vals, grads = _components_at_quadrature(vspace, state.U, ctx)
    u_exact = case.u(xq, yq, t).reshape(2, *shape)
    du_exact = case.grad_u(xq, yq, t).reshape(2, 2, *shape)
    err_l2 = np.einsum("acq,cq->", (vals - u_exact) ** 2, wdet)
    diff_grad = grads - np.moveaxis(du_exact, 1, -1)
    err_h1 = err_l2 + np.einsum("acqj,cq->", diff_grad**2, wdet)

    pctx = element_context(pspace, degree)
    xp = pctx.points[..., 0].ravel()
    yp = pctx.points[..., 1].ravel()
    pshape = pctx.points.shape[:2]
    pwdet = pctx.weights[None, :] * pctx.det[:, None]
    p_vals, _ = _components_at_quadrature(pspace, state.P, pctx)
    p_exact = case.p(xp, yp, t).reshape(*pshape)
    diff = p_vals[0] - p_exact
    area = pwdet.sum()
    mean = np.einsum("cq,cq->", diff, pwdet) / area
    err_p = np.einsum("cq,cq->", (diff - mean) ** 2, pwdet)

    return ErrorTriple(velocity_l2=float(np.sqrt(err_l2)),
                       velocity_h1=float(np.sqrt(err_h1)),
                       pressure_l2=float(np.sqrt(err_p)),
                       time=t)


def divergence_l2(vspace, U):
    """L2 norm of the divergence of a discrete velocity field."""
    ctx = element_context(vspace, operator_degree(vspace, "error"))
    _, grads = _components_at_quadrature(vspace, U, ctx)
    div = grads[0, :, :, 0] + grads[1, :, :, 1]
    wdet = ctx.weights[None, :] * ctx.det[:, None]
    return float(np.sqrt(np.einsum("cq,cq->", div**2, wdet)))


def convergence_rates(errors, hs):
    """Log-ratio rates between consecutive (error, h) pairs.

    ``rate_i = log(e_{i-1}/e_i) / log(h_{i-1}/h_i)``; the result has one
    entry fewer than the inputs.
    """
    errors = [float(e) for e in errors]
    hs = [float(h) for h in hs]
    if len(errors) != len(hs):
        raise ValueError("errors and hs must have equal length")
    if len(errors) < 2:
        raise ValueError("need at least two (error, h) pairs for a rate")
    if any(e <= 0.0 for e in errors):
        raise ValueError("rates are undefined for non-positive errors")
    if any(h <= 0.0 for h in hs):
        raise ValueError("mesh sizes must be positive")
    return [np.log(errors[i - 1] / errors[i]) / np.log(hs[i - 1] / hs[i])
            for i in range(1, len(errors))]
