"""Backward-Euler time marching for the penalized flow problem.

A run is a uniform-step implicit march: each step solves the
lagged-convection fixed point for the block system, with the velocity
mass matrix tying consecutive steps together through the discrete time
derivative ``(U^n - U^{n-1}) / dt``.  The module provides the initial
L2 projection, per-step error propagation with the step index attached,
state capture at a fixed cadence, a steady-state detector on the
discrete time derivative, and plain-text checkpoints so a run can be
split and resumed bit-for-bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .assembly import LoadAssembler, assemble_mass
from .fespace import build_space
from .mesh import unit_square_mesh
from .solver import (ParameterError, PenalizedSystem, PicardConfig,
                     linear_solve, nonlinear_solve)

#: Element pairs offered by the experiment layer: velocity family,
#: pressure family, and the preferred solver path.
ELEMENT_PAIRS = {
    "p2p1": ("P2", "P1", "coupled"),
    "p3p2": ("P3", "P2", "coupled"),
    "crp0": ("CR", "P0", "schur"),
}

#: Velocity polynomial degree per pair; the spatial coupling in the
#: convergence studies is dt = eps = c * h**(degree + 1).
PAIR_DEGREE = {"p2p1": 2, "p3p2": 3, "crp0": 1}


class SteppingError(RuntimeError):
    """A time step failed; carries the step index and time."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


@dataclass(frozen=True)
class State:
    """Discrete velocity/pressure coefficients at one time level."""

    U: np.ndarray
    P: np.ndarray
    t: float
    n: int


@dataclass(frozen=True)
class RunConfig:
    """Parameters of one transient run on the unit square.

    ``steady_tol`` enables early stopping when the discrete time
    derivative ``|U^n - U^{n-1}| / dt`` drops below it (0 disables);
    ``capture_every`` keeps every m-th state in addition to the first
    and last (0 keeps only those two).
    """

    nu: float
    eps: float
    dt: float
    t_end: float
    pair: str = "p2p1"
    level: int = 3
    capture_every: int = 0
    steady_tol: float = 0.0
    picard: PicardConfig = field(default_factory=PicardConfig)

    def __post_init__(self):
        if self.nu <= 0.0:
            raise ParameterError(f"viscosity must be positive, got {self.nu}")
        if self.eps <= 0.0:
            raise ParameterError(
                f"penalty parameter must be positive, got {self.eps}")
        if not 0.0 < self.dt < 1.0:
            raise ParameterError(
                f"time step must lie in (0, 1), got {self.dt}")
        if self.t_end < self.dt:
            raise ParameterError("final time must cover at least one step")
        if self.pair not in ELEMENT_PAIRS:
            raise ParameterError(
                f"unknown element pair {self.pair!r}; "
                f"options are {sorted(ELEMENT_PAIRS)}")
        if self.capture_every < 0:
            raise ParameterError("capture_every must be nonnegative")
        if self.steady_tol < 0.0:
            raise ParameterError("steady_tol must be nonnegative")


@dataclass
class RunResult:
    """Outcome of a transient run."""

    captures: list
    final: State
    steps: int
    steady: bool = False
    picard_iterations: int = 0


def num_steps(dt, duration):
    """Number of uniform steps covering ``duration``.

    The quotient must be an integer to 1e-9 relative accuracy;
    otherwise it is rounded with a warning.
    """
    ratio = duration / dt
    n = max(int(round(ratio)), 1)
    if abs(ratio - n) > 1e-9 * max(abs(ratio), 1.0):
        warnings.warn(
            f"duration/dt = {ratio!r} is not an integer; "
            f"rounding to {n} steps", RuntimeWarning, stacklevel=2)
    return n


def project_initial(space, fn):
    """L2 projection of ``fn`` onto ``space`` (global mass solve).

    No boundary conditions are applied here; the first time step's
    system constrains the boundary.  ``fn=None`` gives the zero field.
    """
    if fn is None:
        return np.zeros(space.ndof)
    mass = assemble_mass(space)
    load = LoadAssembler(space).assemble(fn)
    return linear_solve(mass, load)


class TransientSolver:
    """Backward-Euler driver bound to one discretization.

    Parameters
    ----------
    vspace, pspace : FunctionSpace
        Velocity (multiplicity 2) and pressure spaces on one mesh.
    nu, eps, dt : float
        Viscosity, penalty parameter, and uniform time step.
    forcing : callable or None
        Momentum source ``forcing(x, y, t) -> (2, npts)``; None is zero.
    bc_fn : callable or None
        Dirichlet velocity data ``bc_fn(x, y, t) -> (2, npts)`` sampled
        at the constrained DOF points; None means no-slip everywhere.
    picard : PicardConfig or None
    path : str or None
        Solver path; None picks "schur" for piecewise-constant pressure
        and "coupled" otherwise.
    """

    def __init__(self, vspace, pspace, nu, eps, dt, forcing=None,
                 bc_fn=None, picard=None, path=None):
        if not 0.0 < dt < 1.0:
            raise ParameterError(f"time step must lie in (0, 1), got {dt}")
        if path is None:
            path = "schur" if pspace.family == "P0" else "coupled"
        self.vspace = vspace
        self.pspace = pspace
        self.dt = float(dt)
        self.forcing = forcing
        self.bc_fn = bc_fn
        self.picard = picard or PicardConfig()

        scalar = vspace.boundary_scalar_dofs()
        self._bc_scalar = scalar
        bc_dofs = np.concatenate([scalar, scalar + vspace.n_scalar])
        self.system = PenalizedSystem(
            vspace, pspace, nu=nu, eps=eps, mass_coeff=1.0 / self.dt,
            bc_dofs=bc_dofs, bc_values=self._bc_values(self.dt), path=path)
        self._loader = LoadAssembler(vspace) if forcing is not None else None

    @classmethod
    def from_config(cls, cfg, forcing=None, bc_fn=None):
        """Build mesh, spaces, and driver from a RunConfig."""
        vfam, pfam, path = ELEMENT_PAIRS[cfg.pair]
        mesh = unit_square_mesh(cfg.level)
        vspace = build_space(mesh, vfam, multiplicity=2)
        pspace = build_space(mesh, pfam)
        return cls(vspace, pspace, nu=cfg.nu, eps=cfg.eps, dt=cfg.dt,
                   forcing=forcing, bc_fn=bc_fn, picard=cfg.picard, path=path)

    def _bc_values(self, t):
        if self.bc_fn is None:
            return np.zeros(2 * len(self._bc_scalar))
        pts = self.vspace.dof_points[self._bc_scalar]
        vals = np.asarray(self.bc_fn(pts[:, 0], pts[:, 1], t), dtype=float)
        return np.concatenate([vals[0], vals[1]])

    def _load_vector(self, t):
        if self._loader is None:
            return np.zeros(self.vspace.ndof)
        return self._loader.assemble(
            lambda x, y: self.forcing(x, y, t))

    def initial_state(self, u0=None):
        """State at t=0 from the L2 projection of ``u0``."""
        U0 = project_initial(self.vspace, u0)
        return State(U0, np.zeros(self.pspace.ndof), 0.0, 0)

    def step(self, state):
        """Advance one backward-Euler step.

        Returns the new State and the Picard diagnostics; solver
        failures are re-raised as SteppingError with the step attached.
        """
        n_next = state.n + 1
        t_next = state.t + self.dt
        rhs = self._load_vector(t_next) + (self.system.mass @ state.U) / self.dt
        if self.bc_fn is not None:
            self.system.set_bc_values(self._bc_values(t_next))
        try:
            U, P, stats = nonlinear_solve(self.system, rhs, seed=state.U,
                                          config=self.picard)
        except RuntimeError as exc:
            raise SteppingError(
                f"step {n_next} (t={t_next:.6g}) failed: {exc}",
                step=n_next, time=t_next) from exc
        return State(U, P, t_next, n_next), stats

    def run(self, t_end, u0=None, start=None, capture_every=0,
            steady_tol=0.0):
        """March from ``start`` (or the projection of ``u0``) to ``t_end``.

        ``capture_every=m`` stores every m-th state in addition to the
        first and last.  ``steady_tol > 0`` stops early once
        ``|U^n - U^{n-1}| / dt`` drops below it.
        """
        if start is None:
            start = self.initial_state(u0)
        steps = num_steps(self.dt, t_end - start.t)
        captures = [start]
        state = start
        total_picard = 0
        steady = False
        for _ in range(steps):
            previous = state
            state, stats = self.step(state)
            total_picard += stats.iterations
            if capture_every and state.n % capture_every == 0:
                captures.append(state)
            if steady_tol > 0.0:
                rate = (np.linalg.norm(state.U - previous.U) / self.dt)
                if rate < steady_tol:
                    steady = True
                    break
        if captures[-1] is not state:
            captures.append(state)
        return RunResult(captures=captures, final=state,
                         steps=state.n - start.n, steady=steady,
                         picard_iterations=total_picard)


_CHECKPOINT_MAGIC = "penfem-state 1"


def write_checkpoint(path, state):
    """Dump a State as versioned plain text (full double precision)."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{_CHECKPOINT_MAGIC}\n")
        fh.write(f"n {state.n}\n")
        fh.write(f"t {state.t:.17g}\n")
        fh.write(f"ndof_u {len(state.U)}\n")
        fh.write(f"ndof_p {len(state.P)}\n")
        for value in state.U:
            fh.write(f"{value:.17g}\n")
        for value in state.P:
            fh.write(f"{value:.17g}\n")


def read_checkpoint(path):
    """Read a State written by write_checkpoint."""
    with open(path, encoding="ascii") as fh:
        magic = fh.readline().strip()
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(
                f"not a checkpoint file (header {magic!r}, "
                f"expected {_CHECKPOINT_MAGIC!r})")
        header = {}
        for _ in range(4):
            key, value = fh.readline().split()
            header[key] = value
        n = int(header["n"])
        t = float(header["t"])
        ndof_u = int(header["ndof_u"])
        ndof_p = int(header["ndof_p"])
        values = np.loadtxt(fh, dtype=np.float64, ndmin=1)
    if len(values) != ndof_u + ndof_p:
        raise ValueError(
            f"checkpoint holds {len(values)} values, "
            f"expected {ndof_u + ndof_p}")
    return State(values[:ndof_u], values[ndof_u:], t, n)
