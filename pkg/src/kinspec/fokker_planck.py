"""Conservative discretization of the spatially homogeneous Fokker-Planck
operator L f = div(grad f + F f), spectral-gap computation, implicit time
integration, and decay-rate measurement against the weight-table predictions.

Scheme: exponential-fitting finite volumes.  Fluxes are written in the
equilibrium-ratio form J_{i+1/2} = mu_{i+1/2} [ (f/mu)_{i+1} - (f/mu)_i ] / dr
with geometric-mean interface equilibrium, so the discrete kernel is exactly
the grid equilibrium and the operator is exactly self-adjoint in the discrete
L^2(mu^{-1/2}) inner product (U = 0).  The grid equilibrium is normalized by
the grid quadrature, which makes its mass exactly one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.linalg import expm

from .errors import (
    EigenSolveFailed,
    GridTooCoarse,
    InsufficientTruncation,
    StepRejected,
)
from .fitting import DecayFit, Trajectory, fit_algebraic, fit_exponential
from .operators import NormSpec, lognorm
from .weights import NEG_INF_SENTINEL, Potential, WeightSpec, asymptotic_defect, defect_weight


# ---------------------------------------------------------------------------
# velocity grids
# ---------------------------------------------------------------------------

@dataclass
class VelocityGrid:
    """Cell-centered grid: line_1d on [-R, R] or radial_3d on [0, R] with the
    4 pi r^2 dr measure.  quad are the cell quadrature weights."""

    geometry: str
    R: float
    N: int
    centers: np.ndarray = field(init=False)
    quad: np.ndarray = field(init=False)
    edges: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.geometry not in ("line_1d", "radial_3d"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.N < 64:
            raise ValueError("N must be >= 64")
        if self.geometry == "line_1d":
            self.edges = np.linspace(-self.R, self.R, self.N + 1)
            self.centers = 0.5 * (self.edges[:-1] + self.edges[1:])
            self.quad = np.diff(self.edges)
        else:
            self.edges = np.linspace(0.0, self.R, self.N + 1)
            self.centers = 0.5 * (self.edges[:-1] + self.edges[1:])
            self.quad = (4 * np.pi / 3) * np.diff(self.edges ** 3)

    @property
    def dim(self) -> int:
        return 1 if self.geometry == "line_1d" else 3

    def radii(self) -> np.ndarray:
        return np.abs(self.centers)

    def mu(self, pot: Potential) -> np.ndarray:
        """Grid equilibrium, normalized so that quad . mu = 1 exactly."""
        vals = np.exp(-pot.phi_r(self.radii()))
        return vals / float(self.quad @ vals)

    def mu_tail_mass(self, pot: Potential) -> float:
        """Continuum equilibrium mass beyond the domain edge."""
        surf = {1: 2.0, 3: 4 * math.pi}[self.dim]
        val, _ = quad(lambda r: surf * r ** (self.dim - 1) * math.exp(-pot.phi_r(r)),
                      self.R, np.inf, limit=200)
        return val / pot.z_const

    def norm_spec(self, w: Optional[WeightSpec], pot: Optional[Potential] = None,
                  p: Optional[float] = None) -> NormSpec:
        """Weighted discrete norm on this grid; w = None means weight 1."""
        r = self.radii()
        if w is None:
            m = np.ones_like(r)
            pp = 2.0 if p is None else p
        else:
            if w.kind in ("exp_energy", "gaussian_inv") and pot is None:
                raise ValueError("potential required for this weight kind")
            m = np.asarray(w.m_r(pot, r), dtype=float)
            if w.kind == "gaussian_inv":
                # normalized mu^{-1/2} so the similarity matches mu exactly
                m = 1.0 / np.sqrt(self.mu(pot))
            pp = w.p if p is None else p
        return NormSpec(p=pp, weight=m, quad=self.quad.copy())


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------

@dataclass
class FPOperator:
    grid: VelocityGrid
    pot: Potential
    matrix: np.ndarray
    mu: np.ndarray
    dirichlet_constant: Optional[float] = None  # 2 * lambda_P, recorded separately

    @property
    def n(self) -> int:
        return self.grid.N


def build_fp_operator(pot: Potential, grid: VelocityGrid,
                      max_tail: float = 1e-12) -> FPOperator:
    """Conservative exponential-fitting finite-volume matrix with no-flux
    boundaries; the grid equilibrium spans its kernel to machine precision."""
    if grid.geometry == "radial_3d" and pot.d != 3:
        raise ValueError("radial_3d grid needs a d = 3 potential")
    if grid.geometry == "line_1d" and pot.d != 1:
        raise ValueError("line_1d grid needs a d = 1 potential")
    dr = np.diff(grid.edges)
    if np.max(dr[np.abs(grid.centers) < 2.0]) > 0.125:
        raise GridTooCoarse("fewer than 8 cells per unit length near the origin")
    if grid.mu_tail_mass(pot) > max_tail:
        raise GridTooCoarse(f"equilibrium tail mass beyond R exceeds {max_tail:g}")

    mu = grid.mu(pot)
    n = grid.N
    # interface transmissibilities: area * mu_interface / (dr * cell volume)
    if grid.geometry == "line_1d":
        area = np.ones(n - 1)
        vol = grid.quad
    else:
        r_if = grid.edges[1:-1]
        area = 4 * np.pi * r_if ** 2
        vol = grid.quad
    h = grid.centers[1:] - grid.centers[:-1]
    # with geometric-mean interface equilibrium, cond/mu_i = (area/h) e^{-dphi/2}
    # and cond/mu_{i+1} = (area/h) e^{+dphi/2}; assembling from phi differences
    # avoids equilibrium underflow for steep potentials
    dphi = pot.phi_r(grid.radii()[1:]) - pot.phi_r(grid.radii()[:-1])
    lower = (area / h) * np.exp(-0.5 * dphi)
    upper = (area / h) * np.exp(+0.5 * dphi)
    diag = np.zeros(n)
    diag[:-1] -= lower
    diag[1:] -= upper
    mat = sp.diags([lower / vol[1:], diag / vol, upper / vol[:-1]],
                   offsets=[-1, 0, 1]).toarray()
    # rescaling by cell volume keeps quad-weighted column sums exactly zero
    op = FPOperator(grid=grid, pot=pot, matrix=mat, mu=mu)

    resid = np.max(np.abs(mat @ mu)) / max(np.max(np.abs(mat)) * np.max(mu), 1e-300)
    if resid > 1e-6:
        raise GridTooCoarse(f"equilibrium residual {resid:.2e} exceeds 1e-6")
    return op


def mass_production(op: FPOperator) -> float:
    """max_j |sum_i quad_i L_ij| (exactly zero for the conservative scheme)."""
    return float(np.max(np.abs(op.grid.quad @ op.matrix)))


# ---------------------------------------------------------------------------
# spectral gap
# ---------------------------------------------------------------------------

def _symmetrized(op: FPOperator) -> np.ndarray:
    w = np.sqrt(op.grid.quad / op.mu)
    return op.matrix * (w[:, None] / w[None, :])


def poincare_gap(op: FPOperator, nth: int = 1) -> float:
    """lambda_P: magnitude of the nth nonzero eigenvalue of -L in
    L^2(mu^{-1/2}) (eigen-solve of the symmetric similarity transform).

    This spectral gap is the operational lambda_P throughout; the
    Dirichlet-form constant of the Poincare inequality (which carries a
    factor 2 in the usual normalization) is recorded on the operator as
    dirichlet_constant = 2 lambda_P.
    """
    if op.pot.U is not None:
        raise ValueError("poincare_gap assumes U = 0")
    s = _symmetrized(op)
    s = 0.5 * (s + s.T)
    try:
        lam = np.linalg.eigvalsh(s)
    except np.linalg.LinAlgError as exc:
        raise EigenSolveFailed(str(exc)) from exc
    lam = np.sort(lam)[::-1]          # lam[0] ~ 0 (kernel), lam[1] = -gap
    if abs(lam[0]) > 1e-8 * max(1.0, abs(lam[-1])):
        raise EigenSolveFailed(f"kernel eigenvalue off zero: {lam[0]:.3e}")
    gap = -float(lam[nth])
    if nth == 1:
        op.dirichlet_constant = 2 * gap
    return gap


def fp_eigenmode(op: FPOperator, nth: int = 1) -> np.ndarray:
    """nth excited eigenmode of L, returned as a grid function."""
    s = _symmetrized(op)
    s = 0.5 * (s + s.T)
    lam, vecs = np.linalg.eigh(s)
    order = np.argsort(lam)[::-1]
    w = np.sqrt(op.grid.quad / op.mu)
    mode = vecs[:, order[nth]] / w
    return mode / op.grid.norm_spec(None, p=2).vec(mode)


# ---------------------------------------------------------------------------
# A/B splitting
# ---------------------------------------------------------------------------

def split_AB(op: FPOperator, M: float, R: float):
    """A = M * indicator(|v| <= R), B = L - A."""
    if M < 0 or R <= 0:
        raise ValueError("M >= 0 and R > 0 required")
    chi = (op.grid.radii() <= R).astype(float)
    a = np.diag(M * chi)
    return a, op.matrix - a


def choose_truncation(op: FPOperator, w: WeightSpec, margin: float = 0.1,
                      a_target: Optional[float] = None):
    """Pick (M, R) by the rule psi_{m,p} - M chi_R <= a pointwise with
    a = asymptotic defect + margin (or a_target when the defect is -inf)."""
    r = op.grid.radii()
    psi = np.array([defect_weight(op.pot, w, np.r_[rr, np.zeros(op.pot.d - 1)])
                    for rr in r])
    a_inf = asymptotic_defect(op.pot, w)
    if a_inf <= 0.5 * NEG_INF_SENTINEL:
        a = a_target if a_target is not None else -1.0
    else:
        a = a_inf + margin
    order = np.argsort(r)
    psi_sorted = psi[order]
    r_sorted = r[order]
    # smallest grid radius R with psi <= a outside
    above = psi_sorted > a
    if not above.any():
        return 0.0, float(r_sorted[0]), a
    last_bad = np.max(np.flatnonzero(above))
    if last_bad == len(r_sorted) - 1:
        raise InsufficientTruncation(
            f"psi exceeds a = {a:.3g} out to the domain edge; enlarge R or margin"
        )
    R = float(r_sorted[last_bad])
    M = float(max(0.0, np.max(psi_sorted[: last_bad + 1]) - a))
    return M, R, a


# ---------------------------------------------------------------------------
# time integration
# ---------------------------------------------------------------------------

def evolve(op: FPOperator, f0, T: float, dt: float, norms: Optional[dict] = None,
           scheme: str = "implicit_euler", n_out: int = 200,
           keep_snapshots: bool = False) -> Trajectory:
    """March df/dt = L f with unconditionally stable implicit stepping.

    implicit_euler (default: positivity-preserving for this Metzler matrix)
    or crank_nicolson (second order, used where rate accuracy matters).
    Records || f_t - mu <f_0> || for every registered NormSpec in `norms`
    at n_out output times; mass is conserved to the linear-solver tolerance.
    """
    if dt <= 0 or T <= 0:
        raise ValueError("T and dt must be positive")
    f = np.asarray(f0, dtype=float).copy()
    n = op.n
    eye = sp.identity(n, format="csc")
    lmat = sp.csc_matrix(op.matrix)
    if scheme == "implicit_euler":
        solver = spla.splu(eye - dt * lmat)
        stepper = lambda g: solver.solve(g)
    elif scheme == "crank_nicolson":
        solver = spla.splu(eye - 0.5 * dt * lmat)
        half = eye + 0.5 * dt * lmat
        stepper = lambda g: solver.solve(half @ g)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")

    quadw = op.grid.quad
    mass0 = float(quadw @ f)
    equil = op.mu * mass0
    norms = norms or {}
    n_steps = int(round(T / dt))
    out_every = max(1, n_steps // n_out)

    times = [0.0]
    series = {name: [spec.vec(f - equil)] for name, spec in norms.items()}
    series["mass_drift"] = [0.0]
    snaps, snap_ts = ([f.copy()], [0.0]) if keep_snapshots else (None, None)

    for k in range(1, n_steps + 1):
        f = stepper(f)
        if not np.all(np.isfinite(f)):
            raise StepRejected(f"non-finite state at step {k}")
        if k % out_every == 0 or k == n_steps:
            t = k * dt
            times.append(t)
            for name, spec in norms.items():
                series[name].append(spec.vec(f - equil))
            series["mass_drift"].append(abs(float(quadw @ f) - mass0))
            if keep_snapshots:
                snaps.append(f.copy())
                snap_ts.append(t)

    traj = Trajectory(times=np.array(times),
                      series={k: np.array(v) for k, v in series.items()},
                      snapshots=snaps,
                      snapshot_times=None if snap_ts is None else np.array(snap_ts),
                      meta={"scheme": scheme, "dt": dt, "mass0": mass0})
    drift_rate = np.max(traj.series["mass_drift"]) / max(T, 1.0)
    if drift_rate > 1e-10 * max(1.0, abs(mass0)):
        raise StepRejected(f"mass drift {drift_rate:.2e} per unit time")
    return traj


def measure_decay_rate(traj: Trajectory, name: str, kind: str = "exponential",
                       **fit_kwargs) -> DecayFit:
    """Fit the named norm series with the documented window rule."""
    if name not in traj.series:
        raise KeyError(f"no series named {name!r}")
    if kind == "exponential":
        return fit_exponential(traj.times, traj.series[name], **fit_kwargs)
    if kind == "algebraic":
        return fit_algebraic(traj.times, traj.series[name], **fit_kwargs)
    raise ValueError(f"unknown fit kind {kind!r}")


# ---------------------------------------------------------------------------
# derived experiments
# ---------------------------------------------------------------------------

def poly_tail_profile(grid: VelocityGrid, pot: Potential, k: float) -> np.ndarray:
    """Zero-mean initial datum with an exactly-k-moment tail:
    normalized <v>^{-(d+k+0.1)} minus the equilibrium."""
    r = grid.radii()
    prof = (1 + r ** 2) ** (-(pot.d + k + 0.1) / 2)
    prof /= float(grid.quad @ prof)
    return prof - grid.mu(pot)


def algebraic_decay_check(pot: Potential, k: float, R: float = 60.0, N: int = 1024,
                          T: Optional[float] = None, dt: float = 2e-2,
                          fit_lo: float = 1e-4, fit_hi: float = 0.3) -> DecayFit:
    """Algebraic L^1 decay exponent for gamma in [1, 2):  the flow of a
    zero-mean datum with an exactly-k-moment tail decays like t^{-k/(2-gamma)}.
    Returns the algebraic DecayFit (rate = measured exponent)."""
    if not (1 <= pot.gamma < 2):
        raise ValueError("algebraic regime needs gamma in [1, 2)")
    grid = VelocityGrid("line_1d", R=R, N=N)
    op = build_fp_operator(pot, grid)
    f0 = poly_tail_profile(grid, pot, k) + grid.mu(pot)  # mass-1 datum
    if T is None:
        T = 0.6 * R ** (2 - pot.gamma)  # algebraic phase ends near R^{2-gamma}
    norms = {"l1": grid.norm_spec(None, p=1)}
    traj = evolve(op, f0, T=T, dt=dt, norms=norms, scheme="crank_nicolson", n_out=400)
    return measure_decay_rate(traj, "l1", kind="algebraic", lo=fit_lo, hi=fit_hi)


def ultracontractivity_exponent(bmat: np.ndarray, grid: VelocityGrid,
                                pot: Potential, kappa: float = 0.25,
                                t0: float = 1e-3, n_dyadic: int = 7) -> DecayFit:
    """Small-time L^1(m0) -> L^2(m0) blow-up exponent of exp(t B).

    Evaluates max_i ||exp(tB) delta_i||_{L^2(m0)} / ||delta_i||_{L^1(m0)} on
    the dyadic times t0 * 2^j (one dense exponential plus squarings) and fits
    the algebraic exponent, to be compared with d/4.
    """
    w0 = WeightSpec(kind="exp_energy", kappa=kappa, p=2)
    m0 = np.asarray(w0.m_r(pot, grid.radii()), dtype=float)
    quadw = grid.quad
    ts, ratios = [], []
    e_t = expm(t0 * bmat)
    t = t0
    for _ in range(n_dyadic):
        col_l2 = np.sqrt((quadw * m0 ** 2) @ (e_t ** 2))   # ||column j||_{L^2(m0)}
        ratio = np.max(col_l2 / (quadw * m0))              # delta_j has mass 1/quad_j
        ts.append(t)
        ratios.append(float(ratio))
        e_t = e_t @ e_t
        t *= 2
    fit = fit_algebraic(np.array(ts), np.array(ratios), lo=0.0, hi=np.inf,
                        min_samples=4, require_decades=1.0, assert_ok=False)
    return fit


def nash_ratio(grid: VelocityGrid, g: np.ndarray) -> float:
    """||g||_2^2 / ( ||grad g||_2^{2d/(d+2)} ||g||_1^{4/(d+2)} ) with the
    grid measure; d is the grid dimension."""
    d = grid.dim
    quadw = grid.quad
    l2sq = float(quadw @ g ** 2)
    l1 = float(quadw @ np.abs(g))
    h = np.diff(grid.centers)
    dg = np.diff(g) / h
    if grid.geometry == "line_1d":
        grad_sq = float(np.sum(dg ** 2 * h))
    else:
        r_if = 0.5 * (grid.centers[:-1] + grid.centers[1:])
        grad_sq = float(np.sum(4 * np.pi * r_if ** 2 * dg ** 2 * h))
    if grad_sq == 0 or l1 == 0:
        return 0.0
    return l2sq / (grad_sq ** (d / (d + 2)) * l1 ** (4 / (d + 2)))


# empirically calibrated grid-level Nash constants (factor ~2 above the
# observed maxima on the default grids)
NASH_CONSTANTS = {1: 1.8, 3: 1.2}
