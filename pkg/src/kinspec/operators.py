"""Finite-dimensional operator laboratory.

Resolvents, contour spectral projectors, dense matrix exponentials,
convolution of one-parameter operator families, resolvent/semigroup
factorization identities for a split L = A + B, and logarithmic-norm
(growth-bound) certificates in weighted l^p norms.

Operators are plain complex ndarrays throughout; :class:`DiscreteOperator`
is the validated, JSON-serializable container around one.  Every public
function accepts either form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, schur

from .errors import (
    ContourTooClose,
    InsufficientOrder,
    NonConvergedQuadrature,
    OverflowRisk,
    QuadratureNotConverged,
    SingularResolvent,
)

OPERATOR_SCHEMA = "kinspec-operator-v1"
FAMILY_SCHEMA = "kinspec-family-v1"


def _mat(op) -> np.ndarray:
    """Coerce a DiscreteOperator or array-like to a square complex ndarray."""
    m = op.mat if isinstance(op, DiscreteOperator) else np.asarray(op, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"operator must be square, got shape {m.shape}")
    return m


class DiscreteOperator:
    """Dense square operator on C^n with finite entries."""

    __slots__ = ("mat",)

    def __init__(self, entries):
        m = np.asarray(entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m.view(float))):
            raise ValueError("operator entries must be finite")
        self.mat = m

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def __array__(self, dtype=None):
        return self.mat if dtype is None else self.mat.astype(dtype)

    def __repr__(self):
        return f"DiscreteOperator(dim={self.dim})"

    def to_json(self) -> str:
        """Serialize as {schema, dim, entries row-major as [re, im] pairs}."""
        entries = [[z.real, z.imag] for z in self.mat.ravel(order="C")]
        return json.dumps(
            {"schema": OPERATOR_SCHEMA, "dim": self.dim, "entries": entries}
        )

    @classmethod
    def from_json(cls, text: str) -> "DiscreteOperator":
        doc = json.loads(text)
        if doc.get("schema") != OPERATOR_SCHEMA:
            raise ValueError(f"unknown operator schema {doc.get('schema')!r}")
        n = int(doc["dim"])
        flat = np.array([complex(re, im) for re, im in doc["entries"]])
        return cls(flat.reshape(n, n))


@dataclass(frozen=True)
class NormSpec:
    """Weighted discrete L^p norm  ||f|| = || diag(weight) f ||_{l^p(quad)}.

    Mirrors the continuum convention ||f||_{L^p(m)} = ||f m||_{L^p}: `weight`
    multiplies function values, `quad` carries the quadrature measure.  For
    p = inf the norm is the plain weighted maximum (quad ignored).
    """

    p: float
    weight: np.ndarray
    quad: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        q = np.asarray(self.quad, dtype=float)
        if np.any(w <= 0) or np.any(q <= 0):
            raise ValueError("weight and quad must be strictly positive")
        if not (self.p >= 1):
            raise ValueError("p must lie in [1, inf]")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "quad", q)

    @classmethod
    def euclidean(cls, n: int, p: float = 2) -> "NormSpec":
        return cls(p=p, weight=np.ones(n), quad=np.ones(n))

    def _gauge(self) -> np.ndarray:
        """Diagonal W with ||f||_norm = ||W f||_{l^p} (plain p-norm)."""
        if self.p == 1:
            return self.weight * self.quad
        if math.isinf(self.p):
            return self.weight
        return self.weight * self.quad ** (1.0 / self.p)

    def vec(self, f) -> float:
        g = self._gauge() * np.asarray(f)
        if math.isinf(self.p):
            return float(np.max(np.abs(g)))
        return float(np.sum(np.abs(g) ** self.p) ** (1.0 / self.p))

    def transformed(self, op) -> np.ndarray:
        """W op W^{-1}: the operator seen in the gauged coordinates."""
        w = self._gauge()
        return _mat(op) * (w[:, None] / w[None, :])

    def op_norm(self, op) -> float:
        """Induced operator norm (p in {1, 2, inf})."""
        b = self.transformed(op)
        if self.p == 1:
            return float(np.max(np.sum(np.abs(b), axis=0)))
        if math.isinf(self.p):
            return float(np.max(np.sum(np.abs(b), axis=1)))
        if self.p == 2:
            return float(np.linalg.norm(b, 2))
        raise NotImplementedError("induced norm implemented for p in {1, 2, inf}")


@dataclass(frozen=True)
class ContourSpec:
    """Circle |z - center| = radius sampled with n_nodes trapezoid points."""

    center: complex
    radius: float
    n_nodes: int = 32

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.n_nodes < 16:
            raise ValueError("n_nodes must be >= 16")


# Relative eigenvalue-proximity tolerance for contour integration.
CONTOUR_PROXIMITY_TOL = 1e-6
# Stagnation criterion for adaptive node doubling.
PROJECTOR_STAGNATION = 1e-10


class OperatorFamily:
    """One-parameter family t >= 0 -> matrix, sampled or closed-form.

    `at(t)` evaluates; sampled families interpolate linearly (default) or
    with cubic splines between time-grid nodes.
    """

    def __init__(self, time_grid=None, samples=None, func=None, interp="linear"):
        if (func is None) == (samples is None):
            raise ValueError("provide exactly one of samples or func")
        self.func = func
        self.interp = interp
        if samples is not None:
            tg = np.asarray(time_grid, dtype=float)
            if tg.ndim != 1 or np.any(np.diff(tg) <= 0) or tg[0] < 0:
                raise ValueError("time_grid must be strictly increasing and >= 0")
            if tg[0] != 0.0:
                raise ValueError("sample(0) must be defined (time_grid starts at 0)")
            self.time_grid = tg
            self.samples = np.array([_mat(s) for s in samples])
        else:
            self.time_grid = None
            self.samples = None

    @classmethod
    def semigroup(cls, op) -> "OperatorFamily":
        m = _mat(op)
        return cls(func=lambda t: expm(t * m))

    @classmethod
    def from_callable(cls, func) -> "OperatorFamily":
        return cls(func=func)

    def at(self, t: float) -> np.ndarray:
        if self.func is not None:
            return np.asarray(self.func(t), dtype=complex)
        tg, ys = self.time_grid, self.samples
        if t <= tg[0]:
            return ys[0]
        if t >= tg[-1]:
            return ys[-1]
        k = int(np.searchsorted(tg, t) - 1)
        if self.interp == "linear":
            th = (t - tg[k]) / (tg[k + 1] - tg[k])
            return (1 - th) * ys[k] + th * ys[k + 1]
        raise ValueError(f"unknown interp rule {self.interp!r}")

    def to_json(self) -> str:
        if self.samples is None:
            raise ValueError("only sampled families are serializable")
        return json.dumps(
            {
                "schema": FAMILY_SCHEMA,
                "time_grid": list(map(float, self.time_grid)),
                "interp": self.interp,
                "samples": [json.loads(DiscreteOperator(s).to_json()) for s in self.samples],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "OperatorFamily":
        doc = json.loads(text)
        if doc.get("schema") != FAMILY_SCHEMA:
            raise ValueError(f"unknown family schema {doc.get('schema')!r}")
        samples = [DiscreteOperator.from_json(json.dumps(s)).mat for s in doc["samples"]]
        return cls(time_grid=doc["time_grid"], samples=samples, interp=doc["interp"])


# ---------------------------------------------------------------------------
# resolvent and spectral projector
# ---------------------------------------------------------------------------

def resolvent(op, z: complex) -> np.ndarray:
    """(op - z)^{-1}, verified to residual 1e-10 in the max norm."""
    m = _mat(op)
    n = m.shape[0]
    shifted = m - z * np.eye(n)
    try:
        r = np.linalg.solve(shifted, np.eye(n, dtype=complex))
    except np.linalg.LinAlgError as exc:
        raise SingularResolvent(f"(op - {z}) is singular") from exc
    resid = np.max(np.abs(shifted @ r - np.eye(n)))
    if not np.isfinite(resid) or resid > 1e-10:
        raise SingularResolvent(
            f"(op - {z}) rank-deficient at working precision (residual {resid:.2e})"
        )
    return r


def algebraic_multiplicity_inside(op, contour: ContourSpec) -> int:
    """Number of eigenvalues (with algebraic multiplicity) strictly inside.

    Counted on the Schur form so defective eigenvalues are counted right.
    """
    t, _ = schur(_mat(op), output="complex")
    lam = np.diag(t)
    return int(np.sum(np.abs(lam - contour.center) < contour.radius))


def spectral_projector(op, contour: ContourSpec) -> np.ndarray:
    """Spectral projector -(1/2 pi i) \\oint R_op(z) dz over the circle.

    Trapezoid rule on the circle (spectrally accurate for periodic
    integrands) with adaptive node doubling; raises ContourTooClose when an
    eigenvalue sits within 1e-6 * radius of the circle and
    NonConvergedQuadrature when doubling stalls above 1e-10.
    """
    m = _mat(op)
    lam = np.linalg.eigvals(m)
    dist = np.abs(np.abs(lam - contour.center) - contour.radius)
    if np.min(dist) < CONTOUR_PROXIMITY_TOL * contour.radius:
        raise ContourTooClose(
            f"eigenvalue within {CONTOUR_PROXIMITY_TOL:g}*radius of the contour "
            f"(min distance {np.min(dist):.3e})"
        )

    def trapezoid(n_nodes: int) -> np.ndarray:
        theta = 2 * np.pi * np.arange(n_nodes) / n_nodes
        zs = contour.center + contour.radius * np.exp(1j * theta)
        acc = np.zeros_like(m)
        for th, z in zip(theta, zs):
            acc += resolvent(m, z) * np.exp(1j * th)
        return -(contour.radius / n_nodes) * acc

    n_nodes = max(contour.n_nodes, 16)
    proj = trapezoid(n_nodes)
    for _ in range(8):
        finer = trapezoid(2 * n_nodes)
        if np.max(np.abs(finer - proj)) <= PROJECTOR_STAGNATION:
            proj = finer
            break
        proj, n_nodes = finer, 2 * n_nodes
    else:
        raise NonConvergedQuadrature(
            f"projector did not stagnate to {PROJECTOR_STAGNATION:g} "
            f"(last node count {n_nodes})"
        )

    # contract checks: idempotence, commutation, rank = algebraic multiplicity
    scale = max(1.0, np.max(np.abs(proj)))
    if np.max(np.abs(proj @ proj - proj)) > 1e-10 * scale:
        raise NonConvergedQuadrature("projector not idempotent to 1e-10")
    opscale = max(1.0, np.max(np.abs(m)))
    if np.max(np.abs(m @ proj - proj @ m)) > 1e-10 * opscale * scale:
        raise NonConvergedQuadrature("projector does not commute with op to 1e-10")
    rank = int(np.sum(np.linalg.svd(proj, compute_uv=False) > 0.5))
    mult = algebraic_multiplicity_inside(m, contour)
    if rank != mult:
        raise NonConvergedQuadrature(
            f"projector rank {rank} != enclosed algebraic multiplicity {mult}"
        )
    return proj


def projector_onto(op, eigenvalue: complex, radius: float = None) -> np.ndarray:
    """Convenience wrapper: projector for the eigenvalue group nearest `eigenvalue`."""
    m = _mat(op)
    lam = np.linalg.eigvals(m)
    if radius is None:
        others = lam[np.abs(lam - eigenvalue) > 1e-8]
        radius = 0.5 * (np.min(np.abs(others - eigenvalue)) if len(others) else 1.0)
    return spectral_projector(m, ContourSpec(center=eigenvalue, radius=radius))


def projector_halfplane(op, a: float) -> np.ndarray:
    """Projector onto the spectral subspace {Re lambda > a}: the sum of the
    projectors of the eigenvalue clusters lying right of the abscissa."""
    m = _mat(op)
    lam = np.linalg.eigvals(m)
    right = lam[lam.real > a]
    proj = np.zeros_like(m)
    done = np.zeros(len(right), dtype=bool)
    for i, xi in enumerate(right):
        if done[i]:
            continue
        # cluster eigenvalues that are numerically inseparable
        cluster = np.abs(right - xi) < 1e-6 * max(1.0, abs(xi))
        done |= cluster
        center = complex(np.mean(right[cluster]))
        others = lam[np.abs(lam - center) > 1e-6 * max(1.0, abs(center))]
        spread = float(np.max(np.abs(right[cluster] - center))) if cluster.sum() > 1 else 0.0
        gap = float(np.min(np.abs(others - center))) if len(others) else 1.0
        radius = spread + 0.45 * max(gap - spread, 1e-6)
        proj = proj + spectral_projector(m, ContourSpec(center=center, radius=radius))
    return proj


# ---------------------------------------------------------------------------
# semigroup
# ---------------------------------------------------------------------------

def spectral_bound(op) -> float:
    """sup Re(spectrum)."""
    return float(np.max(np.linalg.eigvals(_mat(op)).real))


def semigroup_at(op, t: float) -> np.ndarray:
    """exp(t op) by scaling-and-squaring; refuses hopeless overflow."""
    if t < 0:
        raise ValueError("semigroup defined for t >= 0")
    m = _mat(op)
    s = spectral_bound(m)
    if t * s > 700.0:
        raise OverflowRisk(f"t * spectral_bound = {t * s:.1f} > 700")
    return expm(t * m)


# ---------------------------------------------------------------------------
# convolution of operator families
# ---------------------------------------------------------------------------

def _gauss_panels(t: float, n_panels: int, n_quad: int):
    x, w = np.polynomial.legendre.leggauss(n_quad)
    edges = np.linspace(0.0, t, n_panels + 1)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def convolve_families(S2, S1, t: float, n_quad: int = 8, n_panels: int = 8,
                      check: bool = True) -> np.ndarray:
    """(S2 * S1)(t) = int_0^t S2(s) S1(t-s) ds, composite Gauss-Legendre.

    `n_quad` is the node count per panel; with `check` the node count is
    doubled once and the two results must agree to 1e-8 relative.
    """
    if n_quad < 8:
        raise ValueError("n_quad must be >= 8")
    if t < 0:
        raise ValueError("t must be >= 0")
    S2 = S2 if isinstance(S2, OperatorFamily) else OperatorFamily.from_callable(S2)
    S1 = S1 if isinstance(S1, OperatorFamily) else OperatorFamily.from_callable(S1)

    def quad(nq: int) -> np.ndarray:
        if t == 0.0:
            probe = S2.at(0.0) @ S1.at(0.0)
            return np.zeros_like(probe)
        nodes, weights = _gauss_panels(t, n_panels, nq)
        acc = None
        for s, w in zip(nodes, weights):
            term = w * (S2.at(s) @ S1.at(t - s))
            acc = term if acc is None else acc + term
        return acc

    coarse = quad(n_quad)
    if not check:
        return coarse
    fine = quad(2 * n_quad)
    scale = max(np.max(np.abs(fine)), 1e-300)
    if np.max(np.abs(fine - coarse)) > 1e-8 * scale:
        raise QuadratureNotConverged(
            "doubling n_quad changed the convolution by more than 1e-8 relative"
        )
    return fine


def iterated_convolution(S, ell: int, t: float, **kwargs) -> np.ndarray:
    """S^{(*ell)}(t): ell = 0 is the identity family (neutral element), ell = 1
    is S itself, and S^{(*ell)} = S * S^{(*(ell-1))} beyond (ell factors of S).
    """
    if ell < 0:
        raise ValueError("ell must be >= 0")
    S = S if isinstance(S, OperatorFamily) else OperatorFamily.from_callable(S)
    if ell == 0:
        n = S.at(0.0).shape[0]
        return np.eye(n, dtype=complex)
    if ell == 1:
        return S.at(t)

    current = S  # S^{(*1)}
    for level in range(ell - 1):
        prev = current
        outermost = level == ell - 2  # Richardson check only at the top level
        current = OperatorFamily.from_callable(
            lambda tau, prev=prev, chk=outermost: convolve_families(
                S, prev, tau, check=chk, **kwargs
            )
        )
    return current.at(t)


def convolution_growth_bound(C1: float, alpha1: int, a1: float,
                             C2: float, alpha2: int, a2: float):
    """Growth bound for a convolution of two families.

    If ||S_i(t)|| <= C_i t^{alpha_i} e^{a_i t}, the convolution satisfies
    ||(S_1 * S_2)(t)|| <= C t^{alpha_1 + alpha_2 + 1} e^{max(a_1, a_2) t}.
    Returns (C_beta, C_loose, alpha, a): C_beta carries the exact
    beta-function constant alpha_1! alpha_2! / (alpha_1 + alpha_2 + 1)!;
    C_loose the looser alpha_1! alpha_2! / (alpha_1 + alpha_2)! variant.
    Both are recorded; the sharp beta form is what the checks assert.
    """
    f1, f2 = math.factorial(alpha1), math.factorial(alpha2)
    c_beta = C1 * C2 * f1 * f2 / math.factorial(alpha1 + alpha2 + 1)
    c_loose = C1 * C2 * f1 * f2 / math.factorial(alpha1 + alpha2)
    return c_beta, c_loose, alpha1 + alpha2 + 1, max(a1, a2)


# ---------------------------------------------------------------------------
# factorization identities
# ---------------------------------------------------------------------------

def factorized_resolvent(A, B, n: int, z: complex) -> np.ndarray:
    """Resolvent of L = A + B through the order-n factorization

        R_L(z) = sum_{l=0}^{n-1} (-1)^l R_B(z) (A R_B(z))^l
                 + (-1)^n R_L(z) (A R_B(z))^n,

    with R_L on the right evaluated as the direct resolvent of A + B.  The
    postcondition (agreement with resolvent(A+B, z)) IS the verified identity.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a, b = _mat(A), _mat(B)
    rb = resolvent(b, z)
    rl = resolvent(a + b, z)
    arb = a @ rb
    acc = np.zeros_like(rb)
    power = np.eye(rb.shape[0], dtype=complex)  # (A R_B)^l
    for l in range(n):
        acc += ((-1) ** l) * (rb @ power)
        power = power @ arb
    # power is now (A R_B)^n
    acc += ((-1) ** n) * (rl @ power)
    return acc


def _vanloan_block(diag_blocks, super_block, t: float) -> np.ndarray:
    """Top-right block of exp(t M) for M block-bidiagonal.

    diag_blocks = [D_0, ..., D_k], all coupled by the same superdiagonal
    block A: the (0, k) block of exp(tM) is the iterated convolution
    (S_{D_0} A) * (S_{D_1} A) * ... * S_{D_k}(t) written as a simplex
    integral; this is the classical block-exponential quadrature-free
    evaluation of semigroup convolutions.
    """
    k = len(diag_blocks)
    d = diag_blocks[0].shape[0]
    big = np.zeros((k * d, k * d), dtype=complex)
    for i, blk in enumerate(diag_blocks):
        big[i * d:(i + 1) * d, i * d:(i + 1) * d] = blk
    for i in range(k - 1):
        big[i * d:(i + 1) * d, (i + 1) * d:(i + 2) * d] = super_block
    return expm(t * big)[0:d, (k - 1) * d:k * d]


def factorized_semigroup(A, B, n: int, t: float, proj) -> np.ndarray:
    """Semigroup of L = A + B through the order-n Duhamel factorization

        S_L(t) = S_L(t) P + sum_{l=0}^{n-1} (I - P) [S_B * (A S_B)^{*l}](t)
                 + [(I - P) S_L] * (A S_B)^{*n} (t)

    with P the spectral projector of L for the separated right part of the
    spectrum.  The signs are the time-domain ones: iterating
    S_L = S_B + S_L * (A S_B) produces plus signs throughout, while the
    resolvent-side twin carries (-1)^l from the R_B(z) = (B - z)^{-1}
    convention.  Convolution terms are evaluated exactly through block-matrix
    exponentials (see _vanloan_block) rather than nested quadrature, which
    keeps the identity check at machine precision; convolve_families provides
    the quadrature route and is cross-checked against this one in the tests.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a, b = _mat(A), _mat(B)
    p = _mat(proj)
    lmat = a + b
    eye = np.eye(a.shape[0], dtype=complex)
    q = eye - p

    total = semigroup_at(lmat, t) @ p
    # S_B * (A S_B)^{*l}: block chain with l+1 diagonal B blocks
    for l in range(n):
        term = _vanloan_block([b] * (l + 1), a, t) if l > 0 else expm(t * b)
        total += q @ term
    # [(I - P) S_L] * (A S_B)^{*n}: S_L * (A S_B)^{*n} then project left
    tail = _vanloan_block([lmat] + [b] * n, a, t)
    total += q @ tail
    return total


# ---------------------------------------------------------------------------
# hypodissipativity / logarithmic norms
# ---------------------------------------------------------------------------

def lognorm(op, norm: NormSpec) -> float:
    """Logarithmic norm of op in the weighted norm: the least a with
    ||exp(t op)||_norm <= e^{a t} for all t >= 0.

    p = 2: top eigenvalue of the symmetric part of W op W^{-1};
    p = 1 / inf: explicit weighted column / row formulas.
    """
    bmat = norm.transformed(op)
    if norm.p == 2:
        sym = 0.5 * (bmat + bmat.conj().T)
        return float(np.linalg.eigvalsh(sym)[-1])
    if norm.p == 1:
        diag = np.real(np.diag(bmat))
        off = np.sum(np.abs(bmat), axis=0) - np.abs(np.diag(bmat))
        return float(np.max(diag + off))
    if math.isinf(norm.p):
        diag = np.real(np.diag(bmat))
        off = np.sum(np.abs(bmat), axis=1) - np.abs(np.diag(bmat))
        return float(np.max(diag + off))
    raise NotImplementedError("log norm implemented for p in {1, 2, inf}")


def hypodissipativity_rate(op, norm: NormSpec, verify: bool = True,
                           sample_times=(0.1, 1.0, 10.0)) -> float:
    """Growth-bound certificate a = lognorm(op) with the semigroup bound
    ||exp(t op)||_norm <= e^{a t} spot-checked at the sample times."""
    m = _mat(op)
    a = lognorm(m, norm)
    if verify:
        for t in sample_times:
            if t * max(a, spectral_bound(m)) > 700.0:
                continue  # would overflow; the bound is vacuous there anyway
            lhs = norm.op_norm(expm(t * m))
            if lhs > math.exp(a * t) * (1.0 + 1e-7) + 1e-12:
                raise AssertionError(
                    f"log-norm certificate violated at t={t}: {lhs:.3e} > e^({a:.3e} t)"
                )
    return a


# ---------------------------------------------------------------------------
# composition bound across intermediate spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvelopeBound:
    """||T(t)|| <= C e^{K t} / t^alpha with alpha in [0, 1)."""

    C: float
    K: float
    alpha: float = 0.0

    def __post_init__(self):
        if not (0 <= self.alpha < 1):
            raise ValueError("alpha must lie in [0, 1)")
        if self.C <= 0:
            raise ValueError("C must be positive")


def _convolve_envelopes(f, alpha_f, g, alpha_g, t_grid):
    """Pointwise quadrature of (f * g)(t) with endpoint algebraic singularities.

    f(s) ~ s^{-alpha_f} near 0 and g(t-s) ~ (t-s)^{-alpha_g} near s = t; the
    singular factors are pulled into a Gauss-Jacobi rule per half panel.
    """
    from scipy.special import roots_jacobi

    def half(c0, alpha_lo, reg, n=24):
        # int_0^c0 s^{-alpha_lo} reg(s) ds via Jacobi nodes on [0, c0]
        xj, wj = roots_jacobi(n, 0.0, -alpha_lo)  # weight (1+x)^{-alpha} on [-1,1]
        s = 0.5 * c0 * (xj + 1.0)
        w = wj * (0.5 * c0) ** (1.0 - alpha_lo)
        return float(np.sum(w * reg(s)))

    out = np.zeros_like(t_grid)
    for i, t in enumerate(t_grid):
        if t == 0.0:
            out[i] = 0.0
            continue
        c = 0.5 * t
        # s in [0, t/2]: singular factor s^{-alpha_f}
        out[i] = half(c, alpha_f, lambda s: np.where(s > 0, f(np.maximum(s, 1e-300)) *
                                                     np.maximum(s, 1e-300) ** alpha_f, 0.0) * g(t - s))
        # s in [t/2, t]: substitute u = t - s, singular factor u^{-alpha_g}
        out[i] += half(c, alpha_g, lambda u: np.where(u > 0, g(np.maximum(u, 1e-300)) *
                                                      np.maximum(u, 1e-300) ** alpha_g, 0.0) * f(t - u))
    return out


def composed_bound_check(edges, within: EnvelopeBound, ell0: int, n: int,
                         a_prime: float, t_max: float = 20.0, n_t: int = 64):
    """Check that the n-fold composition T_n of an ell0-step family, given
    measured per-edge bounds ||T_ell0||_{E_j -> E_{j+1}} <= C e^{Kt}/t^alpha
    across J spaces and the within-space bound `within`, satisfies
    ||T_n(t)|| <= C_{a'} e^{a' t}; returns (ok, smallest feasible C_{a'}).

    Raises InsufficientOrder when n cannot supply one factor per edge
    (n/ell0 < J, the composition cannot even cross the chain).
    """
    from scipy.interpolate import PchipInterpolator

    edges = list(edges)
    J = len(edges) + 1
    if n % ell0 != 0:
        raise ValueError("n must be a multiple of ell0")
    p = n // ell0
    if J >= 2 and p < J:
        raise InsufficientOrder(
            f"n={n} gives only {p} factors of T_{ell0} for J={J} spaces; "
            f"need at least one factor per edge plus one (pigeonhole)"
        )

    t_grid = np.linspace(0.0, t_max, n_t)
    factors = [(lambda t, e=e: e.C * np.exp(e.K * t) / np.maximum(t, 1e-300) ** e.alpha, e.alpha)
               for e in edges]
    factors += [(lambda t, w=within: w.C * np.exp(w.K * t), 0.0)] * (p - len(edges))

    env, alpha_acc = factors[0]
    vals = env(np.maximum(t_grid, 1e-300))
    for f, alpha_f in factors[1:]:
        # regularize the accumulated envelope before the next convolution
        reg_pts = np.maximum(t_grid, 1e-300) ** alpha_acc * vals
        reg_pts[0] = reg_pts[1]
        reg = PchipInterpolator(t_grid, reg_pts, extrapolate=True)
        cur = (lambda s, reg=reg, aa=alpha_acc: reg(s) / np.maximum(s, 1e-300) ** aa)
        vals = _convolve_envelopes(cur, alpha_acc, f, alpha_f, t_grid)
        alpha_acc = max(0.0, alpha_acc + alpha_f - 1.0)

    with np.errstate(over="ignore"):
        damped = vals * np.exp(-a_prime * t_grid)
    finite = np.isfinite(damped)
    if not np.all(finite):
        return False, math.inf
    c_ap = float(np.max(damped))
    # feasible only if the damped envelope has turned over inside the window
    ok = bool(damped[-1] <= 0.999 * c_ap or damped[-1] <= 1e-12 * c_ap) and np.isfinite(c_ap)
    return ok, c_ap


# ---------------------------------------------------------------------------
# Laplace-transform consistency helper
# ---------------------------------------------------------------------------

def laplace_of_semigroup(op, z: complex, t_max: float = None,
                         n_panels: int = 40, n_quad: int = 12) -> np.ndarray:
    """int_0^inf e^{-z t} exp(t op) dt by truncated Gauss-Legendre panels.

    Converges to -resolvent(op, z) for Re z above the growth bound; the
    truncation horizon is chosen from the decay margin.
    """
    m = _mat(op)
    margin = z.real - lognorm(m, NormSpec.euclidean(m.shape[0]))
    if margin <= 0:
        raise ValueError("Re z must exceed the growth bound")
    if t_max is None:
        t_max = 40.0 / margin
    nodes, weights = _gauss_panels(t_max, n_panels, n_quad)
    acc = np.zeros_like(m)
    for s, w in zip(nodes, weights):
        acc += w * np.exp(-z * s) * expm(s * m)
    return acc
