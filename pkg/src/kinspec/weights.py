"""Weight functions, defect weights, asymptotic defect constants, and the
predicted decay-rate table for Fokker-Planck flows in weighted L^p spaces.

Everything here is a pure evaluable function of the confinement potential
phi (power-law |v|^gamma with a C^2 core blend) and a weight specification
m(v).  The defect weight

    psi_{m,p} = (p-1) |grad m|^2/m^2 + (Delta m)/m
                + (1 - 1/p) div F - F . (grad m)/m,      F = grad phi + U,

controls dissipativity of the shifted operator in L^p(m); its large-velocity
limsup a_{m,p} feeds the rate table.  At p = inf the (p-1) term is replaced
by the max-principle form 2|grad m|^2/m^2 - (Delta m)/m + div F - F.grad m/m
(the two agree in their large-velocity limits for all weights used here; for
m = mu^{-1/2} it reduces to the classical well W = Delta phi/2 - |grad
phi|^2/4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import NotDecaying

NEG_INF_SENTINEL = -1e18


def _is_neg_inf(a: float) -> bool:
    return a <= 0.5 * NEG_INF_SENTINEL


# ---------------------------------------------------------------------------
# confinement potential
# ---------------------------------------------------------------------------

@dataclass
class Potential:
    """phi(v) = alpha |v|^gamma for |v| >= 1, with a C^2 polynomial blend
    alpha (a + b r^2 + c r^4) inside the unit core so that closed-form
    asymptotics apply verbatim outside.

    Blend coefficients (matching value and two derivatives at r = 1):
        a = 1 - gamma(6 - gamma)/8,  b = gamma(4 - gamma)/4,  c = gamma(gamma - 2)/8.
    For gamma = 2 the blend collapses to alpha r^2 exactly.
    """

    gamma: float
    d: int = 1
    alpha: float = 1.0
    U: Optional[Callable] = None          # non-gradient field v -> R^d
    divU: Optional[Callable] = None
    _z: Optional[float] = field(default=None, repr=False)

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.d not in (1, 2, 3):
            raise ValueError("d must be 1, 2 or 3")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        g = self.gamma
        self._a = 1 - g * (6 - g) / 8
        self._b = g * (4 - g) / 4
        self._c = g * (g - 2) / 8

    # radial callables ------------------------------------------------------
    def phi_r(self, r):
        r = np.asarray(r, dtype=float)
        inner = self._a + self._b * r ** 2 + self._c * r ** 4
        outer = np.power(np.maximum(r, 1e-300), self.gamma)
        return self.alpha * np.where(r < 1.0, inner, outer)

    def dphi_r(self, r):
        """phi'(r)."""
        r = np.asarray(r, dtype=float)
        inner = 2 * self._b * r + 4 * self._c * r ** 3
        outer = self.gamma * np.power(np.maximum(r, 1e-300), self.gamma - 1)
        return self.alpha * np.where(r < 1.0, inner, outer)

    def laplace_phi_r(self, r):
        """d-dimensional radial Laplacian of phi."""
        r = np.asarray(r, dtype=float)
        d, g = self.d, self.gamma
        inner = 2 * self._b * d + 4 * (d + 2) * self._c * r ** 2
        outer = g * (g + d - 2) * np.power(np.maximum(r, 1e-300), g - 2)
        return self.alpha * np.where(r < 1.0, inner, outer)

    # vector wrappers -------------------------------------------------------
    def phi(self, v):
        return self.phi_r(np.linalg.norm(np.atleast_1d(v)))

    def grad_phi(self, v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        r = np.linalg.norm(v)
        if r == 0.0:
            return np.zeros_like(v)
        return self.dphi_r(r) * v / r

    def force(self, v):
        """F = grad phi + U."""
        g = self.grad_phi(v)
        return g if self.U is None else g + np.asarray(self.U(v), dtype=float)

    def div_force_r(self, r, v=None):
        base = self.laplace_phi_r(r)
        if self.divU is None:
            return base
        return base + self.divU(v)

    # equilibrium -----------------------------------------------------------
    @property
    def z_const(self) -> float:
        """Normalization int e^{-phi} dv (d-dimensional)."""
        if self._z is None:
            surf = {1: 2.0, 2: 2 * math.pi, 3: 4 * math.pi}[self.d]
            val, _ = quad(lambda r: surf * r ** (self.d - 1) * math.exp(-self.phi_r(r)),
                          0.0, np.inf, limit=200)
            self._z = val
        return self._z

    def mu_r(self, r):
        return np.exp(-self.phi_r(r)) / self.z_const

    def check_nongradient(self, points, tol=1e-6) -> bool:
        """div(U e^{-phi}) = 0 pointwise (finite differences), when U is set."""
        if self.U is None:
            return True
        h = 1e-5
        for v in points:
            v = np.atleast_1d(np.asarray(v, dtype=float))
            div = 0.0
            for i in range(len(v)):
                e = np.zeros_like(v)
                e[i] = h
                fp = self.U(v + e)[i] * math.exp(-self.phi(v + e))
                fm = self.U(v - e)[i] * math.exp(-self.phi(v - e))
                div += (fp - fm) / (2 * h)
            if abs(div) > tol:
                return False
        return True


# ---------------------------------------------------------------------------
# weight specification
# ---------------------------------------------------------------------------

_KINDS = ("exp_energy", "stretched", "poly", "gaussian_inv")


@dataclass(frozen=True)
class WeightSpec:
    """Weight m(v): exp_energy(kappa) -> e^{kappa phi}; stretched(kappa, beta)
    -> e^{kappa |v|^beta}; poly(k) -> <v>^k; gaussian_inv -> mu^{-1/2}.

    p is the Lebesgue exponent for Fokker-Planck use, q the one for the
    Boltzmann remainder estimates.
    """

    kind: str
    p: float = 2.0
    q: float = 1.0
    kappa: float = 0.0
    beta: float = 0.0
    k: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "exp_energy" and self.kappa <= 0:
            raise ValueError("exp_energy requires kappa > 0")
        if self.kind == "stretched" and not (self.kappa > 0 and 0 < self.beta <= 2):
            raise ValueError("stretched requires kappa > 0 and beta in (0, 2]")
        if self.kind == "poly" and self.k <= 0:
            raise ValueError("poly requires k > 0")
        if not (1 <= self.p) or not (1 <= self.q):
            raise ValueError("exponents must lie in [1, inf]")

    def label(self) -> str:
        if self.kind == "poly":
            return f"poly:k={self.k:g},p={self.p:g}"
        if self.kind == "exp_energy":
            return f"exp_energy:kappa={self.kappa:g},p={self.p:g}"
        if self.kind == "stretched":
            return f"stretched:kappa={self.kappa:g},beta={self.beta:g},p={self.p:g}"
        return f"gaussian_inv:p={self.p:g}"

    # m and its logarithmic derivatives, as radial functions given pot ------
    def m_r(self, pot: Potential, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "poly":
            return (1 + r ** 2) ** (self.k / 2)
        if self.kind == "exp_energy":
            return np.exp(self.kappa * pot.phi_r(r))
        if self.kind == "stretched":
            return np.exp(self.kappa * r ** self.beta)
        return np.exp(0.5 * pot.phi_r(r))  # gaussian_inv, constants drop out

    def grad_m_over_m_r(self, pot: Potential, r):
        """(m'/m)(r); the vector gradient is this times v/r."""
        r = np.asarray(r, dtype=float)
        if self.kind == "poly":
            return self.k * r / (1 + r ** 2)
        if self.kind == "exp_energy":
            return self.kappa * pot.dphi_r(r)
        if self.kind == "stretched":
            return self.kappa * self.beta * r ** (self.beta - 1)
        return 0.5 * pot.dphi_r(r)

    def laplace_m_over_m_r(self, pot: Potential, r):
        r = np.asarray(r, dtype=float)
        d = pot.d
        if self.kind == "poly":
            k = self.k
            s = 1 + r ** 2
            return k * (d * s + (k - 2) * r ** 2) / s ** 2
        if self.kind == "exp_energy":
            kap = self.kappa
            return kap * pot.laplace_phi_r(r) + kap ** 2 * pot.dphi_r(r) ** 2
        if self.kind == "stretched":
            kap, b = self.kappa, self.beta
            rr = np.maximum(r, 1e-300)
            return (kap * b * (b + d - 2) * rr ** (b - 2)
                    + kap ** 2 * b ** 2 * rr ** (2 * b - 2))
        return 0.5 * pot.laplace_phi_r(r) + 0.25 * pot.dphi_r(r) ** 2


def parse_weight(text: str) -> WeightSpec:
    """Parse the config grammar, e.g. 'poly:k=4,p=2' or 'stretched:kappa=1,beta=0.5,p=1'."""
    head, _, rest = text.partition(":")
    head = head.strip()
    params = {}
    if rest.strip():
        for item in rest.split(","):
            key, _, val = item.partition("=")
            params[key.strip()] = math.inf if val.strip() == "inf" else float(val)
    return WeightSpec(kind=head, **params)


def parse_potential(text: str) -> Potential:
    """Parse e.g. 'power:gamma=2,alpha=0.5,d=1'."""
    head, _, rest = text.partition(":")
    if head.strip() != "power":
        raise ValueError(f"unknown potential family {head!r}")
    params = {}
    for item in rest.split(","):
        key, _, val = item.partition("=")
        key = key.strip()
        params[key] = int(val) if key == "d" else float(val)
    return Potential(**params)


# ---------------------------------------------------------------------------
# defect weight
# ---------------------------------------------------------------------------

def defect_weight(pot: Potential, w: WeightSpec, v, form: str = "lp") -> float:
    """psi_{m,p}(v); derivatives of m evaluated analytically per kind.

    form="lp" (default) is the L^p energy-estimate defect

        psi = (p-1)|grad m|^2/m^2 + Delta m/m + (1-1/p) div F - F.grad m/m,

    the one whose large-velocity limits give all tabulated constants.  With
    this form the reference pair (m = mu^{-1/2}, p = 2) evaluates to
    Delta phi, not zero: the vanishing statement belongs to the defect of the
    mu-adapted Dirichlet form

        <Lf, f>_{L^2(m)} = -int mu m^2 |grad(f/mu)|^2 + int f^2 m^2 psi_ad,
        psi_ad = Delta m/m + |grad m|^2/m^2 - Delta phi/2 + |grad phi|^2
                 - 3 grad phi . grad m / m,

    available as form="adapted_p2" (p = 2, U = 0 only); psi_ad vanishes
    identically iff mu m^2 is constant, i.e. m = c mu^{-1/2}.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    r = float(np.linalg.norm(v))
    gm = float(w.grad_m_over_m_r(pot, r))          # |grad m|/m (radial)
    lm = float(w.laplace_m_over_m_r(pot, r))
    dphi = float(pot.dphi_r(r))

    if form == "adapted_p2":
        if w.p != 2:
            raise ValueError("adapted_p2 form is defined for p = 2")
        if pot.U is not None:
            raise ValueError("adapted_p2 form assumes U = 0")
        lphi = float(pot.laplace_phi_r(r))
        return lm + gm ** 2 - 0.5 * lphi + dphi ** 2 - 3 * dphi * gm
    if form != "lp":
        raise ValueError(f"unknown defect form {form!r}")

    div_f = float(pot.div_force_r(r, v))
    # F . grad m / m: the U part needs the actual direction
    f_dot = dphi * gm
    if pot.U is not None and r > 0:
        f_dot += float(np.dot(pot.U(v), v / r)) * gm
    if math.isinf(w.p):
        return 2 * gm ** 2 - lm + div_f - f_dot
    p = w.p
    return (p - 1) * gm ** 2 + lm + (1 - 1 / p) * div_f - f_dot


# ---------------------------------------------------------------------------
# asymptotic defect constant a_{m,p}
# ---------------------------------------------------------------------------

def closed_form_defect(pot: Potential, w: WeightSpec) -> Optional[float]:
    """Large-velocity limit of psi_{m,p} when a closed form exists.

    Returns None when the combination is outside the tabulated families or
    raises NotDecaying when psi grows without bound.  All constants carry the
    potential amplitude alpha explicitly (the literature forms assume
    alpha = 1).
    """
    g, d, al = pot.gamma, pot.d, pot.alpha
    p = w.p
    one_m = 1.0 if math.isinf(p) else 1 - 1 / p

    if w.kind in ("exp_energy", "gaussian_inv"):
        kap = 0.5 if w.kind == "gaussian_inv" else w.kappa
        if w.kind == "gaussian_inv" and p == 2 and pot.U is None:
            return 0.0  # psi identically zero
        # m = e^{kappa alpha r^gamma}: coefficient kappa gamma^2 alpha^2 (p kappa - 1)
        coef = kap * g ** 2 * al ** 2 * ((p if not math.isinf(p) else math.inf) * kap - 1)
        if math.isinf(p):
            # max-principle form: 2 (kap al g)^2 - (kap al g)^2 - kap al^2 g^2 = ...
            coef = kap * g ** 2 * al ** 2 * (kap - 1)
        if coef > 0:
            raise NotDecaying("exp-energy weight grows faster than the drift confines")
        if coef == 0:
            return 0.0
        return NEG_INF_SENTINEL if g > 1 else coef

    if w.kind == "stretched":
        kap, b = w.kappa, w.beta
        if b > g:
            raise NotDecaying("stretched weight needs beta <= gamma")
        if b == g:
            pk = (math.inf if math.isinf(p) else p) * kap
            coef = kap * g ** 2 * (pk - al) if not math.isinf(p) else kap * g ** 2 * (kap - al)
            if coef > 0:
                raise NotDecaying("stretched weight at beta = gamma needs p kappa < alpha")
            if coef == 0:
                return 0.0
            return NEG_INF_SENTINEL if g > 1 else coef
        # beta < gamma: psi ~ -kappa beta gamma alpha r^{beta+gamma-2}
        if b + g > 2:
            return NEG_INF_SENTINEL
        if b + g == 2:
            return -kap * b * g * al
        return 0.0

    if w.kind == "poly":
        k = w.k
        coef = al * g * ((d + g - 2) * one_m - k)
        if g > 2:
            if coef > 0:
                raise NotDecaying("polynomial weight too weak for this potential")
            return NEG_INF_SENTINEL if coef < 0 else 0.0
        if g == 2:
            return al * (2 * d * one_m - 2 * k)
        return 0.0  # gamma in [1, 2): psi -> 0, algebraic regime
    return None


def asymptotic_defect(pot: Potential, w: WeightSpec, r0: float = 10.0,
                      n_sample: int = 400, tol: float = 1e-3,
                      cross_check: bool = False) -> float:
    """Numerical limsup of psi_{m,p}: max over the annulus |v| in [R, 2R] for
    growing R until stagnation, certified -inf (sentinel) once the value
    decreases through -1e6.  Raises NotDecaying when the maximum grows
    positive without saturating."""
    prev = None
    r_lo = r0
    for _ in range(24):
        rs = np.linspace(r_lo, 2 * r_lo, n_sample)
        vals = np.array([defect_weight(pot, w, np.r_[r, np.zeros(pot.d - 1)]) for r in rs])
        cur = float(np.max(vals))
        if cur < -1e6:
            result = NEG_INF_SENTINEL
            break
        if prev is not None:
            if abs(cur - prev) <= tol * max(1.0, abs(prev)):
                result = cur
                break
            if cur > max(prev, 0.0) + 1.0 and cur > 1e3:
                raise NotDecaying(f"defect weight grows without bound ({cur:.3e} at R={r_lo:g})")
        prev = cur
        r_lo *= 2
    else:
        if prev is not None and prev > 0:
            raise NotDecaying("defect weight still positive and not stagnating")
        result = prev if prev is not None else 0.0

    if cross_check:
        cf = closed_form_defect(pot, w)
        if cf is not None and not _is_neg_inf(cf) and not _is_neg_inf(result):
            scale = max(abs(cf), 1e-10)
            if abs(result - cf) > 0.02 * scale + 1e-9:
                raise AssertionError(
                    f"numerical limsup {result:.6g} vs closed form {cf:.6g} disagree > 2%"
                )
    return result


# ---------------------------------------------------------------------------
# predicted decay rate (the summary table)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatePrediction:
    lambda_pred: float
    regime: str                   # supercritical | critical | invalid
    a_mp: float                   # asymptotic defect (sentinel for -inf)

    def __post_init__(self):
        if self.regime not in ("supercritical", "critical", "invalid"):
            raise ValueError(f"bad regime {self.regime!r}")


def _prediction(lambda_star: float, critical_value: Optional[float], a_mp: float) -> RatePrediction:
    """critical_value None means the optimal-rate rows (no finite obstruction)."""
    if critical_value is None or lambda_star < critical_value:
        return RatePrediction(lambda_star, "supercritical", a_mp)
    return RatePrediction(critical_value, "critical", a_mp)


def _invalid() -> RatePrediction:
    return RatePrediction(0.0, "invalid", 0.0)


def predicted_rate(pot: Potential, w: WeightSpec, lambda_star: float) -> RatePrediction:
    """Rate table for the flow in L^p(m), given the reference gap lambda_star
    (the homogeneous Poincare gap or the kinetic hypocoercivity constant).

    Critical rows surface the critical value itself with regime='critical'
    (the attainable rates are everything strictly below it, with constant
    blow-up at the edge)."""
    if lambda_star <= 0:
        raise ValueError("lambda_star must be positive")
    g, d, al = pot.gamma, pot.d, pot.alpha
    p = w.p

    try:
        a_mp = closed_form_defect(pot, w)
    except NotDecaying:
        return _invalid()
    if a_mp is None:
        return _invalid()

    if w.kind == "gaussian_inv":
        if p == 2 and g >= 1:
            return RatePrediction(lambda_star, "supercritical", a_mp)
        return _invalid()

    if w.kind == "exp_energy":
        kap = w.kappa
        if p == 2 and 0 < kap <= 0.5 and g >= 1:
            return RatePrediction(lambda_star, "supercritical", a_mp)
        if p < 2 and 0 < kap < 0.5:
            if g > 1:
                return RatePrediction(lambda_star, "supercritical", a_mp)
            return _prediction(lambda_star, al ** 2 * kap * (1 - p * kap), a_mp)
        return _invalid()

    if w.kind == "stretched":
        kap, b = w.kappa, w.beta
        if not (2 - g <= b < g):
            return _invalid()
        if b + g > 2:
            return RatePrediction(lambda_star, "supercritical", a_mp)
        return _prediction(lambda_star, al * kap * b * g, a_mp)  # beta + gamma = 2

    # poly
    k = w.k
    one_m = 1.0 if math.isinf(p) else 1 - 1 / p
    if g > 2:
        if k > d * one_m:
            return RatePrediction(lambda_star, "supercritical", a_mp)
        return _invalid()
    if g == 2:
        if k > (g - 2 + d) * one_m:
            return _prediction(lambda_star, al * (2 * k - 2 * d * one_m), a_mp)
        return _invalid()
    return _invalid()  # gamma < 2 with polynomial weight: algebraic decay only


# ---------------------------------------------------------------------------
# Boltzmann threshold functions
# ---------------------------------------------------------------------------

def phi_q(k: float, q: float) -> float:
    """phi_q(k) = (4/(k+2))^{1/q} (4/(k-1))^{1-1/q}, k > 1, q in [1, inf]."""
    if k <= 1:
        raise ValueError("k must exceed 1")
    inv_q = 0.0 if math.isinf(q) else 1.0 / q
    return (4.0 / (k + 2)) ** inv_q * (4.0 / (k - 1)) ** (1 - inv_q)


def k_star(q: float) -> float:
    """k_q^* = (3 + sqrt(49 - 48/q)) / 2."""
    inv_q = 0.0 if math.isinf(q) else 1.0 / q
    return 0.5 * (3.0 + math.sqrt(49.0 - 48.0 * inv_q))


def k_doublestar(q: float) -> float:
    """Unique root of phi_q(k) = 1 on (1, 20]; satisfies k** <= k*."""
    root = brentq(lambda k: phi_q(k, q) - 1.0, 1.0 + 1e-12, 20.0, xtol=1e-10)
    if root > k_star(q) + 1e-8:
        raise AssertionError("k** exceeded k*, contradicting the AG inequality")
    return float(root)
