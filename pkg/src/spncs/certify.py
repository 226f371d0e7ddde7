"""Stability certificate for the LTI case and trajectory-level monitoring.

Pipeline: exponential gains -> interconnection bounds b1..b3 -> slow-jump
inflation lambda1, lambda2 -> composite weight d -> a_d -> epsilon* -> decay
constants c1, c2, with the LMI eigenvalues recorded alongside. Every intermediate value is kept on the
Certificate so that a report can show where a number comes from.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import numerics as nm
from .errors import ConstraintError, DimensionError, SchemaError
from .mati import MatiParams, PhiClock, mati_bound, phi_eval
from .protocols import ProtocolConstants, ProtocolSpec, protocol_constants, protocol_lyapunov_batch

if TYPE_CHECKING:
    from .hybridsim import HybridTrajectory
    from .ltimodel import ClosedLoop, ExampleParams

JUMP_ATOL = 1e-9
JUMP_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class DesignConstants:
    P_s: np.ndarray
    P_f: np.ndarray
    gamma_s: float
    gamma_f: float
    lambda_star_s: float
    lambda_star_f: float
    a_rho_s: float
    a_rho_f: float
    protocol_s: ProtocolSpec
    protocol_f: ProtocolSpec
    L_s: float = 0.0
    L_f: float = 0.0
    L1: float | None = None  # bound on |dW_s/de_s|; protocol default when None
    L1_f: float | None = None

    def __post_init__(self):
        for name in ("P_s", "P_f"):
            p = nm.check_symmetric(getattr(self, name))
            if nm.sym_eig_extremes(p)[0] <= 0:
                raise ConstraintError(f"{name} must be positive definite")
            object.__setattr__(self, name, p)
        for name in ("gamma_s", "gamma_f", "a_rho_s", "a_rho_f"):
            if not getattr(self, name) > 0:
                raise ConstraintError(f"{name} must be positive")
        for side, proto in (("s", self.protocol_s), ("f", self.protocol_f)):
            lam = protocol_constants(proto).lam
            star = getattr(self, f"lambda_star_{side}")
            if not lam < star < 1:
                raise ConstraintError(f"lambda_star_{side} = {star} must lie in ({lam}, 1)")
        if self.L_s < 0 or self.L_f < 0:
            raise ConstraintError("L_s and L_f must be nonnegative")

    @property
    def consts_s(self) -> ProtocolConstants:
        return protocol_constants(self.protocol_s)

    @property
    def consts_f(self) -> ProtocolConstants:
        return protocol_constants(self.protocol_f)

    @property
    def grad_s(self) -> float:
        return self.consts_s.gradient_bound if self.L1 is None else self.L1

    @property
    def grad_f(self) -> float:
        return self.consts_f.gradient_bound if self.L1_f is None else self.L1_f

    def mati_params(self, side: str) -> MatiParams:
        if side == "s":
            return MatiParams(self.L_s, self.gamma_s, self.lambda_star_s)
        return MatiParams(self.L_f, self.gamma_f, self.lambda_star_f)


# ---------------------------------------------------------------- LMI

def lmi_block(A, B, A_H, P, a_rho, gamma, a_W_lower, layout: str = "lyapunov") -> np.ndarray:
    """Symmetric block matrix whose negative semidefiniteness is the LMI.

    ``layout="lyapunov"`` uses P A + A^T P, the form produced by differentiating
    x^T P x along x' = A x; ``layout="transposed"`` uses A P + P A^T.
    """
    A, B, A_H, P = (nm.as_matrix(m) for m in (A, B, A_H, P))
    n, m = A.shape[0], B.shape[1]
    if layout == "lyapunov":
        tl = P @ A + A.T @ P
    elif layout == "transposed":
        tl = A @ P + P @ A.T
    else:
        raise SchemaError(f"unknown LMI layout {layout!r}")
    tl = tl + a_rho * np.eye(n) + A_H.T @ A_H
    bl = B.T @ P
    br = (a_rho - gamma ** 2 * a_W_lower ** 2) * np.eye(m)
    out = np.block([[tl, bl.T], [bl, br]])
    return 0.5 * (out + out.T)


def lmi_matrix(cl: ClosedLoop, dc: DesignConstants, side: str, layout: str = "lyapunov") -> np.ndarray:
    if side == "slow":
        return lmi_block(cl.A11s, cl.A12s, cl.A21s, dc.P_s, dc.a_rho_s, dc.gamma_s, dc.consts_s.a_W_lower, layout)
    if side == "fast":
        return lmi_block(cl.A11f, cl.A12f, cl.A21f, dc.P_f, dc.a_rho_f, dc.gamma_f, dc.consts_f.a_W_lower, layout)
    raise SchemaError(f"side must be 'slow' or 'fast', got {side!r}")


def lmi_max_eig(cl, dc, side, layout="lyapunov") -> float:
    return nm.sym_eig_extremes(lmi_matrix(cl, dc, side, layout))[1]


def lmi_feasible(cl, dc, tol: float = 0.0, layout: str = "lyapunov") -> dict[str, bool]:
    return {side: nm.is_neg_semidefinite(lmi_matrix(cl, dc, side, layout), tol) for side in ("slow", "fast")}


@dataclass(frozen=True)
class PerturbationResult:
    found: bool
    max_eig: float
    P: np.ndarray
    gamma: float
    a_rho: float
    evaluations: int


def perturbation_search(
    cl: ClosedLoop,
    dc: DesignConstants,
    side: str = "fast",
    rel: float = 0.02,
    samples: int = 4000,
    seed: int = 0,
    tol: float = 0.0,
) -> PerturbationResult:
    """Look for LMI feasibility within +-rel of (P entries, gamma, a_rho).

    Corners of the box are tried first, then seeded uniform samples. The first
    point with largest eigenvalue <= tol is returned, otherwise the best seen.
    """
    s = side == "slow"
    P0 = dc.P_s if s else dc.P_f
    g0 = dc.gamma_s if s else dc.gamma_f
    r0 = dc.a_rho_s if s else dc.a_rho_f
    A, B, AH = (cl.A11s, cl.A12s, cl.A21s) if s else (cl.A11f, cl.A12f, cl.A21f)
    aw = (dc.consts_s if s else dc.consts_f).a_W_lower
    iu = np.triu_indices(P0.shape[0])
    base = np.concatenate([P0[iu], [g0, r0]])

    def unpack(v):
        P = np.zeros_like(P0)
        P[iu] = v[:-2]
        P = P + P.T - np.diag(np.diag(P))
        return P, v[-2], v[-1]

    def score(v):
        P, g, r = unpack(v)
        if nm.sym_eig_extremes(P)[0] <= 0:
            return math.inf
        return nm.sym_eig_extremes(lmi_block(A, B, AH, P, r, g, aw))[1]

    rng = np.random.default_rng(seed)
    candidates = [base]
    k = base.size
    for sign_g in (1, -1):
        for sign_r in (-1, 1):
            v = base.copy()
            v[-2] *= 1 + sign_g * rel
            v[-1] *= 1 + sign_r * rel
            candidates.append(v)
    best_v, best = base, score(base)
    n = 0
    for v in candidates + [base * (1 + rel * rng.uniform(-1, 1, k)) for _ in range(samples)]:
        n += 1
        val = score(v)
        if val < best:
            best_v, best = v, val
        if val <= tol:
            P, g, r = unpack(v)
            return PerturbationResult(True, val, P, g, r, n)
    P, g, r = unpack(best_v)
    return PerturbationResult(False, best, P, g, r, n)


# ---------------------------------------------------------------- gains

@dataclass(frozen=True)
class ExponentialGains:
    a_s: float
    a_f: float
    a_Vs_lower: float
    a_Vs_upper: float
    a_Vf_lower: float
    a_Vf_upper: float
    a_Us_lower: float
    a_Us_upper: float
    a_Uf_lower: float
    a_Uf_upper: float
    a_psi_s: float
    a_psi_f: float


def exponential_gains(dc: DesignConstants) -> ExponentialGains:
    out = {}
    for side, P, g, star, rho, c in (
        ("s", dc.P_s, dc.gamma_s, dc.lambda_star_s, dc.a_rho_s, dc.consts_s),
        ("f", dc.P_f, dc.gamma_f, dc.lambda_star_f, dc.a_rho_f, dc.consts_f),
    ):
        lo, hi = nm.sym_eig_extremes(P)
        u_lo = min(lo, g * star * c.a_W_lower ** 2)
        u_hi = max(hi, g / star * c.a_W_upper ** 2)
        out[f"a_{side}"] = rho * min(1.0, c.a_W_lower ** 2)
        out[f"a_V{side}_lower"], out[f"a_V{side}_upper"] = lo, hi
        out[f"a_U{side}_lower"], out[f"a_U{side}_upper"] = u_lo, u_hi
        out[f"a_psi_{side}"] = u_lo ** -0.5
    return ExponentialGains(**out)


# ---------------------------------------------------------------- coupling bounds

NORM_MODES = ("block", "block_doubled", "entrywise")


@dataclass(frozen=True, eq=False)
class InterconnectionBounds:
    b1: float
    b2: float
    b3: float
    Lambda_b1: np.ndarray
    Lambda_b2: np.ndarray
    Lambda_b3: np.ndarray
    mode: str


def _weight(dc: DesignConstants, side: str) -> float:
    if side == "s":
        return dc.gamma_s / dc.lambda_star_s * dc.consts_s.a_W_upper * dc.grad_s
    return dc.gamma_f / dc.lambda_star_f * dc.consts_f.a_W_upper * dc.grad_f


def interconnection_constants(cl: ClosedLoop, dc: DesignConstants, mode: str = "block") -> InterconnectionBounds:
    """Bounds b1, b2, b3 on the slow/fast cross terms of dU/dt.

    ``block``: 2x2 matrices of block spectral norms.  ``block_doubled``: the
    same with the factor 2 from differentiating the quadratic forms.
    ``entrywise``: entrywise absolute values acting on component magnitudes,
    factor 2 included, with the W rows stacked so the bound holds for any
    number of error channels (this is the layout of the worked example's
    closed-form matrices).
    """
    if mode not in NORM_MODES:
        raise SchemaError(f"unknown norm mode {mode!r}; choose from {NORM_MODES}")
    cs, cf = _weight(dc, "s"), _weight(dc, "f")
    G = cl.A33_inv @ np.hstack([cl.A31, cl.A32])
    S = np.block([[cl.A11s, cl.A12s], [cl.A21s, cl.A22s]])
    C = np.block([[cl.A13, cl.A14], [cl.A23, cl.A24]])
    K = cl.fast_output_gain
    Sx = np.hstack([cl.A11s, cl.A12s])
    Cx = np.hstack([cl.A13, cl.A14])

    # b1: 2 x^T P_s (A13 y + A14 e_f) + 2 gamma_s phi W dW/de (A23 y + A24 e_f)
    top1 = [dc.P_s @ cl.A13, dc.P_s @ cl.A14]
    bot1 = [cs * cl.A23, cs * cl.A24]
    # b2, b3: y-gradient through dH/dxi_s and e_f-gradient through dk/dxi_s
    Q2, R2 = dc.P_f @ G @ S, cf * K @ Sx
    Q3, R3 = dc.P_f @ G @ C, cf * K @ Cx

    if mode == "entrywise":
        L1 = 2 * np.block([[np.abs(top1[0]), np.abs(top1[1])], [np.abs(bot1[0]), np.abs(bot1[1])]])
        L2 = 2 * np.vstack([np.abs(Q2), np.abs(R2)]).T
        N3 = 2 * np.vstack([np.abs(Q3), np.abs(R3)])
        b1 = nm.spectral_norm(L1)
        b2 = nm.spectral_norm(L2)
        L3 = 0.5 * (N3 + N3.T)
        if K.shape[0] <= 1:
            b3 = max(nm.sym_eig_extremes(L3)[1], 0.0) if L3.size else 0.0
        else:
            b3 = nm.spectral_norm(N3)
        return InterconnectionBounds(b1, b2, b3, L1, L2, L3, mode)

    f = 2.0 if mode == "block_doubled" else 1.0
    n = nm.spectral_norm
    n_z = cl.dims[2]
    L1 = f * np.array([[n(top1[0]), n(top1[1])], [n(bot1[0]), n(bot1[1])]])
    nx = cl.dims[0]
    L2 = f * np.array([[n(Q2[:, :nx]), n(R2[:, :nx])], [n(Q2[:, nx:]), n(R2[:, nx:])]])
    off = 0.5 * (n(Q3[:, n_z:]) + n(R3[:, :n_z]))
    L3 = f * np.array([[n(Q3[:, :n_z]), off], [off, n(R3[:, n_z:])]])
    b3 = max(nm.sym_eig_extremes(L3)[1], 0.0)
    return InterconnectionBounds(n(L1), n(L2), b3, L1, L2, L3, mode)


def slow_jump_constants(cl: ClosedLoop, dc: DesignConstants) -> tuple[float, float]:
    """(lambda1, lambda2): growth of V_f when a slow transmission moves y."""
    M = cl.A33_inv @ cl.A32
    aw = dc.consts_s.a_W_lower
    lam1 = nm.spectral_norm(M.T @ dc.P_f @ M) / aw ** 2
    lam2 = 2.0 / (aw * math.sqrt(nm.sym_eig_extremes(dc.P_f)[0])) * nm.spectral_norm(dc.P_f @ M)
    return lam1, lam2


@dataclass(frozen=True, eq=False)
class ClosedFormExampleBounds:
    Lambda_b1: np.ndarray
    Lambda_b2: np.ndarray
    Lambda_b3: np.ndarray
    b1: float
    b2: float
    b3: float
    lambda1: float
    lambda2: float


def closed_form_example_bounds(q: ExampleParams, dc: DesignConstants) -> ClosedFormExampleBounds:
    """Closed-form bound matrices specialised to the worked example."""
    ps, pf = dc.P_s, dc.P_f
    ws = dc.gamma_s / dc.lambda_star_s
    wf = dc.gamma_f / dc.lambda_star_f
    r = q.a3 / q.a4
    nb, k = q.n_bar, q.k
    L1 = 2 * np.array([
        [q.a2 * abs(ps[0, 0]), q.a6 * abs(ps[0, 1]), 0.0],
        [q.a2 * abs(ps[0, 1]), 0.0, q.a6 * abs(ps[1, 1])],
        [0.0, ws * q.a6 * k, ws * q.a6 * k],
    ])
    L2 = 2 * np.array([
        [q.a1 * r * abs(pf[0, 1]), q.a1 * r * abs(pf[1, 1]), q.a1 * wf],
        [r * nb * k * abs(pf[0, 1]), r * nb * k * abs(pf[0, 1]), nb * k * wf],
        [r * nb * abs(pf[0, 1]), r * nb * abs(pf[1, 1]), nb * wf],
    ])
    l21 = q.a2 * r * abs(pf[1, 1])
    l31 = q.a2 * wf
    L3 = np.array([
        [2 * q.a2 * r * abs(pf[0, 1]), l21, l31],
        [l21, 0.0, 0.0],
        [l31, 0.0, 0.0],
    ])
    ratio = q.n2 / q.a2
    lam1 = ratio ** 2 * abs(pf[0, 0])
    lam2 = 2 * ratio * (abs(pf[0, 0]) + abs(pf[0, 1])) / math.sqrt(nm.sym_eig_extremes(pf)[0])
    return ClosedFormExampleBounds(
        L1, L2, L3, nm.spectral_norm(L1), nm.spectral_norm(L2), nm.sym_eig_extremes(L3)[1], lam1, lam2
    )


# ---------------------------------------------------------------- d, a_d, epsilon*

def jump_coefficients(lambda1, lambda2, gamma_s, lambda_star_s) -> tuple[float, float, float]:
    """(a, b, B): a and b of the weight quadratic, B the sqrt(d) coefficient of a_d."""
    g = gamma_s * lambda_star_s
    a = lambda1 / g
    return a, 0.5 * (a + lambda2), 0.5 * (lambda2 / g + lambda2)


D_FORMULAS = ("root", "quadratic")


def composite_weight(
    lambda1: float,
    lambda2: float,
    gamma_s: float,
    lambda_star_s: float,
    lambda_decay: float,
    mu: float,
    miati_s: float,
    mode: str = "uges",
    mu1: float | None = None,
    formula: str = "root",
) -> float:
    """Weight d of the fast Lyapunov function in U = U_s + d U_f.

    With a = lambda1/(gamma_s lambda_s*), c = 1 - lambda exp(rate miati_s),
    rate = mu (UGES) or mu1 in (0, mu) (SPAS):

    ``root``: the d solving a_d(d) exp(-rate miati_s) = lambda, i.e.
    a d + B sqrt(d) + c = 0 with B the sqrt(d) coefficient of a_d.
    ``quadratic``: d = (-b + sqrt(b^2 - 4 a c)) / (2a) with
    b = (a + lambda2) / 2, which only bounds a_d from above.

    Degenerate cases: a = 0 uses the linear root, a = 0 and no linear term
    gives d = 1 (the jump constraint is vacuous).
    """
    if mode == "uges":
        rate = mu
    elif mode == "spas":
        if mu1 is None or not 0 < mu1 < mu:
            raise ConstraintError("SPAS mode needs mu1 in (0, mu)")
        rate = mu1
    else:
        raise SchemaError(f"unknown mode {mode!r}")
    if formula not in D_FORMULAS:
        raise SchemaError(f"unknown formula {formula!r}; choose from {D_FORMULAS}")
    a, b, B = jump_coefficients(lambda1, lambda2, gamma_s, lambda_star_s)
    c = 1.0 - lambda_decay * math.exp(rate * miati_s)
    if c >= 0:
        raise ConstraintError(f"lambda = {lambda_decay} too small: need lambda > exp(-{rate} * {miati_s})")
    lin = B if formula == "root" else b
    if a == 0.0 and lin == 0.0:
        return 1.0
    r = -c / lin if a == 0.0 else (-lin + math.sqrt(lin * lin - 4 * a * c)) / (2 * a)
    return r * r if formula == "root" else r


def a_d(d: float, lambda1: float, lambda2: float, gamma_s: float, lambda_star_s: float) -> float:
    if d <= 0:
        raise ConstraintError("d must be positive")
    a, _, B = jump_coefficients(lambda1, lambda2, gamma_s, lambda_star_s)
    return 1.0 + a * d + B * math.sqrt(d)


def epsilon_star(d, mu, a_s, a_f, a_psi_s, a_psi_f, b1, b2, b3) -> float:
    ceiling = a_s * a_psi_s ** 2
    if mu >= ceiling:
        raise ConstraintError(f"mu = {mu} must be below a_s a_psi_s^2 = {ceiling}")
    if d <= 0:
        raise ConstraintError("d must be positive")
    inner = (b1 + d * b2) ** 2 * a_psi_s ** 2 * a_psi_f ** 2 / (4 * (ceiling - mu)) + mu * d
    return 1.0 / ((a_psi_f / (a_f * d)) * inner + b3 * a_psi_f ** 2 / a_f)


def decay_constants(
    lambda_decay: float,
    a_d_value: float,
    a_U_lower: float,
    a_U_upper: float,
    mati_s: float,
    miati_s: float,
    h1: float,
) -> tuple[float, float]:
    if not 0 < lambda_decay < 1:
        raise ConstraintError("lambda must lie in (0, 1)")
    rate = math.log(1.0 / lambda_decay) / (4 * mati_s)
    c1 = h1 ** 2 * math.sqrt(a_d_value * a_U_upper / (lambda_decay * a_U_lower)) * math.exp(rate * miati_s)
    c2 = rate * min(1.0, miati_s)
    return c1, c2


# ---------------------------------------------------------------- certificate

@dataclass(frozen=True)
class Certificate:
    mati_s_bound: float
    mati_f_bound_fast_time: float
    miati_s: float
    mati_s: float
    a_s: float
    a_f: float
    a_Vs_lower: float
    a_Vs_upper: float
    a_Vf_lower: float
    a_Vf_upper: float
    a_Us_lower: float
    a_Us_upper: float
    a_Uf_lower: float
    a_Uf_upper: float
    a_psi_s: float
    a_psi_f: float
    b1: float
    b2: float
    b3: float
    norm_mode: str
    lambda1: float
    lambda2: float
    mu: float
    mu_ceiling: float
    lambda_decay: float
    lambda_floor: float
    d_formula: str
    d_star: float
    a_d: float
    jump_contraction: float  # a_d exp(-mu miati_s); the proof needs <= lambda_decay
    d_alternative: float  # d from the other formula, for attribution
    a_d_alternative: float
    epsilon_star_alternative: float
    epsilon_star: float
    a_U_lower: float
    a_U_upper: float
    h1: float
    c1: float
    c2: float
    lmi_slow_max_eig: float
    lmi_fast_max_eig: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DesignKnobs:
    """Free choices of the certificate pipeline.

    mu_fraction: mu as a fraction of its ceiling a_s a_psi_s^2.
    lambda_position: lambda = exp(-mu miati_s (1 - lambda_position)); 0.5 is the
    geometric midpoint of (exp(-mu miati_s), 1).
    """

    mu_fraction: float = 0.66
    lambda_position: float = 0.5
    mu: float | None = None
    lambda_decay: float | None = None
    norm_mode: str = "block"
    d_formula: str = "root"


def design_certificate(
    cl: ClosedLoop,
    dc: DesignConstants,
    miati_s: float,
    mati_s: float | None = None,
    knobs: DesignKnobs = DesignKnobs(),
) -> Certificate:
    T_s = mati_bound(dc.mati_params("s"))
    T_f = mati_bound(dc.mati_params("f"))
    mati_s = T_s if mati_s is None else mati_s
    if not 0 < miati_s <= mati_s:
        raise ConstraintError(f"need 0 < miati_s <= mati_s, got {miati_s}, {mati_s}")
    if mati_s > T_s * (1 + 1e-12):
        raise ConstraintError(f"mati_s = {mati_s} exceeds the MATI bound {T_s}")
    g = exponential_gains(dc)
    ib = interconnection_constants(cl, dc, knobs.norm_mode)
    lam1, lam2 = slow_jump_constants(cl, dc)
    ceiling = g.a_s * g.a_psi_s ** 2
    mu = knobs.mu if knobs.mu is not None else knobs.mu_fraction * ceiling
    if not 0 < mu < ceiling:
        raise ConstraintError(f"mu = {mu} must lie in (0, {ceiling})")
    floor = math.exp(-mu * miati_s)
    if knobs.lambda_decay is not None:
        lam = knobs.lambda_decay
    else:
        lam = math.exp(-mu * miati_s * (1.0 - knobs.lambda_position))
    if not floor < lam < 1:
        raise ConstraintError(f"lambda = {lam} must lie in ({floor}, 1)")
    other = "quadratic" if knobs.d_formula == "root" else "root"
    weights = {}
    for formula in (knobs.d_formula, other):
        d = composite_weight(lam1, lam2, dc.gamma_s, dc.lambda_star_s, lam, mu, miati_s, "uges", formula=formula)
        weights[formula] = (
            d,
            a_d(d, lam1, lam2, dc.gamma_s, dc.lambda_star_s),
            epsilon_star(d, mu, g.a_s, g.a_f, g.a_psi_s, g.a_psi_f, ib.b1, ib.b2, ib.b3),
        )
    d, ad, eps = weights[knobs.d_formula]
    d_alt, ad_alt, eps_alt = weights[other]
    aU_lo = min(g.a_Us_lower, d * g.a_Uf_lower)
    aU_hi = max(g.a_Us_upper, d * g.a_Uf_upper)
    h1 = 1.0 + nm.spectral_norm(np.hstack([cl.Hx, cl.He]))
    c1, c2 = decay_constants(lam, ad, aU_lo, aU_hi, mati_s, miati_s, h1)
    return Certificate(
        mati_s_bound=T_s, mati_f_bound_fast_time=T_f, miati_s=miati_s, mati_s=mati_s,
        **{k: v for k, v in asdict(g).items()},
        b1=ib.b1, b2=ib.b2, b3=ib.b3, norm_mode=ib.mode,
        lambda1=lam1, lambda2=lam2, mu=mu, mu_ceiling=ceiling,
        lambda_decay=lam, lambda_floor=floor, d_formula=knobs.d_formula, d_star=d, a_d=ad,
        jump_contraction=ad * floor, d_alternative=d_alt, a_d_alternative=ad_alt, epsilon_star_alternative=eps_alt,
        epsilon_star=eps, a_U_lower=aU_lo, a_U_upper=aU_hi, h1=h1, c1=c1, c2=c2,
        lmi_slow_max_eig=lmi_max_eig(cl, dc, "slow"), lmi_fast_max_eig=lmi_max_eig(cl, dc, "fast"),
    )


# ---------------------------------------------------------------- Lyapunov function

def lyapunov_U(
    cl: ClosedLoop,
    dc: DesignConstants,
    cert: Certificate,
    x, e_s, tau_s, kappa_s, y, e_f, tau_f, kappa_f,
) -> tuple[np.ndarray | float, np.ndarray | float, np.ndarray | float]:
    """(U_s, U_f, U) at one state or at a batch of states (leading axis).

    ``y`` is the fast state in boundary-layer coordinates and ``tau_f`` the
    fast clock in fast time.
    """
    scalar = np.ndim(tau_s) == 0
    tau_s = np.atleast_1d(np.asarray(tau_s, dtype=float))
    tau_f = np.atleast_1d(np.asarray(tau_f, dtype=float))
    n = tau_s.shape[0]
    x = np.asarray(x, dtype=float).reshape(n, -1)
    e_s = np.asarray(e_s, dtype=float).reshape(n, -1)
    y = np.asarray(y, dtype=float).reshape(n, -1)
    e_f = np.asarray(e_f, dtype=float).reshape(n, -1)
    n_x, n_es, n_z, n_ef = cl.dims
    if (x.shape[1], e_s.shape[1], y.shape[1], e_f.shape[1]) != (n_x, n_es, n_z, n_ef):
        raise DimensionError("state dimensions do not match the closed loop")
    slack = 1 + 1e-9
    if np.any(tau_s > cert.mati_s_bound * slack) or np.any(tau_f > cert.mati_f_bound_fast_time * slack):
        raise ConstraintError("clock beyond its MATI bound: the clock function is not certified there")
    ks = np.broadcast_to(np.asarray(kappa_s), (n,))
    kf = np.broadcast_to(np.asarray(kappa_f), (n,))
    phi_s = phi_eval(PhiClock(dc.mati_params("s")), tau_s)
    phi_f = phi_eval(PhiClock(dc.mati_params("f")), tau_f)
    W_s = protocol_lyapunov_batch(dc.protocol_s, ks, e_s)
    W_f = protocol_lyapunov_batch(dc.protocol_f, kf, e_f)
    U_s = np.einsum("ni,ij,nj->n", x, dc.P_s, x) + dc.gamma_s * phi_s * W_s ** 2
    U_f = np.einsum("ni,ij,nj->n", y, dc.P_f, y) + dc.gamma_f * phi_f * W_f ** 2
    U = U_s + cert.d_star * U_f
    if scalar:
        return float(U_s[0]), float(U_f[0]), float(U[0])
    return U_s, U_f, U


# ---------------------------------------------------------------- monitoring

@dataclass(frozen=True)
class JumpCheck:
    index: int
    t: float
    j: int
    kind: str
    U_before: float
    U_after: float
    bound: float
    ok: bool


@dataclass(frozen=True)
class EnvelopeViolation:
    index: int
    t: float
    j: int
    norm: float
    envelope: float


@dataclass
class MonitorReport:
    jump_checks: list[JumpCheck] = field(default_factory=list)
    segment_rates: list[tuple[float, float, float]] = field(default_factory=list)
    envelope_violations: list[EnvelopeViolation] = field(default_factory=list)
    envelope_counter: str = "all"
    samples: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def fast_violations(self) -> list[JumpCheck]:
        return [c for c in self.jump_checks if c.kind == "fast" and not c.ok]

    @property
    def slow_violations(self) -> list[JumpCheck]:
        return [c for c in self.jump_checks if c.kind == "slow" and not c.ok]

    @property
    def passed(self) -> bool:
        return not (self.fast_violations or self.slow_violations or self.envelope_violations)

    def summary(self) -> dict:
        return {
            "samples": self.samples,
            "fast_jumps": sum(c.kind == "fast" for c in self.jump_checks),
            "slow_jumps": sum(c.kind == "slow" for c in self.jump_checks),
            "fast_violations": len(self.fast_violations),
            "slow_violations": len(self.slow_violations),
            "envelope_counter": self.envelope_counter,
            "envelope_violations": len(self.envelope_violations),
            "worst_envelope_ratio": self.diagnostics.get("worst_envelope_ratio"),
            "passed": self.passed,
        }


def trajectory_U(traj: HybridTrajectory, cl: ClosedLoop, dc: DesignConstants, cert: Certificate) -> np.ndarray:
    n_x, n_es, n_z, n_ef = cl.dims
    X = traj.X
    x, e_s = X[:, :n_x], X[:, n_x:n_x + n_es]
    z, e_f = X[:, n_x + n_es:n_x + n_es + n_z], X[:, n_x + n_es + n_z:]
    y = z - x @ cl.Hx.T - e_s @ cl.He.T
    return lyapunov_U(cl, dc, cert, x, e_s, traj.tau_s, traj.kappa_s, y, e_f, traj.tau_f, traj.kappa_f)[2]


def monitor_trajectory(
    traj: HybridTrajectory,
    cl: ClosedLoop,
    dc: DesignConstants,
    cert: Certificate,
    envelope_counter: str = "all",
) -> MonitorReport:
    """Check the certified Lyapunov behaviour along a recorded trajectory.

    ``envelope_counter`` selects the jump count used in exp(-c2 (t + j)):
    ``all`` counts every jump, ``slow`` only slow transmissions, ``none`` drops j.
    """
    from .hybridsim import EVENT_FAST, EVENT_SLOW

    n_x, n_es, n_z, n_ef = cl.dims
    if traj.X.shape[1] != n_x + n_es + n_z + n_ef or tuple(traj.dims) != cl.dims:
        raise SchemaError(f"trajectory dimensions {traj.dims} do not match the closed loop {cl.dims}")
    if envelope_counter not in ("all", "slow", "none"):
        raise SchemaError(f"unknown envelope counter {envelope_counter!r}")
    report = MonitorReport(envelope_counter=envelope_counter, samples=len(traj.t))
    if len(traj.t) == 0:
        return report
    U = trajectory_U(traj, cl, dc, cert)
    ev = traj.event
    for i in np.nonzero((ev == EVENT_FAST) | (ev == EVENT_SLOW))[0]:
        before, after = float(U[i - 1]), float(U[i])
        fast = ev[i] == EVENT_FAST
        factor = 1.0 if fast else cert.a_d
        bound = factor * before + JUMP_ATOL + JUMP_RTOL * abs(before)
        report.jump_checks.append(JumpCheck(
            int(i), float(traj.t[i]), int(traj.j[i]), "fast" if fast else "slow",
            before, after, factor * before, after <= bound,
        ))
    starts = [0] + [int(i) for i in np.nonzero(ev != 0)[0]]
    ends = [int(i) - 1 for i in np.nonzero(ev != 0)[0]] + [len(ev) - 1]
    for a, b in zip(starts, ends):
        dt = traj.t[b] - traj.t[a]
        if dt > 0 and U[a] > 0 and U[b] > 0:
            report.segment_rates.append((float(traj.t[a]), float(traj.t[b]), float(math.log(U[b] / U[a]) / dt)))
    norms = np.linalg.norm(traj.X, axis=1)
    if envelope_counter == "all":
        jc = traj.j
    elif envelope_counter == "slow":
        jc = traj.kappa_s - traj.kappa_s[0]
    else:
        jc = np.zeros_like(traj.j)
    env = cert.c1 * norms[0] * np.exp(-cert.c2 * (traj.t - traj.t[0] + jc))
    slack = JUMP_ATOL + JUMP_RTOL * env
    bad = np.nonzero(norms > env + slack)[0]
    report.envelope_violations = [
        EnvelopeViolation(int(i), float(traj.t[i]), int(traj.j[i]), float(norms[i]), float(env[i])) for i in bad
    ]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(env > 0, norms / env, 0.0)
    report.diagnostics["worst_envelope_ratio"] = float(np.max(ratio))
    report.diagnostics["U_initial"] = float(U[0])
    report.diagnostics["U_final"] = float(U[-1])
    return report
