"""LTI closed-loop assembly for a two-time-scale networked control system.

Signal ordering used throughout:
    x   = (x_p, x_c)        slow plant and controller states
    z   = (z_p, z_c)        fast plant and controller states
    e_s = (e_ys, e_us)      network errors on slow outputs / slow inputs
    e_f = (e_yf, e_uf)      network errors on fast outputs / fast inputs

Absent signals are zero-dimensional, so the same code covers every layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import numerics as nm
from .errors import DimensionError, SingularMatrixError


def _shape_or_zero(value, rows: int, cols: int, name: str) -> np.ndarray:
    if value is None:
        return np.zeros((rows, cols))
    m = np.array(value, dtype=float)
    if m.size == 0:
        m = m.reshape(rows, cols) if rows * cols == 0 else m
    elif m.ndim < 2:
        m = m.reshape(rows, cols) if m.size == rows * cols else m
    if m.shape != (rows, cols):
        raise DimensionError(f"{name} has shape {m.shape}, expected {(rows, cols)}")
    nm.check_finite(m, name)
    return m


@dataclass(frozen=True)
class PlantMatrices:
    """Plant  [x_p'; eps z_p'] = [A11p A12p; A21p A22p][x_p; z_p] + [A13p A14p; A23p A24p][u_s^; u_f^],
    outputs y_s = Ax_ps x_p and y_f = Ax_pf x_p + Az_pf z_p. Missing blocks default to zeros."""

    n_xp: int
    n_zp: int
    n_ys: int = 0
    n_yf: int = 0
    n_us: int = 0
    n_uf: int = 0
    A11p: np.ndarray | None = None
    A12p: np.ndarray | None = None
    A21p: np.ndarray | None = None
    A22p: np.ndarray | None = None
    A13p: np.ndarray | None = None
    A14p: np.ndarray | None = None
    A23p: np.ndarray | None = None
    A24p: np.ndarray | None = None
    Ax_ps: np.ndarray | None = None
    Ax_pf: np.ndarray | None = None
    Az_pf: np.ndarray | None = None

    def __post_init__(self):
        xp, zp, ys, yf, us, uf = self.n_xp, self.n_zp, self.n_ys, self.n_yf, self.n_us, self.n_uf
        if min(xp, zp, ys, yf, us, uf) < 0:
            raise DimensionError("dimensions must be nonnegative")
        shapes = {
            "A11p": (xp, xp), "A12p": (xp, zp), "A21p": (zp, xp), "A22p": (zp, zp),
            "A13p": (xp, us), "A14p": (xp, uf), "A23p": (zp, us), "A24p": (zp, uf),
            "Ax_ps": (ys, xp), "Ax_pf": (yf, xp), "Az_pf": (yf, zp),
        }
        for name, (r, c) in shapes.items():
            object.__setattr__(self, name, _shape_or_zero(getattr(self, name), r, c, name))


@dataclass(frozen=True)
class ControllerMatrices:
    """Controller driven by (y_s^, y_f^) with outputs u_s = Ax_cs x_c and
    u_f = Ax_cf x_c + Az_cf z_c; same block naming as the plant."""

    n_xc: int
    n_zc: int
    n_ys: int = 0
    n_yf: int = 0
    n_us: int = 0
    n_uf: int = 0
    A11c: np.ndarray | None = None
    A12c: np.ndarray | None = None
    A21c: np.ndarray | None = None
    A22c: np.ndarray | None = None
    A13c: np.ndarray | None = None
    A14c: np.ndarray | None = None
    A23c: np.ndarray | None = None
    A24c: np.ndarray | None = None
    Ax_cs: np.ndarray | None = None
    Ax_cf: np.ndarray | None = None
    Az_cf: np.ndarray | None = None

    def __post_init__(self):
        xc, zc, ys, yf, us, uf = self.n_xc, self.n_zc, self.n_ys, self.n_yf, self.n_us, self.n_uf
        if min(xc, zc, ys, yf, us, uf) < 0:
            raise DimensionError("dimensions must be nonnegative")
        shapes = {
            "A11c": (xc, xc), "A12c": (xc, zc), "A21c": (zc, xc), "A22c": (zc, zc),
            "A13c": (xc, ys), "A14c": (xc, yf), "A23c": (zc, ys), "A24c": (zc, yf),
            "Ax_cs": (us, xc), "Ax_cf": (uf, xc), "Az_cf": (uf, zc),
        }
        for name, (r, c) in shapes.items():
            object.__setattr__(self, name, _shape_or_zero(getattr(self, name), r, c, name))


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    A11: np.ndarray
    A12: np.ndarray
    A13: np.ndarray
    A14: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    A23: np.ndarray
    A24: np.ndarray
    A31: np.ndarray
    A32: np.ndarray
    A33: np.ndarray
    A34: np.ndarray
    A41: np.ndarray
    A42: np.ndarray
    A43: np.ndarray
    A44: np.ndarray
    A41eps: np.ndarray
    A42eps: np.ndarray
    A43eps: np.ndarray
    A44eps: np.ndarray
    Ax_s: np.ndarray
    Ax_f: np.ndarray
    Az_f: np.ndarray
    A33_inv: np.ndarray = field(init=False)
    Hx: np.ndarray = field(init=False)
    He: np.ndarray = field(init=False)
    A11s: np.ndarray = field(init=False)
    A12s: np.ndarray = field(init=False)
    A21s: np.ndarray = field(init=False)
    A22s: np.ndarray = field(init=False)
    A11f: np.ndarray = field(init=False)
    A12f: np.ndarray = field(init=False)
    A21f: np.ndarray = field(init=False)
    A22f: np.ndarray = field(init=False)

    def __post_init__(self):
        n_x, n_es, n_z, n_ef = self.A11.shape[0], self.A22.shape[0], self.A33.shape[0], self.A44.shape[0]
        dims = (n_x, n_es, n_z, n_ef)
        rows = [("A11", "A12", "A13", "A14"), ("A21", "A22", "A23", "A24"),
                ("A31", "A32", "A33", "A34"), ("A41", "A42", "A43", "A44"),
                ("A41eps", "A42eps", "A43eps", "A44eps")]
        for i, row in enumerate(rows):
            for j, name in enumerate(row):
                want = (dims[min(i, 3)], dims[j])
                if getattr(self, name).shape != want:
                    raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {want}")
        if n_z == 0:
            raise DimensionError("the closed loop needs at least one fast state")
        try:
            inv = nm.mat_inv(self.A33)
        except SingularMatrixError as exc:
            raise SingularMatrixError(
                exc.pivot, f"A33 is singular at pivot {exc.pivot}: the fast subsystem has no isolated quasi-steady state"
            ) from exc
        put = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        put("A33_inv", inv)
        put("Hx", -inv @ self.A31)
        put("He", -inv @ self.A32)
        put("A11s", self.A11 - self.A13 @ inv @ self.A31)
        put("A12s", self.A12 - self.A13 @ inv @ self.A32)
        put("A21s", self.A21 - self.A23 @ inv @ self.A31)
        put("A22s", self.A22 - self.A23 @ inv @ self.A32)
        put("A11f", self.A33.copy())
        put("A12f", self.A34.copy())
        put("A21f", self.Az_f @ self.A33)
        put("A22f", self.Az_f @ self.A34)
        for f in fields(self):
            getattr(self, f.name).setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(n_x, n_es, n_z, n_ef)."""
        return self.A11.shape[0], self.A22.shape[0], self.A33.shape[0], self.A44.shape[0]

    @property
    def fast_output_gain(self) -> np.ndarray:
        """Jacobian of the fast network signals (y_f, u_f) with respect to x."""
        return -self.Ax_f

    def flow_matrix(self, epsilon: float) -> np.ndarray:
        """Matrix M with (x, e_s, z, e_f)' = M (x, e_s, z, e_f)."""
        top = np.hstack([self.A11, self.A12, self.A13, self.A14])
        mid = np.hstack([self.A21, self.A22, self.A23, self.A24])
        fz = np.hstack([self.A31, self.A32, self.A33, self.A34]) / epsilon
        fe = (epsilon * np.hstack([self.A41eps, self.A42eps, self.A43eps, self.A44eps])
              + np.hstack([self.A41, self.A42, self.A43, self.A44])) / epsilon
        return np.vstack([top, mid, fz, fe])


def _diag(*blocks: np.ndarray) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def _grid(blocks: list[list[np.ndarray]]) -> np.ndarray:
    """np.block that tolerates zero-sized rows and columns."""
    heights = [max(b.shape[0] for b in row) for row in blocks]
    widths = [max(blocks[i][j].shape[1] for i in range(len(blocks))) for j in range(len(blocks[0]))]
    out = np.zeros((sum(heights), sum(widths)))
    r = 0
    for i, row in enumerate(blocks):
        c = 0
        for j, b in enumerate(row):
            if b.shape != (heights[i], widths[j]):
                raise DimensionError(f"block ({i},{j}) has shape {b.shape}, expected {(heights[i], widths[j])}")
            out[r:r + heights[i], c:c + widths[j]] = b
            c += widths[j]
        r += heights[i]
    return out


def assemble_closed_loop(p: PlantMatrices, c: ControllerMatrices) -> ClosedLoop:
    for name in ("n_ys", "n_yf", "n_us", "n_uf"):
        if getattr(p, name) != getattr(c, name):
            raise DimensionError(f"plant and controller disagree on {name}: {getattr(p, name)} vs {getattr(c, name)}")
    z = np.zeros
    ys, yf, us, uf = p.n_ys, p.n_yf, p.n_us, p.n_uf
    xp, xc, zp, zc = p.n_xp, c.n_xc, p.n_zp, c.n_zc

    A11 = _grid([[p.A11p, p.A13p @ c.Ax_cs + p.A14p @ c.Ax_cf],
                 [c.A13c @ p.Ax_ps + c.A14c @ p.Ax_pf, c.A11c]])
    A12 = _grid([[z((xp, ys)), p.A13p], [c.A13c, z((xc, us))]])
    A13 = _grid([[p.A12p, p.A14p @ c.Az_cf], [c.A14c @ p.Az_pf, c.A12c]])
    A14 = _grid([[z((xp, yf)), p.A14p], [c.A14c, z((xc, uf))]])
    A31 = _grid([[p.A21p, p.A23p @ c.Ax_cs + p.A24p @ c.Ax_cf],
                 [c.A23c @ p.Ax_ps + c.A24c @ p.Ax_pf, c.A21c]])
    A32 = _grid([[z((zp, ys)), p.A23p], [c.A23c, z((zc, us))]])
    A33 = _grid([[p.A22p, p.A24p @ c.Az_cf], [c.A24c @ p.Az_pf, c.A22c]])
    A34 = _grid([[z((zp, yf)), p.A24p], [c.A24c, z((zc, uf))]])
    Ax_s = _diag(-p.Ax_ps, -c.Ax_cs)
    Ax_f = _diag(-p.Ax_pf, -c.Ax_cf)
    Az_f = _diag(-p.Az_pf, -c.Az_cf)
    return ClosedLoop(
        A11=A11, A12=A12, A13=A13, A14=A14,
        A21=Ax_s @ A11, A22=Ax_s @ A12, A23=Ax_s @ A13, A24=Ax_s @ A14,
        A31=A31, A32=A32, A33=A33, A34=A34,
        A41=Az_f @ A31, A42=Az_f @ A32, A43=Az_f @ A33, A44=Az_f @ A34,
        A41eps=Ax_f @ A11, A42eps=Ax_f @ A12, A43eps=Ax_f @ A13, A44eps=Ax_f @ A14,
        Ax_s=Ax_s, Ax_f=Ax_f, Az_f=Az_f,
    )


def quasi_steady_state(cl: ClosedLoop, x, e_s) -> np.ndarray:
    """Root z of the fast vector field with epsilon frozen at zero."""
    x = np.asarray(x, dtype=float)
    e_s = np.asarray(e_s, dtype=float)
    n_x, n_es, _, _ = cl.dims
    if x.shape[-1] != n_x or e_s.shape[-1] != n_es:
        raise DimensionError(f"expected x of size {n_x} and e_s of size {n_es}")
    return x @ cl.Hx.T + e_s @ cl.He.T


@dataclass(frozen=True)
class ExampleParams:
    a1: float = 1e-4
    a2: float = 0.2
    a3: float = 0.6
    a4: float = 0.73
    a5: float = 1.11
    a6: float = 0.37
    k: float = 1.5
    n1: float = 0.02
    n2: float = 0.0018

    @property
    def n_bar(self) -> float:
        return self.n1 - self.n2


def example_matrices(q: ExampleParams = ExampleParams()) -> tuple[PlantMatrices, ControllerMatrices]:
    """Scalar slow input u_s, scalar fast output y_f; y_s, u_f and z_c absent."""
    dims = dict(n_ys=0, n_yf=1, n_us=1, n_uf=0)
    plant = PlantMatrices(
        n_xp=1, n_zp=2, **dims,
        A11p=[[q.a1]], A12p=[[q.a2, 0.0]], A21p=[[0.0], [q.a3]],
        A22p=[[-q.a2, 0.0], [-q.a2, -q.a4]],
        A13p=[[q.n1]], A23p=[[-q.n2], [-q.n2]],
        Ax_pf=[[1.0]], Az_pf=[[0.0, 1.0]],
    )
    ctrl = ControllerMatrices(n_xc=1, n_zc=0, **dims, A11c=[[-q.a5]], A14c=[[q.a6]], Ax_cs=[[-q.k]])
    return plant, ctrl


def example_fixture():
    """(PlantMatrices, ControllerMatrices, DesignConstants) of the worked example."""
    from .certify import DesignConstants
    from .protocols import NodePartition, ProtocolKind, ProtocolSpec

    plant, ctrl = example_matrices()
    reset = ProtocolSpec(ProtocolKind.RESET_ALL, NodePartition.single(1))
    dc = DesignConstants(
        P_s=np.array([[54.91, -1.76], [-1.76, 1.81]]),
        P_f=np.array([[1.12, 0.018], [0.018, 0.65]]),
        gamma_s=2.58, gamma_f=0.64,
        lambda_star_s=0.33, lambda_star_f=0.46,
        a_rho_s=1.16, a_rho_f=0.41,
        L_s=0.0, L_f=0.0,
        protocol_s=reset, protocol_f=reset,
    )
    return plant, ctrl, dc
