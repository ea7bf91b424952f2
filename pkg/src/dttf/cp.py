"""CP factors shared across two domains: prediction, tensor loss, gradients.

The tensor loss is the plain sum of squared residuals over observed cells.
Inside the training objective it carries a factor one half, so the row
gradients below are exactly the derivatives of that objective:

    dJ/du_i = -sum_{j,l} (r - <u_i, v_j, c_l>) (v_j * c_l) + rho (u_i - h_i) + lam u_i
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, NonFiniteValue, ShapeMismatch, ZeroDimension
from .tensor import Domain, SparseTensor3


class InitDistribution(enum.Enum):
    UNIFORM_SYMMETRIC = "uniform"
    GAUSSIAN_ZERO_MEAN = "gaussian"


@dataclass(frozen=True)
class InitSpec:
    seed: int = 0
    scale: float = 0.1
    distribution: InitDistribution = InitDistribution.GAUSSIAN_ZERO_MEAN

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"init scale must be finite and positive, got {self.scale}")


@dataclass
class FactorSet:
    """Latent factors of both domains plus the shared view factors ``C``."""

    U_s: np.ndarray
    V_s: np.ndarray
    U_t: np.ndarray
    V_t: np.ndarray
    C: np.ndarray
    K: int = field(init=False)

    def __post_init__(self):
        for name in ("U_s", "V_s", "U_t", "V_t", "C"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.K = self.C.shape[1]
        for name in ("U_s", "V_s", "U_t", "V_t"):
            mat = getattr(self, name)
            if mat.ndim != 2 or mat.shape[1] != self.K:
                raise ShapeMismatch(f"{name} has shape {mat.shape}, expected (*, {self.K})")
        for name, mat in self.named():
            if not np.all(np.isfinite(mat)):
                raise NonFiniteValue(f"{name} contains non-finite values")

    def named(self):
        return [("U_s", self.U_s), ("V_s", self.V_s), ("U_t", self.U_t),
                ("V_t", self.V_t), ("C", self.C)]

    def users(self, d: Domain) -> np.ndarray:
        return self.U_s if d is Domain.SOURCE else self.U_t

    def items(self, d: Domain) -> np.ndarray:
        return self.V_s if d is Domain.SOURCE else self.V_t

    @property
    def L(self) -> int:
        return self.C.shape[0]

    def copy(self) -> FactorSet:
        return FactorSet(*(m.copy() for _, m in self.named()))

    def digest(self) -> str:
        h = hashlib.sha256()
        for _, m in self.named():
            h.update(np.ascontiguousarray(m).tobytes())
        return h.hexdigest()

    def check_tensor(self, R: SparseTensor3, d: Domain):
        expected = (self.users(d).shape[0], self.items(d).shape[0], self.L)
        if R.dims != expected:
            raise ShapeMismatch(f"{d.value} tensor dims {R.dims} do not match factors {expected}")


def init_factors(dims_s, dims_t, L: int, K: int, spec: InitSpec | None = None) -> FactorSet:
    spec = spec or InitSpec()
    sizes = [dims_s[0], dims_s[1], dims_t[0], dims_t[1], L]
    if K <= 0 or any(int(n) <= 0 for n in sizes):
        raise ZeroDimension(f"factor dimensions must be positive: sizes={sizes}, K={K}")
    rng = np.random.default_rng(spec.seed)
    mats = []
    for n in sizes:
        if spec.distribution is InitDistribution.GAUSSIAN_ZERO_MEAN:
            mats.append(spec.scale * rng.standard_normal((int(n), K)))
        else:
            mats.append(rng.uniform(-spec.scale, spec.scale, size=(int(n), K)))
    return FactorSet(*mats)


def predict_rating(f: FactorSet, d: Domain, i: int, j: int, l: int) -> float:
    U, V = f.users(d), f.items(d)
    if not (0 <= i < U.shape[0] and 0 <= j < V.shape[0] and 0 <= l < f.L):
        raise IndexOutOfRange(
            f"({i}, {j}, {l}) outside {d.value} dims ({U.shape[0]}, {V.shape[0]}, {f.L})"
        )
    return float(np.sum(U[i] * V[j] * f.C[l]))


def predict_entries(f: FactorSet, d: Domain, users, items, views) -> np.ndarray:
    """Vectorised triple product for arrays of (already validated) indices."""
    return np.einsum("nk,nk,nk->n", f.users(d)[users], f.items(d)[items], f.C[views])


def residuals(f: FactorSet, d: Domain, R: SparseTensor3) -> np.ndarray:
    return R.ratings - predict_entries(f, d, R.users, R.items, R.views)


def domain_tensor_loss(f: FactorSet, d: Domain, R: SparseTensor3) -> float:
    f.check_tensor(R, d)
    res = residuals(f, d, R)
    return float(res @ res)


def tensor_loss(f: FactorSet, R_s: SparseTensor3, R_t: SparseTensor3) -> float:
    """Sum of squared residuals over the observed cells of both domains."""
    return domain_tensor_loss(f, Domain.SOURCE, R_s) + domain_tensor_loss(f, Domain.TARGET, R_t)


def _check_row(idx, n, what):
    if not 0 <= idx < n:
        raise IndexOutOfRange(f"{what} index {idx} outside [0, {n})")


def _coupled(row, coupling, weight, lam):
    g = lam * row
    if coupling is not None:
        coupling = np.asarray(coupling, dtype=np.float64)
        if coupling.shape != row.shape:
            raise ShapeMismatch(f"coupling target has shape {coupling.shape}, expected {row.shape}")
        g = g + weight * (row - coupling)
    return g


def grad_user_row(f: FactorSet, R: SparseTensor3, d: Domain, i: int,
                  coupling=None, rho: float = 0.0, lam: float = 0.0) -> np.ndarray:
    """Gradient of the training objective w.r.t. user row ``i`` of domain ``d``.

    ``coupling`` is the autoencoder middle representation for the user; pass
    ``None`` to drop the coupling term entirely.
    """
    f.check_tensor(R, d)
    U, V = f.users(d), f.items(d)
    _check_row(i, U.shape[0], "user")
    pos = R.entries_of(0, i)
    items, views = R.items[pos], R.views[pos]
    other = V[items] * f.C[views]
    res = R.ratings[pos] - other @ U[i]
    return -(res @ other) + _coupled(U[i], coupling, rho, lam)


def grad_item_row(f: FactorSet, R: SparseTensor3, d: Domain, j: int,
                  coupling=None, gamma: float = 0.0, lam: float = 0.0) -> np.ndarray:
    f.check_tensor(R, d)
    U, V = f.users(d), f.items(d)
    _check_row(j, V.shape[0], "item")
    pos = R.entries_of(1, j)
    users, views = R.users[pos], R.views[pos]
    other = U[users] * f.C[views]
    res = R.ratings[pos] - other @ V[j]
    return -(res @ other) + _coupled(V[j], coupling, gamma, lam)


def view_row_contribution(f: FactorSet, R: SparseTensor3, d: Domain, l: int) -> np.ndarray:
    """Residual part of dJ/dc_l coming from a single domain."""
    f.check_tensor(R, d)
    pos = R.entries_of(2, l)
    other = f.users(d)[R.users[pos]] * f.items(d)[R.items[pos]]
    res = R.ratings[pos] - other @ f.C[l]
    return -(res @ other)


def grad_view_row(f: FactorSet, R_s: SparseTensor3, R_t: SparseTensor3, l: int,
                  lam: float = 0.0, transfer: bool = True) -> np.ndarray:
    """Gradient w.r.t. the shared view row ``c_l``.

    With ``transfer`` the source residuals are added to the target ones; the
    result is then exactly ``grad_view_row(transfer=False) + source part``.
    """
    _check_row(l, f.L, "view")
    g = lam * f.C[l] + view_row_contribution(f, R_t, Domain.TARGET, l)
    if transfer:
        g = g + view_row_contribution(f, R_s, Domain.SOURCE, l)
    return g


# Whole-matrix versions used by the optimizer.  They compute the same sums
# as the row functions above but in one sweep over the entries.

def factor_residual_grads(f: FactorSet, R: SparseTensor3, d: Domain, which: str = "UVC"):
    """Residual parts of the user, item and view gradients for one domain.

    Returns a tuple with one ``(rows, K)`` array per letter in ``which``.
    """
    U, V, C = f.users(d), f.items(d), f.C
    Ui, Vj, Cl = U[R.users], V[R.items], C[R.views]
    res = (R.ratings - np.einsum("nk,nk,nk->n", Ui, Vj, Cl))[:, None]
    out = []
    for name in which:
        if name == "U":
            out.append(-(R.mode_matrix(0) @ (res * Vj * Cl)))
        elif name == "V":
            out.append(-(R.mode_matrix(1) @ (res * Ui * Cl)))
        else:
            out.append(-(R.mode_matrix(2) @ (res * Ui * Vj)))
    return tuple(out)
