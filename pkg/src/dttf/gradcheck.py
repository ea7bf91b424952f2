"""Finite-difference verification of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cp, model, sdae
from .data import SynthSpec, synth_generate
from .model import AblationMode, Hyperparams
from .tensor import Domain

GROUPS = ("U_s", "V_s", "U_t", "V_t", "C", "user-nets", "item-nets")
# components whose gradient is below this are compared in absolute terms
REL_FLOOR = 1e-3


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def central_difference(func, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of ``func()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    grad = np.zeros(x.shape)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = func()
        flat[k] = orig - step
        fm = func()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * step)
    return grad


def tiny_instance(seed: int = 0):
    """Seeded two-domain problem: (I_s, J_s) = (4, 5), (I_t, J_t) = (3, 4),
    three views, K = 2 and autoencoders ``[6, 4, 2, 4, 6]``."""
    spec = SynthSpec(dims_s=(4, 5), dims_t=(3, 4), n_views=3, true_K=2, noise_sigma=0.1,
                     observed_fraction=0.5, side_features=6, side_info_noise=0.1, seed=seed)
    data, _ = synth_generate(spec)
    hp = Hyperparams(K=2, lam=0.05, alpha_s=0.7, alpha_t=1.1, beta_s=0.9, beta_t=1.3,
                     rho_s=0.4, rho_t=0.6, gamma_s=0.5, gamma_t=0.8, hidden=(4,),
                     init_scale=0.5, seed=seed)
    state = model.init_state(data, hp)
    rng = np.random.default_rng([seed, 99])
    for _, _, net in state.nets():
        for p in net.params():
            p += 0.3 * rng.standard_normal(p.shape)
    return data, hp, state


def analytic_gradients(state, data, hp: Hyperparams, mode=AblationMode.FULL) -> dict:
    """Row-by-row factor gradients and per-network backprop gradients."""
    f = state.factors
    traces = {(k, d): sdae.forward(net, data.side(k, d)) for k, d, net in state.nets()}
    side = mode.side_info
    fit = mode.tensor_rows
    out = {}
    for d in Domain:
        R = data.tensor(d)
        if not (fit and (mode.transfer or d is Domain.TARGET)):
            R = R.subset(np.zeros(R.nnz, dtype=bool))
        U, V = f.users(d), f.items(d)
        out["U_" + d.short] = np.array([
            cp.grad_user_row(f, R, d, i, traces["user", d].middle_rep[i] if side else None,
                             hp.coupling_weight("user", d), hp.lam)
            for i in range(U.shape[0])])
        out["V_" + d.short] = np.array([
            cp.grad_item_row(f, R, d, j, traces["item", d].middle_rep[j] if side else None,
                             hp.coupling_weight("item", d), hp.lam)
            for j in range(V.shape[0])])
    R_s, R_t = data.tensor_s, data.tensor_t
    if not fit:
        R_s = R_s.subset(np.zeros(R_s.nnz, dtype=bool))
        R_t = R_t.subset(np.zeros(R_t.nnz, dtype=bool))
    out["C"] = np.array([cp.grad_view_row(f, R_s, R_t, l, hp.lam, mode.transfer)
                         for l in range(f.L)])
    for kind in ("user", "item"):
        flat = []
        for d in Domain:
            net = state.net(kind, d)
            if side:
                g = sdae.backward(net, traces[kind, d], data.side(kind, d),
                                  state.latent(kind, d), hp.recon_weight(kind, d),
                                  hp.coupling_weight(kind, d), hp.lam)
                flat += [p.ravel() for p in g.params()]
            else:
                flat += [np.zeros(p.size) for p in net.params()]
        out[f"{kind}-nets"] = np.concatenate(flat)
    return out


def numeric_gradients(state, data, hp: Hyperparams, mode=AblationMode.FULL,
                      step: float = 1e-6) -> dict:
    def J():
        return model.objective(state, data, hp, mode)

    f = state.factors
    out = {name: central_difference(J, m, step) for name, m in f.named()}
    for kind in ("user", "item"):
        flat = []
        for d in Domain:
            flat += [central_difference(J, p, step).ravel()
                     for p in state.net(kind, d).params()]
        out[f"{kind}-nets"] = np.concatenate(flat)
    return out


@dataclass(frozen=True)
class GradCheckResult:
    errors: dict          # group -> max relative error
    tolerance: float

    @property
    def failed(self) -> list:
        return [g for g in GROUPS if not self.errors[g] <= self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failed


def run_gradcheck(seed: int = 0, mode=AblationMode.FULL, step: float = 1e-6,
                  tolerance: float = 1e-5, instance=None) -> GradCheckResult:
    data, hp, state = instance or tiny_instance(seed)
    analytic = analytic_gradients(state, data, hp, mode)
    numeric = numeric_gradients(state, data, hp, mode, step)
    errors = {g: float(relative_error(analytic[g], numeric[g]).max()) for g in GROUPS}
    return GradCheckResult(errors, tolerance)
