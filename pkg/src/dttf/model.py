"""Joint objective and the three-step alternating optimizer.

The implemented objective is

    J = ½ Σ_d ||I_d ⊙ (R_d - [[U_d, V_d, C]])||²                       (tensor)
      + ½ Σ_d (α_d Σ_i ||p_i - p̂_i||² + β_d Σ_j ||p_j - p̂_j||²)      (reconstruction)
      + ½ Σ_d (ρ_d Σ_i ||u_i - h_i||² + γ_d Σ_j ||v_j - h_j||²)        (coupling)
      + ½ λ (||U||² + ||V||² + ||C||² + Σ_nets ||W||² + ||b||²)         (decay)

whose partial derivatives are the row and backprop gradients used below.
The reported objective feeds clean side information through the networks;
masking noise is only applied to the network inputs inside step III.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import cp, sdae
from .cp import FactorSet, InitDistribution, InitSpec
from .data import DatasetBundle
from .errors import DivergenceDetected, IndexOutOfRange, NonFiniteValue
from .sdae import Activation, CorruptionSpec, DenoisingAutoencoder
from .tensor import Domain

_log = logging.getLogger(__name__)

NET_NAMES = ("user_net_s", "user_net_t", "item_net_s", "item_net_t")
LOG_HEADER = "iter,objective,L_t,L_r,L_a,reg"


class AblationMode(enum.Enum):
    FULL = "full"
    WO_TRANS = "wotrans"
    WO_SIDEINFO = "wosideinfo"
    WO_TF = "wotf"

    @property
    def transfer(self) -> bool:
        return self is not AblationMode.WO_TRANS

    @property
    def side_info(self) -> bool:
        return self is not AblationMode.WO_SIDEINFO

    @property
    def tensor_rows(self) -> bool:
        return self is not AblationMode.WO_TF


@dataclass(frozen=True)
class Hyperparams:
    K: int = 8
    lam: float = 0.01
    alpha_s: float = 1.0
    alpha_t: float = 1.0
    beta_s: float = 1.0
    beta_t: float = 1.0
    rho_s: float = 0.1
    rho_t: float = 0.1
    gamma_s: float = 0.1
    gamma_t: float = 0.1
    lr_factors: float = 0.005
    lr_net: float = 0.005
    corruption: float = 0.3
    max_outer_iters: int = 200
    tol: float = 1e-4
    seed: int = 0
    hidden: tuple = (64,)
    hidden_activation: str = "sigmoid"
    output_activation: str = "identity"
    init_scale: float = 0.5
    init_distribution: str = "gaussian"
    batch_size: int = 0          # rows per SGD batch in step III; 0 = all rows

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        penalties = ("lam", "alpha_s", "alpha_t", "beta_s", "beta_t",
                     "rho_s", "rho_t", "gamma_s", "gamma_t")
        for name in penalties:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lr_factors <= 0 or self.lr_net <= 0:
            raise ValueError("learning rates must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_outer_iters < 0 or self.batch_size < 0:
            raise ValueError("max_outer_iters and batch_size must be non-negative")
        if not 0.0 <= self.corruption < 1.0:
            raise ValueError("corruption must lie in [0, 1)")
        Activation(self.hidden_activation)
        Activation(self.output_activation)
        InitDistribution(self.init_distribution)

    def recon_weight(self, kind: str, d: Domain) -> float:
        return getattr(self, ("alpha_" if kind == "user" else "beta_") + d.short)

    def coupling_weight(self, kind: str, d: Domain) -> float:
        return getattr(self, ("rho_" if kind == "user" else "gamma_") + d.short)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class TrainState:
    factors: FactorSet
    user_net_s: DenoisingAutoencoder
    user_net_t: DenoisingAutoencoder
    item_net_s: DenoisingAutoencoder
    item_net_t: DenoisingAutoencoder
    iter: int = 0
    objective_history: list = field(default_factory=list)

    def net(self, kind: str, d: Domain) -> DenoisingAutoencoder:
        return getattr(self, f"{kind}_net_{d.short}")

    def latent(self, kind: str, d: Domain) -> np.ndarray:
        return self.factors.users(d) if kind == "user" else self.factors.items(d)

    def nets(self):
        for kind in ("user", "item"):
            for d in Domain:
                yield kind, d, self.net(kind, d)


@dataclass(frozen=True)
class TrainReport:
    final_objective: float
    iters_run: int
    converged: bool
    wall_time: float


def init_state(data: DatasetBundle, hp: Hyperparams) -> TrainState:
    I_s, J_s, L = data.tensor_s.dims
    I_t, J_t, _ = data.tensor_t.dims
    factors = cp.init_factors((I_s, J_s), (I_t, J_t), L, hp.K,
                              InitSpec(hp.seed, hp.init_scale,
                                       InitDistribution(hp.init_distribution)))
    nets = {}
    for n, (kind, d) in enumerate((k, d) for k in ("user", "item") for d in Domain):
        rng = np.random.default_rng([hp.seed, 1, n])
        nets[f"{kind}_net_{d.short}"] = sdae.build_autoencoder(
            data.side(kind, d).shape[1], tuple(hp.hidden), hp.K, rng,
            Activation(hp.hidden_activation), Activation(hp.output_activation))
    return TrainState(factors, **nets)


def _representations(state: TrainState, data: DatasetBundle):
    """Clean forward passes of all four networks, keyed by ``(kind, domain)``."""
    return {(kind, d): sdae.forward(net, data.side(kind, d)) for kind, d, net in state.nets()}


def objective_terms(state: TrainState, data: DatasetBundle, hp: Hyperparams,
                    mode: AblationMode = AblationMode.FULL, traces=None) -> dict:
    """The four weighted parts of the objective and their sum.

    ``traces`` overrides the clean forward passes (e.g. with traces computed
    from corrupted inputs) when the corrupted-input objective is wanted.
    """
    f = state.factors
    terms = dict(L_t=0.0, L_r=0.0, L_a=0.0, reg=0.0)
    if mode.tensor_rows:
        for d in Domain:
            if d is Domain.SOURCE and not mode.transfer:
                continue
            terms["L_t"] += 0.5 * cp.domain_tensor_loss(f, d, data.tensor(d))
    decay = sum(float(np.sum(m * m)) for _, m in f.named())
    if mode.side_info:
        if traces is None:
            traces = _representations(state, data)
        for kind, d, net in state.nets():
            tr = traces[kind, d]
            diff = data.side(kind, d) - tr.output
            terms["L_r"] += 0.5 * hp.recon_weight(kind, d) * float(np.sum(diff * diff))
            terms["L_a"] += 0.5 * hp.coupling_weight(kind, d) * sdae.coupling_loss(
                tr, state.latent(kind, d))
            decay += net.squared_norm()
    terms["reg"] = 0.5 * hp.lam * decay
    terms["objective"] = terms["L_t"] + terms["L_r"] + terms["L_a"] + terms["reg"]
    terms["traces"] = traces
    return terms


def objective(state: TrainState, data: DatasetBundle, hp: Hyperparams,
              mode: AblationMode = AblationMode.FULL, traces=None) -> float:
    return objective_terms(state, data, hp, mode, traces)["objective"]


def _with_factors(state: TrainState, **mats) -> TrainState:
    f = state.factors
    new = FactorSet.__new__(FactorSet)
    # bypass validation: divergence must surface through the objective check
    for name, m in f.named():
        setattr(new, name, mats.get(name, m))
    new.K = f.K
    return replace(state, factors=new, objective_history=list(state.objective_history))


def factor_gradients(state: TrainState, data: DatasetBundle, hp: Hyperparams,
                     mode: AblationMode = AblationMode.FULL, traces=None,
                     with_views: bool = True) -> dict:
    """Gradients of the objective for U_s, V_s, U_t, V_t and (optionally) C."""
    f = state.factors
    if mode.side_info and traces is None:
        traces = _representations(state, data)
    grads = {}
    view_parts = {}
    for d in Domain:
        gU = hp.lam * f.users(d)
        gV = hp.lam * f.items(d)
        if mode.tensor_rows:
            parts = cp.factor_residual_grads(f, data.tensor(d), d,
                                             "UVC" if with_views else "UV")
            rU, rV = parts[:2]
            if with_views:
                view_parts[d] = parts[2]
            if mode.transfer or d is Domain.TARGET:
                gU = gU + rU
                gV = gV + rV
        if mode.side_info:
            gU = gU + hp.coupling_weight("user", d) * (f.users(d) - traces["user", d].middle_rep)
            gV = gV + hp.coupling_weight("item", d) * (f.items(d) - traces["item", d].middle_rep)
        grads["U_" + d.short] = gU
        grads["V_" + d.short] = gV
    if with_views:
        gC = hp.lam * f.C
        if mode.tensor_rows:
            gC = gC + view_parts[Domain.TARGET]
            if mode.transfer:
                gC = gC + view_parts[Domain.SOURCE]
        grads["C"] = gC
    return grads


def step_I(state: TrainState, data: DatasetBundle, hp: Hyperparams,
           mode: AblationMode = AblationMode.FULL, traces=None) -> TrainState:
    """One simultaneous gradient step on every user and item row; C and nets frozen.

    Without the tensor term the rows are set to the networks' middle
    representations instead.
    """
    f = state.factors
    if not mode.tensor_rows:
        traces = traces or _representations(state, data)
        return _with_factors(state, **{
            ("U_" if kind == "user" else "V_") + d.short: traces[kind, d].middle_rep.copy()
            for kind in ("user", "item") for d in Domain})
    g = factor_gradients(state, data, hp, mode, traces, with_views=False)
    lr = hp.lr_factors
    return _with_factors(state, **{name: getattr(f, name) - lr * g[name]
                                   for name in ("U_s", "V_s", "U_t", "V_t")})


def step_II(state: TrainState, data: DatasetBundle, hp: Hyperparams,
            mode: AblationMode = AblationMode.FULL) -> TrainState:
    """Gradient step on the shared view factors with user/item rows frozen."""
    f = state.factors
    gC = hp.lam * f.C + cp.factor_residual_grads(f, data.tensor_t, Domain.TARGET, "C")[0]
    if mode.transfer:
        gC = gC + cp.factor_residual_grads(f, data.tensor_s, Domain.SOURCE, "C")[0]
    return _with_factors(state, C=f.C - hp.lr_factors * gC)


def corruption_counter(iteration: int, net_index: int) -> int:
    return 4 * iteration + net_index


def step_III(state: TrainState, data: DatasetBundle, hp: Hyperparams,
             mode: AblationMode = AblationMode.FULL, iteration: int | None = None) -> TrainState:
    """One SGD pass of each autoencoder over its side-information rows.

    Inputs are masked afresh for every ``iteration``; reconstruction targets
    are the clean rows and coupling targets the current latent rows.
    """
    if not mode.side_info:
        return replace(state, objective_history=list(state.objective_history))
    iteration = state.iter if iteration is None else iteration
    spec = CorruptionSpec(hp.corruption, hp.seed)
    nets = {}
    for n, (kind, d, net) in enumerate(state.nets()):
        P = np.asarray(data.side(kind, d))
        targets = state.latent(kind, d)
        counter = corruption_counter(iteration, n)
        noisy = sdae.corrupt(P, spec, counter)
        rows = P.shape[0]
        if hp.batch_size and hp.batch_size < rows:
            order = np.random.default_rng([hp.seed, 2, counter]).permutation(rows)
            batches = [order[k:k + hp.batch_size] for k in range(0, rows, hp.batch_size)]
        else:
            batches = [slice(None)]
        for idx in batches:
            share = 1.0 if isinstance(idx, slice) else len(idx) / rows
            trace = sdae.forward(net, noisy[idx])
            grads = sdae.backward(net, trace, P[idx], targets[idx],
                                  hp.recon_weight(kind, d), hp.coupling_weight(kind, d),
                                  hp.lam * share)
            net = _sgd(net, grads, hp.lr_net)
        nets[f"{kind}_net_{d.short}"] = net
    return replace(state, objective_history=list(state.objective_history), **nets)


def _sgd(net, grads, lr):
    new = net.copy()
    for m in range(net.depth):
        new.weights[m] = net.weights[m] - lr * grads.weights[m]
        new.biases[m] = net.biases[m] - lr * grads.biases[m]
    return new


def _write_log_row(fh, iteration, terms):
    vals = [terms[k] for k in ("objective", "L_t", "L_r", "L_a", "reg")]
    fh.write(str(iteration) + "," + ",".join(repr(float(v)) for v in vals) + "\n")


def train(data: DatasetBundle, hp: Hyperparams, mode: AblationMode = AblationMode.FULL,
          log_path=None, state: TrainState | None = None) -> tuple[TrainState, TrainReport]:
    """Alternate steps I, II and III until the relative objective change drops
    below ``hp.tol`` or ``hp.max_outer_iters`` is reached.

    ``objective_history[0]`` is the objective of the initial state.
    """
    t0 = time.perf_counter()
    state = state or init_state(data, hp)
    log = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    try:
        if log:
            log.write(LOG_HEADER + "\n")
        terms = objective_terms(state, data, hp, mode)
        history = list(state.objective_history) or [terms["objective"]]
        if log:
            _write_log_row(log, state.iter, terms)
        converged = False
        iters = 0
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(hp.max_outer_iters):
                it = state.iter + 1
                try:
                    state = step_I(state, data, hp, mode, traces=terms["traces"])
                    state = step_II(state, data, hp, mode)
                    state = step_III(state, data, hp, mode, iteration=it)
                    state.iter = it
                    terms = objective_terms(state, data, hp, mode)
                except (NonFiniteValue, FloatingPointError) as exc:
                    raise DivergenceDetected(it, math.nan) from exc
                J = terms["objective"]
                if not math.isfinite(J):
                    raise DivergenceDetected(it, J)
                iters += 1
                prev = history[-1]
                history.append(J)
                if log:
                    _write_log_row(log, it, terms)
                _log.debug("iter %d objective %.6g", it, J)
                if abs(prev - J) / max(prev, 1e-12) < hp.tol:
                    converged = True
                    break
    finally:
        if log:
            log.close()
    state.objective_history = history
    report = TrainReport(history[-1], iters, converged, time.perf_counter() - t0)
    _log.info("trained %s: %d iterations, objective %.6g, converged=%s",
              mode.value, iters, report.final_objective, converged)
    return state, report


def predict(state: TrainState, d: Domain, i: int, j: int, l: int,
            rating_range=None) -> float:
    value = cp.predict_rating(state.factors, d, i, j, l)
    if rating_range is not None:
        lo, hi = rating_range
        value = min(max(value, lo), hi)
    return value


def predict_many(state: TrainState, d: Domain, users, items, views, rating_range=None):
    f = state.factors
    users, items, views = (np.asarray(a, dtype=np.int64) for a in (users, items, views))
    for arr, n, what in ((users, f.users(d).shape[0], "user"),
                         (items, f.items(d).shape[0], "item"), (views, f.L, "view")):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise IndexOutOfRange(f"{what} index outside [0, {n})")
    out = cp.predict_entries(f, d, users, items, views)
    if rating_range is not None:
        out = np.clip(out, *rating_range)
    return out
