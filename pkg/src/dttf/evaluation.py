"""Rating and ranking metrics plus k-fold cross-validation on the target domain."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .data import DatasetBundle
from .errors import EmptyInput, TooFewEntries
from .model import AblationMode, Hyperparams
from .tensor import Domain, SparseTensor3

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitPlan:
    n_folds: int
    seed: int
    folds: tuple      # one sorted array of entry positions per fold

    def train_positions(self, k: int, n_entries: int) -> np.ndarray:
        keep = np.ones(n_entries, dtype=bool)
        keep[self.folds[k]] = False
        return np.flatnonzero(keep)


def make_splits(t: SparseTensor3, n_folds: int = 5, seed: int = 0) -> SplitPlan:
    if n_folds < 1:
        raise ValueError("n_folds must be positive")
    if t.nnz < n_folds:
        raise TooFewEntries(f"{t.nnz} observed entries cannot fill {n_folds} folds")
    perm = np.random.default_rng(seed).permutation(t.nnz)
    folds = tuple(np.sort(part) for part in np.array_split(perm, n_folds))
    return SplitPlan(n_folds, seed, folds)


def rmse(pairs) -> float:
    """Root mean squared error of ``(predicted, actual)`` pairs."""
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("rmse of an empty list")
    err = arr[:, 0] - arr[:, 1]
    return math.sqrt(float(np.mean(err * err)))


def _check_cases(ranked_lists, held_out):
    if len(ranked_lists) == 0:
        raise EmptyInput("no ranking cases")
    if len(ranked_lists) != len(held_out):
        raise ValueError(f"{len(ranked_lists)} ranked lists for {len(held_out)} held-out items")


def hit_ratio(ranked_lists, held_out, n: int | None = None) -> float:
    """Fraction of cases whose held-out item is in the (top-``n`` of the) list."""
    _check_cases(ranked_lists, held_out)
    hits = sum(item in list(ranked)[:n] for ranked, item in zip(ranked_lists, held_out))
    return hits / len(held_out)


def ndcg(ranked_lists, held_out, n: int | None = None) -> float:
    """NDCG@n with one relevant item per case, so the ideal DCG is 1."""
    _check_cases(ranked_lists, held_out)
    total = 0.0
    for ranked, item in zip(ranked_lists, held_out):
        top = list(ranked)[:n]
        if item in top:
            total += 1.0 / math.log2(top.index(item) + 2)
    return total / len(held_out)


def rank_cases(state, full: SparseTensor3, test_positions, top_n=10, threshold=4.0,
               n_negatives=99, seed=0):
    """Top-``top_n`` lists for every held-out rating at or above ``threshold``.

    Each relevant held-out (user, item, view) is ranked against up to
    ``n_negatives`` items the user never rated on that view.  Ties are broken
    against the held-out item.
    """
    rng = np.random.default_rng(seed)
    J = full.dims[1]
    all_items = np.arange(J)
    lists, held = [], []
    for pos in test_positions:
        if full.ratings[pos] < threshold:
            continue
        i, j, l = int(full.users[pos]), int(full.items[pos]), int(full.views[pos])
        free = all_items[~full.contains(np.full(J, i), all_items, np.full(J, l))]
        negs = rng.choice(free, size=min(n_negatives, free.size), replace=False)
        cands = np.concatenate([negs, [j]])
        scores = model.predict_many(state, Domain.TARGET, np.full(cands.size, i), cands,
                                    np.full(cands.size, l))
        order = np.argsort(-scores, kind="stable")
        lists.append(cands[order[:top_n]].tolist())
        held.append(j)
    return lists, held


@dataclass(frozen=True)
class FoldResult:
    fold: int
    rmse: float
    hr: float
    ndcg: float
    n_test: int
    n_rank_cases: int
    iters: int


@dataclass
class EvalReport:
    mode: AblationMode
    sparsity: float
    folds: list
    config: dict = field(default_factory=dict)

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(f, metric) for f in self.folds], dtype=np.float64)

    def mean(self, metric: str) -> float:
        v = self.values(metric)
        v = v[np.isfinite(v)]
        return float(v.mean()) if v.size else math.nan

    def std(self, metric: str) -> float:
        """Population standard deviation over folds with a finite value."""
        v = self.values(metric)
        v = v[np.isfinite(v)]
        return float(v.std()) if v.size else math.nan


def cross_validate(data: DatasetBundle, hp: Hyperparams, mode=AblationMode.FULL,
                   n_folds: int = 5, sparsity: float = 1.0, top_n: int = 10,
                   threshold: float = 4.0, n_negatives: int = 99, seed: int | None = None,
                   plan: SplitPlan | None = None, rating_range=None) -> EvalReport:
    """Hold out each target fold in turn, train on the rest, score the fold.

    ``sparsity`` is the fraction of the remaining training entries that is
    kept (0.6/0.8/0.95 reproduce the usual benchmark columns).  RMSE covers
    all held-out entries of all views together.
    """
    seed = hp.seed if seed is None else seed
    target = data.tensor_t
    plan = plan or make_splits(target, n_folds, seed)
    results = []
    for k in range(plan.n_folds):
        train_pos = plan.train_positions(k, target.nnz)
        if sparsity < 1.0:
            rng = np.random.default_rng([seed, 7, k, round(sparsity * 1e6)])
            keep = rng.random(train_pos.size) < sparsity
            train_pos = train_pos[keep]
        fold_data = data.with_tensor(Domain.TARGET, target.subset(train_pos))
        state, report = model.train(fold_data, hp, mode)
        test = plan.folds[k]
        pred = model.predict_many(state, Domain.TARGET, target.users[test], target.items[test],
                                  target.views[test], rating_range)
        fold_rmse = rmse(np.column_stack([pred, target.ratings[test]]))
        lists, held = rank_cases(state, target, test, top_n, threshold, n_negatives,
                                 seed=[seed, 11, k])
        if held:
            hr, nd = hit_ratio(lists, held, top_n), ndcg(lists, held, top_n)
        else:
            _log.warning("fold %d has no held-out rating >= %g; HR/NDCG undefined", k, threshold)
            hr = nd = math.nan
        results.append(FoldResult(k, fold_rmse, hr, nd, int(test.size), len(held),
                                  report.iters_run))
        _log.info("%s sparsity=%g fold %d: rmse=%.4f hr=%.4f ndcg=%.4f", mode.value,
                  sparsity, k, fold_rmse, hr, nd)
    config = dict(n_folds=plan.n_folds, seed=seed, top_n=top_n, threshold=threshold,
                  n_negatives=n_negatives)
    return EvalReport(mode, sparsity, results, config)


def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.6f}"


def _level_label(level: float) -> str:
    return f"{level * 100:g}%"


def format_table(reports: dict, levels, top_n: int) -> str:
    """Modes as rows, one RMSE/HR/NDCG column group per sparsity level.

    ``reports`` maps ``(mode, level)`` to :class:`EvalReport`.
    """
    header = ["mode"]
    for lv in levels:
        tag = _level_label(lv)
        header += [f"rmse@{tag}", f"rmse_std@{tag}", f"hr@{top_n}@{tag}", f"ndcg@{top_n}@{tag}"]
    lines = [",".join(header)]
    modes = list(dict.fromkeys(m for m, _ in reports))
    for m in modes:
        row = [m.value]
        for lv in levels:
            rep = reports[m, lv]
            row += [_fmt(rep.mean("rmse")), _fmt(rep.std("rmse")),
                    _fmt(rep.mean("hr")), _fmt(rep.mean("ndcg"))]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def format_details(reports: dict) -> str:
    lines = ["mode,sparsity,fold,rmse,hr,ndcg,n_test,n_rank_cases,iters"]
    for (m, lv), rep in reports.items():
        for f in rep.folds:
            lines.append(",".join([m.value, _level_label(lv), str(f.fold), _fmt(f.rmse),
                                   _fmt(f.hr), _fmt(f.ndcg), str(f.n_test),
                                   str(f.n_rank_cases), str(f.iters)]))
    return "\n".join(lines) + "\n"
