"""Rating/side-information files and the planted-factor synthetic generator.

Ratings file: UTF-8 text, one ``user,item,view,rating`` entry per line with
0-based indices; blank lines and lines starting with ``#`` are skipped.
Side-information file: one comma-separated row of reals per entity, no header.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cp import FactorSet
from .errors import ParseError, RaggedRows, RowCountMismatch, ShapeMismatch
from .tensor import Domain, SparseTensor3, _from_columns, as_side_info

RATING_FILES = {Domain.SOURCE: "ratings_source.csv", Domain.TARGET: "ratings_target.csv"}
SIDE_FILES = {
    ("user", Domain.SOURCE): "user_side_source.csv",
    ("user", Domain.TARGET): "user_side_target.csv",
    ("item", Domain.SOURCE): "item_side_source.csv",
    ("item", Domain.TARGET): "item_side_target.csv",
}
TRUTH_FILE = "truth.bin"


@dataclass(frozen=True)
class DatasetBundle:
    tensor_s: SparseTensor3
    tensor_t: SparseTensor3
    user_side_s: np.ndarray
    user_side_t: np.ndarray
    item_side_s: np.ndarray
    item_side_t: np.ndarray
    view_names: tuple = ()
    rating_range: tuple | None = None

    def __post_init__(self):
        L = self.tensor_s.dims[2]
        if self.tensor_t.dims[2] != L:
            raise ShapeMismatch(f"view counts differ: source {L}, target {self.tensor_t.dims[2]}")
        if not self.view_names:
            object.__setattr__(self, "view_names", tuple(f"view{l}" for l in range(L)))
        if len(self.view_names) != L:
            raise ShapeMismatch(f"{len(self.view_names)} view names for {L} views")
        for kind, mode in (("user", 0), ("item", 1)):
            for d in Domain:
                side = self.side(kind, d)
                if side.shape[0] != self.tensor(d).dims[mode]:
                    raise RowCountMismatch(
                        f"{kind} side information for {d.value} has {side.shape[0]} rows, "
                        f"tensor has {self.tensor(d).dims[mode]} {kind}s")
        if self.rating_range is None:
            r = np.concatenate([self.tensor_s.ratings, self.tensor_t.ratings])
            if r.size:
                object.__setattr__(self, "rating_range", (float(r.min()), float(r.max())))

    @property
    def n_views(self) -> int:
        return self.tensor_s.dims[2]

    def tensor(self, d: Domain) -> SparseTensor3:
        return self.tensor_s if d is Domain.SOURCE else self.tensor_t

    def side(self, kind: str, d: Domain) -> np.ndarray:
        return getattr(self, f"{kind}_side_{d.short}")

    def with_tensor(self, d: Domain, t: SparseTensor3) -> DatasetBundle:
        return replace(self, **{f"tensor_{d.short}": t})


# --- ratings -------------------------------------------------------------

def _parse_ratings(path):
    cols = ([], [], [], [])
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields, got {len(parts)}", lineno, path)
            try:
                i, j, l = (int(p) for p in parts[:3])
                r = float(parts[3])
            except ValueError:
                raise ParseError(f"cannot parse {line!r}", lineno, path) from None
            if not math.isfinite(r):
                raise ParseError(f"non-finite rating {parts[3]!r}", lineno, path)
            for c, v in zip(cols, (i, j, l, r)):
                c.append(v)
    return cols


def load_ratings(path, dims_hint=None) -> SparseTensor3:
    """Read a ratings file; dimensions default to ``max index + 1`` per mode."""
    i, j, l, r = _parse_ratings(path)
    if not r:
        raise ParseError("no rating entries", path=path)
    if dims_hint is None:
        dims = (max(i) + 1, max(j) + 1, max(l) + 1)
    else:
        dims = tuple(dims_hint)
    return _from_columns(dims, np.array(i, dtype=float), np.array(j, dtype=float),
                         np.array(l, dtype=float), np.array(r))


def save_ratings(t: SparseTensor3, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j, l, r in t.entries():
            fh.write(f"{i},{j},{l},{r!r}\n")


# --- side information -----------------------------------------------------

def load_side_info(path, expected_rows: int | None = None) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(x) for x in line.split(",")]
            except ValueError:
                raise ParseError(f"cannot parse {line!r}", lineno, path) from None
            if not all(math.isfinite(x) for x in row):
                raise ParseError("non-finite value", lineno, path)
            if rows and len(row) != len(rows[0]):
                raise RaggedRows(f"row has {len(row)} columns, expected {len(rows[0])}",
                                 lineno, path)
            rows.append(row)
    if not rows:
        raise ParseError("no rows", path=path)
    if expected_rows is not None and len(rows) != expected_rows:
        raise RowCountMismatch(f"{path}: expected {expected_rows} rows, got {len(rows)}")
    return as_side_info(rows)


def save_side_info(mat, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in np.asarray(mat):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def load_bundle(paths: dict, view_names=None) -> DatasetBundle:
    """Load the six dataset files.

    ``paths`` maps ``ratings_source``, ``ratings_target``, ``user_side_source``,
    ``user_side_target``, ``item_side_source`` and ``item_side_target`` to files.
    Tensor user/item counts come from the side-information row counts, so
    entities without ratings are kept.
    """
    sides = {}
    for (kind, d), default in SIDE_FILES.items():
        sides[kind, d] = load_side_info(paths[default.removesuffix(".csv")])
    tensors = {}
    for d, default in RATING_FILES.items():
        path = paths[default.removesuffix(".csv")]
        i, j, l, r = _parse_ratings(path)
        if not r:
            raise ParseError("no rating entries", path=path)
        dims = (sides["user", d].shape[0], sides["item", d].shape[0], max(l) + 1)
        tensors[d] = (dims, (i, j, l, r))
    L = max(dims[2] for dims, _ in tensors.values())
    built = {}
    for d, (dims, (i, j, l, r)) in tensors.items():
        built[d] = _from_columns((dims[0], dims[1], L), np.array(i, dtype=float),
                                 np.array(j, dtype=float), np.array(l, dtype=float), np.array(r))
    return DatasetBundle(built[Domain.SOURCE], built[Domain.TARGET],
                         sides["user", Domain.SOURCE], sides["user", Domain.TARGET],
                         sides["item", Domain.SOURCE], sides["item", Domain.TARGET],
                         tuple(view_names or ()))


def bundle_paths(directory) -> dict:
    directory = Path(directory)
    names = list(RATING_FILES.values()) + list(SIDE_FILES.values())
    return {n.removesuffix(".csv"): directory / n for n in names}


def save_bundle(bundle: DatasetBundle, directory) -> dict:
    paths = bundle_paths(directory)
    os.makedirs(directory, exist_ok=True)
    for d, name in RATING_FILES.items():
        save_ratings(bundle.tensor(d), paths[name.removesuffix(".csv")])
    for (kind, d), name in SIDE_FILES.items():
        save_side_info(bundle.side(kind, d), paths[name.removesuffix(".csv")])
    return paths


# --- synthetic data --------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Planted-factor cross-domain dataset.

    User and item rows are Gaussian around ``factor_mean`` (so they fit the
    range of a sigmoid middle layer), view rows are Gaussian around
    ``view_mean``.  Ratings are triple products plus Gaussian noise.
    """

    dims_s: tuple = (50, 60)
    dims_t: tuple = (50, 60)
    n_views: int = 4
    true_K: int = 4
    noise_sigma: float = 0.1
    observed_fraction: float = 0.4
    observed_fraction_t: float | None = None   # defaults to observed_fraction
    side_features: int = 24
    side_info_noise: float = 0.05
    factor_mean: float = 0.5
    factor_std: float = 0.25
    view_mean: float = 1.0
    view_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.true_K < 1:
            raise ValueError("true_K must be at least 1")
        for frac in (self.observed_fraction, self.observed_fraction_t):
            if frac is not None and not 0.0 < frac <= 1.0:
                raise ValueError(f"observed fraction must lie in (0, 1], got {frac}")
        if self.noise_sigma < 0 or self.side_info_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if self.n_views < 1 or self.side_features < 1:
            raise ValueError("n_views and side_features must be positive")


def _observed_mask(rng, shape, frac):
    mask = rng.random(shape) < frac
    if not mask.any():
        mask.flat[rng.integers(mask.size)] = True
    return mask


def _binary_side(rng, rows, n_features, flip):
    proj = rng.standard_normal((rows.shape[1], n_features))
    centred = rows - rows.mean(axis=0)
    bits = (centred @ proj > 0).astype(np.float64)
    flips = rng.random(bits.shape) < flip
    return np.where(flips, 1.0 - bits, bits)


def synth_generate(spec: SynthSpec) -> tuple[DatasetBundle, FactorSet]:
    rng = np.random.default_rng(spec.seed)
    K, L = spec.true_K, spec.n_views
    mats = {}
    for d, (I, J) in ((Domain.SOURCE, spec.dims_s), (Domain.TARGET, spec.dims_t)):
        mats["U", d] = spec.factor_mean + spec.factor_std * rng.standard_normal((I, K))
        mats["V", d] = spec.factor_mean + spec.factor_std * rng.standard_normal((J, K))
    C = spec.view_mean + spec.view_std * rng.standard_normal((L, K))
    truth = FactorSet(mats["U", Domain.SOURCE], mats["V", Domain.SOURCE],
                      mats["U", Domain.TARGET], mats["V", Domain.TARGET], C)

    tensors, sides = {}, {}
    for d, frac in ((Domain.SOURCE, spec.observed_fraction),
                    (Domain.TARGET, spec.observed_fraction_t or spec.observed_fraction)):
        U, V = mats["U", d], mats["V", d]
        full = np.einsum("ik,jk,lk->ijl", U, V, C)
        noisy = full + spec.noise_sigma * rng.standard_normal(full.shape)
        mask = _observed_mask(rng, full.shape, frac)
        i, j, l = np.nonzero(mask)
        tensors[d] = _from_columns(full.shape, i.astype(float), j.astype(float),
                                   l.astype(float), noisy[mask])
        sides["user", d] = as_side_info(_binary_side(rng, U, spec.side_features,
                                                     spec.side_info_noise))
        sides["item", d] = as_side_info(_binary_side(rng, V, spec.side_features,
                                                     spec.side_info_noise))
    bundle = DatasetBundle(tensors[Domain.SOURCE], tensors[Domain.TARGET],
                           sides["user", Domain.SOURCE], sides["user", Domain.TARGET],
                           sides["item", Domain.SOURCE], sides["item", Domain.TARGET])
    return bundle, truth
