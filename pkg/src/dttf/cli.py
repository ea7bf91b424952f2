"""Command-line entry point: ``dttf {train,evaluate,ablate,gradcheck,synth}``.

Configuration is a flat ``key = value`` file (``--config`` or the
``DTTF_CONFIG`` environment variable) plus ``--set key=value`` overrides,
which win.  Failures print one ``dttf: error code=N kind=Name: message``
line on stderr and exit with a non-zero code.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, errors, evaluation, gradcheck, model
from .model import AblationMode, Hyperparams
from .tensor import Domain

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_GRADCHECK = 0, 2, 3, 4, 5

_log = logging.getLogger("dttf")


def _ints(text):
    return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)


def _levels(text):
    out = []
    for x in str(text).replace("%", "").split(","):
        v = float(x)
        out.append(v / 100 if v > 1 else v)
    return tuple(out)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if str(text).strip().lower() in ("", "none") else float(text)


def _hp_parser(f):
    if f.name == "hidden":
        return _ints
    if f.type in (int, "int"):
        return int
    if f.type in (float, "float"):
        return float
    return str


HP_KEYS = {f.name: _hp_parser(f) for f in dataclasses.fields(Hyperparams)}

SYNTH_KEYS = {
    "synth.dims_s": _ints, "synth.dims_t": _ints, "synth.n_views": int, "synth.true_K": int,
    "synth.noise_sigma": float, "synth.observed_fraction": float,
    "synth.observed_fraction_t": _opt_float, "synth.side_features": int,
    "synth.side_info_noise": float, "synth.factor_mean": float, "synth.factor_std": float,
    "synth.view_mean": float, "synth.view_std": float, "synth.seed": int,
}

PATH_KEYS = ("data_dir", "ratings_source", "ratings_target", "user_side_source",
             "user_side_target", "item_side_source", "item_side_target", "checkpoint",
             "loss_log", "report", "details", "out_dir", "test_ratings")

OTHER_KEYS = {
    "data": str, "mode": str, "n_folds": int, "top_n": int, "relevance_threshold": float,
    "n_negatives": int, "sparsity_levels": _levels, "clamp": _bool, "threads": int,
    "gradcheck.step": float, "gradcheck.tol": float,
}

SCHEMA = {**HP_KEYS, **SYNTH_KEYS, **{k: str for k in PATH_KEYS}, **OTHER_KEYS}

DEFAULTS = {"data": "files", "mode": "full", "n_folds": 5, "top_n": 10,
            "relevance_threshold": 4.0, "n_negatives": 99, "sparsity_levels": (0.6, 0.8, 0.95),
            "clamp": False, "threads": 1, "gradcheck.step": 1e-6, "gradcheck.tol": 1e-5}


def read_config_file(path) -> dict:
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise errors.ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def parse_config(raw: dict) -> dict:
    cfg = dict(DEFAULTS)
    for key, value in raw.items():
        if key not in SCHEMA:
            raise errors.ConfigError(f"unknown config key {key!r}")
        try:
            cfg[key] = SCHEMA[key](value)
        except ValueError as exc:
            raise errors.ConfigError(f"bad value for {key!r}: {exc}") from None
    if cfg["threads"] < 1:
        raise errors.ConfigError("threads must be at least 1")
    return cfg


def _require(cfg, key):
    if key not in cfg:
        raise errors.ConfigError(f"missing required key {key!r}")
    return cfg[key]


def hyperparams_from(cfg) -> Hyperparams:
    kw = {k: cfg[k] for k in HP_KEYS if k in cfg}
    try:
        return Hyperparams(**kw)
    except ValueError as exc:
        raise errors.ConfigError(str(exc)) from None


def synth_spec_from(cfg) -> data.SynthSpec:
    kw = {k.removeprefix("synth."): cfg[k] for k in SYNTH_KEYS if k in cfg}
    try:
        return data.SynthSpec(**kw)
    except ValueError as exc:
        raise errors.ConfigError(str(exc)) from None


def mode_from(cfg) -> AblationMode:
    try:
        return AblationMode(cfg["mode"].lower())
    except ValueError:
        choices = ", ".join(m.value for m in AblationMode)
        raise errors.ConfigError(f"mode must be one of {choices}, got {cfg['mode']!r}") from None


def load_data(cfg) -> data.DatasetBundle:
    if cfg["data"] == "synth":
        return data.synth_generate(synth_spec_from(cfg))[0]
    if cfg["data"] != "files":
        raise errors.ConfigError(f"data must be 'files' or 'synth', got {cfg['data']!r}")
    if "data_dir" in cfg:
        paths = data.bundle_paths(cfg["data_dir"])
        paths.update({k: cfg[k] for k in paths if k in cfg})
    else:
        paths = {k: _require(cfg, k) for k in data.bundle_paths(".")}
    return data.load_bundle(paths)


def _emit(text: str, path=None):
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    sys.stdout.write(text)


# --- subcommands -------------------------------------------------------------

def cmd_train(cfg) -> int:
    ckpt = _require(cfg, "checkpoint")
    bundle = load_data(cfg)
    hp = hyperparams_from(cfg)
    mode = mode_from(cfg)
    log_path = cfg.get("loss_log", str(ckpt) + ".loss.csv")
    for p in (ckpt, log_path):
        Path(p).parent.mkdir(parents=True, exist_ok=True)
    state, report = model.train(bundle, hp, mode, log_path=log_path)
    checkpoint.save_checkpoint(state, ckpt)
    print(f"mode={mode.value} iters={report.iters_run} converged={str(report.converged).lower()} "
          f"objective={report.final_objective:.6f}")
    return EXIT_OK


def _score_checkpoint(cfg) -> int:
    state = checkpoint.load_checkpoint(cfg["checkpoint"])
    bundle = load_data(cfg)
    test = data.load_ratings(cfg["test_ratings"], dims_hint=bundle.tensor_t.dims)
    rating_range = bundle.rating_range if cfg["clamp"] else None
    pred = model.predict_many(state, Domain.TARGET, test.users, test.items, test.views,
                              rating_range)
    score = evaluation.rmse(np.column_stack([pred, test.ratings]))
    full = data._from_columns(bundle.tensor_t.dims,
                              *(np.concatenate([a, b]).astype(float) for a, b in zip(
                                  (bundle.tensor_t.users, bundle.tensor_t.items,
                                   bundle.tensor_t.views, bundle.tensor_t.ratings),
                                  (test.users, test.items, test.views, test.ratings))))
    test_pos = np.flatnonzero(np.isin(full.cell_keys(), test.cell_keys()))
    top_n = cfg["top_n"]
    lists, held = evaluation.rank_cases(state, full, test_pos, top_n,
                                        cfg["relevance_threshold"], cfg["n_negatives"],
                                        seed=cfg.get("seed", 0))
    hr = evaluation.hit_ratio(lists, held, top_n) if held else float("nan")
    nd = evaluation.ndcg(lists, held, top_n) if held else float("nan")
    f = evaluation._fmt
    _emit(f"rmse,hr@{top_n},ndcg@{top_n},n_test\n{f(score)},{f(hr)},{f(nd)},{test.nnz}\n",
          cfg.get("report"))
    return EXIT_OK


def _benchmark(cfg, modes) -> int:
    bundle = load_data(cfg)
    hp = hyperparams_from(cfg)
    plan = evaluation.make_splits(bundle.tensor_t, cfg["n_folds"], hp.seed)
    rating_range = bundle.rating_range if cfg["clamp"] else None
    reports = {}
    for mode in modes:
        for level in cfg["sparsity_levels"]:
            reports[mode, level] = evaluation.cross_validate(
                bundle, hp, mode, sparsity=level, top_n=cfg["top_n"],
                threshold=cfg["relevance_threshold"], n_negatives=cfg["n_negatives"],
                plan=plan, rating_range=rating_range)
    _emit(evaluation.format_table(reports, cfg["sparsity_levels"], cfg["top_n"]),
          cfg.get("report"))
    if "details" in cfg:
        Path(cfg["details"]).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg["details"]).write_text(evaluation.format_details(reports), encoding="utf-8")
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    if "checkpoint" in cfg and "test_ratings" in cfg:
        return _score_checkpoint(cfg)
    return _benchmark(cfg, [mode_from(cfg)])


def cmd_ablate(cfg) -> int:
    return _benchmark(cfg, list(AblationMode))


def cmd_gradcheck(cfg) -> int:
    result = gradcheck.run_gradcheck(seed=cfg.get("seed", 0), mode=mode_from(cfg),
                                     step=cfg["gradcheck.step"], tolerance=cfg["gradcheck.tol"])
    print("group,max_rel_error,status")
    for g in gradcheck.GROUPS:
        status = "ok" if g not in result.failed else "FAIL"
        print(f"{g},{result.errors[g]:.3e},{status}")
    if not result.ok:
        raise errors.GradCheckFailed(result.failed, result.errors)
    return EXIT_OK


def cmd_synth(cfg) -> int:
    out = Path(_require(cfg, "out_dir"))
    bundle, truth = data.synth_generate(synth_spec_from(cfg))
    paths = data.save_bundle(bundle, out)
    checkpoint.save_factors(truth, out / data.TRUTH_FILE)
    for p in [*paths.values(), out / data.TRUTH_FILE]:
        print(p)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck, "synth": cmd_synth}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, errors.ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, errors.DivergenceDetected):
        return EXIT_DIVERGENCE
    if isinstance(exc, errors.GradCheckFailed):
        return EXIT_GRADCHECK
    return EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dttf", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="config file (default: $DTTF_CONFIG)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (repeatable)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = {}
        config_path = args.config or os.environ.get("DTTF_CONFIG")
        if config_path:
            raw.update(read_config_file(config_path))
        for item in args.overrides:
            if "=" not in item:
                raise errors.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            raw[key.strip()] = value.strip()
        cfg = parse_config(raw)
        return COMMANDS[args.command](cfg)
    except (errors.DTTFError, OSError) as exc:
        code = _exit_code(exc)
        msg = " ".join(str(exc).split())
        print(f"dttf: error code={code} kind={type(exc).__name__}: {msg}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
