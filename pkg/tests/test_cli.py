import csv
import subprocess
import sys

import numpy as np
import pytest

from dttf import cli, cp, data
from dttf.checkpoint import load_checkpoint, load_factors

SMALL = ["synth.dims_s=10,12", "synth.dims_t=8,9", "synth.n_views=3", "synth.side_features=8"]
FAST = ["K=3", "hidden=6", "max_outer_iters=6", "lr_factors=0.002", "lr_net=0.002"]


def run(command, *sets, config=None):
    argv = [command]
    if config:
        argv += ["--config", str(config)]
    for s in sets:
        argv += ["--set", s]
    return cli.main(argv)


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "ds"
    assert run("synth", f"out_dir={out}", *SMALL) == 0
    return out


def test_synth_writes_files_deterministically(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("synth", f"out_dir={a}", *SMALL) == 0
    assert run("synth", f"out_dir={b}", *SMALL) == 0
    names = sorted(p.name for p in a.iterdir())
    assert len(names) == 7 and data.TRUTH_FILE in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    bundle = data.load_bundle(data.bundle_paths(a))
    truth = load_factors(a / data.TRUTH_FILE)
    assert bundle.tensor_s.dims == (10, 12, 3) and truth.K == 4
    assert cp.tensor_loss(truth, bundle.tensor_s, bundle.tensor_t) < bundle.tensor_s.nnz


def test_synth_default_spec(tmp_path):
    assert run("synth", f"out_dir={tmp_path / 'd'}") == 0
    assert len(list((tmp_path / "d").iterdir())) == 7


def test_train_writes_checkpoint_and_log(tmp_path, dataset, capsys):
    ckpt = tmp_path / "out" / "m.ckpt"
    assert run("train", f"data_dir={dataset}", f"checkpoint={ckpt}", *FAST) == 0
    assert "iters=6" in capsys.readouterr().out
    rows = list(csv.reader(open(str(ckpt) + ".loss.csv")))
    assert rows[0] == ["iter", "objective", "L_t", "L_r", "L_a", "reg"]
    assert len(rows) == 1 + 7
    state = load_checkpoint(ckpt)
    assert state.iter == 6 and state.factors.K == 3


def test_train_log_deterministic(tmp_path, dataset):
    logs = []
    for n in range(2):
        log = tmp_path / f"loss{n}.csv"
        assert run("train", f"data_dir={dataset}", f"checkpoint={tmp_path / f'm{n}'}",
                   f"loss_log={log}", *FAST) == 0
        logs.append(log.read_bytes())
    assert logs[0] == logs[1]
    assert (tmp_path / "m0").read_bytes() == (tmp_path / "m1").read_bytes()


def test_train_from_synth_config_file(tmp_path, monkeypatch):
    conf = tmp_path / "run.conf"
    conf.write_text("# synthetic run\ndata = synth\n" + "\n".join(
        s.replace("=", " = ") for s in SMALL + FAST) + f"\ncheckpoint = {tmp_path / 'm'}\n")
    monkeypatch.setenv("DTTF_CONFIG", str(conf))
    assert cli.main(["train", "--set", "max_outer_iters=2"]) == 0
    assert load_checkpoint(tmp_path / "m").iter == 2


def test_missing_key_named(tmp_path, dataset, capsys):
    (dataset / "ratings_source.csv").unlink()
    assert run("train", f"checkpoint={tmp_path / 'm'}", "K=3") == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "ratings_source" in err[0] and "code=2" in err[0]
    code = run("train", f"data_dir={dataset}", f"checkpoint={tmp_path / 'm'}")
    assert code == 3
    assert "ratings_source" in capsys.readouterr().err


@pytest.mark.parametrize("sets", [["bogus=1"], ["K=abc"], ["lam=-1"], ["mode=nope"]])
def test_config_errors(tmp_path, dataset, capsys, sets):
    code = run("train", f"data_dir={dataset}", f"checkpoint={tmp_path / 'm'}", *sets)
    assert code == 2
    assert capsys.readouterr().err.startswith("dttf: error code=2 kind=ConfigError")


def test_parse_error_reports_line(tmp_path, dataset, capsys):
    with open(dataset / "ratings_target.csv", "a") as fh:
        fh.write("oops\n")
    assert run("train", f"data_dir={dataset}", f"checkpoint={tmp_path / 'm'}", *FAST) == 3
    err = capsys.readouterr().err
    assert "kind=ParseError" in err and "line" in err


def test_divergence_exit_code(tmp_path, dataset, capsys):
    code = run("train", f"data_dir={dataset}", f"checkpoint={tmp_path / 'm'}", "K=3",
               "hidden=6", "lr_factors=10", "lr_net=10")
    assert code == 4
    assert "kind=DivergenceDetected" in capsys.readouterr().err


def test_evaluate_report_columns_and_determinism(tmp_path, dataset, capsys):
    reports = []
    for n in range(2):
        rep = tmp_path / f"r{n}.csv"
        assert run("evaluate", f"data_dir={dataset}", f"report={rep}", "n_folds=2",
                   "relevance_threshold=1.0", f"details={tmp_path / f'd{n}.csv'}", *FAST) == 0
        reports.append(rep.read_bytes())
    assert reports[0] == reports[1]
    header, row = reports[0].decode().splitlines()
    cols = header.split(",")
    for tag in ("60%", "80%", "95%"):
        assert f"rmse@{tag}" in cols and f"hr@10@{tag}" in cols and f"ndcg@10@{tag}" in cols
    assert row.startswith("full,")
    assert (tmp_path / "d0.csv").read_bytes() == (tmp_path / "d1.csv").read_bytes()


def test_evaluate_sparsity_levels_echoed(tmp_path, dataset, capsys):
    assert run("evaluate", f"data_dir={dataset}", "sparsity_levels=50,100", "n_folds=2",
               *FAST) == 0
    header = capsys.readouterr().out.splitlines()[0].split(",")
    assert header[1:] == ["rmse@50%", "rmse_std@50%", "hr@10@50%", "ndcg@10@50%",
                          "rmse@100%", "rmse_std@100%", "hr@10@100%", "ndcg@10@100%"]


def test_evaluate_checkpoint(tmp_path, dataset, capsys):
    ckpt = tmp_path / "m"
    assert run("train", f"data_dir={dataset}", f"checkpoint={ckpt}", *FAST) == 0
    capsys.readouterr()
    assert run("evaluate", f"data_dir={dataset}", f"checkpoint={ckpt}",
               f"test_ratings={dataset / 'ratings_target.csv'}", "clamp=true") == 0
    header, row = capsys.readouterr().out.splitlines()
    assert header == "rmse,hr@10,ndcg@10,n_test"
    assert float(row.split(",")[0]) >= 0


def test_ablate_all_modes(tmp_path, dataset, capsys):
    outs = []
    for _ in range(2):
        assert run("ablate", f"data_dir={dataset}", "n_folds=2", "sparsity_levels=0.95",
                   "relevance_threshold=1.0", *FAST) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    rows = outs[0].splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["full", "wotrans", "wosideinfo", "wotf"]


def test_gradcheck_passes(capsys):
    assert run("gradcheck") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "group,max_rel_error,status"
    groups = [l.split(",")[0] for l in lines[1:]]
    assert groups == ["U_s", "V_s", "U_t", "V_t", "C", "user-nets", "item-nets"]
    assert all(l.endswith(",ok") and float(l.split(",")[1]) <= 1e-5 for l in lines[1:])


def test_gradcheck_detects_sign_bug(monkeypatch, capsys):
    original = cp.grad_item_row

    def flipped(f, R, d, j, coupling=None, gamma=0.0, lam=0.0):
        g = original(f, R, d, j, coupling, gamma, lam)
        if coupling is not None:
            g = g - 2 * gamma * (f.items(d)[j] - coupling)
        return g

    monkeypatch.setattr(cp, "grad_item_row", flipped)
    assert run("gradcheck") == 5
    captured = capsys.readouterr()
    failed = [l.split(",")[0] for l in captured.out.splitlines() if l.endswith("FAIL")]
    assert set(failed) == {"V_s", "V_t"}
    assert "kind=GradCheckFailed" in captured.err and "V_s" in captured.err


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "dttf.cli", "synth", "--set",
                          f"out_dir={tmp_path}", *sum((["--set", s] for s in SMALL), [])],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert len(res.stdout.splitlines()) == 7


def test_config_parsing_units():
    cfg = cli.parse_config({"hidden": "16, 8", "sparsity_levels": "60%,0.8",
                            "synth.observed_fraction_t": "none", "clamp": "yes"})
    assert cfg["hidden"] == (16, 8)
    assert cfg["sparsity_levels"] == (0.6, 0.8)
    assert cfg["synth.observed_fraction_t"] is None and cfg["clamp"] is True
    assert cli.hyperparams_from(cfg).hidden == (16, 8)
    assert np.isclose(cli.parse_config({})["relevance_threshold"], 4.0)
