import csv
import json

import numpy as np
import pytest

from bintreegp import cli


def write_dataset(path, n=80, d=2, seed=0, skewed=False):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    if skewed:
        X = np.exp(6 * X)  # heavy right tail per dimension
    y = np.sin(3 * X[:, 0] / X[:, 0].max()) + rng.normal(0, 0.05, n)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(d)] + ["y"])
        writer.writerows(np.column_stack([X, y]).tolist())
    return X, y


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr().out
    return code, out


def last_json(out):
    return json.loads(out.strip().splitlines()[-1])


def test_train_and_eval_json_records(tmp_path, capsys):
    data = tmp_path / "data.csv"
    model = tmp_path / "model.npz"
    write_dataset(data)
    code, out = run(capsys, "train", "--data", str(data), "--out", str(model),
                    "--precision", "4", "--max-iters", "30", "--json")
    assert code == 0
    rec = last_json(out)
    assert rec["command"] == "train"
    assert rec["n"] == 80 and rec["d"] == 2 and rec["q"] == 8
    assert np.isfinite(rec["train_nll"])

    code, out = run(capsys, "eval", "--model", str(model), "--data",
                    str(data), "--json")
    assert code == 0
    ev = last_json(out)
    assert np.isfinite(ev["nll"]) and ev["rmse"] >= 0
    # Same code path as training: the joint NLL of the training file equals
    # the reported per-point training NLL.
    assert abs(ev["joint_nll_per_point"] - rec["train_nll_per_point"]) < 1e-9


def test_predict_writes_mu_sigma_flags(tmp_path, capsys):
    data = tmp_path / "data.csv"
    model = tmp_path / "model.npz"
    preds = tmp_path / "preds.csv"
    X, _ = write_dataset(data, n=40)
    run(capsys, "train", "--data", str(data), "--out", str(model),
        "--precision", "3", "--max-iters", "10", "--json")

    # shift half the rows outside the training box
    test = tmp_path / "test.csv"
    X_test = X[:10].copy()
    X_test[:5] += 100.0
    with open(test, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x0", "x1"])
        writer.writerows(X_test.tolist())

    code, _ = run(capsys, "predict", "--model", str(model), "--data",
                  str(test), "--out", str(preds))
    assert code == 0
    with open(preds) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    assert [r["out_of_box"] for r in rows[:5]] == ["true"] * 5
    assert [r["out_of_box"] for r in rows[5:]] == ["false"] * 5
    assert all(float(r["sigma2"]) > 0 for r in rows)


def test_predict_empty_file(tmp_path, capsys):
    data = tmp_path / "data.csv"
    model = tmp_path / "model.npz"
    write_dataset(data, n=20)
    run(capsys, "train", "--data", str(data), "--out", str(model),
        "--precision", "2", "--max-iters", "5", "--json")
    empty = tmp_path / "empty.csv"
    empty.write_text("x0,x1\n")
    preds = tmp_path / "preds.csv"
    code, _ = run(capsys, "predict", "--model", str(model), "--data",
                  str(empty), "--out", str(preds))
    assert code == 0
    with open(preds) as fh:
        assert len(list(csv.DictReader(fh))) == 0


def test_predict_interpolates_training_file_at_tiny_lambda(tmp_path, capsys):
    data = tmp_path / "data.csv"
    model = tmp_path / "model.npz"
    preds = tmp_path / "preds.csv"
    rng = np.random.default_rng(1)
    X = np.arange(32.0)[:, None] / 32.0  # unique bit strings at p = 5
    y = rng.normal(size=32)
    with open(data, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x0", "y"])
        writer.writerows(np.column_stack([X, y]).tolist())
    run(capsys, "train", "--data", str(data), "--out", str(model),
        "--precision", "5", "--lambda", "1e-8", "--max-iters", "10", "--json")
    code, _ = run(capsys, "predict", "--model", str(model), "--data",
                  str(data), "--out", str(preds))
    assert code == 0
    with open(preds) as fh:
        mu = np.array([float(r["mu"]) for r in csv.DictReader(fh)])
    assert np.max(np.abs(mu - y)) < 1e-4


def test_train_usage_errors(tmp_path, capsys):
    data = tmp_path / "data.csv"
    write_dataset(data, n=10)
    model = tmp_path / "m.npz"
    code, _ = run(capsys, "train", "--data", str(data), "--out", str(model),
                  "--precision", "0")
    assert code == 1
    code, _ = run(capsys, "train", "--data", str(data), "--out", str(model),
                  "--lambda", "-1")
    assert code == 1
    code, _ = run(capsys, "nonsense")
    assert code == 1


def test_data_errors(tmp_path, capsys):
    missing = tmp_path / "missing.csv"
    model = tmp_path / "m.npz"
    code, _ = run(capsys, "train", "--data", str(missing), "--out",
                  str(model))
    assert code == 2

    bad = tmp_path / "bad.csv"
    bad.write_text("x0,y\n1.0,2.0\n1.0,oops\n")
    code, _ = run(capsys, "train", "--data", str(bad), "--out", str(model))
    assert code == 2

    nonfinite = tmp_path / "nf.csv"
    nonfinite.write_text("x0,y\n1.0,2.0\nnan,3.0\n")
    code, _ = run(capsys, "train", "--data", str(nonfinite), "--out",
                  str(model))
    assert code == 2

    notmodel = tmp_path / "x.npz"
    np.savez(notmodel, a=np.zeros(2))
    data = tmp_path / "d.csv"
    write_dataset(data, n=10)
    code, _ = run(capsys, "eval", "--model", str(notmodel), "--data",
                  str(data))
    assert code == 2


def test_train_is_deterministic_given_seed(tmp_path, capsys):
    data = tmp_path / "data.csv"
    write_dataset(data, n=40)
    outs = []
    for name in ("a.npz", "b.npz"):
        model = tmp_path / name
        _, out = run(capsys, "train", "--data", str(data), "--out",
                     str(model), "--precision", "3", "--max-iters", "15",
                     "--seed", "7", "--json")
        outs.append(last_json(out)["train_nll"])
    assert outs[0] == outs[1]


def test_train_split_holdout(tmp_path, capsys):
    data = tmp_path / "data.csv"
    heldout = tmp_path / "heldout.csv"
    model = tmp_path / "m.npz"
    write_dataset(data, n=50)
    code, out = run(capsys, "train", "--data", str(data), "--out", str(model),
                    "--precision", "3", "--max-iters", "10", "--split", "0.8",
                    "--test-out", str(heldout), "--json")
    assert code == 0
    assert last_json(out)["n"] == 40
    with open(heldout) as fh:
        assert len(list(csv.DictReader(fh))) == 10
    code, _ = run(capsys, "eval", "--model", str(model), "--data",
                  str(heldout), "--json")
    assert code == 0


def test_ensemble_train_and_eval(tmp_path, capsys):
    data = tmp_path / "data.csv"
    model = tmp_path / "ens.npz"
    write_dataset(data, n=40)
    code, out = run(capsys, "train", "--data", str(data), "--out", str(model),
                    "--precision", "3", "--ensemble", "3", "--inits", "12",
                    "--max-iters", "10", "--json")
    assert code == 0
    assert last_json(out)["members"] == 3
    code, out = run(capsys, "eval", "--model", str(model), "--data",
                    str(data), "--json")
    assert code == 0
    assert np.isfinite(last_json(out)["nll"])


def test_predict_joint_rescale_covers_out_of_box(tmp_path, capsys):
    data = tmp_path / "data.csv"
    model = tmp_path / "m.npz"
    preds = tmp_path / "p.csv"
    X, _ = write_dataset(data, n=40)
    run(capsys, "train", "--data", str(data), "--out", str(model),
        "--precision", "3", "--max-iters", "10", "--json")
    test = tmp_path / "t.csv"
    with open(test, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x0", "x1"])
        writer.writerows((X[:5] + 2.0).tolist())
    code, _ = run(capsys, "predict", "--model", str(model), "--data",
                  str(test), "--out", str(preds), "--out-of-box",
                  "joint-rescale")
    assert code == 0
    with open(preds) as fh:
        rows = list(csv.DictReader(fh))
    # the refit box covers the new points, so none are flagged
    assert all(r["out_of_box"] == "false" for r in rows)


def test_eda_clean_data_no_advisory(tmp_path, capsys):
    data = tmp_path / "data.csv"
    write_dataset(data, n=60, seed=4)
    code, out = run(capsys, "eda", "--data", str(data), "--precision", "8",
                    "--json")
    assert code == 0
    rec = last_json(out)
    assert rec["levels"][0]["pct_unique_rows"] == 100.0
    assert rec["levels"][0]["pct_unique_bitstrings"] == 100.0
    assert rec["advisory"] is False


def test_eda_advisory_and_ecdf_improvement(tmp_path, capsys):
    data = tmp_path / "skewed.csv"
    write_dataset(data, n=200, seed=5, skewed=True)
    code, out = run(capsys, "eda", "--data", str(data), "--precision", "3",
                    "--json")
    assert code == 0
    plain = last_json(out)
    assert plain["advisory"] is True

    code, out = run(capsys, "eda", "--data", str(data), "--precision", "3",
                    "--ecdf", "--json")
    assert code == 0
    with_ecdf = last_json(out)
    assert (with_ecdf["levels"][0]["pct_unique_bitstrings"]
            > plain["levels"][0]["pct_unique_bitstrings"])


def test_bench_reports_slopes(tmp_path, capsys):
    code, out = run(capsys, "bench", "--sizes", "256", "512", "1024",
                    "--dims", "2", "--precision", "3", "--reps", "1",
                    "--json")
    assert code == 0
    rec = last_json(out)
    assert set(rec["loglog_slopes"]) == {"encode", "nll", "grad", "predict"}
    assert set(rec["q_doubling_ratios"]) == {"nll", "grad"}
    assert len(rec["timings"]) == 3
