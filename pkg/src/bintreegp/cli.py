"""Command-line front end: train / predict / eval / eda / bench.

Datasets are CSV files with a header row; the target column is selected by
name (default: last column). Models are saved as NPZ containers (see
model_io). Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import gp, model_io
from .encoding import (
    build_partitions,
    default_precision,
    encode,
    fit_encoding,
    uniqueness_stats,
)
from .sros import IndefiniteOperatorError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_csv(path, target=None, require_target=True):
    """Read a CSV with header. Returns (X, y, feature_names, target_name);
    y and target_name are None when require_target is False and the target
    column is absent."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    if target is None and require_target:
        target = header[-1]
    if target is not None and target not in header:
        if require_target:
            raise DataError(f"{path}: target column {target!r} not found")
        target = None
    t_idx = header.index(target) if target is not None else None

    n_cols = len(header)
    data = np.empty((len(rows), n_cols))
    for i, row in enumerate(rows):
        if len(row) != n_cols:
            raise DataError(f"{path}: row {i + 1} has {len(row)} cells, "
                            f"expected {n_cols}")
        try:
            data[i] = [float(cell) for cell in row]
        except ValueError:
            raise DataError(f"{path}: row {i + 1} has a non-numeric cell"
                            ) from None
    bad = np.where(~np.isfinite(data).all(axis=1))[0]
    if bad.size:
        raise DataError(f"{path}: row {bad[0] + 1} has a non-finite value")

    if t_idx is None:
        return data, None, header, None
    feat_idx = [j for j in range(n_cols) if j != t_idx]
    return data[:, feat_idx], data[:, t_idx], [header[j] for j in feat_idx], \
        target


def _split(X, y, ratio, seed):
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    perm = rng.permutation(n)
    n_train = max(2, int(round(ratio * n)))
    tr, te = perm[:n_train], perm[n_train:]
    return (X[tr], y[tr]), (X[te], y[te])


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _emit(record, as_json):
    if as_json:
        print(json.dumps(record))
    else:
        for key, value in record.items():
            print(f"{key}: {value}")


def _check_common(args):
    if getattr(args, "precision", None) is not None and args.precision < 1:
        raise UsageError("--precision must be a positive integer")
    if getattr(args, "noise", None) is not None and args.noise <= 0:
        raise UsageError("--lambda must be positive")


def cmd_train(args):
    _check_common(args)
    X, y, _, target = load_csv(args.data, args.target)
    if X.shape[0] < 2:
        raise DataError("need at least 2 training rows")

    if args.split is not None:
        if not 0.0 < args.split < 1.0:
            raise UsageError("--split must be in (0, 1)")
        (X, y), (X_test, y_test) = _split(X, y, args.split, args.seed)
        if args.test_out:
            header = [f"x{j}" for j in range(X_test.shape[1])] + [target]
            _write_csv(args.test_out, header,
                       np.column_stack([X_test, y_test]).tolist())

    t0 = time.perf_counter()
    encoding = fit_encoding(X, precision=args.precision,
                            use_ecdf=args.ecdf)
    bits, _ = encode(X, encoding)
    t_encode = time.perf_counter() - t0

    t0 = time.perf_counter()
    if args.ensemble > 0:
        n_bit_orders = max(1, round(args.inits / 3))
        model = gp.train_ensemble(
            bits, y,
            noise=args.noise,
            n_bit_orders=n_bit_orders,
            n_members=args.ensemble,
            temperature=args.temperature,
            seed=args.seed,
            max_iter=args.max_iters,
            encoding=encoding,
        )
        train_nll = float(np.min([m.train_nll for m in model.members]))
        n_members = len(model.members)
    else:
        model = gp.train(bits, y, noise=args.noise, max_iter=args.max_iters,
                         encoding=encoding, jitter_seed=args.seed)
        train_nll = model.train_nll
        n_members = 1
    t_train = time.perf_counter() - t0

    model_io.save_model(args.out, model, X_train=X, y_train=y)
    _emit(
        {
            "command": "train",
            "n": int(X.shape[0]),
            "d": int(X.shape[1]),
            "precision": encoding.precision,
            "q": encoding.n_bits,
            "members": n_members,
            "train_nll": train_nll,
            "train_nll_per_point": train_nll / X.shape[0],
            "encode_seconds": round(t_encode, 4),
            "train_seconds": round(t_train, 4),
            "model": args.out,
        },
        args.json,
    )
    return EXIT_OK


def _joint_rescale(model, extras, X_test):
    """Refit the bounding box over train and test extents and rebuild the
    model caches (hyperparameters unchanged)."""
    if "X_train" not in extras or "y_train" not in extras:
        raise DataError("model file lacks raw training data; cannot "
                        "joint-rescale")
    X_train = extras["X_train"]
    y_train = extras["y_train"]
    old_enc = model.encoding
    encoding = fit_encoding(
        np.vstack([X_train, X_test]),
        precision=old_enc.precision,
        use_ecdf=old_enc.ecdf_knots is not None,
    )
    bits, _ = encode(X_train, encoding)

    def rebuild(member):
        ys = (y_train - member.y_mean) / member.y_std
        P, _ = build_partitions(bits[:, member.params.bit_order])
        res = gp.marginal_nll(P, member.params.w, member.params.noise, ys)
        return gp.TrainedModel(
            params=member.params, train_bits=bits, P=P, z=res.z,
            Cinv=res.Cinv, Uinv=res.Uinv, logdet=res.logdet,
            train_nll=res.nll, y_mean=member.y_mean, y_std=member.y_std,
            encoding=encoding,
        )

    if isinstance(model, gp.EnsembleModel):
        return gp.EnsembleModel(
            members=[rebuild(m) for m in model.members],
            weights=model.weights,
            temperature=model.temperature,
            encoding=encoding,
        ), encoding
    return rebuild(model), encoding


def _predict_with(model, encoding, X):
    bits, oob = encode(X, encoding)
    if isinstance(model, gp.EnsembleModel):
        return gp.ensemble_predict(model, bits, oob)
    return gp.predict(model, bits, oob)


def cmd_predict(args):
    model, extras = model_io.load_model(args.model)
    encoding = model.encoding
    X, _, _, _ = load_csv(args.data, target=None, require_target=False)
    if X.shape[1] == encoding.n_dims + 1:
        # Labeled file: drop the trailing target column.
        X = X[:, :-1]
    if X.shape[1] != encoding.n_dims:
        raise DataError(
            f"model expects {encoding.n_dims} feature columns, file has "
            f"{X.shape[1]}"
        )
    if args.out_of_box == "joint-rescale" and X.shape[0]:
        model, encoding = _joint_rescale(model, extras, X)

    out = _predict_with(model, encoding, X)
    rows = [
        [repr(float(mu)), repr(float(s2)), str(bool(flag)).lower()]
        for mu, s2, flag in zip(out.mean, out.var, out.out_of_box)
    ]
    _write_csv(args.out, ["mu", "sigma2", "out_of_box"], rows)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    model, _ = model_io.load_model(args.model)
    encoding = model.encoding
    X, y, _, _ = load_csv(args.data, args.target)

    t0 = time.perf_counter()
    out = _predict_with(model, encoding, X)
    t_predict = time.perf_counter() - t0

    if isinstance(model, gp.EnsembleModel):
        per_point_nll = out.nll_of(y)
        first = model.members[0]
    else:
        ys = (y - model.y_mean) / model.y_std
        per_point_nll = gp.gaussian_nll(ys, out.mean_std, out.var_std)
        first = model

    ys = (y - first.y_mean) / first.y_std
    rmse_std = float(np.sqrt(np.mean((ys - out.mean_std) ** 2)))
    rmse_orig = float(np.sqrt(np.mean((y - out.mean) ** 2)))

    # Same code path as training: joint Gaussian NLL of this dataset under
    # the model hyperparameters (equals train_nll/n on the training file).
    members = model.members if isinstance(model, gp.EnsembleModel) else [model]
    bits, _ = encode(X, encoding)
    joint_nlls = []
    for member in members:
        P, _ = build_partitions(bits[:, member.params.bit_order])
        joint_nlls.append(
            gp.marginal_nll(P, member.params.w, member.params.noise,
                            ys).nll / X.shape[0]
        )

    _emit(
        {
            "command": "eval",
            "n": int(X.shape[0]),
            "nll": float(np.mean(per_point_nll)),
            "rmse_std": rmse_std,
            "rmse": rmse_orig,
            "joint_nll_per_point": float(np.min(joint_nlls)),
            "predict_seconds": round(t_predict, 4),
        },
        args.json,
    )
    return EXIT_OK


def cmd_eda(args):
    _check_common(args)
    X, y, _, _ = load_csv(args.data, args.target, require_target=False)
    d = X.shape[1]
    precisions = args.precisions or [default_precision(d)]

    records = []
    advisory = False
    for p in precisions:
        encoding = fit_encoding(X, precision=p, use_ecdf=args.ecdf)
        bits, _ = encode(X, encoding)
        pct_rows, pct_bits = uniqueness_stats(X, bits)
        gap = pct_rows - pct_bits
        records.append(
            {
                "precision": p,
                "pct_unique_rows": round(pct_rows, 3),
                "pct_unique_bitstrings": round(pct_bits, 3),
                "gap": round(gap, 3),
            }
        )
        advisory = advisory or gap > args.gap_threshold

    record = {
        "command": "eda",
        "n": int(X.shape[0]),
        "d": d,
        "ecdf": bool(args.ecdf),
        "levels": records,
        "advisory": advisory,
    }
    _emit(record, args.json)
    if advisory and not args.json:
        print(
            "advisory: bit strings collapse many distinct rows; consider "
            "raising --precision"
            + ("" if args.ecdf else " or enabling --ecdf")
        )
    return EXIT_OK


def _bench_phase_times(n, d, p, seed, reps):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    y = np.sin(3 * X[:, 0]) + rng.normal(0, 0.1, n)
    m = max(1, n // 8)
    X_test = rng.uniform(size=(m, d))
    q = d * p

    def timed(fn):
        best = np.inf
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    encoding = fit_encoding(X, precision=p)
    bits, _ = encode(X, encoding)
    t_encode = timed(lambda: build_partitions(encode(X, encoding)[0]))
    P, _ = build_partitions(bits)

    w = np.full(q, 1.0 / q)
    noise = 1.0 / n
    ys = (y - y.mean()) / (y.std() or 1.0)
    t_nll = timed(lambda: gp.marginal_nll(P, w, noise, ys))
    res = gp.marginal_nll(P, w, noise, ys)
    t_grad = timed(lambda: gp.nll_grad_w(P, noise, res))

    model = gp.TrainedModel(
        params=gp.params_from_phi(
            gp.phi_from_order_and_weights(np.arange(q), w), noise
        ),
        train_bits=bits, P=P, z=res.z, Cinv=res.Cinv, Uinv=res.Uinv,
        logdet=res.logdet, train_nll=res.nll, encoding=encoding,
    )
    bits_test, oob = encode(X_test, encoding)
    t_predict = timed(lambda: gp.predict(model, bits_test, oob))
    return {
        "encode": t_encode,
        "nll": t_nll,
        "grad": t_grad,
        "predict": t_predict,
    }


def _loglog_slope(ns, ts):
    x = np.log(np.asarray(ns, dtype=float))
    z = np.log(np.asarray(ts, dtype=float))
    slope, _ = np.polyfit(x, z, 1)
    return float(slope)


def cmd_bench(args):
    _check_common(args)
    sizes = args.sizes or [2**k for k in range(10, 17)]
    rows = []
    for n in sizes:
        times = _bench_phase_times(n, args.dims, args.precision, args.seed,
                                   args.reps)
        rows.append({"n": n, **{k: round(v, 6) for k, v in times.items()}})

    phases = ["encode", "nll", "grad", "predict"]
    slopes = {
        phase: round(_loglog_slope([r["n"] for r in rows],
                                   [max(r[phase], 1e-7) for r in rows]), 3)
        for phase in phases
    }

    # q scaling at fixed n: double the precision, compare nll/grad times.
    n_q = sizes[len(sizes) // 2]
    base = _bench_phase_times(n_q, args.dims, args.precision, args.seed,
                              args.reps)
    doubled = _bench_phase_times(n_q, args.dims, 2 * args.precision,
                                 args.seed, args.reps)
    q_ratios = {
        phase: round(doubled[phase] / max(base[phase], 1e-9), 3)
        for phase in ("nll", "grad")
    }

    record = {
        "command": "bench",
        "dims": args.dims,
        "precision": args.precision,
        "timings": rows,
        "loglog_slopes": slopes,
        "q_doubling_ratios": q_ratios,
    }
    _emit(record, args.json)
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="bintreegp",
                     description="Binary tree kernel GP regression")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--json", action="store_true",
                       help="machine-readable single-record output")

    p_train = sub.add_parser("train", help="fit a model on a CSV dataset")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--target", default=None,
                         help="target column name (default: last column)")
    p_train.add_argument("--out", required=True, help="model file path")
    p_train.add_argument("--precision", type=int, default=None)
    p_train.add_argument("--lambda", dest="noise", type=float, default=None,
                         help="observation-noise variance (default 1/n)")
    p_train.add_argument("--ecdf", action="store_true")
    p_train.add_argument("--ensemble", type=int, default=0,
                         help="number of ensemble members (0 = single model)")
    p_train.add_argument("--inits", type=int, default=480,
                         help="total ensemble initializations")
    p_train.add_argument("--temperature", type=float, default=0.01)
    p_train.add_argument("--max-iters", type=int, default=200)
    p_train.add_argument("--split", type=float, default=None,
                         help="train fraction; rest is held out")
    p_train.add_argument("--test-out", default=None,
                         help="write the held-out split to this CSV")
    common(p_train)

    p_pred = sub.add_parser("predict", help="predict mu/sigma2 for a CSV")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--out-of-box", choices=["zero", "joint-rescale"],
                        default="zero")
    common(p_pred)

    p_eval = sub.add_parser("eval", help="NLL/RMSE metrics on labeled data")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--target", default=None)
    common(p_eval)

    p_eda = sub.add_parser("eda", help="bit-string uniqueness report")
    p_eda.add_argument("--data", required=True)
    p_eda.add_argument("--target", default=None)
    p_eda.add_argument("--precision", dest="precisions", type=int,
                       action="append", default=None,
                       help="candidate precision (repeatable)")
    p_eda.add_argument("--ecdf", action="store_true")
    p_eda.add_argument("--gap-threshold", type=float, default=5.0)
    common(p_eda)

    p_bench = sub.add_parser("bench", help="timing trends on synthetic data")
    p_bench.add_argument("--sizes", type=int, nargs="+", default=None)
    p_bench.add_argument("--dims", type=int, default=2)
    p_bench.add_argument("--precision", type=int, default=4)
    p_bench.add_argument("--reps", type=int, default=3)
    common(p_bench)

    return parser


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "eda": cmd_eda,
    "bench": cmd_bench,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, model_io.ModelFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (IndefiniteOperatorError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
