"""``ctow`` command line: run, diversity, train, predict.

Exit codes: 0 success, 1 user error (bad flags, bad data, bad model file),
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .cotrain import METHODS, CTOWClassifier, _split_arrays, bootstrap_with_all_classes
from .data import UNLABELED, load_csv, stratified_split
from .exceptions import CorruptBundle, CtowError, IncompatibleModel
from .metrics import accuracy, contingency, cross_validate, reports_to_csv, rho

log = logging.getLogger("ctow")

BUNDLE_FORMAT = "ctow-bundle/1"

# flag name -> CTOWClassifier parameter
HYPER_FLAGS = {
    "k": "k_learners",
    "beta": "beta",
    "alpha": "alpha",
    "mu": "mu",
    "inner_iters": "t_inner",
    "max_rounds": "max_rounds",
    "bootstrap_frac": "bootstrap_fraction",
    "normalize_loo": "normalize_loo",
}

RUN_DEFAULTS = {
    "label_rate": [0.1],
    "folds": 5,
    "seed": [0],
    "method": ["ctow"],
}


@dataclass
class RunManifest:
    """Everything needed to repeat a run."""

    command: str
    config: dict
    dataset: dict
    seed: list
    version: str = __version__

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _names(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_hyper_flags(p):
    p.add_argument("--k", type=int, help="ensemble size K (default 4)")
    p.add_argument("--beta", type=float, help="pseudo-label confidence threshold (default 0.75)")
    p.add_argument("--alpha", type=float, help="margin-density threshold (default 0.2)")
    p.add_argument("--mu", type=float, help="weight regularizer (default 0.5)")
    p.add_argument("--inner-iters", type=int, help="weight-solver iterations T (default 10)")
    p.add_argument("--max-rounds", type=int, help="co-training round cap (default 20)")
    p.add_argument("--bootstrap-frac", type=float, help="unlabeled subset share (default 0.8)")
    p.add_argument("--normalize-loo", action="store_const", const=True,
                   help="rescale leave-one-out votes before thresholding")
    p.add_argument("--config", type=Path, help="JSON file of default option values")


def build_parser():
    parser = argparse.ArgumentParser(prog="ctow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ctow {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="cross-validate one or more methods")
    run.add_argument("--data", type=Path, required=True)
    run.add_argument("--label-col", required=True)
    run.add_argument("--label-rate", type=_floats, help="comma list, default 0.1")
    run.add_argument("--folds", type=int, help="default 5")
    run.add_argument("--seed", type=_ints, help="comma list, default 0")
    run.add_argument("--method", type=_names, help=f"comma list of {', '.join(METHODS)}")
    run.add_argument("--out", type=Path, required=True, help="report JSON; CSV goes next to it")
    _add_hyper_flags(run)

    div = sub.add_parser("diversity", help="pairwise correlation of learner correctness")
    div.add_argument("--data", type=Path, required=True)
    div.add_argument("--label-col", required=True)
    div.add_argument("--label-rate", type=float)
    div.add_argument("--folds", type=int)
    div.add_argument("--fold-index", type=int, default=0)
    div.add_argument("--seed", type=int)
    div.add_argument("--identical-pair", action="store_true",
                     help="give both tree learners the same bootstrap")
    div.add_argument("--out", type=Path, required=True)
    _add_hyper_flags(div)

    train = sub.add_parser("train", help="fit on a CSV whose empty label cells mark unlabeled rows")
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--label-col", required=True)
    train.add_argument("--seed", type=int)
    train.add_argument("--out", type=Path, required=True, help="model bundle JSON")
    _add_hyper_flags(train)

    pred = sub.add_parser("predict", help="label rows with a saved model")
    pred.add_argument("--model", type=Path, required=True)
    pred.add_argument("--data", type=Path, required=True)
    pred.add_argument("--label-col", help="column to ignore if the file carries labels")
    pred.add_argument("--out", type=Path, required=True, help="predictions CSV")
    return parser


def resolve_options(args, defaults):
    """Merge built-in defaults < config file < explicit flags."""
    opts = dict(defaults)
    opts.update({k: v for k, v in CTOWClassifier().get_params().items()})
    if getattr(args, "config", None):
        try:
            file_opts = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CtowError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_opts, dict):
            raise CtowError("config file must hold a JSON object")
        for key, value in file_opts.items():
            key = key.replace("-", "_")
            opts[HYPER_FLAGS.get(key, key)] = value
    for key, value in vars(args).items():
        if value is None or key in ("config", "command", "verbose", "out", "data", "model"):
            continue
        opts[HYPER_FLAGS.get(key, key)] = value
    for key in ("label_rate", "seed", "method"):
        if isinstance(defaults.get(key), list) and not isinstance(opts[key], list):
            opts[key] = [opts[key]]
    return opts


def ctow_params(opts):
    names = CTOWClassifier().get_params()
    unknown = set(opts) - set(names) - set(RUN_DEFAULTS) - {"label_col", "fold_index",
                                                            "identical_pair"}
    if unknown:
        raise CtowError(f"unknown option(s): {', '.join(sorted(unknown))}")
    return {k: opts[k] for k in names}


def cmd_run(args):
    opts = resolve_options(args, RUN_DEFAULTS)
    params = ctow_params(opts)
    for m in opts["method"]:
        if m not in METHODS:
            raise CtowError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    ds = load_csv(args.data, args.label_col)
    if not ds.fully_labeled:
        raise CtowError("run needs every row labeled; use train for partially labeled data")
    n_jobs = int(os.environ.get("CTOW_THREADS", "1"))

    reports = []
    for rate in opts["label_rate"]:
        for method in opts["method"]:
            for seed in opts["seed"]:
                log.info("label_rate=%s method=%s seed=%s", rate, method, seed)
                reports.append(cross_validate(ds, params, opts["folds"], rate, seed, method, n_jobs))

    params.pop("random_state")
    manifest = RunManifest(
        command="run",
        config={**params, "label_col": args.label_col, "label_rate": opts["label_rate"],
                "folds": opts["folds"], "method": opts["method"]},
        dataset={"name": args.data.name, **ds.fingerprint()},
        seed=opts["seed"],
    )
    summary = {}
    for r in reports:
        summary.setdefault(str(r.label_rate), {}).setdefault(r.method, []).append(r.mean)
    summary = {rate: {m: float(np.mean(v)) for m, v in by_m.items()} for rate, by_m in summary.items()}
    report = {
        "manifest": manifest.to_dict(),
        "results": [r.to_dict() for r in reports],
        "summary": summary,
    }
    write_atomic(args.out, dump_json(report))
    write_atomic(args.out.with_suffix(".csv"), reports_to_csv(reports, args.data.stem))
    print(dump_json(manifest.to_dict()), end="")
    for r in reports:
        print(f"{r.method:10s} rate={r.label_rate:<5g} seed={r.seed:<4d} "
              f"mean={r.mean:.4f} std={r.std:.4f}")
    return 0


def cmd_diversity(args):
    opts = resolve_options(args, {"label_rate": 0.1, "folds": 5, "seed": 0})
    params = ctow_params(opts)
    ds = load_csv(args.data, args.label_col)
    split = stratified_split(ds, opts["label_rate"], opts["folds"], args.fold_index, opts["seed"])
    X_train, y_train = _split_arrays(ds, split)
    lab = y_train != UNLABELED
    X_lab, y_lab = X_train[lab], y_train[lab]
    est = CTOWClassifier(**params)
    C = ds.class_count

    trees = []
    for k in (0, 0 if args.identical_pair else 1):
        idx = bootstrap_with_all_classes(y_lab, C, np.random.default_rng([opts["seed"], 0, k]))
        trees.append(est._new_gbdt(C).fit(X_lab[idx], y_lab[idx]))
    svm = est._new_tsvm(C).fit(X_train, y_train)

    X_test, y_test = ds.features[split.test_ids], ds.labels[split.test_ids]
    pa, pb, ps = (m.predict(X_test) for m in (*trees, svm))
    t_tt = contingency(pa, pb, y_test)
    t_sx = contingency(ps, pa, y_test)
    out = {
        "protocol": "learners fit on one CV fold's labeled (and, for the SVM, unlabeled) rows; "
                    "correctness measured on that fold's test rows",
        "fold_index": args.fold_index,
        "rho_TT": rho(t_tt),
        "rho_SX": rho(t_sx),
        "xi_hat": svm.margin_density_,
        "contingency": {"TT": asdict(t_tt), "SX": asdict(t_sx)},
        "accuracy": {
            "gbdt_a": accuracy(pa, y_test),
            "gbdt_b": accuracy(pb, y_test),
            "tsvm": accuracy(ps, y_test),
        },
        "manifest": RunManifest(
            command="diversity",
            config={**{k: v for k, v in params.items() if k != "random_state"},
                    "label_rate": opts["label_rate"], "folds": opts["folds"],
                    "identical_pair": args.identical_pair},
            dataset={"name": args.data.name, **ds.fingerprint()},
            seed=[opts["seed"]],
        ).to_dict(),
    }
    write_atomic(args.out, dump_json(out))
    print(dump_json({k: out[k] for k in ("rho_TT", "rho_SX", "xi_hat", "accuracy")}), end="")
    return 0


def cmd_train(args):
    opts = resolve_options(args, {"seed": 0})
    opts["random_state"] = opts.pop("seed")
    params = ctow_params(opts)
    ds = load_csv(args.data, args.label_col)
    model = CTOWClassifier(**params).fit(ds.features, ds.labels)
    bundle = {
        "format": BUNDLE_FORMAT,
        "manifest": RunManifest(
            command="train",
            config={k: v for k, v in params.items() if k != "random_state"},
            dataset={"name": args.data.name, **ds.fingerprint()},
            seed=[params["random_state"]],
        ).to_dict(),
        "class_names": list(ds.class_names),
        "feature_names": list(ds.feature_names),
        "label_col": args.label_col,
        "model": model.to_dict(),
    }
    write_atomic(args.out, dump_json(bundle))
    print(f"trained {len(model.learners_)} learners in {model.rounds_run_} rounds; "
          f"weights {np.round(model.weights_.w, 4).tolist()}")
    return 0


def load_bundle(path):
    try:
        bundle = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptBundle(f"{path}: not JSON ({exc})") from exc
    if not isinstance(bundle, dict) or bundle.get("format") != BUNDLE_FORMAT:
        raise CorruptBundle(f"{path}: not a {BUNDLE_FORMAT} model bundle")
    try:
        model = CTOWClassifier.from_dict(bundle["model"])
        class_names = list(bundle["class_names"])
    except KeyError as exc:
        raise CorruptBundle(f"{path}: missing {exc}") from exc
    return bundle, model, class_names


def cmd_predict(args):
    bundle, model, class_names = load_bundle(args.model)
    ds = load_csv(args.data, args.label_col)
    if ds.n_features != model.n_features_in_:
        raise IncompatibleModel(
            f"{args.data} has {ds.n_features} feature columns, model expects {model.n_features_in_}"
        )
    proba = model.predict_proba(ds.features)
    pred = model.classes_[np.argmax(proba, axis=1)]
    lines = [",".join(["row_id", "label"] + [f"p_{c}" for c in class_names])]
    for i, (k, row) in enumerate(zip(pred, proba)):
        lines.append(",".join([str(i), class_names[k]] + [repr(float(v)) for v in row]))
    write_atomic(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(pred)} predictions to {args.out}")
    return 0


COMMANDS = {"run": cmd_run, "diversity": cmd_diversity, "train": cmd_train, "predict": cmd_predict}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CtowError, ValueError, OSError) as exc:
        print(f"ctow {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"ctow {args.command}: internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
