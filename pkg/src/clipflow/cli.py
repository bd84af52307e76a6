"""Command-line entry point: ``clipflow <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from clipflow import flow, linalg, metrics, ntk, privacy, runner
from clipflow.clipping import compute_factors
from clipflow.config import ConfigError, load_config
from clipflow.datasets import generate
from clipflow.net import Network, forward, per_sample_grads

log = logging.getLogger("clipflow")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, default=runner._json_default)


def _config(path):
    try:
        return load_config(path)
    except FileNotFoundError:
        raise SystemExit(_fail(f"config file not found: {path}"))
    except ConfigError as exc:
        raise SystemExit(_fail(f"invalid config: {exc}"))


def _fail(msg: str, code: int = 2) -> int:
    print(f"clipflow: error: {msg}", file=sys.stderr)
    return code


def _checkpoint(path) -> Network:
    try:
        return Network.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError:
        raise SystemExit(_fail(f"checkpoint not found: {path}"))
    except (KeyError, ValueError) as exc:
        raise SystemExit(_fail(f"bad checkpoint {path}: {exc}"))


def cmd_train(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = args.out or cfg.out
    try:
        if args.paired:
            res = runner.run_paired(cfg, out)
            print(_dump(res.diff))
        else:
            res = runner.run(cfg, out)
            print(_dump(res.summary(cfg)["final"]))
    except runner.TrainingDiverged as exc:
        return _fail(str(exc), 3)
    return 0


def cmd_ntk(args) -> int:
    cfg = _config(args.config)
    net = _checkpoint(args.checkpoint)
    train, _ = generate(cfg.dataset)
    k = min(args.samples, len(train))
    sub = train.subset(np.arange(k))
    loss = cfg.loss_kind
    factors = None
    if cfg.clip.mode in ("local", "global"):
        factors = compute_factors(per_sample_grads(net, sub, loss), cfg.clip)
    rep = ntk.analyze(net, sub, factors, loss)
    d = rep.to_dict()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ntk_report.json").write_text(_dump(d) + "\n")
        with (out / "eigenvalues.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "real", "imag"])
            for i, z in enumerate(rep.spectrum.eigenvalues):
                w.writerow([i, repr(z.real), repr(z.imag)])
    d.pop("eigenvalues")
    print(_dump(d))
    return 0


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_flow(args) -> int:
    cfg = _config(args.config)
    train, _ = generate(cfg.dataset)
    net = runner.build_network(cfg, train)
    etas = _floats(args.etas)
    seeds = range(args.seeds)
    loss = cfg.loss_kind
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    studies, endpoint = [], None
    for sigma in _floats(args.sigmas):
        st = flow.certainty_equivalence_study(
            net, train, cfg.clip, etas, sigma, seeds, args.horizon, loss,
            flow_dt=args.flow_dt, flow_endpoint=endpoint,
        )
        endpoint = st.flow_endpoint
        studies.append(st)
        if out:
            with (out / f"flow_sigma_{sigma:g}.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["eta", "seed", "distance", "flow_loss", "discrete_loss"])
                for r in st.rows:
                    w.writerow([repr(r.eta), r.seed, repr(r.distance), repr(r.flow_loss), repr(r.discrete_loss)])
    summary = {"studies": [s.summary() for s in studies]}
    if len(studies) > 1:
        summary["endpoint_spread"] = flow.endpoint_spread(studies)
    if out:
        (out / "flow_summary.json").write_text(_dump(summary) + "\n")
    print(_dump(summary))
    return 0


def cmd_account(args) -> int:
    try:
        mu = privacy.gdp_mu(args.sigma, args.sampling_rate, args.steps)
        eps = privacy.mu_to_eps(mu, args.delta)
    except privacy.PrivacyError as exc:
        return _fail(str(exc))
    print(json.dumps({
        "sigma": args.sigma, "sampling_rate": args.sampling_rate, "steps": args.steps,
        "delta": args.delta, "mu": mu, "eps": eps if math.isfinite(eps) else "inf",
    }, indent=2))
    return 0


def _probs(args):
    cfg = _config(args.config)
    if not cfg.dataset.classification:
        raise SystemExit(_fail("calibration and MIA need a classification dataset"))
    net = _checkpoint(args.checkpoint)
    train, test = generate(cfg.dataset)
    return cfg, net, train, test


def cmd_calibrate(args) -> int:
    cfg, net, train, test = _probs(args)
    evalset = test if test is not None else train
    _, probs = forward(net, evalset)
    rep = metrics.calibration(*metrics.confidences(probs, evalset.labels), n_bins=args.bins)
    bins = metrics.reliability_bins(rep)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        runner._write_csv(out / "reliability.csv", ("edge_lo", "edge_hi", "count", "accuracy", "mean_confidence"), bins)
        runner._write_csv(out / "histogram.csv", ("edge_lo", "edge_hi", "count"), bins)
    print(json.dumps({"ece": rep.ece, "mce": rep.mce, "n": int(rep.counts.sum())}, indent=2))
    return 0


def cmd_mia(args) -> int:
    cfg, net, train, test = _probs(args)
    if test is None or len(test) < 2:
        return _fail("membership inference needs a held-out split (dataset.split < 1)")
    f_tr, _ = forward(net, train)
    f_te, _ = forward(net, test)
    res = metrics.mia_attack(f_tr, train.labels, f_te, test.labels, seed=args.seed,
                             n_classes=train.targets.shape[1])
    per, notes = metrics.per_class_auc(res)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        runner.write_mia_csv(out / "mia.csv", res.auc, per)
    print(json.dumps({"auc": res.auc, "per_class": {str(k): v for k, v in per.items()},
                      "notes": notes}, indent=2))
    return 0


def cmd_fixtures(args) -> int:
    checks = linalg.check_fixtures()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.fact} {json.dumps(c.details)}")
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clipflow", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--paired", action="store_true", help="run local and global clipping")
    t.set_defaults(func=cmd_train)

    n = sub.add_parser("ntk-analyze", help="NTK spectrum of a checkpoint")
    n.add_argument("--config", required=True)
    n.add_argument("--checkpoint", required=True)
    n.add_argument("--samples", type=int, default=64)
    n.add_argument("--out")
    n.set_defaults(func=cmd_ntk)

    f = sub.add_parser("flow-sim", help="certainty-equivalence study")
    f.add_argument("--config", required=True)
    f.add_argument("--etas", default="0.1,0.05,0.025,0.0125")
    f.add_argument("--sigmas", default="1.0")
    f.add_argument("--seeds", type=int, default=20)
    f.add_argument("--horizon", type=float, default=1.0)
    f.add_argument("--flow-dt", type=float)
    f.add_argument("--out")
    f.set_defaults(func=cmd_flow)

    a = sub.add_parser("account", help="GDP accountant: mu and eps")
    a.add_argument("--sigma", type=float, required=True)
    a.add_argument("--sampling-rate", type=float, required=True)
    a.add_argument("--steps", type=int, required=True)
    a.add_argument("--delta", type=float, required=True)
    a.set_defaults(func=cmd_account)

    c = sub.add_parser("calibrate", help="ECE/MCE of a checkpoint")
    c.add_argument("--config", required=True)
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--bins", type=int, default=10)
    c.add_argument("--out")
    c.set_defaults(func=cmd_calibrate)

    m = sub.add_parser("mia", help="membership-inference attack on a checkpoint")
    m.add_argument("--config", required=True)
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_mia)

    x = sub.add_parser("fixtures", help="check the counterexample matrices")
    x.set_defaults(func=cmd_fixtures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1


if __name__ == "__main__":
    raise SystemExit(main())
