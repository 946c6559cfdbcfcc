"""Command-line entry point.

Typical pipeline::

    splitlaw synth --mode runs --seed 0 --out runs.csv
    splitlaw fit --law split --data runs.csv --scenario 1 --size-cutoff 1300000000 --out fit.json
    splitlaw allocate --params fit.json --n-params 1300000000 --K 16 --budget-grid 60 120 240 480 960
    splitlaw multiplier --params fit.json --n-params 1300000000 --K 16 --budget-grid 60 120 240 480 960

Exit codes: 0 success, 2 input error, 3 convergence or degenerate input, 4 internal error.
Machine-readable payloads go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .allocator import compute_multiplier, extrapolate_fraction, minimal_split_point, solve_allocation
from .cluster import (
    assign_many,
    balanced_kmeans,
    load_model,
    read_embeddings,
    recall_at_k,
    retrieval_ranks,
    save_model,
    write_embeddings,
)
from .dataset import filter_outliers, parse_runs, scenario_split, to_csv
from .errors import ConvergenceError, DegenerateError, InputError
from .fitter import FitConfig, fit_basin_hopping
from .laws import SplitLawParams, params_document, params_from_document
from .synth import REFERENCE_PARAMS, GridSpec, generate_blobs, generate_runs, default_grid

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("splitlaw")


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _clean(o):
    # JSON has no infinity; keep the payload strict
    if isinstance(o, float) and not math.isfinite(o):
        return None if math.isnan(o) else ("inf" if o > 0 else "-inf")
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def dumps(obj, indent=None) -> str:
    return json.dumps(_clean(obj), default=_json_default, indent=indent, allow_nan=False)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out: str | None = None) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)


def _load_split_params(path) -> SplitLawParams:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read parameters: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc
    params = params_from_document(doc)
    if not isinstance(params, SplitLawParams):
        raise InputError(f"{path}: expected split-law parameters, got law {doc.get('law')!r}")
    return params


def _read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _budgets(args) -> list[float]:
    if args.budget_grid:
        return [float(b) for b in args.budget_grid]
    if args.budget is not None:
        return [float(args.budget)]
    raise InputError("give --budget or --budget-grid")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    ds = parse_runs(io.StringIO(_read_text(args.data)))
    if args.domain is not None:
        ds = ds.subset(r for r in ds if r.domain_id == args.domain)
    ds, removed = filter_outliers(ds, args.lo, args.hi)
    log.info("removed %d outliers, %d runs remain", removed, len(ds))
    if len(ds) == 0:
        raise DegenerateError("no runs left to fit")
    train, test, thresholds = ds, None, None
    if args.scenario != "none":
        if args.size_cutoff is None:
            raise InputError("--scenario needs --size-cutoff")
        split = scenario_split(ds, int(args.scenario), args.size_cutoff)
        train, test, thresholds = split.train, split.test, split.thresholds
    config = FitConfig(
        huber_delta=args.huber_delta,
        n_random_starts=args.starts,
        hops_per_start=args.hops,
        hop_step=args.hop_step,
        accept_temperature=args.temperature,
        local_max_iter=args.local_max_iter,
        seed=args.seed,
    )
    result = fit_basin_hopping(train, args.law, config, test=test)
    doc = result.to_dict()
    doc["data"] = {
        "path": str(args.data),
        "n_runs": len(ds),
        "n_outliers_removed": removed,
        "scenario": args.scenario,
        "n_train": len(train),
        "n_test": len(test) if test is not None else 0,
        "thresholds": thresholds,
    }
    if args.out:
        Path(args.out).write_text(dumps(doc, indent=2) + "\n")
        summary = {"law": result.law, "objective": result.objective, **doc["metrics"]}
        sys.stdout.write(dumps(summary) + "\n")
    else:
        sys.stdout.write(dumps(doc, indent=2) + "\n")
    test_m = result.test_metrics
    log.info(
        "%s fit: objective %.6g, train MAE %.4g%s",
        result.law,
        result.objective,
        result.train_metrics.mae,
        f", test MAE {test_m.mae:.4g} R2 {test_m.r2}" if test_m else "",
    )
    return EXIT_OK


def cmd_allocate(args) -> int:
    laws = [_load_split_params(p) for p in args.params]
    sols = [solve_allocation(laws, args.weights, args.n_params, args.K, b, args.band_eps) for b in _budgets(args)]
    if args.curve_out:
        rows = [(s.budget, float(f), float(l)) for s in sols for f, l in zip(*s.curve)]
        Path(args.curve_out).write_text(_csv(["D_T", "f", "loss"], rows))
    if args.format == "csv":
        rows = [(s.budget, s.K, s.t_s, s.f_s, s.d_prime, s.loss_at_opt, s.band[0], s.band[1]) for s in sols]
        _emit(_csv(["D_T", "K", "t_s", "f_s", "d_prime", "loss_at_opt", "band_lo", "band_hi"], rows), args.out)
    else:
        payload = [s.to_dict() for s in sols]
        _emit(dumps(payload[0] if len(payload) == 1 else payload, indent=2), args.out)
    return EXIT_OK


def cmd_split_point(args) -> int:
    laws = [_load_split_params(p) for p in args.params]
    results = []
    for n in args.n_params:
        sp = minimal_split_point(
            laws, args.weights, n, args.K, delta=args.delta, d_max=args.d_max, method=args.method, epsilon=args.epsilon
        )
        results.append({"N": n, **sp.to_dict()})
    if args.format == "csv":
        keys = ["N", "d_split", "delta_used", "method", "residual", "flag", "epsilon"]
        _emit(_csv(keys, [[r[k] for k in keys] for r in results]), args.out)
    else:
        _emit(dumps(results[0] if len(results) == 1 else results, indent=2), args.out)
    flagged = [r for r in results if r["flag"]]
    if flagged:
        raise CommandError(
            EXIT_DEGENERATE, f"no crossover in [0, {args.d_max}] for N={[r['N'] for r in flagged]} ({flagged[0]['flag']})"
        )
    return EXIT_OK


def cmd_multiplier(args) -> int:
    laws = [_load_split_params(p) for p in args.params]
    rows = [(b, compute_multiplier(laws, args.weights, args.n_params, args.K, b, args.d_cap)) for b in _budgets(args)]
    if args.format == "csv":
        _emit(_csv(["D_T", "multiplier"], [(b, "inf" if math.isinf(m) else m) for b, m in rows]), args.out)
    else:
        payload = [{"D_T": b, "multiplier": m, "reachable": math.isfinite(m)} for b, m in rows]
        _emit(dumps(payload, indent=2), args.out)
    return EXIT_OK


def cmd_extrapolate(args) -> int:
    if len(args.params) != len(args.sizes):
        raise InputError("--params and --sizes must have the same length")
    laws = [(n, _load_split_params(p)) for n, p in zip(args.sizes, args.params)]
    ex = extrapolate_fraction(laws, args.target_n, args.K, args.budget, args.band_eps)
    _emit(dumps(ex.to_dict(), indent=2), args.out)
    return EXIT_OK


def cmd_cluster(args) -> int:
    emb = read_embeddings(args.emb, args.ids)
    model = balanced_kmeans(emb, args.K, seed=args.seed, max_iter=args.max_iter)
    if args.model:
        save_model(model, args.model)
    if args.labels_out:
        Path(args.labels_out).write_text("".join(f"{i},{c}\n" for i, c in zip(emb.ids, model.labels)))
    _emit(dumps({**model.metadata(), "n_iter": len(model.inertia_history)}, indent=2))
    return EXIT_OK


def cmd_route(args) -> int:
    model = load_model(args.model)
    emb = read_embeddings(args.emb, args.ids)
    if emb.d != model.centroids.shape[1]:
        raise InputError(f"query dimension {emb.d} != model dimension {model.centroids.shape[1]}")
    if not 1 <= args.k <= model.K:
        raise InputError(f"--k must lie in [1, {model.K}]")
    if args.k == 1:
        lines = [str(int(c)) for c in assign_many(model, emb.vectors)]
    else:
        d2 = ((emb.vectors[:, None, :] - model.centroids[None]) ** 2).sum(-1)
        order = np.argsort(d2, axis=1, kind="stable")[:, : args.k]
        lines = [" ".join(str(int(c)) for c in row) for row in order]
    _emit("\n".join(lines), args.out)
    return EXIT_OK


def cmd_recall(args) -> int:
    docs = read_embeddings(args.emb, args.ids)
    prefixes = read_embeddings(args.prefix_emb, args.prefix_ids)
    if len(args.k) == 1:
        payload = {f"R@{args.k[0]}": recall_at_k(prefixes, docs, args.k[0])}
    else:
        ranks = retrieval_ranks(prefixes, docs)
        payload = {f"R@{k}": float(np.mean(ranks < k)) for k in args.k}
    payload["n"] = docs.n
    _emit(dumps(payload, indent=2))
    return EXIT_OK


def cmd_synth(args) -> int:
    files = []
    if args.mode == "runs":
        params = _load_split_params(args.params) if args.params else REFERENCE_PARAMS
        base = default_grid(args.sigma, args.seed)
        grid = GridSpec(
            tuple(int(n) for n in args.sizes) if args.sizes else base.sizes,
            tuple(args.pt_grid) if args.pt_grid else base.pt_grid,
            tuple(args.cpt_grid) if args.cpt_grid else base.cpt_grid,
            args.sigma,
            args.seed,
        )
        ds = generate_runs(params, grid, args.domain_id)
        Path(args.out).write_text(to_csv(ds))
        files.append(args.out)
        if args.params_out:
            Path(args.params_out).write_text(dumps(params_document(params), indent=2) + "\n")
            files.append(args.params_out)
    else:
        docs, prefixes, labels = generate_blobs(
            args.K, args.n_per_cluster, args.dim, args.separation, args.noise, args.seed
        )
        stem = args.out
        paths = {k: f"{stem}.{k}" for k in ("docs.emb", "docs.ids", "prefixes.emb", "prefixes.ids", "labels")}
        write_embeddings(docs, paths["docs.emb"], paths["docs.ids"])
        write_embeddings(prefixes, paths["prefixes.emb"], paths["prefixes.ids"])
        Path(paths["labels"]).write_text("".join(f"{i}\n" for i in labels))
        files.extend(paths.values())
    _emit(dumps({"mode": args.mode, "seed": args.seed, "files": {str(p): _sha256(p) for p in files}}, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splitlaw", description="Split-training scaling laws and compute allocation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a scaling law to run logs")
    f.add_argument("--law", choices=["split", "chinchilla", "liew"], default="split")
    f.add_argument("--data", required=True)
    f.add_argument("--scenario", choices=["1", "2", "3", "none"], default="none")
    f.add_argument("--size-cutoff", type=lambda s: int(float(s)))
    f.add_argument("--domain", type=int, help="fit only runs of this domain id")
    f.add_argument("--lo", type=float, default=0.5, help="drop runs with loss below this")
    f.add_argument("--hi", type=float, default=4.0, help="drop runs with loss above this")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")
    f.add_argument("--huber-delta", type=float, default=1e-3)
    f.add_argument("--starts", type=int, default=64)
    f.add_argument("--hops", type=int, default=50)
    f.add_argument("--hop-step", type=float, default=0.5)
    f.add_argument("--temperature", type=float, default=1e-3)
    f.add_argument("--local-max-iter", type=int, default=500)
    f.set_defaults(func=cmd_fit)

    def law_args(q, many_sizes=False):
        q.add_argument("--params", nargs="+", required=True, help="split-law parameter JSON, one per domain")
        q.add_argument("--weights", nargs="+", type=float, help="domain weights (default uniform)")
        if many_sizes:
            q.add_argument("--n-params", nargs="+", type=lambda s: int(float(s)), required=True)
        else:
            q.add_argument("--n-params", type=lambda s: int(float(s)), required=True)
        q.add_argument("--K", type=int, required=True, help="number of domains")
        q.add_argument("--format", choices=["json", "csv"], default="json")
        q.add_argument("--out")

    a = sub.add_parser("allocate", help="optimal pretraining allocation for a budget")
    law_args(a)
    a.add_argument("--budget", type=float)
    a.add_argument("--budget-grid", nargs="+", type=float)
    a.add_argument("--band-eps", type=float, default=0.005)
    a.add_argument("--curve-out", help="write the (D_T, f, loss) scan as CSV")
    a.set_defaults(func=cmd_allocate)

    s = sub.add_parser("split-point", help="minimal splitting point")
    law_args(s, many_sizes=True)
    s.add_argument("--delta", type=float, default=1.0)
    s.add_argument("--d-max", type=float, default=10_000.0)
    s.add_argument("--method", choices=["finite-budget", "epsilon-derivative"], default="finite-budget")
    s.add_argument("--epsilon", type=float, default=1e-3)
    s.set_defaults(func=cmd_split_point)

    m = sub.add_parser("multiplier", help="pretraining-only compute multiplier")
    law_args(m)
    m.add_argument("--budget", type=float)
    m.add_argument("--budget-grid", nargs="+", type=float)
    m.add_argument("--d-cap", type=float, default=1e6)
    m.set_defaults(func=cmd_multiplier)

    e = sub.add_parser("extrapolate", help="extrapolate the optimal fraction to a larger size")
    e.add_argument("--params", nargs="+", required=True, help="per-size split-law parameter JSON")
    e.add_argument("--sizes", nargs="+", type=lambda s: int(float(s)), required=True)
    e.add_argument("--target-n", type=lambda s: int(float(s)), required=True)
    e.add_argument("--K", type=int, required=True)
    e.add_argument("--budget", type=float, required=True)
    e.add_argument("--band-eps", type=float, default=0.005)
    e.add_argument("--out")
    e.set_defaults(func=cmd_extrapolate)

    c = sub.add_parser("cluster", help="balanced K-means over an embedding file")
    c.add_argument("--emb", required=True)
    c.add_argument("--ids")
    c.add_argument("--K", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--max-iter", type=int, default=100)
    c.add_argument("--model", help="where to write the centroid matrix (+ .json metadata)")
    c.add_argument("--labels-out", help="write id,cluster per training vector")
    c.set_defaults(func=cmd_cluster)

    r = sub.add_parser("route", help="route vectors to their nearest centroid(s)")
    r.add_argument("--model", required=True)
    r.add_argument("--emb", required=True)
    r.add_argument("--ids")
    r.add_argument("--k", type=int, default=1)
    r.add_argument("--out")
    r.set_defaults(func=cmd_route)

    rc = sub.add_parser("recall", help="prefix-to-document retrieval recall")
    rc.add_argument("--emb", required=True, help="document embeddings")
    rc.add_argument("--ids", required=True)
    rc.add_argument("--prefix-emb", required=True)
    rc.add_argument("--prefix-ids", required=True)
    rc.add_argument("--k", nargs="+", type=int, default=[1, 5])
    rc.set_defaults(func=cmd_recall)

    y = sub.add_parser("synth", help="write synthetic fixtures")
    y.add_argument("--mode", choices=["runs", "blobs"], required=True)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True, help="CSV path (runs) or file stem (blobs)")
    y.add_argument("--params", help="ground-truth split-law JSON (runs; default built-in)")
    y.add_argument("--params-out", help="also write the ground truth parameters (runs)")
    y.add_argument("--sizes", nargs="+", type=lambda s: int(float(s)))
    y.add_argument("--pt-grid", nargs="+", type=float)
    y.add_argument("--cpt-grid", nargs="+", type=float)
    y.add_argument("--sigma", type=float, default=0.01)
    y.add_argument("--domain-id", type=int, default=0)
    y.add_argument("--K", type=int, default=4)
    y.add_argument("--n-per-cluster", type=int, default=100)
    y.add_argument("--dim", type=int, default=16)
    y.add_argument("--separation", type=float, default=20.0)
    y.add_argument("--noise", type=float, default=1.0)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s: %(message)s"
    )
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (InputError, FileNotFoundError, ValueError) as exc:
        # law domain errors are ValueErrors and count as bad input
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DegenerateError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
