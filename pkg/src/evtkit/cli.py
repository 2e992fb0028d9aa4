"""Command-line driver for the four workflows.

Every subcommand takes ``--seed``, ``--config`` (a JSON file whose keys are
flag names with dashes replaced by underscores; explicit flags win) and
``--out`` (output directory).  Results go to ``<out>/result.json`` with
sorted keys, tables to CSV files next to it.  Failures print a JSON error
object on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, condex, marginal, nbe, numopt, synthetic, tailprob
from .dataset import Dataset, export_csv, ingest_csv
from .distributions import EmpiricalDistribution
from .errors import EvtError, FitError, InputError

log = logging.getLogger("evtkit")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(EvtError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: Path, obj) -> None:
    path.write_text(_dumps(obj))


def write_csv(path: Path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["NA" if r.get(c) is None else _cell(r.get(c)) for c in columns])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _floats(text: str) -> list:
    return [float(t) for t in str(text).split(",") if t.strip()]


def _names(text) -> list:
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return list(text)
    return [t.strip() for t in str(text).split(",") if t.strip()]


class Run:
    """Effective configuration, output directory and caveats of one command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.rng = numopt.make_rng(args.seed)
        self.caveats: list = []
        cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "config")}
        self.config = _jsonable(cfg)
        self.config_hash = hashlib.sha256(json.dumps(self.config, sort_keys=True).encode()).hexdigest()

    def finish(self, result: dict) -> dict:
        doc = {"command": self.args.command, "version": __version__, "seed": self.args.seed,
               "config": self.config, "config_hash": self.config_hash,
               "caveats": sorted(set(self.caveats)), "result": result}
        write_json(self.out / "result.json", doc)
        return doc


# ---------------------------------------------------------------------------
# Data loading
# ---------------------------------------------------------------------------


def _dataset(path) -> Dataset:
    if path is None:
        raise UsageError("--data is required")
    return ingest_csv(path)


def _complete_matrix(ds: Dataset, columns: Sequence[str], run: Run, what: str) -> np.ndarray:
    M = ds.matrix(columns)
    ok = np.all(np.isfinite(M), axis=1)
    dropped = int((~ok).sum())
    if dropped:
        run.caveats.append(f"{what}: dropped {dropped} rows with missing values")
    return M[ok], ok


def _formula(args) -> marginal.ModelFormula:
    return marginal.ModelFormula(args.response, threshold=args.threshold_terms or (),
                                 scale=args.scale_terms or (), shape=args.shape_terms or ())


# ---------------------------------------------------------------------------
# Univariate workflow
# ---------------------------------------------------------------------------


def cmd_fit_marginal(run: Run):
    a = run.args
    ds = _dataset(a.data)
    fit = marginal.fit_marginal(ds, _formula(a), a.lam, a.ridge)
    rows = []
    for part, coefs in (("threshold", fit.summary()["threshold_coefficients"]),
                        ("log_scale", fit.summary()["log_scale_coefficients"]),
                        ("shape", fit.summary()["shape_coefficients"])):
        rows += [{"part": part, "term": k, "estimate": v} for k, v in coefs.items()]
    write_csv(run.out / "coefficients.csv", rows, ["part", "term", "estimate"])
    return {"fit": fit.summary(), "bic": marginal.bic(fit, ds)}


def cmd_select_threshold(run: Run):
    a = run.args
    ds = _dataset(a.data)
    cands = _floats(a.candidates)
    rows = marginal.twsmad_scan(ds, _formula(a), cands, a.lambda_star, a.n_grid, a.ridge)
    table = [{"lambda": lam, "twsmad": s, "error": e} for lam, s, e in rows]
    write_csv(run.out / "twsmad.csv", table, ["lambda", "twsmad", "error"])
    ok = [(s, lam) for lam, s, _ in rows if s is not None]
    if not ok:
        raise FitError("every candidate threshold failed")
    best = min(s for s, _ in ok)
    return {"selected": min(lam for s, lam in ok if s == best), "scan": table}


def cmd_predict_quantile(run: Run):
    a = run.args
    ds = _dataset(a.data)
    test = ingest_csv(a.test_data) if a.test_data else ds
    formula = _formula(a)
    fit = marginal.fit_marginal(ds, formula, a.lam, a.ridge)
    point = marginal.predict_quantiles(fit, test, a.q)
    boot = marginal.bootstrap_quantiles(ds, formula, a.lam, test, a.q, a.B, run.rng,
                                        a.interval_level, a.ridge)
    if boot.degenerate:
        run.caveats.append("bootstrap with fewer than 50 replicates")
    rows = [{"row": i, "estimate": p, "lower": lo, "median": me, "upper": hi}
            for i, (p, lo, me, hi) in enumerate(zip(point, boot.lower, boot.median, boot.upper))]
    write_csv(run.out / "predictions.csv", rows, ["row", "estimate", "lower", "median", "upper"])
    return {"q": a.q, "n_test": test.n_rows, "n_success": boot.n_success,
            "n_failed": boot.n_failed, "predictions": rows}


# ---------------------------------------------------------------------------
# Neural Bayes workflow
# ---------------------------------------------------------------------------


def _training_config(a) -> nbe.TrainingConfig:
    return nbe.TrainingConfig(K=a.K, m=a.m, M=a.M, q=a.q, lam=a.lam, max_epochs=a.max_epochs,
                              patience=a.patience, learning_rate=a.learning_rate,
                              batch_size=a.batch_size)


def cmd_nbe_make_prior(run: Run):
    a = run.args
    ds = _dataset(a.data)
    pools, body = nbe.build_prior(ds, _formula(a), a.lam, a.n_boot, run.rng)
    doc = {"lam": a.lam, "body": body.sorted_values,
           "pools": [{"u": p.u, "sigma": p.sigma, "xi": p.xi} for p in pools]}
    write_json(run.out / "prior.json", doc)
    return {"n_pools": len(pools), "pool_size": pools[0].size, "body_size": body.n}


def _load_prior(path):
    if path is None:
        raise UsageError("--prior is required")
    try:
        doc = json.loads(Path(path).read_text())
        pools = [nbe.PriorPool(p["u"], p["sigma"], p["xi"]) for p in doc["pools"]]
        return pools, EmpiricalDistribution(doc["body"]), float(doc["lam"])
    except (OSError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, EvtError):
            raise
        raise InputError(f"cannot read prior file {path}: {exc}") from None


def cmd_nbe_train(run: Run):
    a = run.args
    pools, body, lam = _load_prior(a.prior)
    if a.lam != lam:
        run.caveats.append(f"training lam {a.lam} differs from the prior's {lam}")
    cfg = _training_config(a)
    g_init, g_train = numopt.spawn(run.rng, 2)
    res = nbe.train(nbe.init_network(g_init), cfg, pools, body, g_train)
    nbe.save_network(res.network, run.out / "weights.bin")
    write_csv(run.out / "risk.csv",
              [{"epoch": e, "train_risk": t, "val_risk": v}
               for e, (t, v) in enumerate(zip(res.train_risk, res.val_risk))],
              ["epoch", "train_risk", "val_risk"])
    return {"best_epoch": res.best_epoch, "stopped_early": res.stopped_early,
            "val_risk_initial": res.val_risk[0], "val_risk_best": min(res.val_risk),
            "n_parameters": res.network.n_parameters}


def cmd_nbe_estimate(run: Run):
    a = run.args
    if a.weights is None:
        raise UsageError("--weights is required")
    net = nbe.load_network(a.weights)
    y = _dataset(a.data).column(a.response)
    y = y[np.isfinite(y)]
    be = nbe.bootstrap_estimate(net, y, a.B, run.rng, a.level)
    return {"estimate": be.point, "lower": be.lower, "upper": be.upper, "level": be.level,
            "n": int(y.size), "B": a.B}


# ---------------------------------------------------------------------------
# Conditional-extremes workflow
# ---------------------------------------------------------------------------


def _condex_inputs(run: Run):
    a = run.args
    ds = _dataset(a.data)
    cols = _names(a.columns)
    covs = _names(a.covariates)
    if len(cols) != 3:
        raise UsageError("--columns must name three response columns")
    M, _ = _complete_matrix(ds, cols + covs, run, "conditional extremes")
    return M[:, :3], M[:, 3:]


def _fit_three(run: Run, y, X, u):
    return [condex.fit_condex(y, X, i, u, run.args.homogeneous_beta) for i in range(3)]


def cmd_condex_fit(run: Run):
    y, X = _condex_inputs(run)
    fits = _fit_three(run, y, X, run.args.u)
    write_csv(run.out / "coefficients.csv", condex.coefficient_table(fits))
    return {"fits": [f.summary() for f in fits], "total_aic": condex.total_aic(fits),
            "n_rows": int(y.shape[0])}


def cmd_condex_diagnose(run: Run):
    a = run.args
    y, X = _condex_inputs(run)
    from .distributions import gumbel_to_laplace
    rows, summary = [], []
    lanes = numopt.spawn(run.rng, len(_floats(a.u_grid)))
    for u, lane in zip(_floats(a.u_grid), lanes):
        fits = _fit_three(run, y, X, u)
        sample = condex.simulate_unconditional(fits, y, X, a.N, a.N_prime, lane)
        qq = condex.qq_aggregate(sample.laplace(), gumbel_to_laplace(y))
        rows += [dict(u=u, **r) for r in qq.rows()]
        summary.append({"u": u, "max_gap": qq.max_gap(), "total_aic": condex.total_aic(fits)})
    write_csv(run.out / "qq.csv", rows, ["u", "p", "simulated", "observed"])
    return {"thresholds": summary}


def cmd_condex_prob(run: Run):
    a = run.args
    y, X = _condex_inputs(run)
    fits = _fit_three(run, y, X, a.u)
    sample = condex.simulate_unconditional(fits, y, X, a.N, a.N_prime, run.rng)
    regions = a.region or ["Y1>6,Y2>6,Y3>6", "Y1>7,Y2>7,Y3<m"]
    out = []
    for text in regions:
        est = condex.estimate_joint_probability(sample, text)
        out.append({"region": text, "estimate": est.value, "hits": est.hits, "n": est.n,
                    "report": est.report(), "standard_error": est.standard_error})
    if a.export_sample:
        write_csv(run.out / "sample.csv",
                  [{"Y1": r[0], "Y2": r[1], "Y3": r[2], "provenance": p}
                   for r, p in zip(sample.rows, sample.provenance())],
                  ["Y1", "Y2", "Y3", "provenance"])
    return {"estimates": out, "p0": sample.p0, "u": a.u, "total_aic": condex.total_aic(fits)}


# ---------------------------------------------------------------------------
# Joint-tail workflow
# ---------------------------------------------------------------------------


def _tail_inputs(run: Run):
    ds = _dataset(run.args.data)
    cols = _names(run.args.columns) or list(ds.names)
    M, _ = _complete_matrix(ds, cols, run, "joint tail")
    return M, cols


def _edm_config(a) -> tailprob.EdmConfig:
    return tailprob.EdmConfig(a.norm, a.alpha, a.threshold_prob)


def cmd_edm(run: Run):
    y, cols = _tail_inputs(run)
    cfg = _edm_config(run.args)
    m = tailprob.edm_matrix(tailprob.gumbel_to_frechet(y, cfg.alpha), cfg)
    write_csv(run.out / "edm.csv", [dict(column=c, **dict(zip(cols, row))) for c, row in zip(cols, m)],
              ["column"] + cols)
    return {"columns": cols, "edm": m, "edm_max": cfg.edm_max}


def _partition_doc(part: tailprob.BlockPartition, cols) -> dict:
    return {"blocks": [[cols[j] for j in b] for b in part.blocks],
            "block_indices": [list(b) for b in part.blocks], "k": part.k,
            "height_cut": part.height_cut}


def cmd_cluster(run: Run):
    a = run.args
    y, cols = _tail_inputs(run)
    cfg = _edm_config(a)
    m = tailprob.edm_matrix(tailprob.gumbel_to_frechet(y, cfg.alpha), cfg)
    part = tailprob.cluster_edm(m, k=a.k, height=a.height, norm=cfg.norm)
    write_csv(run.out / "dendrogram.csv", part.merges(), ["left", "right", "height", "size"])
    doc = _partition_doc(part, cols)
    write_json(run.out / "blocks.json", doc)
    return doc


def _read_partition(path, cols) -> tailprob.BlockPartition:
    try:
        doc = json.loads(Path(path).read_text())
        if "result" in doc:
            doc = doc["result"]
        blocks = [[cols.index(c) for c in b] for b in doc["blocks"]]
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"cannot read blocks file {path}: {exc}") from None
    return tailprob.BlockPartition(tuple(blocks))


def _read_weights(path, cols) -> Optional[np.ndarray]:
    """JSON list (one weight per column) or object {column: weight}; unlisted
    columns get weight 1."""
    if path is None:
        return None
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read weights file {path}: {exc}") from None
    if isinstance(doc, list):
        if len(doc) != len(cols):
            raise InputError("weights list must have one entry per column")
        return np.asarray(doc, dtype=float)
    if not isinstance(doc, dict):
        raise InputError("weights file must hold a JSON list or object")
    w = np.ones(len(cols))
    for name, weight in doc.items():
        if name not in cols:
            raise InputError(f"weight given for unknown column {name!r}")
        w[cols.index(name)] = float(weight)
    return w


def _pipeline(run: Run, cols):
    a = run.args
    part = (_read_partition(a.blocks, cols) if a.blocks
            else tailprob.BlockPartition((tuple(range(len(cols))),)))
    weights = _read_weights(a.weights, cols)
    cfg = tailprob.TailPipeline(part, a.phi, a.phi_star, weights, a.ranks)
    if cfg.weighted:
        run.caveats.append(tailprob.WEIGHTED_CAVEAT)
    return cfg


def cmd_tailprob(run: Run):
    a = run.args
    y, cols = _tail_inputs(run)
    cfg = _pipeline(run, cols)
    prod, fits = tailprob.pipeline_log_estimate(y, cfg)
    result = {
        "log_p": prod.log_p, "log10_p": prod.log10_p, "p": prod.p, "phi": a.phi,
        "phi_star": a.phi_star, "blocks": _partition_doc(cfg.partition, cols)["blocks"],
        "block_fits": [{"k1": f.k1, "eta": f.eta, "p_phi_star_hat": f.p_phi_star_hat,
                        "n_below": f.n_below, "boundary": f.boundary} for f in fits],
    }
    if any(f.boundary for f in fits):
        run.caveats.append("a block fit sits on the parameter boundary")
    if a.B:
        bt = tailprob.bootstrap_tailprob(y, cfg, a.B, run.rng)
        result["bootstrap"] = {"median_log": bt.median_log, "lower_log": bt.lower_log,
                               "upper_log": bt.upper_log, "failures": bt.failures, "B": a.B}
        if bt.flagged:
            run.caveats.append("bootstrap with fewer than 50 replicates")
    return result


def cmd_stability_scan(run: Run):
    a = run.args
    y, cols = _tail_inputs(run)
    cfg = _pipeline(run, cols)
    U = tailprob.to_uniform(y, cfg.ranks)
    grid = _floats(a.phi_grid)
    rows, suggestions = [], []
    for n, b in enumerate(cfg.partition.blocks):
        um = tailprob.u_max(U[:, list(b)], cfg.block_weights(b))
        scan = tailprob.stability_scan(um, grid, a.phi, a.tolerance)
        rows += [dict(block=n, **r) for r in scan.table()]
        suggestions.append(scan.suggestion)
    write_csv(run.out / "stability.csv", rows, ["block", "phi_star", "log_p", "error"])
    return {"suggestions": suggestions, "table": rows, "phi_target": a.phi}


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def cmd_simulate_synthetic(run: Run):
    a = run.args
    kind = a.kind
    truth: dict = {"kind": kind, "n": a.n}
    if kind == "pot":
        t = synthetic.PotTruth()
        ds, _ = synthetic.pot_dataset(t, a.n, run.rng, a.missing_rate)
        truth.update(lam=t.lam, u0=t.u0, u1=t.u1, s0=t.s0, s1=t.s1, xi=t.xi)
    elif kind == "copula":
        corr = np.full((a.dim, a.dim), a.rho)
        np.fill_diagonal(corr, 1.0)
        y = synthetic.gaussian_copula_gumbel(a.n, corr, run.rng)
        ds = Dataset.from_arrays({f"Y{j + 1}": y[:, j] for j in range(a.dim)}, margin="gumbel")
        truth.update(rho=a.rho, dim=a.dim)
    elif kind == "independent":
        y = run.rng.gumbel(size=(a.n, a.dim))
        ds = Dataset.from_arrays({f"Y{j + 1}": y[:, j] for j in range(a.dim)}, margin="gumbel")
        truth.update(dim=a.dim)
    elif kind == "blocks":
        sizes = tuple(int(s) for s in _floats(a.block_sizes))
        mix = tuple(_floats(a.block_mix)) or (0.5,) * len(sizes)
        mb = synthetic.MixtureBlocks(sizes, mix)
        y = mb.sample_gumbel(a.n, run.rng)
        ds = Dataset.from_arrays({f"Y{j + 1}": y[:, j] for j in range(mb.d)}, margin="gumbel")
        truth.update(sizes=sizes, a=mix, log_p_phi=float(np.log(mb.joint_prob(a.phi))), phi=a.phi)
    elif kind == "condex":
        from .distributions import laplace_to_gumbel
        t = synthetic.CondExTruth()
        Y, x = synthetic.condex_exceedances(t, a.n, condex.DEFAULT_U, 0, run.rng)
        G = laplace_to_gumbel(Y)
        ds = Dataset.from_arrays({"Y1": G[:, 0], "Y2": G[:, 1], "Y3": G[:, 2], "x1": x[:, 0]},
                                 margin="gumbel")
        truth.update(a0=t.a0, a1=t.a1, b0=t.b0, rho=t.rho, conditioning="Y1",
                     margins=[[m.mu, m.sigma, m.delta] for m in t.margins])
    else:  # guarded by argparse choices
        raise UsageError(f"unknown kind {kind}")
    export_csv(ds, run.out / "data.csv")
    write_json(run.out / "truth.json", truth)
    return {"rows": ds.n_rows, "columns": list(ds.names), "missing_cells": ds.n_missing,
            "truth": truth}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="generator seed (required)")
    p.add_argument("--config", default=None, help="JSON file of flag defaults")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--data", default=None, help="input CSV")


def _formula_flags(p):
    p.add_argument("--response", default="y")
    p.add_argument("--threshold-terms", default=None, help='e.g. "x1+s(x2)"')
    p.add_argument("--scale-terms", default=None)
    p.add_argument("--shape-terms", default=None)
    p.add_argument("--lam", type=float, default=0.9)
    p.add_argument("--ridge", type=float, default=None)


def _condex_flags(p):
    p.add_argument("--columns", default="Y1,Y2,Y3")
    p.add_argument("--covariates", default="")
    p.add_argument("--u", type=float, default=condex.DEFAULT_U, help="Laplace-scale threshold")
    p.add_argument("--homogeneous-beta", action="store_true")


def _tail_flags(p):
    p.add_argument("--columns", default=None, help="comma-separated (default: all)")
    p.add_argument("--norm", choices=("L1", "L2"), default="L2")
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--threshold-prob", type=float, default=0.99)


def _pipeline_flags(p):
    p.add_argument("--blocks", default=None, help="blocks.json from `cluster`")
    p.add_argument("--weights", default=None, help="JSON list or {column: weight} object")
    p.add_argument("--phi", type=float, default=1 / 300)
    p.add_argument("--phi-star", type=float, default=0.25)
    p.add_argument("--ranks", action="store_true", help="rank-based uniform margins")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evtkit", description="Extreme-value toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.set_defaults(func=func)
        return p

    p = add("fit-marginal", cmd_fit_marginal, "threshold + GPD regression fit")
    _formula_flags(p)
    p = add("select-threshold", cmd_select_threshold, "twsMAD scan over threshold levels")
    _formula_flags(p)
    p.add_argument("--candidates", default="0.8,0.85,0.9,0.95")
    p.add_argument("--lambda-star", type=float, default=0.99)
    p.add_argument("--n-grid", type=int, default=1000)
    p = add("predict-quantile", cmd_predict_quantile, "conditional quantiles with bootstrap intervals")
    _formula_flags(p)
    p.add_argument("--test-data", default=None)
    p.add_argument("--q", type=float, default=0.9999)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--interval-level", type=float, default=0.5)

    p = add("nbe-make-prior", cmd_nbe_make_prior, "empirical prior from bootstrap refits")
    _formula_flags(p)
    p.add_argument("--n-boot", type=int, default=100)
    p = add("nbe-train", cmd_nbe_train, "train the DeepSets quantile estimator")
    p.add_argument("--prior", default=None, help="prior.json from nbe-make-prior")
    for flag, typ, default in (("--K", int, 5000), ("--m", int, 2000), ("--M", int, 1_000_000),
                               ("--q", float, 0.999), ("--lam", float, 0.6),
                               ("--max-epochs", int, 200), ("--patience", int, 10),
                               ("--learning-rate", float, 1e-3), ("--batch-size", int, 32)):
        p.add_argument(flag, type=typ, default=default)
    p = add("nbe-estimate", cmd_nbe_estimate, "apply trained weights with bootstrap interval")
    p.add_argument("--weights", default=None)
    p.add_argument("--response", default="y")
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--level", type=float, default=0.95)

    p = add("condex-fit", cmd_condex_fit, "fit the three conditional-extremes models")
    _condex_flags(p)
    p = add("condex-diagnose", cmd_condex_diagnose, "Q-Q tables of Y1+Y2+Y3 over thresholds")
    _condex_flags(p)
    p.add_argument("--u-grid", default=f"{condex.DEFAULT_U}")
    p.add_argument("--N", type=int, default=100_000)
    p.add_argument("--N-prime", type=int, default=None)
    p = add("condex-prob", cmd_condex_prob, "joint exceedance probabilities by simulation")
    _condex_flags(p)
    p.add_argument("--region", action="append", default=None,
                   help='e.g. "Y1>6,Y2>6,Y3<m" (m: Gumbel median); repeatable')
    p.add_argument("--N", type=int, default=1_000_000)
    p.add_argument("--N-prime", type=int, default=None)
    p.add_argument("--export-sample", action="store_true")

    p = add("edm", cmd_edm, "pairwise extremal dependence matrix")
    _tail_flags(p)
    p = add("cluster", cmd_cluster, "hierarchical clustering of the EDM matrix")
    _tail_flags(p)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--height", type=float, default=None)
    p = add("tailprob", cmd_tailprob, "joint tail probability as a product over blocks")
    _tail_flags(p)
    _pipeline_flags(p)
    p.add_argument("--B", type=int, default=0, help="bootstrap replicates (0: none)")
    p = add("stability-scan", cmd_stability_scan, "log-estimate across phi_star per block")
    _tail_flags(p)
    _pipeline_flags(p)
    p.add_argument("--phi-grid", default="0.1,0.15,0.2,0.25,0.3,0.35,0.4")
    p.add_argument("--tolerance", type=float, default=0.2)

    p = add("simulate-synthetic", cmd_simulate_synthetic, "write a synthetic dataset with known truth")
    p.add_argument("--kind", choices=("pot", "copula", "independent", "blocks", "condex"),
                   default="pot")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--rho", type=float, default=0.6)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--block-sizes", default="2,2,3,2,3")
    p.add_argument("--block-mix", default="")
    p.add_argument("--phi", type=float, default=1 / 300)
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required")
    if args.config:
        try:
            defaults = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.seed is None:
        raise UsageError("--seed is required (directly or in --config)")
    return args


def _error_doc(exc, kind) -> dict:
    return {"error": {"type": kind, "class": type(exc).__name__, "message": str(exc)},
            "version": __version__}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    out_dir = None
    try:
        args = _parse(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        out_dir = Path(args.out)
        run = Run(args)
        doc = run.finish(args.func(run))
        sys.stdout.write(_dumps({"command": doc["command"], "config_hash": doc["config_hash"],
                                 "out": str(run.out)}))
        return 0
    except UsageError as exc:
        sys.stderr.write(_dumps(_error_doc(exc, "usage")))
        return EXIT_USAGE
    except (EvtError, OSError, np.linalg.LinAlgError) as exc:
        doc = _error_doc(exc, "failure")
        sys.stderr.write(_dumps(doc))
        if out_dir is not None and out_dir.is_dir():
            write_json(out_dir / "error.json", doc)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
