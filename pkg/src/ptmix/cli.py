"""Command-line entry point: ``ptmix {simulate,fit,select,rank,evaluate}``.

Settings come from built-in defaults, then an optional ``--config`` file of
``dotted.key = value`` lines, then command-line flags (highest precedence).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .em import INIT_METHODS, EmConfig, fit
from .errors import NumericalError, PtmixError, ValidationError
from .io import (
    atomic_write, labels_csv, matrix_csv, read_labels_csv, read_matrix_csv, rows_csv, to_json,
)
from .metrics import evaluate
from .model import DataMatrix, PenaltyConfig, standardize
from .numerics import RngHandle
from .selection import (
    BIC_FORMULAS, BIC_LIKELIHOODS, GRID_FACTORS, bootstrap_selection, modified_bic, select_g, select_lambda,
)
from .simulate import DOF_REGIMES, SEPARATION_MODES, SimDesign, generate

log = logging.getLogger("ptmix")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    s = str(s).strip()
    return tuple(float(x) for x in s.split(",")) if s else ()


def _ints(s):
    s = str(s).strip()
    return tuple(int(x) for x in s.split(",")) if s else ()


def _choice(options):
    def parse(s):
        if s not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return s
    return parse


def _opt_str(s):
    return str(s)


def _scale(s):
    s = str(s).strip()
    if s == "sqrt_n":
        return s
    v = float(s)
    if not v > 0:
        raise ValueError("grid.scale must be 'sqrt_n' or a positive number")
    return v


# key: (parser, default, description)
SETTINGS = {
    "seed": (int, 0, "global seed; every random stream is derived from it"),
    "threads": (int, os.cpu_count() or 1, "worker threads for grid points and bootstrap replicates"),
    "log_level": (_choice(("debug", "info", "warning", "error")), "warning", "logging verbosity"),
    "em.max_iterations": (int, 500, "EM iteration cap"),
    "em.rel_tol": (float, 1e-6, "relative change in penalized log-likelihood that stops EM"),
    "em.n_restarts": (int, 5, "independent initializations per fit"),
    "em.init_method": (_choice(INIT_METHODS), "kmeans_pp", "initial partition"),
    "em.gaussian_mode": (_bool, False, "fit the Gaussian limit instead of t components"),
    "fit.g": (int, 2, "number of components for fit/rank"),
    "penalty.lambda_mu": (float, 0.0, "L1 penalty on locations (fit/rank)"),
    "penalty.lambda_sigma": (float, 0.0, "L1 penalty on log-scales (fit/rank)"),
    "grid.lambda_mu": (_floats, GRID_FACTORS, "lambda_mu grid factors"),
    "grid.lambda_sigma": (_floats, GRID_FACTORS, "lambda_sigma grid factors"),
    "grid.scale": (_scale, "sqrt_n", "multiplier applied to grid factors: sqrt_n or a number"),
    "select.g_candidates": (_ints, (2, 3, 4, 5), "component counts compared by select"),
    "select.bootstrap": (_bool, True, "use the two-step bootstrap procedure in select"),
    "select.B": (int, 100, "bootstrap replicates"),
    "select.threshold": (float, 0.7, "selection-probability threshold"),
    "select.bic_formula": (_choice(BIC_FORMULAS), "free", "effective parameter count in BIC"),
    "select.bic_likelihood": (_choice(BIC_LIKELIHOODS), "unpenalized",
                              "log-likelihood scored by BIC at the penalized estimates"),
    "rank.select_lambda": (_bool, True, "rank: choose lambda by BIC over the grid instead of penalty.*"),
    "sim.n": (int, 200, "samples"),
    "sim.m": (int, 20, "informative variables"),
    "sim.q": (int, 200, "uninformative variables"),
    "sim.g": (int, 2, "components"),
    "sim.dof_regime": (_choice(tuple(DOF_REGIMES)), "high", "low (nu=3) or high (nu=50)"),
    "sim.weights": (_floats, (), "mixing weights; empty means uniform"),
    "sim.overlaps": (_floats, (), "upper-triangle pairwise overlaps, row-major; empty means default"),
    "sim.shuffle": (_bool, False, "randomly permute generated columns"),
    "sim.separation": (_choice(SEPARATION_MODES), "marginal",
                       "calibrated shift per coordinate (marginal) or over the whole block (total)"),
    "io.data": (_opt_str, "", "input data CSV"),
    "io.out": (_opt_str, "out", "output directory"),
    "io.fit": (_opt_str, "", "fit or report JSON to evaluate"),
    "io.labels": (_opt_str, "", "true labels CSV"),
    "io.manifest": (_opt_str, "", "simulation manifest JSON (true informative variables)"),
    "io.standardize": (_bool, True, "standardize input columns before fitting"),
    "io.heatmap_top": (int, 50, "variables in heatmap.csv when no stable set exists"),
}


class RunConfig(dict):
    """Validated settings keyed by dotted names."""

    @classmethod
    def build(cls, config_path=None, overrides=None):
        cfg = cls({k: v[1] for k, v in SETTINGS.items()})
        if config_path:
            cfg._apply(parse_config_text(_read_text(config_path)), str(config_path))
        cfg._apply(overrides or {}, "command line")
        cfg._check()
        return cfg

    def _apply(self, raw, origin):
        for key, value in raw.items():
            if key not in SETTINGS:
                raise ValidationError(f"{origin}: unknown setting {key!r}")
            parser = SETTINGS[key][0]
            try:
                self[key] = value if not isinstance(value, str) else parser(value)
            except ValueError as exc:
                raise ValidationError(f"{origin}: bad value for {key}: {exc}") from None

    def _check(self):
        if self["threads"] < 1:
            raise ValidationError("threads must be >= 1")
        if not 0 < self["select.threshold"] <= 1:
            raise ValidationError("select.threshold must lie in (0, 1]")
        if self["select.B"] < 1:
            raise ValidationError("select.B must be >= 1")

    @property
    def rng(self):
        return RngHandle(self["seed"])

    def em_config(self, stream=0):
        return EmConfig(
            max_iterations=self["em.max_iterations"],
            rel_tol=self["em.rel_tol"],
            n_restarts=self["em.n_restarts"],
            init_method=self["em.init_method"],
            gaussian_mode=self["em.gaussian_mode"],
            rng=self.rng.child(stream),
        )

    def penalty(self):
        return PenaltyConfig(self["penalty.lambda_mu"], self["penalty.lambda_sigma"])

    def grid(self, n):
        scale = math.sqrt(n) if self["grid.scale"] == "sqrt_n" else float(self["grid.scale"])
        return [
            PenaltyConfig(a * scale, b * scale)
            for a in self["grid.lambda_mu"]
            for b in self["grid.lambda_sigma"]
        ]

    def design(self):
        g = self["sim.g"]
        overlaps = None
        if self["sim.overlaps"]:
            vals = self["sim.overlaps"]
            iu = np.triu_indices(g, 1)
            if len(vals) != len(iu[0]):
                raise ValidationError(f"sim.overlaps needs {len(iu[0])} values for g={g}")
            overlaps = np.zeros((g, g))
            overlaps[iu] = vals
            overlaps = overlaps + overlaps.T
        return SimDesign(
            n=self["sim.n"], m=self["sim.m"], q=self["sim.q"], g=g,
            dof_regime=self["sim.dof_regime"], target_overlaps=overlaps,
            weights=self["sim.weights"] or None, seed=self.rng.child(0),
            separation=self["sim.separation"],
        )

    def as_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.items()
                if k not in ("threads", "log_level")}


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {ln}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValidationError(f"config line {ln}: empty key")
        out[key] = value.strip("\"'")
    return out


def _read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None


# --------------------------------------------------------------------------- helpers


def _load_data(cfg):
    path = cfg["io.data"]
    if not path:
        raise ValidationError("no input data (set io.data or --data)")
    values, names, rows = read_matrix_csv(path)
    if cfg["io.standardize"]:
        return standardize(values, names, rows)
    return DataMatrix(values, names, None, rows)


def _out(cfg, name):
    return os.path.join(cfg["io.out"], name)


def _params_json(params):
    return {
        "weights": params.weights,
        "locations": params.locations,
        "scales": params.scales,
        "dof": params.dof,
        "gaussian": params.gaussian,
    }


def _penalty_json(pc):
    return {"lambda_mu": pc.lambda_mu, "lambda_sigma": pc.lambda_sigma}


def _bic_json(rec):
    return {
        "g": rec.g,
        "lambda_mu": rec.penalty.lambda_mu,
        "lambda_sigma": rec.penalty.lambda_sigma,
        "m_selected": rec.m_selected,
        "effective_params": rec.effective_params,
        "bic": rec.bic,
        "penalized_loglik": rec.penalized_loglik,
        "converged": rec.converged,
        "failed": rec.failed,
    }


def _fit_json(res, data, cfg, rec=None):
    names = list(data.column_names)
    return {
        "command": "fit",
        "version": __version__,
        "g": res.params.g,
        "penalty": _penalty_json(res.penalty),
        "converged": res.converged,
        "n_iterations": res.n_iterations,
        "penalized_loglik": res.penalized_loglik,
        "bic": None if rec is None else _bic_json(rec),
        "column_names": names,
        "sample_ids": list(data.row_names or [str(j + 1) for j in range(data.n)]),
        "informative_mask": [bool(b) for b in res.informative_mask],
        "selected_variables": [int(d) for d in res.selected],
        "selected_names": [names[d] for d in res.selected],
        "assignments": [int(a) for a in res.assignments],
        "params": _params_json(res.params),
        "loglik_trace": res.loglik_trace,
        "restarts": res.restart_diagnostics,
        "settings": cfg.as_dict(),
    }


def _ranked_rows(report):
    names = report.column_names
    probs = report.selection_probabilities
    return [(k + 1, names[d], float(probs[d])) for k, d in enumerate(report.ranked_variables)]


def _report_json(report, data, cfg):
    names = list(data.column_names)
    fit_res = report.fit
    return {
        "command": "select",
        "version": __version__,
        "chosen_g": report.chosen_g,
        "chosen_lambda": _penalty_json(report.chosen_lambda),
        "bootstrap": report.bootstrap,
        "fallback": report.fallback,
        "threshold": report.threshold,
        "n_replicates": report.n_replicates,
        "n_failed": report.n_failed,
        "column_names": names,
        "sample_ids": list(data.row_names or [str(j + 1) for j in range(data.n)]),
        "selection_probabilities": report.selection_probabilities,
        "ranked_variables": [names[d] for d in report.ranked_variables],
        "stable_set": [int(d) for d in report.stable_set],
        "selected_variables": [int(d) for d in report.stable_set],
        "selected_names": [names[d] for d in report.stable_set],
        "assignments": None if fit_res is None else [int(a) for a in fit_res.assignments],
        "per_g": {
            str(g): {
                "lambda": _penalty_json(report.per_g_lambda[g]),
                "selection_probabilities": report.per_g_probabilities.get(g),
            }
            for g in sorted(report.per_g_lambda)
        },
        "bic_table": [_bic_json(r) for r in report.bic_table],
        "settings": cfg.as_dict(),
    }


def _write_selection_outputs(report, data, cfg, kind):
    payload = _report_json(report, data, cfg)
    payload["command"] = kind
    atomic_write(_out(cfg, "report.json"), to_json(payload))
    atomic_write(_out(cfg, "ranked.csv"),
                 rows_csv(["rank", "column_name", "selection_probability"], _ranked_rows(report)))
    if report.bic_table:
        atomic_write(_out(cfg, "bic.csv"), rows_csv(
            ["g", "lambda_mu", "lambda_sigma", "m_selected", "effective_params", "bic",
             "penalized_loglik", "converged"],
            [(r.g, r.penalty.lambda_mu, r.penalty.lambda_sigma, r.m_selected,
              r.effective_params, r.bic, r.penalized_loglik, r.converged) for r in report.bic_table],
        ))
    if report.fit is not None:
        atomic_write(_out(cfg, "heatmap.csv"), _heatmap_csv(report, data, cfg))


def _heatmap_csv(report, data, cfg):
    """Top-ranked variables (rows) by samples ordered by assigned cluster."""
    top = list(report.stable_set) or list(report.ranked_variables[: cfg["io.heatmap_top"]])
    top = [d for d in report.ranked_variables if d in set(top)]
    order = np.argsort(report.fit.assignments, kind="stable")
    samples = data.row_names or tuple(str(j + 1) for j in range(data.n))
    header = ["variable", *(samples[j] for j in order)]
    cluster_row = ["cluster", *(int(report.fit.assignments[j]) for j in order)]
    rows = [cluster_row] + [[data.column_names[d], *data.values[order, d]] for d in top]
    return rows_csv(header, rows)


# --------------------------------------------------------------------------- commands


def cmd_simulate(cfg):
    design = cfg.design()
    ds = generate(design)
    data = ds.data
    order = np.arange(data.p)
    if cfg["sim.shuffle"]:
        order = cfg.rng.child(9).generator().permutation(data.p)
    values = data.values[:, order]
    names = [data.column_names[d] for d in order]
    inv = np.argsort(order)
    informative = sorted(int(inv[d]) for d in ds.informative_indices)
    gp = ds.generating_params
    manifest = {
        "command": "simulate",
        "version": __version__,
        "design": {
            "n": design.n, "m": design.m, "q": design.q, "g": design.g,
            "dof_regime": design.dof_regime, "nu": design.nu,
            "weights": design.weights, "target_overlaps": design.target_overlaps,
        },
        "seed": cfg["seed"],
        "informative_indices": informative,
        "informative_names": [names[d] for d in informative],
        "column_names": names,
        "generating_params": {
            "weights": gp.weights,
            "locations": gp.locations[:, order],
            "scales": gp.scales[:, order],
            "dof": gp.dof,
            "scale_note": "locations and scales refer to the raw draws before standardization",
        },
        "settings": cfg.as_dict(),
    }
    atomic_write(_out(cfg, "data.csv"), matrix_csv(values, names, data.row_names))
    atomic_write(_out(cfg, "labels.csv"), labels_csv(data.row_names, ds.true_labels))
    atomic_write(_out(cfg, "manifest.json"), to_json(manifest))
    return EXIT_OK


def cmd_fit(cfg):
    data = _load_data(cfg)
    g = cfg["fit.g"]
    res = fit(data, g, cfg.penalty(), cfg.em_config())
    rec = modified_bic(res, g, data.p, cfg["select.bic_formula"],
                       likelihood=cfg["select.bic_likelihood"])
    atomic_write(_out(cfg, "fit.json"), to_json(_fit_json(res, data, cfg, rec)))
    atomic_write(_out(cfg, "assignments.csv"),
                 labels_csv(data.row_names or range(1, data.n + 1), res.assignments, "cluster"))
    if not res.converged:
        print(f"fit did not converge in {res.n_iterations} iterations", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_select(cfg):
    data = _load_data(cfg)
    grids = {g: cfg.grid(data.n) for g in cfg["select.g_candidates"]}
    report = select_g(
        data, cfg["select.g_candidates"], grids, B=cfg["select.B"],
        threshold=cfg["select.threshold"], config=cfg.em_config(),
        use_bootstrap=cfg["select.bootstrap"], threads=cfg["threads"],
        formula=cfg["select.bic_formula"], likelihood=cfg["select.bic_likelihood"],
    )
    if report.fallback:
        print("warning: bootstrap stable set was empty; used all variables", file=sys.stderr)
    _write_selection_outputs(report, data, cfg, "select")
    return EXIT_OK


def cmd_rank(cfg):
    data = _load_data(cfg)
    g = cfg["fit.g"]
    em_cfg = cfg.em_config()
    table = []
    if cfg["rank.select_lambda"]:
        lam, table = select_lambda(data, g, cfg.grid(data.n), em_cfg, cfg["threads"],
                                   cfg["select.bic_formula"], cfg["select.bic_likelihood"])
        parent = next(r.fit for r in table if r.penalty == lam and math.isfinite(r.bic))
    else:
        lam, parent = cfg.penalty(), None
    report = bootstrap_selection(data, g, lam, cfg["select.B"], cfg["select.threshold"], em_cfg,
                                 cfg["threads"], parent_fit=parent)
    report.bic_table = table
    report.per_g_lambda = {g: lam}
    report.per_g_probabilities = {g: report.selection_probabilities}
    _write_selection_outputs(report, data, cfg, "rank")
    return EXIT_OK


def cmd_evaluate(cfg):
    if not cfg["io.fit"] or not cfg["io.labels"]:
        raise ValidationError("evaluate needs io.fit (--fit) and io.labels (--labels)")
    with open(cfg["io.fit"], encoding="utf-8") as fh:
        est = json.load(fh)
    truth = read_labels_csv(cfg["io.labels"])
    assignments = est.get("assignments")
    if assignments is None:
        raise ValidationError(f"{cfg['io.fit']}: no assignments")
    if len(assignments) != len(truth):
        raise ValidationError(
            f"length mismatch: {len(assignments)} estimated labels vs {len(truth)} true labels"
        )
    names = est["column_names"]
    p = len(names)
    true_inf = []
    if cfg["io.manifest"]:
        with open(cfg["io.manifest"], encoding="utf-8") as fh:
            manifest = json.load(fh)
        pos = {nm: d for d, nm in enumerate(names)}
        try:
            true_inf = [pos[nm] for nm in manifest["informative_names"]]
        except KeyError as exc:
            raise ValidationError(f"manifest variable {exc} not in estimate columns") from None
    res = evaluate(truth, assignments, est.get("selected_variables", []), true_inf, p)
    payload = {
        "command": "evaluate",
        "version": __version__,
        "ari": res.ari,
        "ari_degenerate": res.ari_degenerate,
        "n_clusters_estimated": len(set(assignments)),
        "sensitivity": res.sensitivity,
        "specificity": res.specificity,
        "tp": res.tp, "fp": res.fp, "tn": res.tn, "fn": res.fn,
        "confusion": res.confusion,
        "settings": cfg.as_dict(),
    }
    atomic_write(_out(cfg, "eval.json"), to_json(payload))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "rank": cmd_rank,
    "evaluate": cmd_evaluate,
}

# flag dest -> setting key
FLAGS = {
    "seed": "seed", "threads": "threads", "out": "io.out", "data": "io.data",
    "g": "fit.g", "lambda_mu": "penalty.lambda_mu", "lambda_sigma": "penalty.lambda_sigma",
    "gaussian": "em.gaussian_mode", "restarts": "em.n_restarts",
    "g_candidates": "select.g_candidates", "bootstrap": "select.bootstrap", "B": "select.B",
    "threshold": "select.threshold",
    "n": "sim.n", "m": "sim.m", "q": "sim.q", "sim_g": "sim.g", "dof_regime": "sim.dof_regime",
    "shuffle": "sim.shuffle",
    "fit_json": "io.fit", "labels": "io.labels", "manifest": "io.manifest",
}


def build_parser():
    ap = argparse.ArgumentParser(prog="ptmix", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="settings file of dotted.key = value lines")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any setting (repeatable)")
    common.add_argument("--seed")
    common.add_argument("--threads")
    common.add_argument("--out", help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic data set")
    p.add_argument("--n")
    p.add_argument("--m")
    p.add_argument("--q")
    p.add_argument("--g", dest="sim_g")
    p.add_argument("--dof-regime", choices=sorted(DOF_REGIMES))
    p.add_argument("--shuffle", action="store_const", const="true")

    for name, helptext in (("fit", "fit one penalized mixture"),
                           ("select", "choose lambda and g by modified BIC"),
                           ("rank", "bootstrap selection probabilities at fixed g")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data", help="data CSV")
        p.add_argument("--gaussian", action="store_const", const="true",
                       help="Gaussian limit (no dof estimation)")
        p.add_argument("--restarts")
        if name in ("fit", "rank"):
            p.add_argument("--g")
            p.add_argument("--lambda-mu")
            p.add_argument("--lambda-sigma")
        if name in ("select", "rank"):
            p.add_argument("--B")
            p.add_argument("--threshold")
        if name == "select":
            p.add_argument("--g-candidates", help="comma-separated, e.g. 2,3,4,5")
            p.add_argument("--bootstrap", action="store_const", const="true")
            p.add_argument("--no-bootstrap", dest="bootstrap", action="store_const", const="false")

    p = sub.add_parser("evaluate", parents=[common], help="score a fit or report against truth")
    p.add_argument("--fit", dest="fit_json", help="fit.json or report.json")
    p.add_argument("--labels", help="true labels CSV")
    p.add_argument("--manifest", help="simulation manifest with informative variables")
    return ap


def _overrides(args):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for dest, key in FLAGS.items():
        val = getattr(args, dest, None)
        if val is not None:
            out[key] = str(val)
    if args.command == "rank" and ("penalty.lambda_mu" in out or "penalty.lambda_sigma" in out):
        out.setdefault("rank.select_lambda", "false")
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.build(args.config, _overrides(args))
        logging.basicConfig(level=cfg["log_level"].upper(), format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        for d in getattr(exc, "diagnostics", []) or []:
            print(f"  {d}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PtmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
