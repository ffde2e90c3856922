"""
Bayesian-network model uncertainty toolkit
Command-line entry point

    python app.py index --model m.json --eta 0.5
    python app.py rank --model orr-tableB1 --qoi xstar --eta-uniform 1
"""

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from engine.bn_core import DirectedGraphModel
from engine.catalog import PRESETS, load_preset, prepare_qoi
from engine.cpd_models import (
    centered,
    fit_histogram,
    fit_kde,
    fit_linear_gaussian_mle,
    residuals,
    two_point_noise,
    with_noise,
)
from engine.divergences import MisspecificationBudget
from engine.indices import QuantityOfInterest, model_uncertainty_index, qoi_mean, sensitivity_index
from engine.workflow import assess, build_budget, correctability_check, rank_components, stress_test
from processors.csv_processor import read_data_csv, read_eta_csv, read_residuals_csv
from processors.excel_builder import build_report_workbook
from processors.model_spec import ModelSpecDocument, load_model, resolve_budget, serialize_model
from processors.report_builder import (
    correctability_report,
    index_report,
    ranking_report,
    stress_frame,
    stress_report,
    to_json,
    write_curve_csv,
    write_text,
)
from utils.config import LOG_LEVEL, OUTPUT_DIR, MonteCarloConfig
from utils.errors import InvalidParams, MissingBudget, ModelUncertaintyError

logger = logging.getLogger(__name__)


# ==================== ARGUMENTS ====================

def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="preset name or JSON model file")
    common.add_argument("--qoi", help="vertex name, builtin (xstar) or expression")
    common.add_argument("--eta", type=float, help="ambiguity radius")
    common.add_argument("--eta-file", help="CSV with columns vertex,eta")
    common.add_argument("--eta-uniform", type=float, help="same eta for every stochastic vertex")
    common.add_argument("--seed", type=int)
    common.add_argument("--samples", type=int, help="Monte-Carlo sample count")
    common.add_argument("--out", help="report path (default stdout)")
    common.add_argument("--threads", type=int)
    common.add_argument("--tol", type=float, help="tolerance on the index")
    common.add_argument("--tol-mode", choices=("absolute", "relative"), default="relative")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="bnuq", description="Model uncertainty indices for Bayesian networks")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("index", parents=[common], help="whole-model uncertainty index")

    sens = sub.add_parser("sensitivity", parents=[common], help="sensitivity index of one vertex")
    sens.add_argument("--vertex", required=True)
    sens.add_argument("--set", choices=("D_l", "D_lP"), default="D_l")
    sens.add_argument("--jensen", action="store_true")

    rank = sub.add_parser("rank", parents=[common], help="rank vertices by sensitivity")
    rank.add_argument("--set", choices=("D_l", "D_lP"), default="D_l")
    rank.add_argument("--jensen", action="store_true")
    rank.add_argument("--xlsx", help="also write a formatted workbook")

    stress = sub.add_parser("stress", parents=[common], help="sweep eta and emit an I+/I- curve")
    stress.add_argument("--eta-grid", help="comma-separated eta values")
    stress.add_argument("--eta-max", type=float)
    stress.add_argument("--eta-steps", type=int, default=10)
    stress.add_argument("--vertex")
    stress.add_argument("--set", choices=("D_l", "D_lP"), default="D_l")
    stress.add_argument("--jensen", action="store_true")
    stress.add_argument("--csv", nargs="?", const=os.path.join(OUTPUT_DIR, "stress_curve.csv"),
                        help="write the curve as CSV")
    stress.add_argument("--xlsx")

    fit = sub.add_parser("fit", parents=[common], help="fit a linear-Gaussian model from CSV data")
    fit.add_argument("--data", required=True)
    fit.add_argument("--density", choices=("kde", "hist"), default="kde")
    fit.add_argument("--bins-or-bandwidth", type=float)

    correct = sub.add_parser("correct-check", parents=[common], help="correctability of one replaced CPD")
    correct.add_argument("--replace", required=True,
                         help="NAME=kde:FILE | NAME=hist:FILE[:BINS] | NAME=twopoint:HALF_WIDTH")
    correct.add_argument("--verify", action="store_true", help="recompute the unchanged indices too")

    catalog = sub.add_parser("catalog", parents=[common], help="emit a preset as a model document")
    catalog.add_argument("name", nargs="?", help="preset name; omit to list presets")
    return parser


# ==================== LOADING ====================

def _preset_document(name: str) -> ModelSpecDocument:
    model, qoi_text = load_preset(name)
    qoi = {"vertex": qoi_text, "slope": 1.0, "offset": 0.0} if qoi_text in model.labels \
        else {"builtin": qoi_text}
    return ModelSpecDocument(model, qoi)


def load_document(target: Optional[str]) -> ModelSpecDocument:
    if not target:
        raise InvalidParams("--model is required")
    if target in PRESETS:
        return _preset_document(target)
    return load_model(target)


def resolve_target(document: ModelSpecDocument, qoi_text: Optional[str]) -> Tuple[DirectedGraphModel, QuantityOfInterest]:
    """Model (augmented for builtin QoIs) and QoI; --qoi wins over the document"""
    text = qoi_text or document.qoi_text()
    if text is None:
        raise InvalidParams("No QoI: pass --qoi or add one to the model document")
    model, qoi = prepare_qoi(document.model, text)
    if qoi_text is None and document.qoi and "vertex" in document.qoi:
        qoi = QuantityOfInterest(qoi.vertices, "affine", document.qoi["slope"],
                                 document.qoi["offset"], name=qoi.name)
    return model, qoi


def mc_settings(document: ModelSpecDocument, args) -> MonteCarloConfig:
    """CLI flag > document mc block > environment"""
    return document.mc_config().replace(samples=args.samples, seed=args.seed, threads=args.threads)


def budget_from_args(document: ModelSpecDocument, args) -> MisspecificationBudget:
    overrides: Dict[str, float] = {}
    if args.eta_file:
        overrides.update(read_eta_csv(args.eta_file))
    fallback = args.eta
    if args.eta_uniform is not None:
        overrides.update({document.model.labels[v]: args.eta_uniform
                          for v in document.model.stochastic_vertices()
                          if document.model.labels[v] not in overrides})
    return resolve_budget(document, fallback, overrides)


def single_eta(args) -> float:
    eta = args.eta if args.eta is not None else args.eta_uniform
    if eta is None:
        raise MissingBudget("Pass --eta (or --eta-uniform) for this command")
    return eta


# ==================== COMMANDS ====================

def cmd_index(args) -> str:
    document = load_document(args.model)
    model, qoi = resolve_target(document, args.qoi)
    mc = mc_settings(document, args)
    result = model_uncertainty_index(model, qoi, single_eta(args), mc)
    report = index_report(result, model.labels, qoi.name, qoi_mean(model, qoi, mc))
    if args.tol is not None:
        verdict = assess(result.plus.value, report["qoi_mean"], args.tol, args.tol_mode)
        report["indices"][0]["assessment"] = vars(verdict)
    return to_json(report)


def cmd_sensitivity(args) -> str:
    document = load_document(args.model)
    model, qoi = resolve_target(document, args.qoi)
    mc = mc_settings(document, args)
    l = model.graph.index_of(args.vertex)
    if args.eta is not None:
        eta = args.eta
    else:
        eta = budget_from_args(document, args).eta_for(l)
        if eta is None:
            raise MissingBudget(f"No eta for vertex {args.vertex}")
    result = sensitivity_index(model, qoi, l, eta, args.set, mc, args.jensen)
    report = index_report(result, model.labels, qoi.name, qoi_mean(model, qoi, mc))
    if args.tol is not None:
        verdict = assess(result.plus.value, report["qoi_mean"], args.tol, args.tol_mode)
        report["indices"][0]["assessment"] = vars(verdict)
    return to_json(report)


def cmd_rank(args) -> str:
    document = load_document(args.model)
    model, qoi = resolve_target(document, args.qoi)
    mc = mc_settings(document, args)
    budget = budget_from_args(document, args)
    ranking = rank_components(model, qoi, budget, mc, args.set, args.jensen, args.tol, args.tol_mode)
    report = ranking_report(ranking, model.labels, qoi.name)
    if args.xlsx:
        build_report_workbook(report, args.xlsx)
    return to_json(report)


def _eta_grid(args) -> List[float]:
    if args.eta_grid:
        try:
            return [float(v) for v in args.eta_grid.split(",") if v.strip()]
        except ValueError:
            raise InvalidParams(f"--eta-grid must be comma-separated numbers, got {args.eta_grid!r}")
    top = args.eta_max if args.eta_max is not None else args.eta
    if top is None:
        raise MissingBudget("Pass --eta-grid or --eta-max for stress")
    if args.eta_steps < 1:
        raise InvalidParams("--eta-steps must be >= 1")
    return [float(v) for v in np.linspace(0.0, top, args.eta_steps + 1)]


def cmd_stress(args) -> str:
    document = load_document(args.model)
    model, qoi = resolve_target(document, args.qoi)
    mc = mc_settings(document, args)
    vertex = model.graph.index_of(args.vertex) if args.vertex else None
    results = stress_test(model, qoi, _eta_grid(args), vertex, mc, args.set, args.jensen)
    report = stress_report(results, model.labels, qoi.name, qoi_mean(model, qoi, mc))
    frame = stress_frame(results, model.labels)
    if args.csv:
        write_curve_csv(frame, args.csv)
    if args.xlsx:
        build_report_workbook(report, args.xlsx, stress=frame)
    return to_json(report)


def cmd_fit(args) -> str:
    """Least-squares fit on the document's graph plus data-estimated eta per vertex"""
    document = load_document(args.model)
    graph = document.model.graph
    data = read_data_csv(args.data, graph.labels)
    fitted = fit_linear_gaussian_mle(data, graph)
    resid = residuals(fitted, data)
    # parentless baselines take raw observations
    samples = {v: (data.iloc[:, v].to_numpy() if not fitted.cpds[v].parents else r)
               for v, r in resid.items()}
    budget = build_budget(fitted, samples, None, args.density, args.bins_or_bandwidth, args.eta)
    budgets = {graph.label(v): eta for v, eta in sorted(budget.per_vertex.items())}
    return serialize_model(fitted, qoi=document.qoi, budgets=budgets, mc=document.mc or None)


def _replacement_noise(spec: str):
    """kde:FILE | hist:FILE[:BINS] | twopoint:HALF_WIDTH, centred to mean zero"""
    kind, _, rest = spec.partition(":")
    if kind == "twopoint":
        try:
            return two_point_noise(float(rest))
        except ValueError:
            raise InvalidParams(f"twopoint needs a half width, got {rest!r}")
    if kind == "kde":
        return centered(fit_kde(read_residuals_csv(rest)))
    if kind == "hist":
        path, bins = rest, None
        head, _, tail = rest.rpartition(":")
        if head and tail.isdigit():
            path, bins = head, int(tail)
        values = read_residuals_csv(path)
        bins = bins or min(2000, int(np.ceil(np.sqrt(values.size))))
        return centered(fit_histogram(values, bins))
    raise InvalidParams(f"Unknown replacement {kind!r}; use kde, hist or twopoint")


def cmd_correct_check(args) -> str:
    document = load_document(args.model)
    model, qoi = resolve_target(document, args.qoi)
    mc = mc_settings(document, args)
    name, sep, spec = args.replace.partition("=")
    if not sep:
        raise InvalidParams("--replace must look like NAME=kind:ARG")
    l = model.graph.index_of(name.strip())
    corrected = model.replace_cpd(l, with_noise(model.cpds[l], _replacement_noise(spec.strip())))
    budget = budget_from_args(document, args)
    report = correctability_check(model, corrected, qoi, budget, mc, verify_unchanged=args.verify)
    return to_json(correctability_report(report, model.labels, qoi.name))


def cmd_catalog(args) -> str:
    if not args.name:
        listing = {name: {"qoi": qoi} for name, (_, qoi) in sorted(PRESETS.items())}
        return json.dumps({"presets": listing}, indent=2, sort_keys=True) + "\n"
    document = _preset_document(args.name)
    return serialize_model(document)


HANDLERS = {
    "index": cmd_index,
    "sensitivity": cmd_sensitivity,
    "rank": cmd_rank,
    "stress": cmd_stress,
    "fit": cmd_fit,
    "correct-check": cmd_correct_check,
    "catalog": cmd_catalog,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand. Reports go to --out or stdout; errors go to stderr as JSON.
    Exit 0 on success, 2 for domain errors, 1 for anything unexpected.
    """
    args = build_parser().parse_args(argv)
    try:
        text = HANDLERS[args.command](args)
        write_text(text, args.out)
        return 0
    except ModelUncertaintyError as e:
        logger.error("%s: %s", e.code, e.message)
        sys.stderr.write(json.dumps(e.to_dict(), sort_keys=True, default=str) + "\n")
        return 2
    except Exception as e:
        logger.exception("Unexpected failure in %s", args.command)
        sys.stderr.write(json.dumps({"error": "InternalError", "message": str(e), "details": {}},
                                    sort_keys=True) + "\n")
        return 1


def main():
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL, logging.WARNING),
        format="%(asctime)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    sys.exit(run_command())


if __name__ == "__main__":
    main()
