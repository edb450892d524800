"""``scmdyn <simulate|evaluate|sweep|validate> --config FILE [--out DIR] [--jobs K]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
from importlib import metadata
from pathlib import Path

from . import __version__, bandit
from .config import (
    ExperimentConfig,
    bandit_params,
    build_interventions,
    build_model,
    lending_parts,
    lending_policies,
    load_config,
    output_dir,
)
from .errors import ConfigSchemaError, ScmError
from .interventions import apply, compose
from .lending import (
    RESULT_COLUMNS,
    ROBUSTNESS_COLUMNS,
    bureau_experiment,
    build_lending_scm,
    credit_bureau_intervention,
    evaluate_lending_policy,
    result_row,
    robustness_sweep,
    threshold_sweep,
)
from .ope import (
    TABLE_COLUMNS,
    LoggedDataset,
    log_dataset,
    value_counterfactual,
    value_importance_sampling,
    value_model_based,
)
from .sampling import sample_worlds
from .world import worlds_to_csv

REPORT_COLUMNS = ("method", "estimand", "target", "behavior", "mean", "std_error", "n_used")
EXIT_CONFIG, EXIT_RUN = 2, 1


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow(["" if isinstance(r.get(c), float) and math.isnan(r[c]) else r.get(c, "") for c in columns])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if hasattr(o, "item"):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def write_atomic(directory: Path, files: dict) -> None:
    """Write every file via a temporary sibling and ``os.replace``."""
    directory.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{name}.", suffix=".tmp")
            staged.append((tmp, directory / name))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)


def _versions() -> dict:
    out = {"scmdyn": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:  # pragma: no cover
            out[pkg] = "unknown"
    return out


def manifest(command: str, cfg: ExperimentConfig, fingerprint: str, files: dict) -> str:
    return _json({
        "command": command,
        "config_sha256": cfg.sha256,
        "graph_fingerprint": fingerprint,
        "seeds": {"seed": cfg.seed},
        "n": cfg.n,
        "versions": _versions(),
        "outputs": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
    })


# --- commands -------------------------------------------------------------------


def _policy_iv(cfg, graph):
    ivs = [build_interventions(cfg, graph)]
    pol = cfg.raw.get("policy", {})
    if cfg.model_type == "lending" and pol:
        groups, params, _ = lending_parts(cfg)
        ivs.insert(0, lending_policies(cfg, groups, params)[0].intervention(groups.bounds))
    elif cfg.model_type == "bandit" and ("target" in pol or "targets" in pol):
        name = pol.get("target") or pol["targets"][0]
        ivs.insert(0, bandit.make_policy(name, bandit_params(cfg)).intervention)
    return compose(ivs)


def cmd_simulate(cfg: ExperimentConfig, jobs: int):
    graph = build_model(cfg)
    g = apply(_policy_iv(cfg, graph), graph)
    worlds = sample_worlds(g, cfg.n, cfg.seed, jobs=jobs)
    return {"worlds.csv": worlds_to_csv(worlds, graph=g)}, g.fingerprint, f"simulated {cfg.n} worlds"


def _report_row(rep, target, behavior=""):
    return {"method": rep.method, "estimand": rep.estimand, "target": target, "behavior": behavior, "mean": rep.mean,
            "std_error": rep.std_error, "n_used": rep.n_used}


def _bandit_evaluate(cfg, graph, iv, jobs):
    est = cfg.raw.get("estimator", {})
    method = est.get("method", "MB")
    pol = cfg.raw.get("policy", {})
    params = bandit_params(cfg)
    targets = pol.get("targets") or ([pol["target"]] if "target" in pol else ["P1", "P2", "P3"])
    model = apply(iv, graph)
    reports = []
    if method == "MB":
        for t in targets:
            p = bandit.make_policy(t, params)
            reports.append((value_model_based(model, p.intervention, "O", cfg.n, cfg.seed, "E[O]", jobs), t, ""))
        return reports
    behavior = bandit.make_policy(pol.get("behavior", "P1"), params)
    if "logs" in est:
        data = LoggedDataset.from_jsonl(cfg.path(est["logs"]))
    else:
        data = log_dataset(model, behavior, est.get("n_logs", cfg.n), cfg.seed, ("A", "O"))
    for t in targets:
        p = bandit.make_policy(t, params)
        if method == "IS":
            rep = value_importance_sampling(
                data, lambda w, p=p: {"A": p.action_prob(bandit.context_from_observation(w, params), w["A"])}, "O",
                est.get("is_variant", "self-normalized"), "E[O]")
        else:
            rep = value_counterfactual(apply(behavior.intervention, model), data, p.intervention, "O",
                                       est.get("m_posterior", 10), cfg.seed, est.get("check_support", False), "E[O]")
        reports.append((rep, t, behavior.name))
    return reports


def cmd_evaluate(cfg: ExperimentConfig, jobs: int):
    graph = build_model(cfg)
    iv = build_interventions(cfg, graph)
    if cfg.model_type == "lending":
        groups, params, _ = lending_parts(cfg)
        extra = iv if iv.members else None
        rows = []
        for pol in lending_policies(cfg, groups, params):
            rows.append(result_row(pol.criterion, pol, evaluate_lending_policy(graph, pol, extra, cfg.n, cfg.seed, jobs)))
        files = {"lending_results.csv": _csv(rows, RESULT_COLUMNS)}
        return files, graph.fingerprint, f"evaluated {len(rows)} threshold policies"
    if cfg.model_type == "bandit":
        reports = _bandit_evaluate(cfg, graph, iv, jobs)
    else:
        est = cfg.raw.get("estimator", {})
        method, query = est.get("method", "MB"), est.get("query")
        if query is None or query not in graph or graph.shape(query) != ():
            raise ConfigSchemaError("estimator.query", "name an unplated node of the graph")
        if method == "MB":
            reports = [(value_model_based(graph, iv, query, cfg.n, cfg.seed, jobs=jobs), iv.describe(), "")]
        elif method == "CF" and "logs" in est:
            data = LoggedDataset.from_jsonl(cfg.path(est["logs"]))
            reports = [(value_counterfactual(graph, data, iv, query, est.get("m_posterior", 10), cfg.seed,
                                             est.get("check_support", False)), iv.describe(), "logged")]
        else:
            raise ConfigSchemaError("estimator.method", f"{method} on a graph model needs estimator.logs (CF only)")
    rows = [_report_row(r, t, b) for r, t, b in reports]
    files = {"reports.csv": _csv(rows, REPORT_COLUMNS), "reports.json": _json([r.to_dict() for r, _, _ in reports])}
    return files, graph.fingerprint, "\n".join(f"{r['method']} {r['target']}: {r['mean']:.6g} (se {r['std_error']:.3g})"
                                               for r in rows)


def cmd_sweep(cfg: ExperimentConfig, jobs: int):
    sw = cfg.raw.get("sweep")
    if sw is None:
        raise ConfigSchemaError("sweep", "the sweep command needs a sweep section")
    kind = sw["kind"]
    graph = build_model(cfg)
    if kind == "bandit_ope":
        res = bandit.compare_ope_methods(
            sw.get("protocol", "mismatch"), bandit_params(cfg), cfg.seed,
            policies=sw.get("policies", ("P1", "P2", "P3")), methods=sw.get("methods", ("IS", "MB", "CF")),
            sigmas=sw.get("sigmas", bandit.MISMATCH_SIGMAS), families=sw.get("families", bandit.MISMATCH_FAMILIES),
            n_logs=sw.get("n_logs", 5000), n_eval=sw.get("n_eval", 5000), m_posterior=sw.get("m_posterior", 10),
            jobs=jobs)
        mae = {m: {"mae": v[0], "se": v[1]} for m, v in res.mae().items()}
        files = {"error_table.csv": _csv(res.rows, TABLE_COLUMNS), "mae.json": _json({"mae": mae, "truths": res.truths})}
        summary = "  ".join(f"MAE[{m}]={v['mae']:.4g}" for m, v in mae.items()) + f"  ({len(res.rows)} rows)"
        return files, graph.fingerprint, summary
    groups, params, _ = lending_parts(cfg)
    if kind == "bureau":
        transform, level = sw.get("transform", "floor"), sw.get("level", 600.0)
        exp = bureau_experiment(groups, params, sw.get("criteria", ("MaxProf", "DemPar", "EqOpp")), transform, level,
                                cfg.n, cfg.seed, jobs)
        base = evaluate_lending_policy(build_lending_scm(groups, params), None, None, cfg.n, cfg.seed, jobs)
        files = {"lending_bureau.csv": _csv(exp.rows, RESULT_COLUMNS),
                 "lending_no_bureau.csv": _csv(exp.baseline, RESULT_COLUMNS)}
        summary = {
            "baseline_profit": base["profit"].mean,
            "baseline_profit_se": base["profit"].std_error,
            "profit_change_vs_baseline": {r["criterion"]: r["E_U"] - base["profit"].mean for r in exp.rows},
            "profit_change_vs_same_policy": {c: exp.sensitivity(c) for c in exp.policies},
        }
        files["bureau_summary.json"] = _json(summary)
        if sw.get("tau_0_grid") and sw.get("tau_1_grid"):
            rows = threshold_sweep(groups, params, sw["tau_0_grid"], sw["tau_1_grid"],
                                   credit_bureau_intervention(transform, level), cfg.n, cfg.seed, jobs)
            files["threshold_grid.csv"] = _csv(rows, RESULT_COLUMNS)
        return files, graph.fingerprint, f"bureau experiment: {len(exp.rows)} criteria"
    rows = robustness_sweep(groups, params, sw.get("steps", (1, 2, 3, 4, 5)),
                            sw.get("variants", ("none", "thresholds", "outcomes")), cfg.n, cfg.seed, jobs)
    return {"robustness.csv": _csv(rows, ROBUSTNESS_COLUMNS)}, graph.fingerprint, f"robustness: {len(rows)} rows"


COMMANDS = {"simulate": cmd_simulate, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def run_config(command: str, cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    """Run one command and write its outputs plus ``manifest.json`` into ``out``."""
    files, fingerprint, summary = COMMANDS[command](cfg, jobs)
    files["manifest.json"] = manifest(command, cfg, fingerprint, files)
    write_atomic(out, files)
    return {"files": sorted(files), "summary": summary}


def _fail(kind, message, code, field=None):
    payload = {"error": kind, "message": message}
    if field is not None:
        payload["field"] = field
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scmdyn", description="Run SCM simulation and policy-evaluation experiments.")
    parser.add_argument("--version", action="version", version=f"scmdyn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "sample worlds and write them as CSV"),
                       ("evaluate", "run a policy-evaluation estimator"),
                       ("sweep", "run a bandit OPE or lending experiment sweep"),
                       ("validate", "check a config without running it")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", help="output directory (default: config output.dir, $SCMDYN_OUT, ./scmdyn_out)")
        p.add_argument("--jobs", type=int, default=None, help="worker threads; never changes results")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigSchemaError as exc:
        return _fail("ConfigSchemaError", str(exc), EXIT_CONFIG, exc.field)
    if args.command == "validate":
        print(json.dumps({"valid": True, "config_sha256": cfg.sha256}, sort_keys=True))
        return 0
    jobs = args.jobs or int(cfg.raw.get("jobs", 1))
    if jobs < 1:
        return _fail("ConfigSchemaError", "--jobs must be >= 1", EXIT_CONFIG, "jobs")
    out = output_dir(cfg, args.out)
    try:
        result = run_config(args.command, cfg, out, jobs)
    except ConfigSchemaError as exc:
        return _fail("ConfigSchemaError", str(exc), EXIT_CONFIG, exc.field)
    except (ScmError, ValueError, OSError) as exc:
        return _fail(type(exc).__name__, f"{args.command} {args.config}: {exc}", EXIT_RUN)
    print(result["summary"])
    print(f"wrote {', '.join(result['files'])} to {out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
