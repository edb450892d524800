"""Experiment configs: JSON schema, validation and model construction."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from . import bandit
from .equations import make_equation, registered_equations
from .errors import ConfigSchemaError, ScmError
from .graph import ScmGraph
from .interventions import Atomic, Policy, compose
from .lending import (
    BetaScoreGroup,
    GroupModel,
    LendingParams,
    ThresholdPolicy,
    build_lending_scm,
    compute_thresholds,
    credit_bureau_intervention,
    government_intervention,
    load_tabulated_groups,
    marginal_outcome_variant,
)
from .priors import prior_from_dict
from .serialize import load_graph

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

BANDIT_PARAMS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "prior_family": {"enum": ["uniform", "gaussian"]},
        "confounded": {"type": "boolean"},
        "observation_noise": {"type": "boolean"},
        "hidden_lo": _NUM,
        "hidden_hi": _NUM,
    },
}

LENDING_PARAMS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "u_plus": _NUM, "u_minus": _NUM, "c_plus": _NUM, "c_minus": _NUM,
        "gamma": {"type": "number", "minimum": 0, "maximum": 1},
        "score_bounds": _PAIR,
        "n_units": _POS_INT,
        "steps": _POS_INT,
        "outcome_offset": _NUM,
        "clamp_scores": {"type": ["boolean", "null"]},
        "theta": {"type": "number", "minimum": 0, "maximum": 1},
        "score_shapes": {"type": "array", "items": _PAIR, "minItems": 2, "maxItems": 2},
        "rho_centers": _PAIR,
        "rho_scale": {"type": "number", "exclusiveMinimum": 0},
        "tabulated_csv": {"type": "string"},
        "thresholds": _PAIR,
    },
}

INTERVENTION = {
    "type": "object",
    "minProperties": 1,
    "maxProperties": 1,
    "properties": {
        "do": {
            "type": "object", "required": ["node", "value"], "additionalProperties": False,
            "properties": {"node": {"type": "string"}, "value": {"type": ["number", "boolean"]}},
        },
        "do_policy": {
            "type": "object", "required": ["node"], "additionalProperties": False,
            "properties": {
                "node": {"type": "string"},
                "equation": {"type": "string"},
                "inputs": {"type": "array", "items": {"type": "string"}},
                "params": {"type": "object"},
                "prior": {"type": "object"},
            },
        },
        "bureau": {
            "type": "object", "additionalProperties": False,
            "properties": {"transform": {"enum": ["floor", "cap", "identity"]}, "level": _NUM},
        },
        "government": {
            "type": "object", "required": ["shift"], "additionalProperties": False,
            "properties": {"shift": {"oneOf": [_NUM, _PAIR]}},
        },
        "marginal_outcomes": {"type": "object", "additionalProperties": False, "properties": {}},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "scmdyn experiment",
    "type": "object",
    "required": ["model", "seed"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["type"],
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["bandit", "lending", "graph"]},
                "params": {"type": "object"},
                "file": {"type": "string"},
            },
        },
        "interventions": {"type": "array", "items": INTERVENTION},
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target": {"type": "string"},
                "targets": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "behavior": {"type": "string"},
                "criterion": {"enum": ["MaxProf", "DemPar", "EqOpp", "Manual"]},
                "criteria": {"type": "array", "items": {"enum": ["MaxProf", "DemPar", "EqOpp"]}, "minItems": 1},
                "tau": _PAIR,
            },
        },
        "estimator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["MB", "IS", "CF"]},
                "query": {"type": "string"},
                "m_posterior": _POS_INT,
                "n_logs": {"type": "integer", "minimum": 2},
                "logs": {"type": "string"},
                "is_variant": {"enum": ["self-normalized", "unnormalized"]},
                "check_support": {"type": "boolean"},
            },
        },
        "sweep": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["bandit_ope", "bureau", "robustness"]},
                "protocol": {"enum": ["mismatch", "omitted-variable", "control"]},
                "policies": {"type": "array", "items": {"type": "string"}, "minItems": 2},
                "methods": {"type": "array", "items": {"enum": ["MB", "IS", "CF"]}, "minItems": 1},
                "sigmas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "families": {"type": "array", "items": {"enum": ["uniform", "gaussian"]}, "minItems": 1},
                "n_logs": {"type": "integer", "minimum": 2},
                "n_eval": {"type": "integer", "minimum": 2},
                "m_posterior": _POS_INT,
                "criteria": {"type": "array", "items": {"enum": ["MaxProf", "DemPar", "EqOpp"]}, "minItems": 1},
                "transform": {"enum": ["floor", "cap", "identity"]},
                "level": _NUM,
                "tau_0_grid": {"type": "array", "items": _NUM},
                "tau_1_grid": {"type": "array", "items": _NUM},
                "steps": {"type": "array", "items": _POS_INT, "minItems": 1},
                "variants": {"type": "array", "items": {"enum": ["none", "thresholds", "outcomes"]}, "minItems": 1},
            },
        },
        "n": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "jobs": _POS_INT,
        "output": {"type": "object", "additionalProperties": False, "properties": {"dir": {"type": "string"}}},
    },
}


def _field(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


@dataclass
class ExperimentConfig:
    """A validated config plus the directory its relative paths resolve against."""

    raw: dict
    base_dir: Path

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def n(self) -> int:
        return int(self.raw.get("n", 5000))

    @property
    def model_type(self) -> str:
        return self.raw["model"]["type"]

    @property
    def params(self) -> dict:
        return dict(self.raw["model"].get("params", {}))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file (schema first, then names and files)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigSchemaError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSchemaError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from exc
    cfg = ExperimentConfig(raw, path.parent)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    err = jsonschema.exceptions.best_match(validator.iter_errors(cfg.raw))
    if err is not None:
        raise ConfigSchemaError(_field(err.absolute_path), err.message)
    model = cfg.raw["model"]
    sub = {"bandit": BANDIT_PARAMS, "lending": LENDING_PARAMS}.get(model["type"])
    if sub is not None:
        err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(sub).iter_errors(model.get("params", {})))
        if err is not None:
            raise ConfigSchemaError(_field(("model", "params") + tuple(err.absolute_path)), err.message)
    if model["type"] == "graph":
        if "file" not in model:
            raise ConfigSchemaError("model.file", "graph models need a file")
        if not cfg.path(model["file"]).is_file():
            raise ConfigSchemaError("model.file", f"no such file: {model['file']}")
    elif model.get("params", {}).get("tabulated_csv") and not cfg.path(model["params"]["tabulated_csv"]).is_file():
        raise ConfigSchemaError("model.params.tabulated_csv", "no such file")
    logs = cfg.raw.get("estimator", {}).get("logs")
    if logs and not cfg.path(logs).is_file():
        raise ConfigSchemaError("estimator.logs", f"no such file: {logs}")
    try:
        graph = build_model(cfg)
    except ConfigSchemaError:
        raise
    except ScmError as exc:
        raise ConfigSchemaError("model.params", str(exc)) from exc
    build_interventions(cfg, graph)
    _check_policy(cfg)


def _check_policy(cfg):
    pol = cfg.raw.get("policy", {})
    names = [pol[k] for k in ("target", "behavior") if k in pol] + list(pol.get("targets", []))
    names += list(cfg.raw.get("sweep", {}).get("policies", []))
    if cfg.model_type == "bandit":
        for name in names:
            try:
                bandit.make_policy(name)
            except ScmError as exc:
                raise ConfigSchemaError("policy", str(exc)) from exc
    kind = cfg.raw.get("sweep", {}).get("kind")
    needs = {"bandit_ope": "bandit", "bureau": "lending", "robustness": "lending"}.get(kind)
    if needs and needs != cfg.model_type:
        raise ConfigSchemaError("sweep.kind", f"sweep {kind!r} needs a {needs} model")


# --- model construction ---------------------------------------------------------


def bandit_params(cfg: ExperimentConfig) -> bandit.BanditParams:
    return bandit.BanditParams(**cfg.params)


def lending_parts(cfg: ExperimentConfig) -> tuple[GroupModel, LendingParams, tuple | None]:
    p = cfg.params
    theta = p.pop("theta", 0.5)
    shapes = p.pop("score_shapes", [[4.0, 4.0], [6.0, 3.0]])
    centers = p.pop("rho_centers", [560.0, 540.0])
    scale = p.pop("rho_scale", 40.0)
    tab = p.pop("tabulated_csv", None)
    thresholds = p.pop("thresholds", None)
    params = LendingParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in p.items()})
    lo, hi = params.score_bounds
    if tab:
        groups = load_tabulated_groups(cfg.path(tab), theta)
    else:
        groups = GroupModel(tuple(BetaScoreGroup(a, b, c, scale, lo, hi) for (a, b), c in zip(shapes, centers)), theta)
    return groups, params, None if thresholds is None else tuple(thresholds)


def build_model(cfg: ExperimentConfig) -> ScmGraph:
    if cfg.model_type == "bandit":
        return bandit.build_bandit_scm(bandit_params(cfg))
    if cfg.model_type == "lending":
        groups, params, thresholds = lending_parts(cfg)
        return build_lending_scm(groups, params, thresholds)
    try:
        return load_graph(cfg.path(cfg.raw["model"]["file"]))
    except (ScmError, KeyError, TypeError, ValueError) as exc:
        raise ConfigSchemaError("model.file", f"invalid graph description: {exc}") from exc


def _resolve(graph, node, field):
    try:
        return graph.resolve(node)
    except ScmError:
        raise ConfigSchemaError(field, f"unknown node {node!r}") from None


def build_interventions(cfg: ExperimentConfig, graph: ScmGraph):
    """The config's intervention list as one composite (checked against ``graph``)."""
    out = []
    for i, spec in enumerate(cfg.raw.get("interventions", [])):
        (kind, body), = spec.items()
        field = f"interventions[{i}].{kind}"
        if kind == "do":
            _resolve(graph, body["node"], field + ".node")
            iv = Atomic(body["node"], body["value"])
        elif kind == "do_policy":
            _resolve(graph, body["node"], field + ".node")
            if ("equation" in body) == ("prior" in body):
                raise ConfigSchemaError(field, "give exactly one of equation / prior")
            if "prior" in body:
                try:
                    iv = Policy(body["node"], prior_from_dict(body["prior"]))
                except ScmError as exc:
                    raise ConfigSchemaError(field + ".prior", str(exc)) from exc
            else:
                name = body["equation"]
                if name not in registered_equations():
                    raise ConfigSchemaError(field + ".equation", f"unknown equation {name!r}")
                for inp in body.get("inputs", []):
                    _resolve(graph, inp, field + ".inputs")
                iv = _equation_policy(body["node"], name, body.get("inputs"), body.get("params", {}))
        elif kind in ("bureau", "government", "marginal_outcomes"):
            if cfg.model_type != "lending":
                raise ConfigSchemaError(field, f"{kind} interventions need a lending model")
            groups, params, _ = lending_parts(cfg)
            if kind == "bureau":
                iv = credit_bureau_intervention(body.get("transform", "floor"), body.get("level", 600.0))
            elif kind == "government":
                iv = government_intervention(body["shift"], groups)
            else:
                iv = marginal_outcome_variant(groups, params).outcome_intervention
        else:  # pragma: no cover - excluded by the schema
            raise ConfigSchemaError(field, "unknown intervention")
        out.append(iv)
    try:
        composite = compose(out)
        composite.apply(graph)
    except ScmError as exc:
        raise ConfigSchemaError("interventions", str(exc)) from exc
    return composite


def _equation_policy(node, name, inputs, params):
    def rule(n, old):
        return make_equation(name, inputs if inputs is not None else old.inputs, **params)

    rule.__name__ = name
    return Policy(node, rule, label=f"{name}({json.dumps(params, sort_keys=True)})")


def lending_policies(cfg: ExperimentConfig, groups: GroupModel, params: LendingParams) -> list:
    pol = cfg.raw.get("policy", {})
    if "tau" in pol:
        return [ThresholdPolicy(tuple(pol["tau"]), params.gamma, pol.get("criterion", "Manual"))]
    criteria = pol.get("criteria") or [pol.get("criterion", "MaxProf")]
    return [compute_thresholds(c, groups, params) for c in criteria]


def output_dir(cfg: ExperimentConfig, cli_out: str | None) -> Path:
    """``--out`` beats the config's ``output.dir``, which beats ``$SCMDYN_OUT``, then ``./scmdyn_out``."""
    if cli_out:
        return Path(cli_out)
    if cfg.raw.get("output", {}).get("dir"):
        return cfg.path(cfg.raw["output"]["dir"])
    return Path(os.environ.get("SCMDYN_OUT", "scmdyn_out"))


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True)


__all__ = ["SCHEMA", "ExperimentConfig", "load_config", "validate_config", "build_model", "build_interventions",
           "bandit_params", "lending_parts", "lending_policies", "output_dir", "schema_json"]

