"""Command line runner: one JSON config, one experiment per invocation.

Exit status: 0 success, 2 invalid configuration, 3 numerical or domain
error, 4 a checked inequality or certificate failed. Failures also write a
machine-readable ``error.json`` to the output directory and to stderr.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import sys
from functools import partial
from pathlib import Path

import jsonschema
import numpy as np

from . import meanfield, rdp
from ._sampling import stream
from .exceptions import CertificateError, ConfigError, KmflError
from .kernels import StateBox, make_kernel
from .measures import AtomicMeasure, empirical, mmd, uniform_grid
from .meanfield import _fmt, parallel_map
from .systems import COSTS, DYNAMICS, SystemModel

EXPERIMENTS = (
    "simulate",
    "one-step",
    "trajectory-bound",
    "cost-convergence",
    "stage-cost-convergence",
    "embedding-convergence",
    "lipschitz",
    "rdp",
)

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kernel", "model"],
    "properties": {
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "box"],
            "properties": {
                "family": {"enum": ["gaussian", "inverse_multiquadric", "augmented"]},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"bandwidth": _POSITIVE, "scale": _POSITIVE, "poly_weight": _NONNEG},
                },
                "box": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["lower", "upper"],
                    "properties": {"lower": _VECTOR, "upper": _VECTOR},
                },
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": sorted(DYNAMICS)},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"h": _NONNEG, "u_max": _NONNEG, "r": _POSITIVE, "beta": _NONNEG},
                },
                "cost": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["name"],
                    "properties": {
                        "name": {"enum": sorted(COSTS)},
                        "control_weight": _NONNEG,
                        "unbiased": {"type": "boolean"},
                    },
                },
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "type": {"enum": list(EXPERIMENTS)},
                "Ms": {"type": "array", "items": _POS_INT, "minItems": 1},
                "M": _POS_INT,
                "horizon": _POS_INT,
                "n_samples": _POS_INT,
                "n_pairs": _POS_INT,
                "n_seeds": _POS_INT,
                "reference_atoms": _POS_INT,
                "reference_path": {"type": "string"},
                "initial_state": {"type": "array", "items": _VECTOR, "minItems": 1},
                "controls": {"type": "array", "items": _VECTOR, "minItems": 1},
                "targets": {
                    "type": "array",
                    "items": {"enum": ["dynamics", "meanfield", "stage_cost"]},
                    "minItems": 1,
                },
                "value": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {"kind": {"enum": ["variance_value", "kernel_cohesion_value"]}, "c": _POSITIVE},
                },
                "feedback": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["zero", "greedy_grid"]},
                        "grid_res": {"type": "integer", "minimum": 2},
                    },
                },
                "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "alpha_margin": _NONNEG,
                "n_test_measures": _POS_INT,
                "test_atoms": _POS_INT,
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}

EXPERIMENT_DEFAULTS = {
    "Ms": [25, 50, 100, 200, 400, 800],
    "M": 50,
    "horizon": 5,
    "n_samples": 200,
    "n_pairs": 200,
    "n_seeds": 20,
    "reference_atoms": 4096,
    "targets": ["dynamics", "meanfield", "stage_cost"],
    "value": {"kind": "variance_value", "c": 1.0},
    "feedback": {"kind": "zero"},
    "alpha_margin": 0.02,
    "n_test_measures": 100,
    "test_atoms": 2,
}


class CheckFailed(KmflError):
    """A checked inequality or certificate did not hold; carries the report already written."""


def _field_path(error: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in error.absolute_path)
    if error.validator == "additionalProperties":
        extra = set(error.instance) - set(error.schema.get("properties", {}))
        return ".".join(filter(None, [path, *sorted(extra)]))
    if error.validator == "required":
        return ".".join(filter(None, [path, error.message.split("'")[1]]))
    return path or "<root>"


def load_config(source) -> dict:
    """Parse and validate a config (path, JSON string or dict); raises :class:`ConfigError`."""
    if isinstance(source, dict):
        config = copy.deepcopy(source)
    else:
        try:
            text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
            config = json.loads(text)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(config), key=lambda e: list(e.path))
    if errors:
        err = errors[0]
        exc = ConfigError(f"{_field_path(err)}: {err.message}")
        exc.field = _field_path(err)
        raise exc
    lower, upper = config["kernel"]["box"]["lower"], config["kernel"]["box"]["upper"]
    if len(lower) != len(upper) or any(a >= b for a, b in zip(lower, upper)):
        exc = ConfigError("kernel.box: lower and upper must have equal length with lower < upper")
        exc.field = "kernel.box"
        raise exc
    return config


def resolve(config: dict, experiment: str, seed: int | None = None, out: str | None = None) -> dict:
    """Fill defaults and command line overrides into a validated config."""
    config = copy.deepcopy(config)
    exp = config.setdefault("experiment", {})
    if exp.get("type", experiment) != experiment:
        exc = ConfigError(f"experiment.type: config declares {exp['type']!r} but subcommand is {experiment!r}")
        exc.field = "experiment.type"
        raise exc
    exp["type"] = experiment
    for key, value in EXPERIMENT_DEFAULTS.items():
        exp.setdefault(key, copy.deepcopy(value))
    config.setdefault("model", {}).setdefault("params", {})
    config["model"].setdefault("cost", {"name": "variance"})
    if seed is not None:
        config["seed"] = seed
    config.setdefault("seed", 0)
    config.setdefault("output", {})
    if out is not None:
        config["output"]["dir"] = out
    config["output"].setdefault("dir", "kmfl-out")
    return config


def build_model(config: dict) -> SystemModel:
    kspec = config["kernel"]
    box = StateBox(tuple(kspec["box"]["lower"]), tuple(kspec["box"]["upper"]))
    family = kspec["family"]
    try:
        kernel = make_kernel(family, box, **kspec.get("params", {}))
    except TypeError as exc:
        raise _config_error("kernel", f"parameter not valid for family {family!r}: {exc}") from exc
    except KmflError as exc:
        raise _config_error("kernel", str(exc)) from exc
    mspec = config["model"]
    cspec = dict(mspec.get("cost", {"name": "variance"}))
    try:
        cost = COSTS[cspec.pop("name")](**cspec)
    except (TypeError, KmflError) as exc:
        raise _config_error("model.cost", str(exc)) from exc
    params = dict(mspec.get("params", {}))
    defaults = {"linear_consensus": {"h": 0.5, "u_max": 0.1},
                "bounded_confidence": {"h": 0.5, "r": 0.3, "u_max": 0.1},
                "cucker_smale_discrete": {"h": 0.1, "beta": 0.5, "u_max": 0.1}}[mspec["name"]]
    unknown = set(params) - set(defaults)
    if unknown:
        raise _config_error(f"model.params.{sorted(unknown)[0]}", f"not a parameter of {mspec['name']}")
    try:
        dynamics = DYNAMICS[mspec["name"]](**{**defaults, **params})
        return SystemModel(dynamics, cost, kernel)
    except KmflError as exc:
        raise _config_error("model", str(exc)) from exc


def _config_error(field: str, message: str) -> ConfigError:
    exc = ConfigError(f"{field}: {message}")
    exc.field = field
    return exc


# -- experiment runners: each returns (csv text, json dict, ok flag) ------------------------


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _report(report: meanfield.ConvergenceReport):
    return report.to_csv(), report.to_dict(), True


def run_simulate(model, exp, seed, jobs):
    rng = stream(seed, 0, 0)
    x0 = np.asarray(exp["initial_state"], float) if "initial_state" in exp else model.sample_state(rng, exp["M"])
    if "controls" in exp:
        useq = np.asarray(exp["controls"], float)
    else:
        useq = np.array([model.sample_control(rng) for _ in range(exp["horizon"])])
    states = model.trajectory(x0, useq)
    measures = model.mf_trajectory(empirical(states[0]), useq)
    dim = model.box.dim
    rows = [(n, i, *map(float, agent)) for n, x in enumerate(states) for i, agent in enumerate(x)]
    text = _csv(["n", "agent", *(f"x{j}" for j in range(dim))], rows)
    summary = {
        "micro_total_cost": model.total_cost(x0, useq),
        "meanfield_total_cost": model.mf_total_cost(empirical(x0), useq),
        "mmd_per_step": [mmd(model.kernel, empirical(x), mu) for x, mu in zip(states, measures)],
        "controls": useq.tolist(),
    }
    return text, summary, True


def run_one_step(model, exp, seed, jobs):
    return _report(meanfield.one_step_convergence(model, exp["Ms"], exp["n_samples"], seed, jobs))


def _bound_instance(model, m, horizon, seed, i):
    rng = stream(seed, m, i)
    x0 = model.sample_state(rng, m)
    useq = np.array([model.sample_control(rng) for _ in range(horizon)])
    check = meanfield.trajectory_bound_check(model, x0, useq)
    return check.lhs, check.rhs


def run_trajectory_bound(model, exp, seed, jobs):
    rows = []
    lip = model.lipschitz_dynamics
    for m in exp["Ms"]:
        fn = partial(_bound_instance, model, m, exp["horizon"], seed)
        for i, (lhs, rhs) in enumerate(parallel_map(fn, range(exp["n_samples"]), jobs)):
            rows.append((m, i, lhs, rhs, int(lhs <= rhs + 1e-9)))
    ok = all(r[4] for r in rows)
    summary = {
        "lipschitz_dynamics": lip,
        "all_hold": ok,
        "max_excess": max(r[2] - r[3] for r in rows),
        "n_instances": len(rows),
    }
    return _csv(["M", "instance", "lhs", "rhs", "holds"], rows), summary, ok


def run_cost_convergence(model, exp, seed, jobs):
    return _report(meanfield.cost_convergence(model, exp["Ms"], exp["horizon"], exp["n_samples"], seed, jobs))


def run_stage_cost_convergence(model, exp, seed, jobs):
    return _report(meanfield.stage_cost_convergence(model, exp["Ms"], exp["n_samples"], seed, jobs))


def run_embedding_convergence(model, exp, seed, jobs):
    if "reference_path" in exp:
        ref = AtomicMeasure.from_json(Path(exp["reference_path"]).read_text())
    else:
        ref = uniform_grid(model.box, exp["reference_atoms"])
    report = meanfield.embedding_convergence(model.kernel, ref, exp["Ms"], exp["n_seeds"], seed, jobs)
    return _report(report)


def run_lipschitz(model, exp, seed, jobs):
    declared = {"dynamics": model.lipschitz_dynamics, "meanfield": model.lipschitz_dynamics,
                "stage_cost": model.lipschitz_cost}
    rows = []
    for target in exp["targets"]:
        est = meanfield.estimate_lipschitz(target, model, exp["n_pairs"], seed, m=exp["M"])
        rows.append((target, exp["M"], est, declared[target], exp["n_pairs"], seed))
    ok = all(r[2] <= r[3] for r in rows)
    summary = {
        "estimates": {r[0]: r[2] for r in rows},
        "declared": {r[0]: r[3] for r in rows},
        "sources": {"dynamics": model.constants.dynamics_source, "stage_cost": model.constants.cost_source},
        "within_declared": ok,
    }
    return _csv(["target", "M", "estimate", "declared", "n_pairs", "seed"], rows), summary, ok


def _value(spec) -> rdp.ValueCandidate:
    cls = {"variance_value": rdp.VarianceValue, "kernel_cohesion_value": rdp.KernelCohesionValue}[spec["kind"]]
    return cls(spec.get("c", 1.0))


def run_rdp(model, exp, seed, jobs):
    value = _value(exp["value"])
    fspec = exp["feedback"]
    if fspec["kind"] == "zero":
        kappa = rdp.ZeroFeedback(model.control_dim)
    else:
        kappa = rdp.greedy_feedback(model, value, fspec.get("grid_res", 5))
    estimate = rdp.max_alpha_micro(model, value, kappa, exp["M"], exp["n_samples"], seed)
    rng = stream(seed, 1, 0)
    n_atoms = exp["test_atoms"]
    tests = []
    for _ in range(exp["n_test_measures"]):
        weights = rng.random(n_atoms) + 1e-3
        tests.append(AtomicMeasure(model.sample_state(rng, n_atoms), weights / weights.sum()))
    mf_estimate = rdp.max_alpha_meanfield(model, value, kappa, tests)
    alpha = exp.get("alpha", max(mf_estimate.alpha - exp["alpha_margin"], 1e-6))
    cert = rdp.rdp_check_meanfield(model, value, kappa, tests, alpha)
    text = _csv(["index", "residual"], list(enumerate(cert.residuals)))
    summary = cert.to_dict()
    summary.update({
        "max_alpha_micro": estimate.alpha,
        "max_alpha_meanfield": mf_estimate.alpha,
        "vacuous": estimate.vacuous or mf_estimate.vacuous,
        "M": exp["M"],
        "feedback_lipschitz_estimate": rdp.feedback_lipschitz(kappa, model, 50, seed),
    })
    return text, summary, cert.passed


RUNNERS = {
    "simulate": run_simulate,
    "one-step": run_one_step,
    "trajectory-bound": run_trajectory_bound,
    "cost-convergence": run_cost_convergence,
    "stage-cost-convergence": run_stage_cost_convergence,
    "embedding-convergence": run_embedding_convergence,
    "lipschitz": run_lipschitz,
    "rdp": run_rdp,
}


def _default_kernel_box(name: str) -> StateBox:
    return StateBox((0.0, -1.0), (1.0, 1.0)) if name == "cucker_smale_discrete" else StateBox.unit(1)


def describe_models() -> str:
    """Model zoo listing with parameters and declared constants under the default kernel."""
    from .systems import MODEL_ZOO

    docs = {
        "linear_consensus": "h: step size in [0, 1]; u_max: control bound. "
        "x_i + h M/(M-1) (mean - x_i) + u; mean-field map has no M/(M-1) factor.",
        "bounded_confidence": "h: step size; r: confidence radius; u_max: control bound. "
        "Smoothed Hegselmann-Krause; micro map equals the mean-field map on empirical measures.",
        "cucker_smale_discrete": "h: step size; beta: communication decay; u_max: control bound. "
        "State is (position, velocity); box dimension must be even.",
    }
    lines = []
    for name in sorted(MODEL_ZOO):
        box = _default_kernel_box(name)
        model = MODEL_ZOO[name](make_kernel("gaussian", box, bandwidth=0.5))
        c = model.constants
        lines.append(name)
        lines.append(f"  {docs[name]}")
        lines.append(f"  defaults: {model.dynamics.params}; cost: {model.cost!r}")
        lines.append(
            f"  declared under gaussian(bandwidth=0.5) on {list(box.lower)}..{list(box.upper)}: "
            f"L_f={c.lipschitz_dynamics:.6g} ({c.dynamics_source}), "
            f"L_l={c.lipschitz_cost:.6g} ({c.cost_source}), B_l={c.cost_bound:.6g}"
        )
    return "\n".join(lines) + "\n"


def run(experiment: str, config, seed=None, out=None, jobs: int = 1) -> int:
    """Run one experiment and write ``<experiment>.csv`` and ``<experiment>.json``; return the exit status."""
    out_dir = Path(out) if out else None
    try:
        resolved = resolve(load_config(config), experiment, seed, out)
        out_dir = Path(resolved["output"]["dir"])
        model = build_model(resolved)
        text, summary, ok = RUNNERS[experiment](model, resolved["experiment"], resolved["seed"], jobs)
    except ConfigError as exc:
        return _fail(out_dir, 2, exc, getattr(exc, "field", None))
    except CertificateError as exc:
        return _fail(out_dir, 4, exc)
    except (KmflError, ArithmeticError, ValueError, OSError) as exc:
        return _fail(out_dir, 3, exc)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = experiment
    (out_dir / f"{stem}.csv").write_text(text)
    payload = {"experiment": experiment, "ok": ok, "summary": summary, "config": resolved}
    (out_dir / f"{stem}.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable))
    if not ok:
        return _fail(out_dir, 4, CheckFailed(f"{experiment}: checked inequality or certificate failed"))
    return 0


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _fail(out_dir: Path | None, status: int, exc: Exception, field: str | None = None) -> int:
    record = {"status": status, "error": type(exc).__name__, "message": str(exc)}
    if field:
        record["field"] = field
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kmfl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
    sub.add_parser("models", help="list the model zoo")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "models":
        sys.stdout.write(describe_models())
        return 0
    if args.seed is not None and args.seed < 0:
        return _fail(Path(args.out) if args.out else None, 2, ConfigError("--seed must be nonnegative"), "seed")
    return run(args.command, args.config, seed=args.seed, out=args.out, jobs=max(1, args.jobs))


if __name__ == "__main__":
    sys.exit(main())
