"""Batch command-line front end: fit, predict, calibrate, diagnose.

Exit codes: 0 on success, 2 on validation errors (bad files, shapes,
domains), 3 on numerical failures. Every output embeds a provenance record
(config hash, seed, library version) and the fully-materialized
configuration, so runs are reproducible from their artifacts alone.
"""

import argparse
import importlib
import json
import sys

import numpy as np
from scipy.stats import t as student_t

from .calibration import (
    CalibrationProblem,
    McmcConfig,
    SimulatorHandle,
    calibrate,
    ess_batch_means,
)
from .core import TrendBasis
from .errors import NumericalError, ValidationError
from .estimation import FitConfig, Objective, detect_inert_inputs, design_z_bounds, _projected_grad_norm
from .kernels import CorrelationFamily, build_correlation
from .multioutput import MultiOutputGpModel, fit_multi_gp, predict_multi_arrays
from .prediction import predict_arrays
from .serialize import (
    kernel_from_dict,
    kernel_to_dict,
    load_model,
    model_to_dict,
    prior_from_dict,
    prior_to_dict,
    provenance_header,
    read_csv_matrix,
    write_csv_matrix,
)
from .estimation import fit_gp

_EXIT_OK = 0
_EXIT_VALIDATION = 2
_EXIT_NUMERICAL = 3


def _load_json(path, name):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{name}: invalid JSON ({exc})") from None


def _families_from_config(kernel_doc, n_inputs):
    mode = kernel_doc.get("mode", "separable")
    fam_docs = kernel_doc.get("families")
    if not fam_docs:
        fam_docs = [{"family": "matern", "alpha": 2.5}]
    families = [CorrelationFamily(f["family"], f.get("alpha")) for f in fam_docs]
    if mode == "separable" and len(families) == 1 and n_inputs > 1:
        families = families * n_inputs
    return mode, tuple(families)


def _materialized_fit_config(doc, seed):
    kernel_doc = doc.get("kernel", {})
    out = {
        "schema": doc.get("schema", 1),
        "emulator": doc.get("emulator", "gp"),
        "kernel": {
            "mode": kernel_doc.get("mode", "separable"),
            "families": kernel_doc.get("families") or [{"family": "matern", "alpha": 2.5}],
            "nugget": kernel_doc.get("nugget", False),
        },
        "prior": prior_to_dict(prior_from_dict(doc.get("prior", {}))),
        "estimator": doc.get("estimator", "mmpe"),
        "trend": doc.get("trend", "constant"),
        "starts": int(doc.get("starts", 2)),
        "seed": seed,
    }
    return out


def _cmd_fit(args):
    _, design, _ = read_csv_matrix(args.design, name="design CSV")
    _, outputs, _ = read_csv_matrix(args.output, name="output CSV")
    doc = _load_json(args.config, "config JSON")
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    materialized = _materialized_fit_config(doc, seed)
    mode, families = _families_from_config(materialized["kernel"], design.shape[1])
    nugget = materialized["kernel"]["nugget"]
    basis = TrendBasis(kind=materialized["trend"])
    config = FitConfig(
        estimator=materialized["estimator"],
        prior=prior_from_dict(materialized["prior"]),
        starts=materialized["starts"],
        seed=seed,
    )
    if materialized["emulator"] == "multioutput":
        model, report = fit_multi_gp(design, outputs, families, mode=mode,
                                     basis=basis, nugget=nugget, config=config)
    else:
        if outputs.shape[1] != 1:
            raise ValidationError(
                "scalar fit expects a single output column; use "
                '"emulator": "multioutput" for a k x n output matrix'
            )
        if outputs.shape[0] != design.shape[0]:
            raise ValidationError(
                f"output CSV has {outputs.shape[0]} rows, design has {design.shape[0]}"
            )
        model, report = fit_gp(design, outputs[:, 0], families, mode=mode,
                               basis=basis, nugget=nugget, config=config)
    doc_out = model_to_dict(model)
    doc_out["provenance"].update(provenance_header(materialized, seed))
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc_out, fh, indent=2)
        fh.write("\n")
    report_doc = {
        "provenance": provenance_header(materialized, seed),
        "objective": report.objective,
        "grad_norm": report.grad_norm,
        "condition_number": report.condition_number,
        "z_hat": list(report.z_hat),
        "inert_inputs": None if report.inert_inputs is None else list(report.inert_inputs),
        "degenerate_outputs": list(report.degenerate_outputs),
        "n_evaluations": report.n_evaluations,
        "starts": [
            {"index": t.index, "converged": t.converged, "iterations": t.iterations,
             "objective": t.objective}
            for t in report.starts
        ],
    }
    with open(_sibling(args.out, ".report.json"), "w", encoding="utf-8") as fh:
        json.dump(report_doc, fh, indent=2)
        fh.write("\n")
    return _EXIT_OK


def _sibling(path, suffix):
    base = path[: -len(".json")] if path.endswith(".json") else path
    if suffix.startswith(".") and base.endswith(".csv"):
        base = base[: -len(".csv")]
    return base + suffix


def _cmd_predict(args):
    model = load_model(args.model)
    _, points, _ = read_csv_matrix(args.test, name="test CSV")
    if points.shape[1] != model.design.shape[1]:
        raise ValidationError(
            f"test CSV has {points.shape[1]} input columns, the model expects "
            f"{model.design.shape[1]}"
        )
    config_echo = {"command": "predict", "include_noise": bool(args.include_noise),
                   "model": args.model}
    comments = [
        f"provenance: {json.dumps(provenance_header(config_echo, model.provenance.get('seed')))}"
    ]
    if isinstance(model, MultiOutputGpModel):
        loc, scale2, _ = predict_multi_arrays(model, points, include_noise=args.include_noise)
        quantile = student_t.ppf(0.975, df=model.dof)
        rows = []
        for j in range(loc.shape[0]):
            for i in range(loc.shape[1]):
                s = float(np.sqrt(scale2[j, i]))
                rows.append([j, loc[j, i], s, model.dof,
                             loc[j, i] - quantile * s, loc[j, i] + quantile * s])
        write_csv_matrix(args.out, ["coord", "location", "scale", "dof", "lo95", "hi95"],
                         rows, comments)
    else:
        loc, scale2, _ = predict_arrays(model, points, include_noise=args.include_noise)
        quantile = student_t.ppf(0.975, df=model.dof)
        scale = np.sqrt(scale2)
        rows = np.column_stack([
            loc, scale, np.full(loc.shape, float(model.dof)),
            loc - quantile * scale, loc + quantile * scale,
        ])
        write_csv_matrix(args.out, ["location", "scale", "dof", "lo95", "hi95"],
                         rows, comments)
    return _EXIT_OK


def _simulator_from_config(doc):
    kind = doc.get("kind")
    if kind == "import":
        path = doc["path"]
        module_name, _, attr = path.partition(":")
        if not attr:
            raise ValidationError(
                'simulator "import" paths look like "package.module:function"'
            )
        try:
            module = importlib.import_module(module_name)
        except ImportError as exc:
            raise ValidationError(f"cannot import simulator module {module_name!r}: {exc}") from None
        func = getattr(module, attr, None)
        if func is None:
            raise ValidationError(f"module {module_name!r} has no attribute {attr!r}")
        return SimulatorHandle.direct(func, vectorized=bool(doc.get("vectorized", False)))
    if kind == "emulator":
        return SimulatorHandle.emulated(load_model(doc["model"]), coord=int(doc.get("coord", 0)))
    raise ValidationError('simulator kind must be "import" or "emulator"')


def _cmd_calibrate(args):
    _, inputs, _ = read_csv_matrix(args.design, name="field design CSV")
    _, observations, _ = read_csv_matrix(args.output, name="field output CSV")
    if observations.shape[1] != 1 or observations.shape[0] != inputs.shape[0]:
        raise ValidationError("field output CSV must hold one column, one row per field input")
    doc = _load_json(args.config, "problem JSON")
    seed = args.seed if args.seed is not None else int(doc.get("mcmc", {}).get("seed", 0))
    include_disc = bool(doc.get("discrepancy", True))
    kernel = kernel_from_dict(doc["kernel"]) if "kernel" in doc else None
    prior = prior_from_dict(doc.get("prior", {}))
    problem = CalibrationProblem(
        inputs=inputs,
        observations=observations[:, 0],
        simulator=_simulator_from_config(doc.get("simulator", {})),
        theta_bounds=np.asarray(doc["theta_bounds"], dtype=float),
        kernel=kernel,
        prior=prior,
        include_discrepancy=include_disc,
        theta_names=doc.get("theta_names"),
    )
    mcmc_doc = doc.get("mcmc", {})
    config = McmcConfig(
        iterations=int(mcmc_doc.get("iterations", 10000)),
        burn_in=int(mcmc_doc.get("burn_in", 2000)),
        thinning=int(mcmc_doc.get("thinning", 1)),
        seed=seed,
        theta_scale=mcmc_doc.get("theta_scale"),
        kernel_scale=float(mcmc_doc.get("kernel_scale", 0.3)),
    )
    chain = calibrate(problem, config)
    materialized = {
        "schema": doc.get("schema", 1),
        "theta_bounds": problem.theta_bounds.tolist(),
        "discrepancy": include_disc,
        "kernel": kernel_to_dict(problem.kernel) if include_disc else None,
        "prior": prior_to_dict(problem.prior),
        "mcmc": {
            "iterations": config.iterations, "burn_in": config.burn_in,
            "thinning": config.thinning, "seed": seed,
            "kernel_scale": config.kernel_scale,
        },
    }
    provenance = provenance_header(materialized, seed)
    header = list(chain.theta_names) + list(chain.kernel_param_names) + ["log_post"]
    matrix = np.column_stack([chain.theta, chain.kernel_params, chain.log_post])
    comments = [
        f"provenance: {json.dumps(provenance)}",
        f"acceptance_theta: {chain.accept_theta:.6f}",
        f"acceptance_kernel: {chain.accept_kernel:.6f}",
        f"identifiability_warning: {str(chain.identifiability_warning).lower()}",
    ]
    write_csv_matrix(args.out, header, matrix, comments)
    summary = {
        "provenance": provenance,
        "n_draws": chain.n_draws,
        "acceptance": {"theta": chain.accept_theta, "kernel": chain.accept_kernel},
        "identifiability_warning": chain.identifiability_warning,
        "simulator_incidents": chain.simulator_incidents,
        "posterior": {
            name: {
                "mean": float(chain.theta[:, i].mean()),
                "sd": float(chain.theta[:, i].std(ddof=1)),
                "q05": float(np.quantile(chain.theta[:, i], 0.05)),
                "q95": float(np.quantile(chain.theta[:, i], 0.95)),
            }
            for i, name in enumerate(chain.theta_names)
        },
    }
    with open(_sibling(args.out, ".summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return _EXIT_OK


def _diagnose_model(path):
    model = load_model(path)
    corr = build_correlation(model.kernel, model.design).values
    condition = float(np.linalg.cond(corr))
    provenance = model.provenance
    report = {
        "artifact": "model",
        "n_obs": int(model.design.shape[0]),
        "n_inputs": int(model.design.shape[1]),
        "condition_number": condition,
        "estimator": provenance.get("estimator"),
        "prior": provenance.get("prior"),
        "seed": provenance.get("seed"),
    }
    if model.kernel.mode == "separable":
        report["inert_inputs"] = list(detect_inert_inputs(model))
    grad_norm = _recomputed_grad_norm(model)
    if grad_norm is not None:
        report["grad_norm"] = grad_norm
    return report


def _recomputed_grad_norm(model):
    from .errors import GpemuError
    from .priors import materialize_prior

    provenance = model.provenance
    estimator = provenance.get("estimator")
    if estimator is None:
        return None
    prior_doc = provenance.get("prior") or {}
    outputs = model.outputs if isinstance(model, MultiOutputGpModel) else model.outputs[None, :]
    nugget_free = bool(provenance.get("nugget_estimated"))
    try:
        prior = materialize_prior(prior_from_dict(prior_doc), np.asarray(model.design),
                                  include_nugget=nugget_free, mode=model.kernel.mode)
        objective = Objective(
            design=np.asarray(model.design), outputs=np.asarray(outputs),
            families=model.kernel.families, mode=model.kernel.mode, basis=model.basis,
            estimator=estimator, prior=prior,
            nugget_free=nugget_free,
            fixed_nugget=None if nugget_free else model.kernel.nugget,
        )
        z = -np.log(np.asarray(model.kernel.ranges))
        if nugget_free:
            z = np.append(z, np.log(model.kernel.nugget))
        _, grad = objective.value_and_grad(z)
        lo, hi, _ = design_z_bounds(model.kernel.mode, np.asarray(model.design))
        if nugget_free:
            lo = np.append(lo, -np.inf)
            hi = np.append(hi, np.inf)
        return _projected_grad_norm(grad, z, lo, hi)
    except GpemuError:
        return None


def _diagnose_chain(path):
    header, matrix, comments = read_csv_matrix(path, name="chain CSV")
    ess = {}
    failed = False
    for i, name in enumerate(header):
        if name == "log_post":
            continue
        column = matrix[:, i]
        ess_value = ess_batch_means(column)
        ess[name] = ess_value
        if column.std() <= 1e-13 * max(float(np.abs(column).max()), 1.0):
            failed = True
    meta = {}
    for comment in comments:
        text = comment.lstrip("#").strip()
        if ":" in text:
            key, _, value = text.partition(":")
            meta[key.strip()] = value.strip()
    report = {
        "artifact": "chain",
        "n_draws": int(matrix.shape[0]),
        "ess": ess,
        "min_ess": min(ess.values()) if ess else None,
        "degenerate": failed,
    }
    for key in ("acceptance_theta", "acceptance_kernel", "identifiability_warning"):
        if key in meta:
            report[key] = meta[key]
    return report


def _cmd_diagnose(args):
    path = args.model
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.read(1)
    except OSError as exc:
        raise ValidationError(f"cannot read artifact: {exc}") from None
    if first == "{":
        report = _diagnose_model(path)
    elif first in ("#", '"') or first.isalpha():
        report = _diagnose_chain(path)
    else:
        raise ValidationError("unknown artifact type: expected a model JSON or a chain CSV")
    report["provenance"] = provenance_header(
        {"command": "diagnose", "artifact": path}, report.pop("seed", None)
    )
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return _EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="gpemu",
        description="GP emulation and calibration of expensive computer models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit an emulator from design/output CSVs")
    p_fit.add_argument("--design", required=True)
    p_fit.add_argument("--output", "--outputs", dest="output", required=True)
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.set_defaults(func=_cmd_fit)

    p_pred = sub.add_parser("predict", help="predict at test inputs from a model JSON")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--test", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--include-noise", action="store_true")
    p_pred.set_defaults(func=_cmd_predict)

    p_cal = sub.add_parser("calibrate", help="sample the calibration posterior")
    p_cal.add_argument("--design", required=True)
    p_cal.add_argument("--output", required=True)
    p_cal.add_argument("--config", required=True)
    p_cal.add_argument("--out", required=True)
    p_cal.add_argument("--seed", type=int, default=None)
    p_cal.set_defaults(func=_cmd_calibrate)

    p_diag = sub.add_parser("diagnose", help="report diagnostics for a model or chain")
    p_diag.add_argument("--model", required=True)
    p_diag.add_argument("--out", default=None)
    p_diag.set_defaults(func=_cmd_diagnose)

    return parser


def run(argv=None):
    """Entry point returning the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return _EXIT_VALIDATION if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValidationError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return _EXIT_NUMERICAL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
