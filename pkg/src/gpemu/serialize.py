"""JSON schemas for specs and fitted models, and CSV helpers.

All JSON documents carry ``"schema": 1``. Model files store the data and the
fitted hyperparameters; the Cholesky factorization and every derived solve
are recomputed on load, so a round-tripped model predicts identically to the
in-memory one.
"""

import csv
import hashlib
import json

import numpy as np

from . import __version__
from .core import GpModel, TrendBasis, build_gp_model
from .errors import ValidationError
from .kernels import CorrelationFamily, KernelSpec
from .multioutput import MultiOutputGpModel, build_multi_gp_model
from .priors import PriorSpec
from .validation import require

SCHEMA_VERSION = 1


def kernel_to_dict(spec):
    return {
        "mode": spec.mode,
        "families": [
            {"family": fam.name, "alpha": fam.roughness} for fam in spec.families
        ],
        "range": [float(r) for r in spec.ranges],
        "nugget": None if spec.nugget is None else float(spec.nugget),
    }


def kernel_from_dict(doc):
    require(isinstance(doc, dict), "kernel spec must be a JSON object")
    families = tuple(
        CorrelationFamily(f["family"], f.get("alpha")) for f in doc["families"]
    )
    return KernelSpec(
        mode=doc["mode"],
        families=families,
        ranges=tuple(float(r) for r in doc["range"]),
        nugget=None if doc.get("nugget") is None else float(doc["nugget"]),
    )


def prior_to_dict(prior):
    return {
        "variant": prior.variant,
        "b1": float(prior.b1),
        "b2": float(prior.b2),
        "weights": None if prior.weights is None else [float(w) for w in prior.weights],
    }


def prior_from_dict(doc):
    require(isinstance(doc, dict), "prior spec must be a JSON object")
    return PriorSpec(
        variant=doc.get("variant", "jr"),
        b1=float(doc.get("b1", 0.2)),
        b2=float(doc.get("b2", 1.0)),
        weights=None if doc.get("weights") is None else tuple(doc["weights"]),
    )


def basis_to_dict(basis):
    if basis is None:
        return {"kind": "none"}
    require(basis.kind != "custom", "custom trend bases cannot be serialized")
    return {"kind": basis.kind}


def basis_from_dict(doc):
    kind = doc.get("kind", "constant")
    if kind == "none":
        return None
    return TrendBasis(kind=kind)


def config_hash(config_doc):
    """Stable hash of a fully-materialized configuration document."""
    canonical = json.dumps(config_doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def provenance_header(config_doc, seed):
    return {
        "schema": SCHEMA_VERSION,
        "library": f"gpemu {__version__}",
        "config_hash": config_hash(config_doc),
        "seed": seed,
        "config": config_doc,
    }


def model_to_dict(model):
    if isinstance(model, MultiOutputGpModel):
        return {
            "schema": SCHEMA_VERSION,
            "type": "multioutput",
            "design": model.design.tolist(),
            "outputs": model.outputs.tolist(),
            "coords": list(model.coords),
            "basis": basis_to_dict(model.basis),
            "kernel": kernel_to_dict(model.kernel),
            "beta_hat": model.beta_hat.tolist(),
            "sigma2_hat": model.sigma2_hat.tolist(),
            "degenerate_outputs": list(model.degenerate),
            "provenance": model.provenance,
        }
    return {
        "schema": SCHEMA_VERSION,
        "type": "gp",
        "design": model.design.tolist(),
        "outputs": model.outputs.tolist(),
        "basis": basis_to_dict(model.basis),
        "kernel": kernel_to_dict(model.kernel),
        "beta_hat": model.gls.beta_hat.tolist(),
        "sigma2_hat": model.sigma2_hat,
        "provenance": model.provenance,
    }


def model_from_dict(doc):
    require(isinstance(doc, dict) and doc.get("schema") == SCHEMA_VERSION,
            f"expected a model document with schema {SCHEMA_VERSION}")
    kind = doc.get("type")
    if kind not in ("gp", "multioutput"):
        raise ValidationError(f"unknown model type {kind!r}")
    kernel = kernel_from_dict(doc["kernel"])
    basis = basis_from_dict(doc.get("basis", {}))
    if kind == "gp":
        return build_gp_model(
            np.asarray(doc["design"], dtype=float),
            np.asarray(doc["outputs"], dtype=float),
            kernel,
            basis=basis,
            provenance=doc.get("provenance"),
        )
    if kind == "multioutput":
        return build_multi_gp_model(
            np.asarray(doc["design"], dtype=float),
            np.asarray(doc["outputs"], dtype=float),
            kernel,
            basis=basis,
            coords=doc.get("coords"),
            degenerate=doc.get("degenerate_outputs", ()),
            provenance=doc.get("provenance"),
        )
    raise ValidationError(f"unknown model type {kind!r}")


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def read_csv_matrix(path, name="file"):
    """Numeric CSV with a mandatory header row; '#' lines are comments.

    Malformed content (ragged rows, non-numeric or NaN cells) raises
    :class:`ValidationError` naming the offending line.
    """
    header = None
    rows = []
    comments = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record or (record[0].startswith("#") and len(record) >= 1):
                if record and record[0].startswith("#"):
                    comments.append(",".join(record))
                continue
            if header is None:
                header = [c.strip() for c in record]
                require(all(header), f"{name}: line {lineno}: empty header cell")
                continue
            if len(record) != len(header):
                raise ValidationError(
                    f"{name}: line {lineno}: expected {len(header)} cells, got {len(record)}"
                )
            parsed = []
            for col, cell in zip(header, record):
                try:
                    value = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"{name}: line {lineno}: non-numeric cell {cell!r} in column {col!r}"
                    ) from None
                if not np.isfinite(value):
                    raise ValidationError(
                        f"{name}: line {lineno}: non-finite cell {cell!r} in column {col!r}; "
                        "missing values are rejected, not imputed"
                    )
                parsed.append(value)
            rows.append(parsed)
    require(header is not None, f"{name}: a header row is required")
    require(len(rows) >= 1, f"{name}: no data rows found")
    return header, np.asarray(rows, dtype=float), comments


def write_csv_matrix(path, header, matrix, comments=()):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for comment in comments:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
