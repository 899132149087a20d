"""On-disk formats: edge-list CSV, fit/truth JSON, metric CSVs, plan files.

Every structured output carries format_version; readers reject unknown
major versions.  CSV floats use '.' decimals and 17 significant digits so
doubles round-trip losslessly.
"""

import csv
import json

import numpy as np

from .errors import DataFormatError
from .model import Loadings, ModelSpec, MultiviewData, dyad_pairs

FORMAT_VERSION = "1.0"


def _fmt(x):
    return f"{float(x):.17g}"


def check_format_version(version):
    try:
        major = str(version).split(".")[0]
    except Exception:
        raise DataFormatError(f"bad format_version {version!r}") from None
    if major != FORMAT_VERSION.split(".")[0]:
        raise DataFormatError(
            f"unsupported major format version {version!r} "
            f"(reader supports {FORMAT_VERSION})")


# ---------------------------------------------------------------------------
# Edge lists
# ---------------------------------------------------------------------------

def ingest(path, family="bernoulli", directed=True):
    """Read a `layer,src,dst,value` CSV into a dense multiview tensor.

    Node and layer label sets are inferred from the file and sorted;
    missing (layer, src, dst) rows mean value 0.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["layer", "src", "dst", "value"]:
            raise DataFormatError("expected header 'layer,src,dst,value'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise DataFormatError(f"expected 4 fields, got {len(row)}", line=lineno)
            layer, src, dst, value = [f.strip() for f in row]
            if src == dst:
                raise DataFormatError(f"self-edge {src!r}->{dst!r}", line=lineno)
            try:
                val = int(value)
            except ValueError:
                raise DataFormatError(f"non-integer value {value!r}", line=lineno) from None
            if family == "bernoulli" and val not in (0, 1):
                raise DataFormatError(f"value {val} outside bernoulli support", line=lineno)
            if family == "poisson" and val < 0:
                raise DataFormatError(f"negative count {val}", line=lineno)
            rows.append((lineno, layer, src, dst, val))

    seen = set()
    for lineno, layer, src, dst, _ in rows:
        key = (layer, src, dst)
        if key in seen:
            raise DataFormatError(f"duplicate entry {key}", line=lineno)
        seen.add(key)

    node_labels = sorted({r[2] for r in rows} | {r[3] for r in rows})
    layer_labels = sorted({r[1] for r in rows})
    if len(node_labels) < 2 or not layer_labels:
        raise DataFormatError("file must contain at least one edge over two nodes")
    n_idx = {lab: i for i, lab in enumerate(node_labels)}
    l_idx = {lab: k for k, lab in enumerate(layer_labels)}
    responses = np.zeros((len(layer_labels), len(node_labels), len(node_labels)),
                         dtype=np.int64)
    for _, layer, src, dst, val in rows:
        responses[l_idx[layer], n_idx[src], n_idx[dst]] = val
        if not directed:
            responses[l_idx[layer], n_idx[dst], n_idx[src]] = val
    return MultiviewData(node_labels=node_labels, layer_labels=layer_labels,
                         responses=responses)


def write_edge_list(path, data, directed=True):
    """Write nonzero entries of a multiview tensor as an edge-list CSV."""
    pairs = dyad_pairs(data.n_nodes, directed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["layer", "src", "dst", "value"])
        for k, layer in enumerate(data.layer_labels):
            for i, j in pairs:
                val = int(data.responses[k, i, j])
                if val != 0:
                    writer.writerow([layer, data.node_labels[i],
                                     data.node_labels[j], val])


# ---------------------------------------------------------------------------
# Fit files
# ---------------------------------------------------------------------------

def _spec_dict(spec):
    return {"family": spec.family, "q": spec.q,
            "include_intercept": spec.include_intercept,
            "assumption": spec.assumption, "directed": spec.directed,
            "n_nodes": spec.n_nodes}


def _spec_from_dict(d):
    return ModelSpec(family=d["family"], q=d["q"],
                     include_intercept=d["include_intercept"],
                     assumption=d["assumption"], directed=d["directed"],
                     n_nodes=d["n_nodes"])


def write_fit(path, fit, data, method="laplace"):
    """Serialize a fit result to a JSON file (lossless float round-trip)."""
    doc = {
        "format_version": FORMAT_VERSION,
        "method": method,
        "spec": _spec_dict(fit.spec),
        "node_labels": list(data.node_labels),
        "layer_labels": list(data.layer_labels),
        "alpha": np.asarray(fit.alpha_hat.alpha).tolist(),
        "constraint_mask": sorted(map(list, fit.alpha_hat.constraint_mask)),
        "sigma": np.asarray(fit.sigma_hat).tolist(),
        "z_modes": np.asarray(fit.z_modes).tolist(),
        "loglik": fit.loglik,
        "converged": bool(fit.converged),
        "grad_norm": fit.grad_norm,
        "n_outer_iters": fit.n_outer_iters,
        "seed": fit.seed,
    }
    if fit.vcov is not None:
        doc["vcov"] = np.asarray(fit.vcov).tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_fit(path):
    """Load a fit JSON back into (spec, loadings, sigma, z_modes, meta)."""
    with open(path) as fh:
        doc = json.load(fh)
    check_format_version(doc.get("format_version"))
    spec = _spec_from_dict(doc["spec"])
    loadings = Loadings(alpha=np.asarray(doc["alpha"], dtype=float),
                        constraint_mask=frozenset(
                            tuple(x) for x in doc.get("constraint_mask", [])))
    sigma = np.asarray(doc["sigma"], dtype=float)
    z_modes = np.asarray(doc["z_modes"], dtype=float)
    return spec, loadings, sigma, z_modes, doc


def write_truth(path, truth, spec):
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": _spec_dict(spec),
        "alpha": np.asarray(truth.alpha_true.alpha).tolist(),
        "sigma": np.asarray(truth.sigma_true).tolist(),
        "z": np.asarray(truth.z_true).tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_truth(path):
    with open(path) as fh:
        doc = json.load(fh)
    check_format_version(doc.get("format_version"))
    return doc


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

def write_table(path, rows, columns):
    """Write dicts as CSV with a leading format_version comment row."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            out = []
            for col in columns:
                val = row.get(col, "")
                if isinstance(val, (float, np.floating)):
                    out.append(_fmt(val))
                else:
                    out.append(val)
            writer.writerow(out)


def write_matrix_csv(path, header, arrays):
    """Write parallel 1-d arrays as CSV columns."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for vals in zip(*arrays):
            writer.writerow([_fmt(v) if isinstance(v, (float, np.floating))
                             else v for v in vals])


# ---------------------------------------------------------------------------
# Plan files (flat key-value TOML subset)
# ---------------------------------------------------------------------------

def parse_plan(path):
    """Parse a flat `key = value` config file.

    Supports quoted strings, booleans, integers and floats; '#' starts a
    comment.  Deliberately a TOML subset so plans stay tool-agnostic.
    """
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError("expected 'key = value'", line=lineno)
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key or not value:
                raise DataFormatError("empty key or value", line=lineno)
            if value.startswith('"') and value.endswith('"') and len(value) >= 2:
                out[key] = value[1:-1]
            elif value in ("true", "false"):
                out[key] = value == "true"
            else:
                try:
                    out[key] = int(value)
                except ValueError:
                    try:
                        out[key] = float(value)
                    except ValueError:
                        raise DataFormatError(
                            f"cannot parse value {value!r}", line=lineno) from None
    return out
