"""Data, model and report files.

Numbers are written with 17 significant digits so that reading a file back
reproduces the in-memory doubles exactly. All writers go through a
temporary file and an atomic rename.
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import sys
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import ParseError

FLOAT_FORMAT = ".17g"


def fmt(x):
    """Text form of a cell: integers and strings as is, floats with 17 digits."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), FLOAT_FORMAT)
    return str(x)


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_data_csv(path, log10=False):
    """Read a sample-by-feature table.

    The first row holds a corner label and the feature names; every later
    row holds a sample id followed by numeric cells. Empty or non-numeric
    cells raise :class:`ParseError` because the methods need complete data.

    Returns
    -------
    values : ndarray of shape (n, p)
    sample_ids : list of str
    feature_names : list of str
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError(1, "empty file")
    header = rows[0]
    names = [h.strip() for h in header[1:]]
    if not names:
        raise ParseError(1, "no feature columns")
    if len(set(names)) != len(names):
        raise ParseError(1, "duplicate feature names")
    ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(lineno, f"expected {len(header)} cells, got {len(row)}")
        ids.append(row[0].strip())
        try:
            values.append([float(c) for c in row[1:]])
        except ValueError:
            raise ParseError(lineno, "missing or non-numeric value") from None
    arr = np.array(values, dtype=float).reshape(len(ids), len(names))
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0, 0]) + 2
        raise ParseError(bad, "non-finite value")
    if log10:
        if np.any(arr <= 0):
            raise ValueError("--log10 needs strictly positive data")
        arr = np.log10(arr)
    return arr, ids, names


def write_data_csv(path, values, sample_ids=None, feature_names=None, corner="sample"):
    values = np.asarray(values, dtype=float)
    n, p = values.shape
    ids = sample_ids if sample_ids is not None else [f"s{i + 1}" for i in range(n)]
    names = feature_names if feature_names is not None else [f"f{j + 1}" for j in range(p)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([corner, *names])
    for sid, row in zip(ids, values):
        w.writerow([sid, *(fmt(x) for x in row)])
    atomic_write_text(path, buf.getvalue())


def write_rows_csv(path, rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])
    atomic_write_text(path, buf.getvalue())


def read_rows_csv(path):
    """Rows of a report CSV as dicts, numbers converted back."""

    def conv(s):
        for cast in (int, float):
            try:
                return cast(s)
            except ValueError:
                pass
        return {"true": True, "false": False}.get(s, s)

    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: conv(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def environment():
    import numba
    import scipy
    import sklearn

    from . import __version__

    return {
        "netcca": __version__,
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "numba": numba.__version__,
    }


def model_to_dict(model, x_names=None, y_names=None, manifest=None):
    """JSON-ready form of a :class:`~netcca.scca.CcaModel`."""
    cfg = model.config
    p = model.x_means.size
    q = model.y_means.size
    x_names = list(x_names) if x_names is not None else [str(j + 1) for j in range(p)]
    y_names = list(y_names) if y_names is not None else [str(j + 1) for j in range(q)]
    comps = []
    for c in model.components:
        comps.append(
            {
                "alpha": [float(a) for a in c.alpha],
                "beta": [float(b) for b in c.beta],
                "rho": float(c.rho),
                "iterations": int(c.iterations),
                "converged": bool(c.converged),
                "trivial": bool(c.trivial),
                "selectedX": [x_names[i] for i in c.selected_x()],
                "selectedY": [y_names[i] for i in c.selected_y()],
            }
        )
    return {
        "components": comps,
        "config": {
            "family": cfg.penalty.family,
            "constraint": cfg.penalty.constraint,
            "eta": cfg.penalty.eta,
            "gamma": cfg.penalty.gamma,
            "tieBreak": cfg.penalty.tie_break,
            "tauX": cfg.tau_x,
            "tauY": cfg.tau_y,
            "components": cfg.n_components,
            "maxOuterIterations": cfg.max_outer_iterations,
            "convergenceTol": cfg.convergence_tol,
            "update": cfg.update,
            "solverTolerance": cfg.solver.tolerance,
        },
        "scaling": {
            "xMeans": model.x_means.tolist(),
            "xSds": model.x_sds.tolist(),
            "yMeans": model.y_means.tolist(),
            "ySds": model.y_sds.tolist(),
        },
        "featureNames": {"x": x_names, "y": y_names},
        "warnings": list(model.warnings),
        "manifest": manifest or {},
    }


def model_from_dict(d):
    """Rebuild a :class:`~netcca.scca.CcaModel` from :func:`model_to_dict` output."""
    from .penalty import PenaltyConfig
    from .scca import CcaComponent, CcaModel, FitConfig
    from .solver import SolverSettings

    c = d["config"]
    cfg = FitConfig(
        PenaltyConfig(c["family"], c["constraint"], c["eta"], c["gamma"], c["tieBreak"]),
        c["tauX"],
        c["tauY"],
        c["maxOuterIterations"],
        c["convergenceTol"],
        c["components"],
        SolverSettings(tolerance=c["solverTolerance"]),
        c["update"],
    )
    comps = [
        CcaComponent(
            np.array(k["alpha"]),
            np.array(k["beta"]),
            k["rho"],
            k["iterations"],
            k["converged"],
            k.get("trivial", False),
        )
        for k in d["components"]
    ]
    s = d["scaling"]
    return CcaModel(
        comps,
        cfg,
        np.array(s["xMeans"]),
        np.array(s["xSds"]),
        np.array(s["yMeans"]),
        np.array(s["ySds"]),
        list(d.get("warnings", [])),
    )
