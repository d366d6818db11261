"""File formats shared by the command line and the experiment harness.

Everything written here is deterministic byte for byte given the same
inputs: floats are rendered with ``repr`` (shortest round-trip form),
row and key orders are fixed, and JSON files carry a schema_version.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = [
    "CsvError",
    "read_numeric_csv",
    "read_label_csv",
    "write_json",
    "results_to_csv",
    "write_results_csv",
    "summarize_results",
    "parse_plan_file",
]

RESULT_COLUMNS = ("scenario", "n", "method", "replicate", "ise", "ari", "k_hat", "lambda", "seed")


class CsvError(ValueError):
    """Unparsable CSV input; carries the offending line numbers."""

    def __init__(self, path, bad_lines):
        self.bad_lines = list(bad_lines)
        shown = ", ".join(str(i) for i in self.bad_lines[:20])
        more = "" if len(self.bad_lines) <= 20 else f" (+{len(self.bad_lines) - 20} more)"
        super().__init__(f"{path}: unparsable rows at line(s) {shown}{more}")


def read_numeric_csv(path, header: bool = True) -> np.ndarray:
    """Read an all-numeric comma-separated file, one observation per row."""
    rows = []
    bad = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    start = 1 if header else 0
    width = None
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError:
            bad.append(lineno)
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            bad.append(lineno)
            continue
        rows.append(row)
    if bad:
        raise CsvError(path, bad)
    if not rows:
        raise CsvError(path, [start + 1])
    return np.asarray(rows, dtype=float)


def read_label_csv(path, header: bool = True) -> np.ndarray:
    """Read one label per row (strings allowed)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh.read().splitlines()]
    start = 1 if header else 0
    labels = [ln for ln in lines[start:] if ln]
    if not labels:
        raise CsvError(path, [start + 1])
    return np.asarray(labels)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))  # plain-float repr even for numpy scalars
    return str(value)


def results_to_csv(rows) -> str:
    """Render experiment rows as deterministic CSV text."""
    out = [",".join(RESULT_COLUMNS)]
    for row in rows:
        out.append(",".join(_cell(row.get(key if key != "lambda" else "lam"))
                            for key in RESULT_COLUMNS))
    return "\n".join(out) + "\n"


def write_results_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(results_to_csv(rows))


def summarize_results(rows) -> dict:
    """Aggregate rows into the per-(scenario, n, method) summary layout.

    MISE is reported scaled by 1000, with standard deviations, matching
    the usual tabulation of density-estimation studies.
    """
    groups = {}
    for row in rows:
        key = (row["scenario"], row["n"], row["method"])
        groups.setdefault(key, []).append(row)

    tables: dict = {}
    for (scen, n, method), members in sorted(
        groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])
    ):
        ok = [r for r in members if r.get("ise") is not None and r.get("ari") is not None]
        entry: dict = {
            "replicates": len(members),
            "failed": len(members) - len(ok),
        }
        if ok:
            ises = np.array([r["ise"] for r in ok]) * 1000.0
            aris = np.array([r["ari"] for r in ok])
            ks = np.array([r["k_hat"] for r in ok], dtype=float)
            entry.update(
                mise_x1000_mean=float(ises.mean()),
                mise_x1000_sd=float(ises.std(ddof=1)) if len(ok) > 1 else 0.0,
                ari_mean=float(aris.mean()),
                ari_sd=float(aris.std(ddof=1)) if len(ok) > 1 else 0.0,
                k_hat_mean=float(ks.mean()),
            )
            lams = [r.get("lam") for r in ok if r.get("lam") is not None]
            if lams:
                entry["lambda_mean"] = float(np.mean(lams))
        tables.setdefault(scen, {}).setdefault(str(n), {})[method] = entry
    return {"schema_version": 1, "tables": tables}


def parse_plan_file(path) -> dict:
    """Parse the key=value plan format into keyword arguments.

    Recognized keys: scenarios, methods (comma-separated lists), b, seed,
    ensemble_size, cv_folds (integers), n (comma-separated integers), and
    an optional output_dir (used when the command line gives none).
    Lines starting with '#' are comments.
    """
    raw = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            raw[key.lower()] = value

    def split(value):
        return tuple(tok.strip() for tok in value.split(",") if tok.strip())

    kwargs = {}
    for key, value in raw.items():
        if key == "scenarios":
            kwargs["scenarios"] = split(value)
        elif key == "methods":
            kwargs["methods"] = split(value)
        elif key == "n":
            kwargs["n_values"] = tuple(int(tok) for tok in split(value))
        elif key in ("b", "seed", "ensemble_size", "cv_folds"):
            kwargs[key] = int(value)
        elif key == "output_dir":
            kwargs["output_dir"] = value
        else:
            raise ValueError(f"{path}: unknown plan key {key!r}")
    return kwargs
