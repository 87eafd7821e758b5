"""CSV and JSON serialization for the command-line tools.

Matrices travel as headerless comma-separated numeric CSV; response files
mark missing cells with "NA".  JSON documents carry a "schema": 1 field.
Family layouts are written as a compact string such as "g×15,b×15"
(block counts) or as a JSON array of family tags.
"""

from __future__ import annotations

import json

import numpy as np

from .families import BERNOULLI, GAUSSIAN, POISSON, FamilySpec, ObservedOutcomes

_KIND_ALIASES = {
    "g": GAUSSIAN, "gaussian": GAUSSIAN, "normal": GAUSSIAN,
    "b": BERNOULLI, "bernoulli": BERNOULLI, "binary": BERNOULLI,
    "p": POISSON, "poisson": POISSON,
}


def parse_families(text: str) -> list[FamilySpec]:
    """Parse "g×15,b×15" / "gaussian x30" / "g,g,b" into a family list."""
    out: list[FamilySpec] = []
    for block in text.split(","):
        block = block.strip().lower()
        if not block:
            continue
        for sep in ("×", "x", "*"):
            if sep in block:
                kind_txt, _, count_txt = block.partition(sep)
                break
        else:
            kind_txt, count_txt = block, "1"
        kind = _KIND_ALIASES.get(kind_txt.strip())
        if kind is None:
            raise ValueError(f"unknown family {kind_txt.strip()!r} in {text!r}")
        try:
            count = int(count_txt.strip())
        except ValueError:
            raise ValueError(f"bad repeat count {count_txt.strip()!r} in {text!r}") from None
        if count < 1:
            raise ValueError(f"repeat count must be >= 1 in {text!r}")
        out.extend(FamilySpec(kind) for _ in range(count))
    if not out:
        raise ValueError(f"no families in {text!r}")
    return out


def format_families(families) -> str:
    """Inverse of parse_families using run-length blocks."""
    runs = []
    for f in families:
        if runs and runs[-1][0] == f.kind:
            runs[-1][1] += 1
        else:
            runs.append([f.kind, 1])
    return ",".join(f"{kind}×{count}" if count > 1 else kind for kind, count in runs)


def _parse_cell(token: str, path, row: int, col: int, allow_na: bool) -> float:
    token = token.strip()
    if allow_na and token.upper() in ("NA", "NAN", ""):
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise ValueError(
            f"{path}: malformed value {token!r} at row {row + 1}, column {col + 1}"
        ) from None


def read_matrix_csv(path, allow_na: bool = False) -> np.ndarray:
    """Headerless numeric CSV; with allow_na, "NA" cells become NaN."""
    rows = []
    width = None
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(",")
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise ValueError(
                    f"{path}: row {i + 1} has {len(tokens)} columns, expected {width}"
                )
            rows.append([_parse_cell(t, path, i, j, allow_na) for j, t in enumerate(tokens)])
    if not rows:
        raise ValueError(f"{path}: empty matrix")
    return np.asarray(rows, dtype=float)


def write_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w") as fh:
        for row in M:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_response_csv(path) -> ObservedOutcomes:
    values = read_matrix_csv(path, allow_na=True)
    return ObservedOutcomes.from_values(values)


def write_response_csv(path, y: ObservedOutcomes) -> None:
    with open(path, "w") as fh:
        for i in range(y.n):
            cells = [
                repr(float(y.values[i, k])) if y.mask[i, k] else "NA"
                for k in range(y.q)
            ]
            fh.write(",".join(cells) + "\n")


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
