"""CSV ingestion and emission for trajectory datasets.

The schema file is INI: a ``[columns]`` section mapping roles to CSV column
names (x1 and x2 take comma-separated lists; a2 cells may be blank for
subjects with no second-stage decision) and an optional ``[design]`` section
selecting blip-model columns.
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data_model import Dataset, StageDesign, column_design
from .exceptions import ConfigError, DataFormatError


@dataclass(frozen=True)
class DataSchema:
    x1_cols: Tuple[str, ...]
    a1_col: str
    x2_cols: Tuple[str, ...]
    a2_col: str
    y_col: str
    r_col: Optional[str] = None
    s_x1: Tuple[str, ...] = ()
    s_x2: Tuple[str, ...] = ()
    s_include_a1: bool = False
    s_eligibility_scaled: bool = False
    w_x1: Tuple[str, ...] = ()


def _split_list(raw: str) -> Tuple[str, ...]:
    return tuple(tok.strip() for tok in raw.split(",") if tok.strip())


def load_schema(path: str) -> DataSchema:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read schema file {path!r}")
    if "columns" not in cp:
        raise ConfigError("schema file needs a [columns] section")
    cols = cp["columns"]
    for role in ("x1", "a1", "x2", "a2", "y"):
        if role not in cols:
            raise ConfigError(f"schema [columns] is missing {role!r}")
    design = cp["design"] if "design" in cp else {}
    return DataSchema(
        x1_cols=_split_list(cols["x1"]),
        a1_col=cols["a1"].strip(),
        x2_cols=_split_list(cols["x2"]),
        a2_col=cols["a2"].strip(),
        y_col=cols["y"].strip(),
        r_col=cols["r"].strip() if "r" in cols else None,
        s_x1=_split_list(design.get("s_x1", "")),
        s_x2=_split_list(design.get("s_x2", "")),
        s_include_a1=str(design.get("s_include_a1", "false")).lower() in ("1", "true", "yes"),
        s_eligibility_scaled=str(design.get("s_eligibility_scaled", "false")).lower()
        in ("1", "true", "yes"),
        w_x1=_split_list(design.get("w_x1", "")),
    )


def design_from_schema(schema: DataSchema) -> StageDesign:
    """Build the blip design implied by a schema's [design] section."""
    if not schema.w_x1 or not (schema.s_x1 or schema.s_x2 or schema.s_include_a1):
        raise ConfigError("schema [design] must select s_* and w_x1 columns")

    def col_idx(names: Sequence[str], pool: Sequence[str], role: str) -> Tuple[int, ...]:
        out = []
        for nm in names:
            if nm not in pool:
                raise ConfigError(f"design column {nm!r} is not among the {role} columns")
            out.append(pool.index(nm))
        return tuple(out)

    return column_design(
        s_x1_cols=col_idx(schema.s_x1, schema.x1_cols, "x1"),
        s_x2_cols=col_idx(schema.s_x2, schema.x2_cols, "x2"),
        w_x1_cols=col_idx(schema.w_x1, schema.x1_cols, "x1"),
        s_include_a1=schema.s_include_a1,
        s_eligibility_scaled=schema.s_eligibility_scaled,
        s_names=tuple(
            ["s_const"]
            + (["s_a1"] if schema.s_include_a1 else [])
            + [f"s_{c}" for c in schema.s_x1]
            + [f"s_{c}" for c in schema.s_x2]
        ),
        w_names=tuple(["w_const"] + [f"w_{c}" for c in schema.w_x1]),
    )


def _parse_cell(raw: str, col: str, line: int) -> float:
    try:
        return float(raw)
    except ValueError:
        raise DataFormatError(f"non-numeric value {raw!r} in column {col!r} at line {line}")


def _parse_binary(raw: str, col: str, line: int) -> float:
    v = _parse_cell(raw, col, line)
    if v not in (0.0, 1.0):
        raise DataFormatError(f"non-binary treatment code {raw!r} in column {col!r} at line {line}")
    return v


def ingest_csv(path: str, schema: DataSchema) -> Dataset:
    """Read a typed dataset from a header-first CSV file.

    Blank a2 cells mark subjects without a second-stage decision.  Errors
    (missing columns, ragged rows, non-numeric cells, non-binary treatment
    codes) name the offending 1-based line.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path!r} is empty")
        header = [h.strip() for h in header]
        needed = list(schema.x1_cols) + [schema.a1_col] + list(schema.x2_cols) + [
            schema.a2_col,
            schema.y_col,
        ] + ([schema.r_col] if schema.r_col else [])
        for col in needed:
            if col not in header:
                raise DataFormatError(f"mapped column {col!r} missing from header")
        pos = {c: header.index(c) for c in header}

        x1_rows, a1_rows, x2_rows, a2_rows, y_rows, r_rows = [], [], [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"row at line {line_no} has {len(row)} cells, header has {len(header)}"
                )
            x1_rows.append([_parse_cell(row[pos[c]], c, line_no) for c in schema.x1_cols])
            x2_rows.append([_parse_cell(row[pos[c]], c, line_no) for c in schema.x2_cols])
            a1_rows.append(_parse_binary(row[pos[schema.a1_col]], schema.a1_col, line_no))
            raw_a2 = row[pos[schema.a2_col]].strip()
            a2_rows.append(
                np.nan if raw_a2 == "" else _parse_binary(raw_a2, schema.a2_col, line_no)
            )
            y_rows.append(_parse_cell(row[pos[schema.y_col]], schema.y_col, line_no))
            if schema.r_col:
                r_rows.append(_parse_binary(row[pos[schema.r_col]], schema.r_col, line_no))
    if not y_rows:
        raise DataFormatError(f"{path!r} contains a header but no data rows")
    return Dataset(
        x1=np.array(x1_rows),
        a1=np.array(a1_rows, dtype=np.int8),
        x2=np.array(x2_rows),
        a2=np.array(a2_rows),
        y=np.array(y_rows),
        r=np.array(r_rows, dtype=np.int8) if schema.r_col else None,
    )


def default_schema(data: Dataset) -> DataSchema:
    """Schema matching ``write_dataset_csv``'s generated column names."""
    return DataSchema(
        x1_cols=tuple(f"x1_{j}" for j in range(data.p1)),
        a1_col="a1",
        x2_cols=tuple(f"x2_{j}" for j in range(data.p2)),
        a2_col="a2",
        y_col="y",
        r_col="r" if data.r is not None else None,
    )


def write_dataset_csv(data: Dataset, path: str) -> str:
    """Emit a dataset with generated column names; round-trips via
    ``ingest_csv(path, default_schema(data))``."""
    schema = default_schema(data)
    header: List[str] = list(schema.x1_cols) + ["a1"] + list(schema.x2_cols) + ["a2", "y"]
    if data.r is not None:
        header.append("r")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.x1[i]]
            row.append(str(int(data.a1[i])))
            row.extend(repr(float(v)) for v in data.x2[i])
            row.append("" if np.isnan(data.a2[i]) else str(int(data.a2[i])))
            row.append(repr(float(data.y[i])))
            if data.r is not None:
                row.append(str(int(data.r[i])))
            writer.writerow(row)
    return path
