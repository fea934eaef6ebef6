#!/usr/bin/env python3
"""Download the SUPPORT right-heart-catheterization cohort and prepare the
analysis extract used by the `estimate` examples.

Writes data/rhc.csv with:
  - rhc: 1 if the patient was managed with RHC in the first 24h, else 0
  - los: hospital length of stay in days (discharge minus study admission,
    death date when no discharge date is recorded); analyze on the log
    scale via `--outcome-transform log`
  - 72 covariate columns: 21 numeric measurements, a zero-weight flag,
    24 yes/no indicators, and dummy expansions of the disease-category,
    cancer, insurance, race, and income factors (first level dropped)

The two heavily missing measurements (urine output, ADL score) are not
part of the extract; the secondary disease category's missing values form
their own level. Rows with a nonpositive or unrecoverable length of stay
are dropped and counted on stderr.

Usage: python3 scripts/fetch_rhc.py [--url URL] [--out data/rhc.csv]
"""

from __future__ import annotations

import argparse
import sys
import urllib.request
from io import StringIO
from pathlib import Path

import pandas as pd

DEFAULT_URL = "https://hbiostat.org/data/repo/rhc.csv"

NUMERIC = (
    "age", "edu", "das2d3pc", "aps1", "scoma1", "meanbp1", "wblc1", "hrt1",
    "resp1", "temp1", "pafi1", "alb1", "hema1", "bili1", "crea1", "sod1",
    "pot1", "paco21", "ph1", "wtkilo1", "surv2md1",
)
YESNO = (
    "sex", "dnr1", "cardiohx", "chfhx", "dementhx", "psychhx", "chrpulhx",
    "renalhx", "liverhx", "gibledhx", "malighx", "immunhx", "transhx",
    "amihx", "resp", "card", "neuro", "gastr", "renal", "meta", "hema",
    "seps", "trauma", "ortho",
)
# factor -> the level absorbed by the intercept
FACTORS = {
    "cat1": "ARF",
    "cat2": "None",
    "ca": "No",
    "ninsclas": "Private",
    "race": "white",
    "income": "Under $11k",
}
EXPECTED_COVARIATES = 72


def sanitize(level: str) -> str:
    keep = [c if c.isalnum() else "_" for c in level.strip().lower()]
    collapsed = "".join(keep)
    while "__" in collapsed:
        collapsed = collapsed.replace("__", "_")
    return collapsed.strip("_")


def yes_no(series: pd.Series, column: str) -> pd.Series:
    values = series.astype(str).str.strip().str.lower()
    if column == "sex":
        mapping = {"male": 1.0, "female": 0.0}
    else:
        mapping = {"yes": 1.0, "no": 0.0, "1": 1.0, "0": 0.0,
                   "1.0": 1.0, "0.0": 0.0}
    out = values.map(mapping)
    if out.isna().any():
        bad = sorted(values[out.isna()].unique())
        raise SystemExit(f"column {column!r}: unmapped values {bad}")
    return out


def prepare(raw: pd.DataFrame) -> pd.DataFrame:
    out = pd.DataFrame(index=raw.index)
    out["rhc"] = (raw["swang1"].str.strip() == "RHC").astype(float)

    discharge = pd.to_numeric(raw["dschdte"], errors="coerce")
    death = pd.to_numeric(raw["dthdte"], errors="coerce")
    admission = pd.to_numeric(raw["sadmdte"], errors="coerce")
    end = discharge.fillna(death)
    out["los"] = end - admission

    for name in NUMERIC:
        out[name] = pd.to_numeric(raw[name], errors="coerce")
    out["wt0"] = (out["wtkilo1"] == 0.0).astype(float)

    for name in YESNO:
        out[name] = yes_no(raw[name], name)

    for factor, reference in FACTORS.items():
        values = raw[factor].astype(str).str.strip()
        values = values.replace({"nan": "None", "": "None", "NA": "None"})
        levels = sorted(set(values))
        if reference not in levels:
            raise SystemExit(
                f"factor {factor!r}: reference level {reference!r} absent "
                f"(saw {levels})"
            )
        for level in levels:
            if level == reference:
                continue
            out[f"{factor}_{sanitize(level)}"] = (
                (values == level).astype(float)
            )

    n_covariates = len(out.columns) - 2  # rhc and los are not covariates
    if n_covariates != EXPECTED_COVARIATES:
        raise SystemExit(
            f"covariate expansion produced {n_covariates} columns, "
            f"expected {EXPECTED_COVARIATES}; the source schema changed"
        )

    before = len(out)
    out = out.dropna()
    out = out[out["los"] > 0.0]
    dropped = before - len(out)
    if dropped:
        print(f"dropped {dropped} row(s) without a usable length of stay",
              file=sys.stderr)
    return out.reset_index(drop=True)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--url", default=DEFAULT_URL)
    parser.add_argument("--out", default="data/rhc.csv")
    args = parser.parse_args()

    print(f"downloading {args.url}", file=sys.stderr)
    with urllib.request.urlopen(args.url) as response:
        text = response.read().decode("utf-8")
    raw = pd.read_csv(StringIO(text), dtype=str)

    prepared = prepare(raw)
    treated = int(prepared["rhc"].sum())
    print(
        f"{len(prepared)} rows ({treated} treated, "
        f"{len(prepared) - treated} control), "
        f"{len(prepared.columns) - 2} covariates",
        file=sys.stderr,
    )

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    float_format = "%.10g"
    prepared.to_csv(out_path, index=False, float_format=float_format)
    print(f"wrote {out_path}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
