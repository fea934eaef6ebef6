#!/usr/bin/env python3
"""Regenerate data/rhc_synthetic.csv, a small stand-in for the real cohort.

Same schema as the fetch script's output (rhc, los, 72 covariates), fixed
seed, no relationship to any real patient. Treatment depends on a few of
the covariates so weighting has something to do, and log length of stay
carries a small treatment effect on the treated side.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pandas as pd

SEED = 20260823
N = 800


def main() -> int:
    rng = np.random.default_rng(SEED)
    cols: dict[str, np.ndarray] = {}

    severity = rng.normal(size=N)          # latent illness severity
    frailty = rng.normal(size=N)           # latent chronic burden

    numeric_base = {
        "age": 61 + 16 * frailty + 4 * rng.normal(size=N),
        "edu": np.clip(12 + 3 * rng.normal(size=N), 0, 22),
        "das2d3pc": 21 + 5 * rng.normal(size=N) - 2 * frailty,
        "aps1": 54 + 15 * severity + 6 * rng.normal(size=N),
        "scoma1": np.clip(12 + 25 * severity + 10 * rng.normal(size=N), 0, 100),
        "meanbp1": 78 - 12 * severity + 25 * rng.normal(size=N),
        "wblc1": np.clip(15 + 4 * severity + 7 * rng.normal(size=N), 0, None),
        "hrt1": 112 + 12 * severity + 25 * rng.normal(size=N),
        "resp1": 28 + 5 * severity + 10 * rng.normal(size=N),
        "temp1": 37.6 + 1.1 * rng.normal(size=N),
        "pafi1": np.clip(222 - 40 * severity + 75 * rng.normal(size=N), 30, None),
        "alb1": 3.1 - 0.3 * frailty + 0.6 * rng.normal(size=N),
        "hema1": 31.9 + 7 * rng.normal(size=N),
        "bili1": np.clip(2.2 + 1.5 * severity + 3 * rng.normal(size=N), 0.1, None),
        "crea1": np.clip(2.1 + 0.8 * severity + 1.8 * rng.normal(size=N), 0.1, None),
        "sod1": 137 + 5 * rng.normal(size=N),
        "pot1": 4.1 + 1.0 * rng.normal(size=N),
        "paco21": 38 + 9 * rng.normal(size=N),
        "ph1": 7.39 + 0.09 * rng.normal(size=N),
        "wtkilo1": np.clip(67 + 18 * rng.normal(size=N), 0, None),
        "surv2md1": np.clip(0.59 - 0.15 * severity + 0.17 * rng.normal(size=N),
                            0.01, 0.97),
    }
    cols.update({k: np.asarray(v, dtype=float) for k, v in numeric_base.items()})
    # the source data codes missing admission weight as zero; keep a real
    # fraction of those so the flag column is not identically zero
    missing_weight = rng.random(N) < 0.05
    cols["wtkilo1"] = np.where(missing_weight, 0.0, cols["wtkilo1"])
    cols["wt0"] = (cols["wtkilo1"] == 0.0).astype(float)

    yesno_probs = {
        "sex": 0.56, "dnr1": 0.11, "cardiohx": 0.18, "chfhx": 0.18,
        "dementhx": 0.10, "psychhx": 0.11, "chrpulhx": 0.21, "renalhx": 0.10,
        "liverhx": 0.10, "gibledhx": 0.10, "malighx": 0.24, "immunhx": 0.27,
        "transhx": 0.12, "amihx": 0.10, "resp": 0.42, "card": 0.35,
        "neuro": 0.13, "gastr": 0.16, "renal": 0.12, "meta": 0.11,
        "hema": 0.12, "seps": 0.24, "trauma": 0.10, "ortho": 0.10,
    }
    for name, p in yesno_probs.items():
        cols[name] = (rng.random(N) < p).astype(float)

    factor_levels = {
        "cat1": ["chf", "cirrhosis", "colon_cancer", "coma", "copd",
                 "lung_cancer", "mosf_w_malignancy", "mosf_w_sepsis"],
        "cat2": ["cirrhosis", "colon_cancer", "coma", "lung_cancer",
                 "mosf_w_malignancy", "mosf_w_sepsis"],
        "ca": ["metastatic", "yes"],
        "ninsclas": ["medicaid", "medicare", "medicare_medicaid",
                     "no_insurance", "private_medicare"],
        "race": ["black", "other"],
        "income": ["11_25k", "25_50k", "50k"],
    }
    for factor, levels in factor_levels.items():
        # each unit draws one level or the reference, kept non-rare so the
        # per-arm designs stay full rank at this sample size
        k = len(levels)
        probs = np.full(k + 1, 1.0 / (k + 1.8))
        probs[0] = 1.0 - probs[1:].sum()
        draw = rng.choice(k + 1, size=N, p=probs)
        for j, level in enumerate(levels, start=1):
            cols[f"{factor}_{level}"] = (draw == j).astype(float)

    lin = (
        -0.55
        + 0.022 * (cols["aps1"] - 54)
        + 0.5 * cols["card"]
        + 0.4 * cols["seps"]
        - 0.012 * (cols["age"] - 61)
        - 1.1 * (cols["surv2md1"] - 0.59)
        + 0.3 * cols["cat1_mosf_w_sepsis"]
    )
    e = 1.0 / (1.0 + np.exp(-lin))
    z = (rng.random(N) < e).astype(float)
    cols["rhc"] = z

    log_los = (
        2.45
        + 0.004 * (cols["aps1"] - 54)
        + 0.10 * cols["chfhx"]
        + 0.08 * cols["seps"]
        - 0.5 * (cols["surv2md1"] - 0.59)
        + 0.12 * z
        + 0.55 * rng.normal(size=N)
    )
    cols["los"] = np.exp(log_los)

    order = ["rhc", "los"] + [n for n in cols if n not in ("rhc", "los")]
    frame = pd.DataFrame({name: cols[name] for name in order})
    out = Path(__file__).resolve().parent.parent / "data" / "rhc_synthetic.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format="%.6g")
    treated = int(z.sum())
    print(f"wrote {out} ({N} rows, {treated} treated)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
