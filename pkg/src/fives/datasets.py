"""Loader for the UCI Adult census files (``adult.data`` / ``adult.test``)."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

from .data import ColumnSpec, dump_schema

ADULT_COLUMNS = [
    ("age", "numeric"),
    ("workclass", "categorical"),
    ("fnlwgt", "numeric"),
    ("education", "categorical"),
    ("education_num", "numeric"),
    ("marital_status", "categorical"),
    ("occupation", "categorical"),
    ("relationship", "categorical"),
    ("race", "categorical"),
    ("sex", "categorical"),
    ("capital_gain", "numeric"),
    ("capital_loss", "numeric"),
    ("hours_per_week", "numeric"),
    ("native_country", "categorical"),
]
ADULT_LABEL = "income_gt_50k"
ADULT_TRAIN_ROWS = 32_561
ADULT_TEST_ROWS = 16_281


def adult_schema(granularity=10):
    return [ColumnSpec(n, k, granularity if k == "numeric" else None) for n, k in ADULT_COLUMNS]


def find_adult_dir(path=None):
    """Directory holding adult.data and adult.test.

    Looks at ``path``, then ``$FIVES_ADULT_DIR``, then ``data/adult`` in the
    source checkout.
    """
    candidates = [path, os.environ.get("FIVES_ADULT_DIR"), Path(__file__).resolve().parents[2] / "data" / "adult"]
    for c in candidates:
        if c and (Path(c) / "adult.data").exists() and (Path(c) / "adult.test").exists():
            return Path(c)
    return None


def _read_raw(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != len(ADULT_COLUMNS) + 1:
                continue
            label = cells[-1].rstrip(".")
            cells[-1] = "1" if label == ">50K" else "0"
            rows.append(cells)
    return rows


def write_adult_csv(adult_dir, out_dir, granularity=10):
    """Convert the raw files into one headered CSV (train rows first) plus a schema.

    Returns ``(csv_path, schema_path, n_train, n_test)``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = _read_raw(Path(adult_dir) / "adult.data")
    test = _read_raw(Path(adult_dir) / "adult.test")
    csv_path = out / "adult.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([n for n, _ in ADULT_COLUMNS] + [ADULT_LABEL])
        writer.writerows(train)
        writer.writerows(test)
    schema_path = out / "adult_schema.json"
    schema_path.write_text(json.dumps(dump_schema(adult_schema(granularity), ADULT_LABEL), indent=1))
    return csv_path, schema_path, len(train), len(test)
