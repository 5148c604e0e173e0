#!/usr/bin/env python3
"""Fetch the Breast Cancer Wisconsin (Original) dataset and convert it to the
CSV layout used by the evaluation harness (features first, label last).

Usage: python3 scripts/fetch_breast_cancer.py [out.csv]

Writes data/breast-cancer.csv by default. Requires network access to
archive.ics.uci.edu. The raw file has 699 rows: an id column (dropped here),
nine integer-valued features with '?' marking missing cells, and a class
column coded 2 (benign) / 4 (malignant).
"""
import csv
import sys
import urllib.request

URL = (
    "https://archive.ics.uci.edu/ml/machine-learning-databases/"
    "breast-cancer-wisconsin/breast-cancer-wisconsin.data"
)

COLUMNS = [
    "clump-thickness",
    "cell-size-uniformity",
    "cell-shape-uniformity",
    "marginal-adhesion",
    "epithelial-cell-size",
    "bare-nuclei",
    "bland-chromatin",
    "normal-nucleoli",
    "mitoses",
]

CLASS_NAMES = {"2": "benign", "4": "malignant"}


def main() -> None:
    out_path = sys.argv[1] if len(sys.argv) > 1 else "data/breast-cancer.csv"
    raw = urllib.request.urlopen(URL, timeout=60).read().decode("ascii")
    rows = [line.split(",") for line in raw.splitlines() if line.strip()]
    if len(rows) != 699:
        raise SystemExit(f"expected 699 rows, got {len(rows)}")
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(COLUMNS + ["class"])
        for r in rows:
            if len(r) != 11:
                raise SystemExit(f"malformed row: {r}")
            w.writerow(r[1:10] + [CLASS_NAMES[r[10]]])
    print(f"wrote {out_path} ({len(rows)} samples)")


if __name__ == "__main__":
    main()
