#!/usr/bin/env python3
"""Convert the raw UCI Adult and German Credit files into header-row CSVs
plus JSON schema sidecars understood by `farcon`'s tabular loader.

Usage: prepare_uci.py <dir with adult.data, adult.test, german.data> <out dir>

The raw files are available from the UCI ML repository (adult, statlog
german credit). Output: adult.csv, adult.schema.json, german.csv,
german.schema.json.
"""
import csv
import json
import os
import sys

ADULT_COLUMNS = [
    ("age", "continuous"),
    ("workclass", "categorical"),
    ("fnlwgt", "continuous"),
    ("education", "categorical"),
    ("education_num", "continuous"),
    ("marital_status", "categorical"),
    ("occupation", "categorical"),
    ("relationship", "categorical"),
    ("race", "categorical"),
    ("sex", "binary"),
    ("capital_gain", "continuous"),
    ("capital_loss", "continuous"),
    ("hours_per_week", "continuous"),
    ("native_country", "categorical"),
    ("income", "binary"),
]

GERMAN_COLUMNS = [
    ("status", "categorical"),
    ("duration", "continuous"),
    ("credit_history", "categorical"),
    ("purpose", "categorical"),
    ("credit_amount", "continuous"),
    ("savings", "categorical"),
    ("present_employment", "categorical"),
    ("installment_rate", "continuous"),
    ("personal_status", "categorical"),
    ("other_debtors", "categorical"),
    ("present_residence_since", "continuous"),
    ("property", "categorical"),
    ("age", "continuous"),
    ("installment_plans", "categorical"),
    ("housing", "categorical"),
    ("number_of_existing_credits", "continuous"),
    ("job", "categorical"),
    ("number_of_people_liable_for", "continuous"),
    ("telephone", "categorical"),
    ("foreign_worker", "categorical"),
    ("credit", "binary"),
]

# A92 / A95 are the female codes of the combined status-and-sex attribute.
GERMAN_FEMALE = {"A92", "A95"}


def write_schema(path, columns, sensitive, target):
    schema = {
        "columns": [{"name": n, "kind": k} for n, k in columns],
        "sensitive": sensitive,
        "target": target,
    }
    with open(path, "w") as f:
        json.dump(schema, f, indent=2)
        f.write("\n")


def adult(src, out):
    rows = []
    for name in ("adult.data", "adult.test"):
        with open(os.path.join(src, name)) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("|"):
                    continue
                cells = [c.strip() for c in line.split(",")]
                if len(cells) != 15 or "?" in cells:
                    continue
                cells[9] = "1" if cells[9] == "Male" else "0"
                cells[14] = "1" if cells[14].rstrip(".") == ">50K" else "0"
                rows.append(cells)
    cols = [c for c, _ in ADULT_COLUMNS]
    with open(os.path.join(out, "adult.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        w.writerows(rows)
    write_schema(os.path.join(out, "adult.schema.json"), ADULT_COLUMNS, "sex", "income")
    return len(rows)


def german(src, out):
    rows = []
    with open(os.path.join(src, "german.data")) as f:
        for line in f:
            cells = line.split()
            if len(cells) != 21:
                continue
            # credit: 1 = good, 2 = bad
            cells[20] = "1" if cells[20] == "1" else "0"
            rows.append(cells)
    cols = [c for c, _ in GERMAN_COLUMNS]
    columns = list(GERMAN_COLUMNS) + [("sex", "binary")]
    with open(os.path.join(out, "german.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols + ["sex"])
        for r in rows:
            w.writerow(r + ["0" if r[8] in GERMAN_FEMALE else "1"])
    # personal_status encodes sex directly, so it is excluded from the features.
    columns = [c for c in columns if c[0] != "personal_status"]
    write_schema(os.path.join(out, "german.schema.json"), columns, "sex", "credit")
    return len(rows)


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    src, out = sys.argv[1], sys.argv[2]
    os.makedirs(out, exist_ok=True)
    print("adult rows:", adult(src, out))
    print("german rows:", german(src, out))
