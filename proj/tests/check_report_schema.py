#!/usr/bin/env python3
"""Runs the CLI on small experiments and validates each report against the schema.

usage: check_report_schema.py FIRALKIT_BINARY SCHEMA WORKDIR
"""
import csv
import json
import os
import subprocess
import sys

import jsonschema


def main():
    binary, schema_path, workdir = sys.argv[1:4]
    os.makedirs(workdir, exist_ok=True)
    with open(schema_path) as f:
        schema = json.load(f)
    jsonschema.Draft7Validator.check_schema(schema)
    validator = jsonschema.Draft7Validator(schema)

    data = os.path.join(workdir, "blobs.fkmx")
    subprocess.run([binary, "generate", "--out", data, "--classes", "3", "--dim", "4",
                    "--per-class", "20", "--seed", "5"], check=True)
    cases = {
        "all_solvers": ["--solver", "approx,exact,random,kmeans,entropy", "--budget", "4",
                        "--rounds", "2", "--data", data, "--label-column", "last"],
        "synthetic_default": ["--solver", "approx", "--budget", "5", "--rounds", "1", "--s", "5",
                              "--cg-tol", "0.05", "--eta-grid", "0.5,1,2"],
    }
    failures = 0
    for name, args in cases.items():
        out = os.path.join(workdir, name + ".json")
        subprocess.run([binary, "run", "--out", out] + args, check=True, stdout=subprocess.DEVNULL)
        with open(out) as f:
            report = json.load(f)
        errors = sorted(validator.iter_errors(report), key=lambda e: list(e.path))
        for e in errors:
            print(f"{name}: {'/'.join(map(str, e.path))}: {e.message}")
        failures += len(errors)
        n = report["dataset"]["n"]
        for m in report["methods"]:
            for r in m["rounds"]:
                if any(i >= n for i in r["selected"]):
                    print(f"{name}: {m['solver']} round {r['round']} selected a row outside the dataset")
                    failures += 1
        with open(os.path.join(workdir, name + ".plot.csv")) as f:
            rows = list(csv.reader(f))
        expected = 1 + 2 * len(report["methods"])
        if rows[0][0] != "round" or any(len(r) != expected for r in rows):
            print(f"{name}: plot CSV has the wrong shape")
            failures += 1
        print(f"{name}: {'ok' if not errors else 'invalid'}")
    sys.exit(1 if failures else 0)


if __name__ == "__main__":
    main()
