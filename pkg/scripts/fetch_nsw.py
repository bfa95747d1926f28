#!/usr/bin/env python3
"""Download the public job-training study files and write analysis-ready CSVs.

Produces two files in the destination directory:
  nsw_dw.csv       the randomized experiment sample (185 treated, 260 control)
  nsw_dw_cps3.csv  the same sample plus 429 survey control units

Columns: treat,age,education,black,hispanic,married,nodegree,re74,re75,re78.
Needs network access; rerunning overwrites the outputs. Point the test suite
at the result with MBPOLICY_NSW_DW=<path>/nsw_dw.csv (and _CPS3 likewise) or
keep the default destination data/ under the repository root.
"""

from __future__ import annotations

import argparse
import csv
import sys
import urllib.request
from pathlib import Path

BASE_URL = "https://users.nber.org/~rdehejia/data"
SOURCES = {
    "treated": f"{BASE_URL}/nswre74_treated.txt",
    "control": f"{BASE_URL}/nswre74_control.txt",
    "cps3": f"{BASE_URL}/cps3_controls.txt",
}
HEADER = [
    "treat", "age", "education", "black", "hispanic",
    "married", "nodegree", "re74", "re75", "re78",
]
EXPECTED_ROWS = {"treated": 185, "control": 260, "cps3": 429}


def fetch_rows(url: str) -> list[list[float]]:
    with urllib.request.urlopen(url, timeout=60) as response:
        text = response.read().decode("utf-8")
    rows = []
    for line in text.splitlines():
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != len(HEADER):
            raise ValueError(f"{url}: expected {len(HEADER)} columns, got {len(tokens)}")
        rows.append([float(t) for t in tokens])
    return rows


def write_csv(path: Path, rows: list[list[float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for row in rows:
            writer.writerow([int(row[0])] + [repr(v) for v in row[1:]])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--dest",
        default=str(Path(__file__).resolve().parent.parent / "data"),
        help="output directory (default: <repo>/data)",
    )
    args = parser.parse_args()
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)

    samples = {}
    for name, url in SOURCES.items():
        print(f"fetching {url} ...")
        rows = fetch_rows(url)
        if len(rows) != EXPECTED_ROWS[name]:
            print(
                f"warning: {name} has {len(rows)} rows, expected {EXPECTED_ROWS[name]}",
                file=sys.stderr,
            )
        samples[name] = rows

    dw = samples["treated"] + samples["control"]
    write_csv(dest / "nsw_dw.csv", dw)
    write_csv(dest / "nsw_dw_cps3.csv", dw + samples["cps3"])
    print(f"wrote {dest / 'nsw_dw.csv'} ({len(dw)} rows)")
    print(f"wrote {dest / 'nsw_dw_cps3.csv'} ({len(dw) + len(samples['cps3'])} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
