#!/usr/bin/env python3
"""Convert WESAD subject pickles to the CSV layout of manifests/wesad.toml.

    python3 scripts/wesad_to_csv.py /path/to/WESAD /path/to/out

Reads <WESAD>/S<n>/S<n>.pkl and writes <out>/S<n>/{EDA,BVP,TEMP,labels}.csv
plus <out>/manifest.toml. Only the wrist (Empatica E4) signals are used.
Labels are sampled at 700 Hz in the pickle; they are thinned to 4 Hz, which
is the rate windows are labelled at.
"""

import argparse
import pickle
import shutil
import sys
from pathlib import Path

import numpy as np

SUBJECTS = [2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 14, 15, 16, 17]
RATES = {"EDA": 4.0, "BVP": 64.0, "TEMP": 4.0}
LABEL_FS = 700.0
LABEL_OUT_FS = 4.0


def write_two_column(path, header, t, v, fmt):
    with open(path, "w") as f:
        f.write(header + "\n")
        for a, b in zip(t, v):
            f.write(f"{a:.6f},{b:{fmt}}\n")


def convert(src, dst, sid):
    with open(src / sid / f"{sid}.pkl", "rb") as f:
        data = pickle.load(f, encoding="latin1")
    wrist = data["signal"]["wrist"]
    (dst / sid).mkdir(parents=True, exist_ok=True)
    for name, fs in RATES.items():
        x = np.asarray(wrist[name], dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{sid} {name}: non-finite samples")
        t = np.arange(len(x)) / fs
        write_two_column(dst / sid / f"{name}.csv", "t_sec,value", t, x, ".9g")
    step = int(LABEL_FS / LABEL_OUT_FS)
    labels = np.asarray(data["label"]).reshape(-1)[::step].astype(int)
    t = np.arange(len(labels)) / LABEL_OUT_FS
    write_two_column(dst / sid / "labels.csv", "t_sec,class", t, labels, "d")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("wesad_dir", type=Path)
    p.add_argument("out_dir", type=Path)
    args = p.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for n in SUBJECTS:
        sid = f"S{n}"
        print(f"converting {sid}", file=sys.stderr)
        convert(args.wesad_dir, args.out_dir, sid)
    template = Path(__file__).resolve().parent.parent / "manifests" / "wesad.toml"
    shutil.copy(template, args.out_dir / "manifest.toml")


if __name__ == "__main__":
    main()
