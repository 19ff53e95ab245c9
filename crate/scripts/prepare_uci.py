#!/usr/bin/env python3
"""Convert the four UCI benchmark datasets into the CSV layout used by `dofs`.

The files are taken from PyPI packages that redistribute them, so no direct
access to the UCI repository is needed:

  ionosphere  Orange3 (Orange/tests/datasets/ionosphere.tab)   351 x 34
  spambase    keel-ds (keel_ds/data/balanced/raw/spambase.dat) 4597 x 57
  spectf      imbalanced-databases (SPECTF.train + SPECTF.test) 267 x 44
  wdbc        scikit-learn (load_breast_cancer)                 569 x 30

Usage:
  pip download --no-deps orange3 keel-ds imbalanced-databases -d /tmp/wheels
  python3 scripts/prepare_uci.py /tmp/wheels data/uci
"""
import csv
import glob
import io
import os
import sys
import zipfile


def wheel(dirname, prefix):
    hits = sorted(glob.glob(os.path.join(dirname, prefix + "*.whl")))
    if not hits:
        sys.exit(f"no wheel matching {prefix}* in {dirname}")
    return zipfile.ZipFile(hits[-1])


def write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"{path}: {len(rows)} rows x {len(header) - 1} features")


def ionosphere(wheels, out):
    z = wheel(wheels, "orange3")
    text = z.read("Orange/tests/datasets/ionosphere.tab").decode()
    lines = text.splitlines()
    names = lines[0].split("\t")
    rows = [ln.split("\t") for ln in lines[3:] if ln.strip()]
    header = names[:-1] + ["class"]
    write(os.path.join(out, "ionosphere.csv"), header, rows)


def spambase(wheels, out):
    z = wheel(wheels, "keel_ds")
    text = z.read("keel_ds/data/balanced/raw/spambase.dat").decode()
    rows = [[c.strip() for c in ln.split(",")] for ln in text.splitlines() if ln.strip() and not ln.startswith("@")]
    header = [f"f{i}" for i in range(len(rows[0]) - 1)] + ["class"]
    write(os.path.join(out, "spambase.csv"), header, rows)


def spectf(wheels, out):
    z = wheel(wheels, "imbalanced_databases")
    rows = []
    for part in ("train", "test"):
        text = z.read(f"imbalanced_databases/data/spect_f/SPECTF.{part}.txt").decode()
        for ln in text.splitlines():
            if ln.strip():
                cells = [c.strip() for c in ln.split(",")]
                rows.append(cells[1:] + cells[:1])
    header = [f"f{i}" for i in range(len(rows[0]) - 1)] + ["class"]
    write(os.path.join(out, "spectf.csv"), header, rows)


def wdbc(out):
    from sklearn.datasets import load_breast_cancer

    d = load_breast_cancer()
    header = [n.replace(" ", "_") for n in d.feature_names] + ["class"]
    rows = [[repr(float(v)) for v in x] + [int(y)] for x, y in zip(d.data, d.target)]
    write(os.path.join(out, "wdbc.csv"), header, rows)


def main():
    wheels, out = sys.argv[1], sys.argv[2]
    os.makedirs(out, exist_ok=True)
    ionosphere(wheels, out)
    spambase(wheels, out)
    spectf(wheels, out)
    wdbc(out)
    with open(os.path.join(out, "manifest.txt"), "w") as fh:
        fh.write("# dataset path, label column\n")
        for name in ("ionosphere", "spambase", "spectf", "wdbc"):
            fh.write(f"{name}.csv class\n")


if __name__ == "__main__":
    main()
