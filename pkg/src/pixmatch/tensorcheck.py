"""Verify externally computed mixture/uncertainty values against this
package's closed forms.

Run as ``python -m pixmatch.tensorcheck cases.json [--tol 1e-5]``.  The
JSON file groups cases by section; every case carries its inputs and the
value the external producer computed, which is recomputed here and
compared within an absolute-or-relative tolerance.  Weights must be
normalized in double precision by the producer (the simplex check is
strict).

Sections and case fields:
  gaussian_kl:    {"mu": [D], "sigma": [D], "value": float}
  categorical_kl: {"w": [K], "prior": [K], "value": float}
  reparameterize: {"weights": [K], "mu": [K][D], "sigma": [K][D],
                   "indices": [k], "omega": [k], "eps": [D], "value": [D]}
  pixel_dist:     {"mask": [W][W] binary, "p": [col, row], "value": float}
  dist_stats:     {"d": [N], "mean": float, "variance": float}

One PASS/FAIL line per case; exit 0 when everything passes, 1 on any
failure, 2 on a malformed file.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .mixmath import (MixtureParams, categorical_kl, dist_stats,
                      kl_diag_gaussian, pixel_dist, reparameterize)
from .raster import Georef, PixelGrid
from .roadnet import GeoPoint


def _close(got, want, tol: float) -> tuple[bool, float]:
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    if got.shape != want.shape:
        return False, float("inf")
    scale = np.maximum(1.0, np.abs(want))
    err = float(np.max(np.abs(got - want) / scale)) if got.size else 0.0
    return err <= tol, err


def _recompute(section: str, case: dict):
    if section == "gaussian_kl":
        return kl_diag_gaussian(case["mu"], case["sigma"]), case["value"]
    if section == "categorical_kl":
        return categorical_kl(case["w"], case["prior"]), case["value"]
    if section == "reparameterize":
        indices = [int(i) for i in case["indices"]]
        params = MixtureParams(np.asarray(case["weights"], dtype=float),
                               np.asarray(case["mu"], dtype=float),
                               np.asarray(case["sigma"], dtype=float),
                               top_k=max(1, len(indices)))
        z = reparameterize(params, (indices, np.asarray(case["omega"], dtype=float)),
                           np.asarray(case["eps"], dtype=float))
        return z, case["value"]
    if section == "pixel_dist":
        values = np.asarray(case["mask"], dtype=float)
        grid = PixelGrid(Georef(GeoPoint(0.0, 0.0), 1.0, values.shape[0]),
                         "mask", values)
        col, row = (int(v) for v in case["p"])
        return pixel_dist((col, row), grid), case["value"]
    if section == "dist_stats":
        stats = dist_stats(case["d"])
        return [stats.mean, stats.variance], [case["mean"], case["variance"]]
    raise KeyError(f"unknown section {section!r}")


def check_file(path, tol: float) -> tuple[int, int, list[str]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("top level must be an object of sections")
    n_pass = n_fail = 0
    lines = []
    for section in sorted(doc):
        cases = doc[section]
        if not isinstance(cases, list):
            raise ValueError(f"section {section!r} must hold a list of cases")
        for i, case in enumerate(cases):
            got, want = _recompute(section, case)
            ok, err = _close(got, want, tol)
            tag = case.get("name", str(i))
            if ok:
                n_pass += 1
                lines.append(f"PASS {section}[{tag}] max_err={err:.3e}")
            else:
                n_fail += 1
                lines.append(f"FAIL {section}[{tag}] max_err={err:.3e} tol={tol:.1e}")
    return n_pass, n_fail, lines


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m pixmatch.tensorcheck", description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("file", help="JSON case file")
    parser.add_argument("--tol", type=float, default=1e-5)
    args = parser.parse_args(argv)
    try:
        n_pass, n_fail, lines = check_file(args.file, args.tol)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(json.dumps({"error": "format", "message": str(exc)}),
              file=sys.stderr)
        return 2
    for line in lines:
        print(line)
    print(f"{n_pass} passed, {n_fail} failed")
    return 0 if n_fail == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
