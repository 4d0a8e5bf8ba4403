"""Command-line harness: synthetic data, sketch/recover round trips, sweeps.

Subcommands: gen, sketch, recover, run, oracle-emd.  Images travel as
EMDIMG files, measurement bundles as JSON, trial results as CSV with a
fixed header and 9-significant-digit decimals.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .core import GridImage, read_image, write_image
from .emd import emd_norm
from .pipeline import (
    Measurements,
    SCHEMES,
    SchemeConfig,
    TrialResult,
    recover,
    run_trial,
    sketch,
)
from .randrec import LevelHashMeasurements, SetQueryMeasurements

GEN_KINDS = ("clusters", "uniform_noise", "clusters_plus_noise")
NOISE_FRACTION = 0.05


def generate(kind: str, delta: int, k: int, spread: float, seed: int) -> GridImage:
    """Deterministic synthetic point-cloud images with integer masses."""
    if kind not in GEN_KINDS:
        raise ValueError(f"unknown generator kind {kind!r}")
    rng = np.random.default_rng(seed)
    n = delta * delta
    values = np.zeros(n)

    def scatter_units(count, pixels):
        np.add.at(values, pixels, 1.0)
        return count

    total = 0
    if kind in ("clusters", "clusters_plus_noise"):
        centers = rng.choice(n, size=k, replace=False)
        for center in centers:
            mass = int(rng.integers(50, 151))
            cr, cc = int(center) // delta, int(center) % delta
            offsets = rng.normal(0.0, max(spread, 0.0), size=(mass, 2))
            rows = np.clip(np.rint(cr + offsets[:, 0]), 0, delta - 1).astype(np.intp)
            cols = np.clip(np.rint(cc + offsets[:, 1]), 0, delta - 1).astype(np.intp)
            total += scatter_units(mass, rows * delta + cols)
    if kind == "uniform_noise":
        units = 100 * k
        total += scatter_units(units, rng.integers(0, n, size=units))
    if kind == "clusters_plus_noise":
        units = int(round(total * NOISE_FRACTION / (1.0 - NOISE_FRACTION)))
        scatter_units(units, rng.integers(0, n, size=units))
    return GridImage(delta, values)


# ---------------------------------------------------------------------------
# Measurement JSON (de)serialization.  Dense sketches serialize as
# (m, t, seed, c_rows) plus the measured vector -- entries regenerate from
# the seed.  The randomized bundle serializes (s, delta, u, seeds) plus the
# bucket contents as plain decimal vectors.


def measurements_to_dict(config: SchemeConfig, meas: Measurements) -> dict:
    doc = {
        "scheme": config.scheme,
        "delta": config.delta,
        "k": config.k,
        "eps": config.eps,
        "seed": config.seed,
        "rows": meas.rows,
    }
    if config.scheme == "pyramid_randomized":
        level_meas, sq_meas = meas.payload
        bundle = config.bundle()
        doc["sketch"] = {
            "kind": "randomized",
            "s": bundle.s,
            "u": bundle.levels.u,
            "seeds": [bundle.levels.seed, bundle.setquery.seed],
            "level_buckets": [b.tolist() for b in level_meas.buckets],
            "explicit": {str(i): v.tolist() for i, v in level_meas.explicit.items()},
            "setquery_tables": sq_meas.tables.tolist(),
        }
    else:
        ds = config.dense_sketch()
        doc["sketch"] = {
            "kind": "dense",
            "m": ds.m,
            "t": ds.cols,
            "sketch_seed": ds.seed,
            "c_rows": ds.c_rows,
            "values": np.asarray(meas.payload).tolist(),
        }
    return doc


def measurements_from_dict(doc: dict) -> tuple[SchemeConfig, Measurements]:
    config = SchemeConfig(
        scheme=doc["scheme"],
        delta=int(doc["delta"]),
        k=int(doc["k"]),
        eps=float(doc["eps"]),
        seed=int(doc["seed"]),
    )
    sk = doc["sketch"]
    if sk["kind"] == "randomized":
        level_meas = LevelHashMeasurements(
            buckets=[np.asarray(b, dtype=np.float64) for b in sk["level_buckets"]],
            explicit={int(i): np.asarray(v, dtype=np.float64) for i, v in sk["explicit"].items()},
        )
        sq_meas = SetQueryMeasurements(np.asarray(sk["setquery_tables"], dtype=np.float64))
        payload = (level_meas, sq_meas)
    else:
        payload = np.asarray(sk["values"], dtype=np.float64)
    return config, Measurements(doc["scheme"], int(doc["delta"]), int(doc["rows"]), payload)


# ---------------------------------------------------------------------------
# Trial sweeps.


def _trial(args) -> TrialResult:
    config_kwargs, kind, spread = args
    config = SchemeConfig(**config_kwargs)
    x = generate(kind, config.delta, config.k, spread, config.seed)
    return run_trial(config, x)


def run_sweep(
    scheme: str,
    delta: int,
    k: int,
    eps: float,
    kind: str,
    spread: float,
    seed0: int,
    trials: int,
    jobs: int = 1,
) -> list[TrialResult]:
    tasks = []
    for seed in range(seed0, seed0 + trials):
        kwargs = dict(scheme=scheme, delta=delta, k=k, eps=eps, seed=seed)
        tasks.append((kwargs, kind, spread))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_trial, tasks))
    return [_trial(t) for t in tasks]


def aggregate_rows(results: list[TrialResult]) -> str:
    ratios = np.array([r.ratio for r in results if r.success and not r.ratio_exact])
    line = [
        results[0].scheme,
        str(results[0].delta),
        str(results[0].k),
        f"{results[0].eps:.9g}",
        str(len(results)),
        f"{np.median(ratios):.9g}" if ratios.size else "exact",
        f"{np.percentile(ratios, 90):.9g}" if ratios.size else "exact",
        f"{np.mean([r.success for r in results]):.9g}",
    ]
    return ",".join(line)


AGGREGATE_HEADER = "scheme,delta,k,eps,trials,median_ratio,p90_ratio,success_rate"


# ---------------------------------------------------------------------------
# Argument parsing and entry points.


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w")


def _cmd_gen(args) -> int:
    img = generate(args.kind, args.delta, args.k, args.spread, args.seed)
    if args.out in (None, "-"):
        write_image(img, "/dev/stdout")
    else:
        write_image(img, args.out)
    return 0


def _cmd_sketch(args) -> int:
    x = read_image(args.image)
    config = SchemeConfig(
        scheme=args.scheme, delta=x.delta, k=args.k, eps=args.eps, seed=args.seed
    )
    meas = sketch(config, x)
    doc = measurements_to_dict(config, meas)
    with _open_out(args.out) as fh:
        json.dump(doc, fh)
        fh.write("\n")
    return 0


def _cmd_recover(args) -> int:
    with open(args.sketch_file) as fh:
        doc = json.load(fh)
    config, meas = measurements_from_dict(doc)
    out = recover(config, meas)
    write_image(out.x_star, args.out if args.out not in (None, "-") else "/dev/stdout")
    return 0


def _cmd_run(args) -> int:
    schemes = list(SCHEMES) if args.scheme == "all" else [args.scheme]
    all_results = []
    for scheme in schemes:
        all_results.append(
            run_sweep(
                scheme, args.delta, args.k, args.eps, args.kind, args.spread,
                args.seed, args.trials, jobs=args.jobs,
            )
        )
    with _open_out(args.out) as fh:
        if args.aggregate:
            fh.write(AGGREGATE_HEADER + "\n")
            for results in all_results:
                fh.write(aggregate_rows(results) + "\n")
        else:
            fh.write(TrialResult.CSV_FIELDS + "\n")
            for results in all_results:
                for r in results:
                    fh.write(r.csv_row() + "\n")
    completed = all(r is not None for results in all_results for r in results)
    return 0 if completed else 1


def _cmd_oracle_emd(args) -> int:
    x = read_image(args.image_a)
    y = read_image(args.image_b)
    if x.delta != y.delta:
        print("error: image sizes differ", file=sys.stderr)
        return 2
    value = emd_norm(GridImage(x.delta, x.values - y.values))
    print(f"{value:.9g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emdsketch",
        description="Sparse recovery of nonnegative images under the Earth-Mover Distance",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic EMDIMG image")
    p.add_argument("--kind", choices=GEN_KINDS, default="clusters")
    p.add_argument("--delta", type=int, required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("sketch", help="measure an image under a scheme")
    p.add_argument("--scheme", choices=SCHEMES, required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_sketch)

    p = sub.add_parser("recover", help="recover an image from a sketch JSON")
    p.add_argument("--sketch-file", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("run", help="sketch/recover/evaluate experiment sweep")
    p.add_argument("--scheme", choices=SCHEMES + ("all",), required=True)
    p.add_argument("--delta", type=int, required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--kind", choices=GEN_KINDS, default="clusters_plus_noise")
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--aggregate", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("oracle-emd", help="exact EMD between two EMDIMG files")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.set_defaults(func=_cmd_oracle_emd)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
