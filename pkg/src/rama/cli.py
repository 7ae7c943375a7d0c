"""Command-line entry point: ``rama <command>``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import TrainConfig
from .errors import ConfigError, DataError, NumericalError, RamaError

log = logging.getLogger("rama")


def _dims(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 32x32x16, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"dims must look like 32x32x16, got {text!r}")
    return dims


def _load_config(path) -> TrainConfig:
    return TrainConfig.load(path) if path else TrainConfig()


def cmd_synth(args):
    from .phantom import generate_dataset

    rows = generate_dataset(args.subjects, args.prevalence, args.seed, args.out, args.dims, args.noise)
    print(f"wrote {len(rows)} subjects ({sum(r.label for r in rows)} pCR) to {args.out}")


def cmd_extract_radiomics(args):
    from .radiomics import FEATURE_NAMES, extract
    from .volume import load_subject, read_manifest

    rows = read_manifest(args.data)
    header = ["subject_id"] + [f"{p}_{n}" for p in ("dce", "adc") for n in FEATURE_NAMES]
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            s = load_subject(row)
            values = []
            for mod in ("DCE", "ADC"):
                values += [repr(float(v)) for v in extract(s, mod, n_levels=args.levels).values]
            w.writerow([row.subject_id] + values)
    print(f"wrote radiomics for {len(rows)} subjects to {args.out}")


def cmd_train(args):
    from .training import train

    cfg = _load_config(args.config)
    res = train(args.data, cfg, out_dir=args.out, log_fn=log.info)
    print(res.report.summary())


def cmd_eval(args):
    from .training import evaluate, load_run

    data = args.data or load_run(args.run).data
    if data is None:
        raise DataError("no --data given and the run does not record its data directory")
    report, preds = evaluate(args.run, data)
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["subject_id", "label", "probability", "fold"], lineterminator="\n")
            w.writeheader()
            w.writerows(preds)
    print(report.to_json())


def cmd_heatmap(args):
    import numpy as np

    from .heatmap import render_overlay, subject_heatmaps
    from .training import load_run, prepare_subject
    from .volume import Volume, load_subject, read_manifest, write_volume

    run = load_run(args.run)
    data = args.data or run.data
    if data is None:
        raise DataError("no --data given and the run does not record its data directory")
    rows = {r.subject_id: r for r in read_manifest(data)}
    if args.subject not in rows:
        raise DataError(f"subject {args.subject!r} not in manifest")
    k = next((i for i, f in enumerate(run.folds) if args.subject in f.val), 0)
    model, stds = run.models[k], run.standardizers[k]
    prepared = prepare_subject(load_subject(rows[args.subject]), run.cfg.model.input_dims, run.cfg.n_levels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for mod, (grid, up) in subject_heatmaps(model, prepared, stds).items():
        prefix = out / f"{args.subject}_{mod}"
        render_overlay(prepared.images[mod][0], up, prefix)
        write_volume(f"{prefix}_heatmap.rvol", Volume(grid.astype(np.float32), modality="OTHER"))
        write_volume(f"{prefix}_heatmap_up.rvol", Volume(up.astype(np.float32), modality="OTHER"))
    print(f"wrote heatmaps for {args.subject} (fold {k} model) to {out}")


def cmd_ablate(args):
    from .training import ablate

    cfg = _load_config(args.config)
    reports = ablate(args.data, cfg, out_csv=args.out, variants=args.variants, log_fn=log.info)
    for rep in reports.values():
        print(rep.summary())


def cmd_gradcheck(args):
    from .selfcheck import end_to_end_gradcheck

    err, n = end_to_end_gradcheck(probes=args.probes, seed=args.seed)
    print(json.dumps({"max_relative_error": err, "parameters": n, "tolerance": args.tol}))
    if not err <= args.tol:
        raise NumericalError(f"gradcheck error {err:.3e} exceeds {args.tol:.1e}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rama", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic phantom dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--subjects", type=int, default=191)
    s.add_argument("--prevalence", type=float, default=59 / 191)
    s.add_argument("--dims", type=_dims, default=(32, 32, 16))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.02)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract-radiomics", help="write the 50-column radiomics CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--levels", type=int, default=32)
    s.set_defaults(func=cmd_extract_radiomics)

    s = sub.add_parser("train", help="cross-validated training")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a run's fold checkpoints")
    s.add_argument("--run", required=True)
    s.add_argument("--data")
    s.add_argument("--out", help="optional per-subject predictions CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("heatmap", help="radiomics/patch similarity overlays for one subject")
    s.add_argument("--run", required=True)
    s.add_argument("--subject", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--data")
    s.set_defaults(func=cmd_heatmap)

    s = sub.add_parser("ablate", help="run the ablation grid")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--variants", nargs="+")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", help="finite-difference check of the tiny end-to-end model")
    s.add_argument("--probes", type=int, default=40)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except RamaError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
