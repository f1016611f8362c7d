"""Command-line interface: synth, extract, abundances, eval, gradcheck."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import abundance, data_io, evaluation, gradcheck, initializers
from .datatypes import SpectraMatrix, SynthSpec
from .errors import (CubeFormatError, EndnetError, NonFiniteValue,
                     NumericalDivergence)
from .net import EndNetModel, HyperParams
from .trainer import TrainConfig, train

EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_GRADCHECK = 4


def _add_hyper_flags(p):
    p.add_argument("--lr", type=float, default=0.001, help="learning rate")
    p.add_argument("--batch", type=int, default=64, help="mini-batch size")
    p.add_argument("--beta1", type=float, default=0.7, help="Adam first-moment decay")
    p.add_argument("--lambda0", type=float, default=0.01, help="euclidean reconstruction weight")
    p.add_argument("--lambda1", type=float, default=10.0, help="angular (KL) reconstruction weight")
    p.add_argument("--lambda2", type=float, default=0.1, help="activation l1 sparsity weight")
    p.add_argument("--lambda3", type=float, default=1e-5, help="encoder weight decay")
    p.add_argument("--lambda4", type=float, default=1e-5, help="decoder weight decay")
    p.add_argument("--lambda5", type=float, default=1e-3, help="shift-parameter weight decay")
    p.add_argument("--dropout", type=float, default=1.0, help="dropout keep probability p")
    p.add_argument("--top-n", type=int, default=2, help="hard-selected activation count")
    p.add_argument("--mask-noise", type=float, default=0.4,
                   help="max fraction of bands corrupted per sample")
    p.add_argument("--corrupt-sigma", type=float, default=None,
                   help="corruption noise std (default: 0.1 * cube std)")
    p.add_argument("--iters", type=int, default=20000, help="training iterations")
    p.add_argument("--seed", type=int, default=0, help="RNG seed")


def _train_config(args):
    hyper = HyperParams(
        lambda0=args.lambda0, lambda1=args.lambda1, lambda2=args.lambda2,
        lambda3=args.lambda3, lambda4=args.lambda4, lambda5=args.lambda5,
        dropout_p=args.dropout, top_n=args.top_n)
    return TrainConfig(
        iters=args.iters, lr=args.lr, batch_size=args.batch, beta1=args.beta1,
        hyper=hyper, corrupt_mask_frac=args.mask_noise,
        corrupt_sigma=args.corrupt_sigma, seed=args.seed)


def _run_init(cube, k, method, seed):
    if method == "vca":
        return initializers.vca(cube, k, seed)
    return initializers.dmaxd(cube, k)


def _extract_once(args, seed):
    cube = data_io.normalize_cube(data_io.load_cube(args.input))
    init = _run_init(cube, args.k, args.init, seed)
    cfg = _train_config(args)
    cfg.seed = seed
    model, log = train(cube, init, cfg)
    return cube, model, log


def cmd_extract(args):
    cube, model, log = _extract_once(args, args.seed)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    model.save(f"{prefix}.endn")
    log.write_csv(f"{prefix}_trainlog.csv")
    data_io.save_spectra_csv(SpectraMatrix(model.endmembers()), f"{prefix}_endmembers.csv")
    print(f"wrote {prefix}.endn, {prefix}_trainlog.csv, {prefix}_endmembers.csv")
    return 0


def cmd_abundances(args):
    cube = data_io.normalize_cube(data_io.load_cube(args.input))
    model = EndNetModel.load(args.checkpoint)
    amap = abundance.estimate_abundances(model, cube, method=args.method)
    paths = data_io.save_abundance_maps(amap, args.out_dir)
    print(f"wrote {len(paths)} files to {args.out_dir}")
    return 0


def cmd_synth(args):
    spec = SynthSpec(k=args.k, bands=args.bands, n_pixels=args.pixels,
                     snr_db=args.snr, pure_pixel_fraction=args.pure_frac,
                     dirichlet_alpha=args.alpha, seed=args.seed)
    cube, endm, amap = data_io.synth_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_io.save_cube_csv(cube, out / "cube.csv")
    data_io.save_spectra_csv(endm, out / "endmembers.csv")
    data_io.save_abundance_maps(amap, out)
    print(f"wrote synthetic scene ({cube.height}x{cube.width}x{cube.bands}) to {out}")
    return 0


def _eval_single(args):
    est = data_io.load_spectra_csv(args.est_spectra)
    gt = data_io.load_spectra_csv(args.gt_spectra)
    est_ab = data_io.load_abundance_csv(args.est_abund) if args.est_abund else None
    gt_ab = data_io.load_abundance_csv(args.gt_abund) if args.gt_abund else None
    report = evaluation.evaluate(est, gt, est_ab, gt_ab, greedy=args.greedy)
    report.write_csv(f"{args.out_prefix}_report.csv")
    print(report.to_text())
    return 0


def _eval_repeats(args):
    gt = data_io.load_spectra_csv(args.gt_spectra)
    gt_ab = data_io.load_abundance_csv(args.gt_abund) if args.gt_abund else None
    sads, rmses = [], []
    for r in range(args.repeats):
        seed = args.seed + r
        cube, model, _ = _extract_once(args, seed)
        est = SpectraMatrix(model.endmembers())
        est_ab = abundance.estimate_abundances(model, cube, method=args.method) \
            if gt_ab is not None else None
        report = evaluation.evaluate(est, gt, est_ab, gt_ab, greedy=args.greedy)
        sads.append(report.per_endmember_sad)
        if report.per_endmember_rmse is not None:
            rmses.append(report.per_endmember_rmse)
    sads = np.array(sads)
    lines = ["endmember,mean_sad,std_sad,mean_rmse,std_rmse"]
    for j in range(gt.count):
        row = f"{j + 1},{sads[:, j].mean():.10g},{sads[:, j].std():.10g}"
        if rmses:
            arr = np.array(rmses)
            row += f",{arr[:, j].mean():.10g},{arr[:, j].std():.10g}"
        else:
            row += ",,"
        lines.append(row)
    out = Path(f"{args.out_prefix}_repeats.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    print(f"mean SAD over {args.repeats} runs: {sads.mean():.6f} "
          f"(x1e-2: {sads.mean() * 100:.2f})")
    print(f"wrote {out}")
    return 0


def cmd_eval(args):
    if args.repeats > 1 or args.input:
        if not args.input:
            raise ValueError("--repeats needs --input and training flags")
        return _eval_repeats(args)
    if not args.est_spectra:
        raise ValueError("need --est-spectra (or --input with --repeats)")
    return _eval_single(args)


def cmd_gradcheck(args):
    results, ok = gradcheck.run_all(trials=args.trials, seed=args.seed, tol=args.tol)
    for name, err in results.items():
        status = "ok" if err < args.tol else "FAIL"
        print(f"{name:10s} worst rel err {err:.3e}  [{status}]")
    return 0 if ok else EXIT_GRADCHECK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="endnet", description="Hyperspectral endmember extraction and unmixing")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("synth", formatter_class=fmt, help="generate a synthetic scene")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--bands", type=int, default=100)
    p.add_argument("--pixels", type=int, default=2500)
    p.add_argument("--snr", type=float, default=np.inf, help="SNR in dB (inf: noiseless)")
    p.add_argument("--pure-frac", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=1.0, help="Dirichlet concentration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", formatter_class=fmt,
                       help="endmember extraction (init + training)")
    p.add_argument("--input", required=True, help="cube file (CSV or ENVI)")
    p.add_argument("--k", type=int, required=True, help="endmember count")
    p.add_argument("--init", choices=("vca", "dmaxd"), default="dmaxd")
    _add_hyper_flags(p)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("abundances", formatter_class=fmt,
                       help="estimate per-pixel abundances from a checkpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", choices=("spu", "hidden"), default="spu")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_abundances)

    p = sub.add_parser("eval", formatter_class=fmt,
                       help="score estimates against ground truth")
    p.add_argument("--est-spectra", help="estimated endmember CSV")
    p.add_argument("--gt-spectra", required=True)
    p.add_argument("--est-abund")
    p.add_argument("--gt-abund")
    p.add_argument("--greedy", action="store_true",
                   help="greedy per-truth matching instead of optimal")
    p.add_argument("--repeats", type=int, default=1,
                   help="rerun extract+eval with consecutive seeds")
    p.add_argument("--input", help="cube file (required with --repeats)")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--init", choices=("vca", "dmaxd"), default="dmaxd")
    p.add_argument("--method", choices=("spu", "hidden"), default="spu")
    _add_hyper_flags(p)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", formatter_class=fmt,
                       help="finite-difference check of all analytic gradients")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, CubeFormatError, NonFiniteValue) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, EndnetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
