"""Command-line surface: simulate | covariance | solve-support |
solve-intensity | metrics | pipeline | bridge-check | init-manifest.

Exit codes: 0 success, 2 configuration error, 3 file/i-o error,
4 convergence/divergence failure, 5 bridge failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shlex
import sys

import numpy as np

from . import fileio
from .bridge import BridgeDenoiser, BridgeEndpoint
from .covariance import CovarianceImage, auto_covariance, temporal_mean
from .errors import (
    BridgeError,
    ConvergenceError,
    DivergenceError,
    FluctDeconError,
    FormatError,
    ParameterError,
)
from .imaging import psf_from_fwhm
from .intensity import IntensityProblem, solve_intensity
from .metrics import jaccard_index, psnr
from .regularizers import SparsityProx, TvDenoiser
from .simulate import (
    AcquisitionParams,
    BlinkingParams,
    generate_filament_pattern,
    render_stack,
    simulate_blinking,
)
from .support import SolverConfig, solve_support

EXIT_CODES = {"ok": 0, "config": 2, "io": 3, "convergence": 4, "bridge": 5}


def _parse_bridge_spec(spec: str, timeout_ms: int = 120000) -> BridgeEndpoint:
    if spec.startswith("spawn:"):
        return BridgeEndpoint.spawn(shlex.split(spec[len("spawn:"):]), timeout_ms=timeout_ms)
    host, _, port = spec.rpartition(":")
    if not host or not port.isdigit():
        raise ParameterError(f"bridge spec must be 'host:port' or 'spawn:<command>', got {spec!r}")
    return BridgeEndpoint.tcp(host, int(port), timeout_ms=timeout_ms)


def _build_regularizer(kind: str, strength: float, sigma: float | None, bridge_spec: str | None):
    if kind == "l1" or kind == "l0":
        return SparsityProx(kind=kind, strength=strength), None
    if kind == "tv":
        return TvDenoiser(scale=strength), None
    if kind == "bridge":
        if not bridge_spec:
            raise ParameterError("--reg bridge needs a --bridge endpoint")
        denoiser = BridgeDenoiser(_parse_bridge_spec(bridge_spec))
        return denoiser, denoiser
    raise ParameterError(f"unknown regularizer {kind!r}")


# -- stages -------------------------------------------------------------------


def stage_simulate(manifest: fileio.ExperimentManifest, outdir: str) -> dict:
    os.makedirs(outdir, exist_ok=True)
    emitters = generate_filament_pattern(
        seed=manifest.seed,
        field_size_nm=manifest.image_size_px * manifest.pixel_size_nm,
        n_filaments=manifest.n_filaments,
        emitters_per_filament=manifest.emitters_per_filament,
    )
    blink = BlinkingParams(
        rate_on_per_frame=manifest.rate_on_per_frame,
        rate_off_per_frame=manifest.rate_off_per_frame,
        mean_photons_on=manifest.mean_photons_on,
        photon_jitter_fraction=manifest.photon_jitter_fraction,
    )
    series = simulate_blinking(emitters, blink, manifest.frames, seed=manifest.seed + 1)
    psf = psf_from_fwhm(manifest.fwhm_nm, manifest.pixel_size_nm)
    acq = AcquisitionParams(
        T=manifest.frames,
        background_level=manifest.background_level,
        noise_variance_s=manifest.noise_variance_s,
        seed=manifest.seed + 2,
    )
    stack, truth_mean, truth_support = render_stack(
        emitters, series, psf, acq, manifest.image_size_px
    )
    paths = {
        "stack": os.path.join(outdir, "stack.flk"),
        "emitters": os.path.join(outdir, "emitters.txt"),
        "truth_mean": os.path.join(outdir, "truth_mean.npy"),
        "truth_support": os.path.join(outdir, "truth_support.npy"),
    }
    fileio.write_stack(paths["stack"], stack)
    fileio.write_emitters(paths["emitters"], emitters)
    fileio.save_array(paths["truth_mean"], truth_mean)
    fileio.save_array(paths["truth_support"], truth_support.astype(np.float64))
    return paths


def stage_covariance(stack_path: str, outdir: str, view: bool = True) -> dict:
    os.makedirs(outdir, exist_ok=True)
    stack = fileio.read_stack(stack_path)
    cov = auto_covariance(stack)
    mean = temporal_mean(stack)
    paths = {
        "cov": os.path.join(outdir, "covariance.npy"),
        "mean": os.path.join(outdir, "mean.npy"),
    }
    fileio.save_array(paths["cov"], cov.image)
    fileio.save_array(paths["mean"], mean)
    if view:
        fileio.write_image_view(os.path.join(outdir, "covariance.pgm"), cov.image)
        fileio.write_image_view(os.path.join(outdir, "mean.pgm"), mean)
    return paths


def stage_solve_support(
    cov_path: str,
    pixel_size_nm: float,
    fwhm_nm: float,
    manifest: fileio.ExperimentManifest,
    outdir: str,
) -> dict:
    os.makedirs(outdir, exist_ok=True)
    cov_img = fileio.load_array(cov_path)
    strength = manifest.reg_strength
    if manifest.reg_strength_is_relative and manifest.regularizer in ("l1", "l0"):
        strength = manifest.reg_strength * float(np.max(cov_img))
    regularizer, owned = _build_regularizer(
        manifest.regularizer, strength, manifest.sigma, manifest.bridge
    )
    try:
        cfg = SolverConfig(
            regularizer=regularizer,
            tau=manifest.tau,
            lam=manifest.lam,
            max_iters=manifest.solver_max_iters,
            tol=manifest.solver_tol,
            sigma=manifest.sigma,
            support_threshold=manifest.support_threshold,
        )
        psf = psf_from_fwhm(fwhm_nm, pixel_size_nm)
        result = solve_support(CovarianceImage(np.maximum(cov_img, 0.0), source_T=2), psf, cfg)
    finally:
        if owned is not None:
            owned.close()
    paths = {
        "r_x_hat": os.path.join(outdir, "support_rx.npy"),
        "mask": os.path.join(outdir, "support_mask.npy"),
        "trace": os.path.join(outdir, "support_trace.json"),
        "summary": os.path.join(outdir, "support_summary.json"),
    }
    fileio.save_array(paths["r_x_hat"], result.r_x_hat.image)
    fileio.save_array(paths["mask"], result.support_mask.astype(np.float64))
    fileio.write_image_view(os.path.join(outdir, "support.pgm"), result.support_mask.astype(np.float64))
    trace = [dataclasses.asdict(rec) for rec in result.trace]
    fileio.write_metrics_record(paths["trace"], {"iterations": trace})
    fileio.write_metrics_record(
        paths["summary"],
        {
            "s_hat": result.s_hat,
            "iterations": result.iterations,
            "converged": result.converged,
            "threshold": result.threshold,
            "support_size": int(result.support_mask.sum()),
            "final_objective": result.trace[-1].objective if result.trace else None,
        },
    )
    return paths


def stage_solve_intensity(
    mask_path: str,
    mean_path: str,
    pixel_size_nm: float,
    fwhm_nm: float,
    manifest: fileio.ExperimentManifest,
    outdir: str,
) -> dict:
    os.makedirs(outdir, exist_ok=True)
    mask = fileio.load_array(mask_path) > 0.5
    y_mean = fileio.load_array(mean_path)
    psf = psf_from_fwhm(fwhm_nm, pixel_size_nm)
    problem = IntensityProblem(
        support_mask=mask, psf=psf, y_mean=y_mean, mu=manifest.mu, beta=manifest.beta
    )
    result = solve_intensity(
        problem, max_iters=manifest.intensity_max_iters, tol=manifest.intensity_tol
    )
    paths = {
        "x_hat": os.path.join(outdir, "intensity_x.npy"),
        "background": os.path.join(outdir, "intensity_background.npy"),
        "summary": os.path.join(outdir, "intensity_summary.json"),
    }
    fileio.save_array(paths["x_hat"], result.x_image)
    fileio.save_array(paths["background"], result.background)
    fileio.write_image_view(os.path.join(outdir, "intensity.pgm"), result.x_image)
    fileio.write_metrics_record(
        paths["summary"],
        {
            "converged": result.converged,
            "iterations": result.iterations,
            "pg_norm": result.pg_norm,
            "objective": result.objective_trace[-1],
        },
    )
    return paths


def stage_metrics(
    mask_path: str,
    emitters_path: str,
    pixel_size_nm: float,
    delta_nm: float,
    out_path: str,
    x_hat_path: str | None = None,
    truth_mean_path: str | None = None,
    mean_path: str | None = None,
    extra: dict | None = None,
) -> dict:
    mask = fileio.load_array(mask_path) > 0.5
    emitters = fileio.read_emitters(emitters_path)
    ji, report = jaccard_index(mask, emitters.positions, delta_nm, pixel_size_nm)
    record = {
        "jaccard_index": ji,
        "cd": report.cd,
        "fn": report.fn,
        "fp": report.fp,
        "delta_nm": delta_nm,
    }
    if x_hat_path and truth_mean_path:
        x_hat = fileio.load_array(x_hat_path)
        truth = fileio.load_array(truth_mean_path)
        record["psnr_intensity_db"] = psnr(x_hat, truth)
        if mean_path:
            record["psnr_mean_frame_db"] = psnr(fileio.load_array(mean_path), truth)
    if extra:
        record.update(extra)
    fileio.write_metrics_record(out_path, record)
    return record


def run_pipeline(manifest: fileio.ExperimentManifest, outdir: str) -> dict:
    os.makedirs(outdir, exist_ok=True)
    fileio.write_manifest(os.path.join(outdir, "manifest.json"), manifest)
    sim = stage_simulate(manifest, outdir)
    cov = stage_covariance(sim["stack"], outdir)
    sup = stage_solve_support(
        cov["cov"], manifest.pixel_size_nm, manifest.fwhm_nm, manifest, outdir
    )
    inten = stage_solve_intensity(
        sup["mask"], cov["mean"], manifest.pixel_size_nm, manifest.fwhm_nm, manifest, outdir
    )
    summary = fileio.read_metrics_record(sup["summary"])
    record = stage_metrics(
        sup["mask"],
        sim["emitters"],
        manifest.pixel_size_nm,
        manifest.delta_nm,
        os.path.join(outdir, "metrics.json"),
        x_hat_path=inten["x_hat"],
        truth_mean_path=sim["truth_mean"],
        mean_path=cov["mean"],
        extra={
            "s_hat": summary["s_hat"],
            "iterations": summary["iterations"],
            "final_objective": summary["final_objective"],
            "converged": summary["converged"],
        },
    )
    return record


def run_bridge_check(endpoint: BridgeEndpoint, size: int = 16) -> dict:
    # one connection for everything: a shutdown frame may terminate the peer,
    # so the handshake and the probe round trip must share the session
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(3)))
    probe = rng.standard_normal((size, size))
    with BridgeDenoiser(endpoint) as denoiser:
        caps = denoiser.capabilities
        out, potential = denoiser.denoise(probe, sigma=0.1)
    if out.shape != probe.shape:
        raise BridgeError(f"round trip shape mismatch: {out.shape} != {probe.shape}")
    return {
        "protocol_version": caps.protocol_version,
        "returns_potential": caps.returns_potential,
        "round_trip_shape": list(out.shape),
        "potential": potential,
    }


# -- argument parsing ---------------------------------------------------------


def _manifest_from_args(args) -> fileio.ExperimentManifest:
    manifest = fileio.read_manifest(args.manifest)
    overrides = {}
    for name in ("regularizer", "reg_strength", "sigma", "bridge"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            overrides[name] = value
    return dataclasses.replace(manifest, **overrides) if overrides else manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluctdecon",
        description="Fluctuation-based microscopy deconvolution pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-manifest", help="write a template experiment manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="experiment")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_init_manifest)

    p = sub.add_parser("simulate", help="generate a blinking-emitter stack")
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("covariance", help="reduce a stack to mean + auto-covariance")
    p.add_argument("--stack", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--no-view", action="store_true")
    p.set_defaults(func=_cmd_covariance)

    p = sub.add_parser("solve-support", help="estimate support and noise variance")
    p.add_argument("--cov", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--pixel-size-nm", type=float, default=None)
    p.add_argument("--fwhm-nm", type=float, default=None)
    p.add_argument("--regularizer", choices=["l1", "l0", "tv", "bridge"], default=None)
    p.add_argument("--reg-strength", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--bridge", default=None)
    p.set_defaults(func=_cmd_solve_support)

    p = sub.add_parser("solve-intensity", help="recover intensities on the support")
    p.add_argument("--support", required=True)
    p.add_argument("--mean", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--pixel-size-nm", type=float, default=None)
    p.add_argument("--fwhm-nm", type=float, default=None)
    p.set_defaults(func=_cmd_solve_intensity)

    p = sub.add_parser("metrics", help="evaluate a support (and intensity) estimate")
    p.add_argument("--est-support", required=True)
    p.add_argument("--gt-emitters", required=True)
    p.add_argument("--pixel-size-nm", type=float, required=True)
    p.add_argument("--delta-nm", type=float, default=40.0)
    p.add_argument("--x-hat", default=None)
    p.add_argument("--gt-intensity", default=None)
    p.add_argument("--mean", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("pipeline", help="run simulate -> covariance -> solvers -> metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("bridge-check", help="handshake + round trip against a denoiser")
    p.add_argument("--spawn", default=None, help="command line to spawn (stdio transport)")
    p.add_argument("--tcp", default=None, help="host:port of a running server")
    p.add_argument("--size", type=int, default=16)
    p.set_defaults(func=_cmd_bridge_check)

    return parser


def _cmd_init_manifest(args) -> int:
    manifest = fileio.ExperimentManifest(name=args.name, seed=args.seed)
    fileio.write_manifest(args.out, manifest)
    print(f"wrote {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    manifest = fileio.read_manifest(args.manifest)
    paths = stage_simulate(manifest, args.outdir)
    print(json.dumps(paths, indent=2))
    return 0


def _cmd_covariance(args) -> int:
    paths = stage_covariance(args.stack, args.outdir, view=not args.no_view)
    print(json.dumps(paths, indent=2))
    return 0


def _cmd_solve_support(args) -> int:
    manifest = _manifest_from_args(args)
    pixel = args.pixel_size_nm if args.pixel_size_nm is not None else manifest.pixel_size_nm
    fwhm = args.fwhm_nm if args.fwhm_nm is not None else manifest.fwhm_nm
    paths = stage_solve_support(args.cov, pixel, fwhm, manifest, args.outdir)
    print(json.dumps(paths, indent=2))
    return 0


def _cmd_solve_intensity(args) -> int:
    manifest = fileio.read_manifest(args.manifest)
    pixel = args.pixel_size_nm if args.pixel_size_nm is not None else manifest.pixel_size_nm
    fwhm = args.fwhm_nm if args.fwhm_nm is not None else manifest.fwhm_nm
    paths = stage_solve_intensity(args.support, args.mean, pixel, fwhm, manifest, args.outdir)
    print(json.dumps(paths, indent=2))
    return 0


def _cmd_metrics(args) -> int:
    record = stage_metrics(
        args.est_support,
        args.gt_emitters,
        args.pixel_size_nm,
        args.delta_nm,
        args.out,
        x_hat_path=args.x_hat,
        truth_mean_path=args.gt_intensity,
        mean_path=args.mean,
    )
    print(json.dumps(record, indent=2))
    return 0


def _cmd_pipeline(args) -> int:
    manifest = fileio.read_manifest(args.manifest)
    record = run_pipeline(manifest, args.outdir)
    print(json.dumps(record, indent=2))
    return 0


def _cmd_bridge_check(args) -> int:
    if (args.spawn is None) == (args.tcp is None):
        raise ParameterError("bridge-check needs exactly one of --spawn or --tcp")
    if args.spawn is not None:
        endpoint = BridgeEndpoint.spawn(shlex.split(args.spawn))
    else:
        endpoint = _parse_bridge_spec(args.tcp)
    report = run_bridge_check(endpoint, size=args.size)
    print(json.dumps(report, indent=2))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]
    except (ConvergenceError, DivergenceError) as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CODES["convergence"]
    except BridgeError as exc:
        print(f"bridge failure: {exc}", file=sys.stderr)
        return EXIT_CODES["bridge"]
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]
    except FluctDeconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
