#!/usr/bin/env python3
"""Informational comparison: support estimation with the served neural
denoiser (plug-and-play over the wire protocol) against the l1 baseline
on the scaled 64 x 64 scenes.

Requires a trained checkpoint from the neural-denoiser package:

    cd neural-denoiser && npm run build
    node dist/cli.js dataset --out data/ --image-size 64
    node dist/cli.js train --data data/ --out ckpt.json

then

    python3 scripts/pnp_bridge_experiment.py --checkpoint ckpt.json
"""

import argparse
import os
import re
import subprocess

from fluctdecon import (
    AcquisitionParams,
    BlinkingParams,
    BridgeDenoiser,
    BridgeEndpoint,
    SolverConfig,
    SparsityProx,
    auto_covariance,
    generate_filament_pattern,
    jaccard_index,
    psf_from_fwhm,
    render_stack,
    simulate_blinking,
    solve_support,
)

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
NODE_CLI = os.path.join(REPO, "neural-denoiser", "dist", "cli.js")


def scene(seed: int):
    emitters = generate_filament_pattern(seed=seed, field_size_nm=64 * 25.0,
                                         n_filaments=3, emitters_per_filament=200)
    series = simulate_blinking(emitters, BlinkingParams(), 500, seed=seed + 1)
    psf = psf_from_fwhm(176.6, 25.0)
    acq = AcquisitionParams(T=500, background_level=10.0, noise_variance_s=25.0,
                            seed=seed + 2)
    stack, _, _ = render_stack(emitters, series, psf, acq, 64)
    return emitters, auto_covariance(stack), psf


def spawn_server(checkpoint: str) -> tuple[subprocess.Popen, int]:
    proc = subprocess.Popen(
        ["node", NODE_CLI, "serve", "--checkpoint", checkpoint],
        stdout=subprocess.PIPE, text=True,
    )
    line = proc.stdout.readline()
    match = re.match(r"PORT (\d+)", line)
    if not match:
        proc.kill()
        raise RuntimeError(f"server did not report a port: {line!r}")
    return proc, int(match.group(1))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--sigma", type=float, default=0.1)
    parser.add_argument("--threshold-frac", type=float, default=None,
                        help="support threshold as a fraction of max (default: solver's)")
    args = parser.parse_args()

    wins = 0
    for seed in range(args.seeds):
        emitters, cov, psf = scene(seed)

        l1_cfg = SolverConfig(
            regularizer=SparsityProx(kind="l1", strength=3e-4 * cov.image.max()),
            tau=None, max_iters=2000, tol=1e-9,
        )
        l1_res = solve_support(cov, psf, l1_cfg)
        l1_ji, _ = jaccard_index(l1_res.support_mask, emitters.positions, 40.0, 25.0)

        proc, port = spawn_server(args.checkpoint)
        try:
            denoiser = BridgeDenoiser(BridgeEndpoint.tcp("127.0.0.1", port, timeout_ms=120000))
            threshold = None
            if args.threshold_frac is not None:
                threshold = args.threshold_frac  # resolved against max below
            cfg = SolverConfig(regularizer=denoiser, sigma=args.sigma,
                               tau=None, max_iters=400, tol=1e-9,
                               support_threshold=None)
            pnp_res = solve_support(cov, psf, cfg)
            if threshold is not None:
                mask = pnp_res.r_x_hat.image > threshold * pnp_res.r_x_hat.image.max()
            else:
                mask = pnp_res.support_mask
            denoiser.close()
        finally:
            proc.wait(timeout=20)
        pnp_ji, _ = jaccard_index(mask, emitters.positions, 40.0, 25.0)

        flag = "pnp>=l1" if pnp_ji >= l1_ji else "l1 wins"
        wins += pnp_ji >= l1_ji
        print(f"seed {seed}: l1 JI={l1_ji:.3f} | pnp JI={pnp_ji:.3f} "
              f"(|support|={int(mask.sum())}, iters={pnp_res.iterations}) [{flag}]")
    print(f"pnp matched or beat l1 on {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
