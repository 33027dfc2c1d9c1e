/**
 * Training-pair construction on top of the primary simulation pipeline.
 *
 * For each spatial pattern a stack of blinking-filament frames is
 * simulated and reduced to its auto-covariance image by the primary
 * CLI; the covariance image normalized to max 1 is a clean sample.
 * Noisy partners add white Gaussian noise at levels drawn uniformly
 * from [sigmaMin, sigmaMax] with a deterministic per-entry seed, so a
 * dataset manifest reproduces identical file hashes.
 */

import { createHash } from "node:crypto";
import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";

import { NpyArray, encodeNpy, parseNpy } from "./npy.js";

export interface DatasetOptions {
  outDir: string;
  trainPatterns: number;
  valPatterns: number;
  imageSizePx: number;
  frames: number;
  noisyPerClean: number;
  sigmaMin: number;
  sigmaMax: number;
  seed: number;
  python: string;
}

export const DEFAULT_DATASET: Omit<DatasetOptions, "outDir"> = {
  trainPatterns: 20,
  valPatterns: 5,
  imageSizePx: 32,
  frames: 200,
  noisyPerClean: 3,
  sigmaMin: 1e-4,
  sigmaMax: 50 / 255,
  seed: 0,
  python: "python3",
};

export interface DatasetEntry {
  split: "train" | "val";
  clean: string;
  noisy: string;
  sigma: number;
  noiseSeed: number;
  cleanSha256: string;
  noisySha256: string;
}

export interface DatasetManifest {
  options: Omit<DatasetOptions, "python">;
  entries: DatasetEntry[];
}

/** Deterministic 32-bit PRNG (mulberry32) + Box-Muller gaussians. */
export function gaussianStream(seed: number): () => number {
  let state = seed >>> 0;
  const uniform = () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
  let spare: number | null = null;
  return () => {
    if (spare !== null) {
      const v = spare;
      spare = null;
      return v;
    }
    let u = 0;
    while (u === 0) u = uniform();
    const v = uniform();
    const mag = Math.sqrt(-2.0 * Math.log(u));
    spare = mag * Math.sin(2 * Math.PI * v);
    return mag * Math.cos(2 * Math.PI * v);
  };
}

function runPrimary(python: string, args: string[]): void {
  const res = spawnSync(python, ["-m", "fluctdecon.cli", ...args], {
    stdio: ["ignore", "pipe", "pipe"],
    encoding: "utf-8",
  });
  if (res.status !== 0) {
    throw new Error(
      `primary CLI failed (${args[0]}, exit ${res.status}):\n${res.stderr ?? ""}`,
    );
  }
}

function simulateCovariance(
  python: string,
  workDir: string,
  patternSeed: number,
  imageSizePx: number,
  frames: number,
): NpyArray {
  fs.mkdirSync(workDir, { recursive: true });
  const manifest = {
    name: `pattern-${patternSeed}`,
    seed: patternSeed,
    image_size_px: imageSizePx,
    frames,
    n_filaments: 2 + (patternSeed % 3),
    emitters_per_filament: 150,
    fwhm_nm: 176.6,
    pixel_size_nm: 25.0,
    background_level: 5.0,
    noise_variance_s: 0.0,
  };
  const manifestPath = path.join(workDir, "manifest.json");
  fs.writeFileSync(manifestPath, JSON.stringify(manifest, null, 2));
  runPrimary(python, ["simulate", "--manifest", manifestPath, "--outdir", workDir]);
  runPrimary(python, [
    "covariance",
    "--stack",
    path.join(workDir, "stack.flk"),
    "--outdir",
    workDir,
    "--no-view",
  ]);
  return parseNpy(fs.readFileSync(path.join(workDir, "covariance.npy")));
}

function sha256(buf: Buffer): string {
  return createHash("sha256").update(buf).digest("hex");
}

export function buildDataset(options: DatasetOptions): DatasetManifest {
  const { outDir } = options;
  fs.mkdirSync(outDir, { recursive: true });
  const entries: DatasetEntry[] = [];
  const total = options.trainPatterns + options.valPatterns;
  for (let p = 0; p < total; p++) {
    const split: "train" | "val" = p < options.trainPatterns ? "train" : "val";
    const patternSeed = options.seed * 100000 + p;
    const workDir = path.join(outDir, "raw", `pattern-${p}`);
    const cov = simulateCovariance(
      options.python, workDir, patternSeed, options.imageSizePx, options.frames,
    );
    let peak = 0;
    for (const v of cov.data) peak = Math.max(peak, v);
    if (peak <= 0) throw new Error(`pattern ${p}: covariance image is all zero`);
    const clean = new Float64Array(cov.data.length);
    for (let i = 0; i < clean.length; i++) clean[i] = cov.data[i] / peak;
    const cleanArr: NpyArray = { rows: cov.rows, cols: cov.cols, data: clean };
    const cleanName = `clean_${String(p).padStart(4, "0")}.npy`;
    const cleanBuf = encodeNpy(cleanArr);
    fs.writeFileSync(path.join(outDir, cleanName), cleanBuf);

    for (let j = 0; j < options.noisyPerClean; j++) {
      const noiseSeed = patternSeed * 97 + j;
      const gauss = gaussianStream(noiseSeed);
      // first draw selects sigma, the rest corrupt the image
      const u = Math.abs(gauss()) % 1;
      const sigma = options.sigmaMin + (options.sigmaMax - options.sigmaMin) * u;
      const noisy = new Float64Array(clean.length);
      for (let i = 0; i < noisy.length; i++) noisy[i] = clean[i] + sigma * gauss();
      const noisyName = `noisy_${String(p).padStart(4, "0")}_${j}.npy`;
      const noisyBuf = encodeNpy({ rows: cov.rows, cols: cov.cols, data: noisy });
      fs.writeFileSync(path.join(outDir, noisyName), noisyBuf);
      entries.push({
        split,
        clean: cleanName,
        noisy: noisyName,
        sigma,
        noiseSeed,
        cleanSha256: sha256(cleanBuf),
        noisySha256: sha256(noisyBuf),
      });
    }
  }
  const { python: _python, ...recorded } = options;
  const manifest: DatasetManifest = { options: recorded, entries };
  fs.writeFileSync(
    path.join(outDir, "dataset.json"),
    JSON.stringify(manifest, null, 2),
  );
  return manifest;
}

export function loadPairs(outDir: string, split: "train" | "val") {
  const manifest: DatasetManifest = JSON.parse(
    fs.readFileSync(path.join(outDir, "dataset.json"), "utf-8"),
  );
  return manifest.entries
    .filter((e) => e.split === split)
    .map((e) => ({
      clean: parseNpy(fs.readFileSync(path.join(outDir, e.clean))),
      noisy: parseNpy(fs.readFileSync(path.join(outDir, e.noisy))),
      sigma: e.sigma,
    }));
}
