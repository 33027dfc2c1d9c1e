import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { buildDataset, gaussianStream, loadPairs, DatasetManifest } from "../src/dataset.js";
import { psnrOf, trainDenoiser } from "../src/train.js";

let workDir: string;
let manifest: DatasetManifest;

beforeAll(() => {
  workDir = fs.mkdtempSync(path.join(os.tmpdir(), "denoiser-data-"));
  manifest = buildDataset({
    outDir: workDir,
    trainPatterns: 4,
    valPatterns: 2,
    imageSizePx: 24,
    frames: 80,
    noisyPerClean: 3,
    sigmaMin: 1e-4,
    sigmaMax: 50 / 255,
    seed: 0,
    python: "python3",
  });
});

afterAll(() => {
  fs.rmSync(workDir, { recursive: true, force: true });
});

describe("dataset construction through the primary pipeline", () => {
  it("produces the requested number of pairs", () => {
    expect(manifest.entries.length).toBe(6 * 3);
    expect(manifest.entries.filter((e) => e.split === "val").length).toBe(2 * 3);
  });

  it("normalizes clean images to max 1", () => {
    for (const pair of loadPairs(workDir, "train")) {
      const peak = Math.max(...pair.clean.data);
      expect(Math.abs(peak - 1)).toBeLessThan(1e-6);
    }
  });

  it("draws sigma inside the configured range", () => {
    for (const entry of manifest.entries) {
      expect(entry.sigma).toBeGreaterThanOrEqual(1e-4);
      expect(entry.sigma).toBeLessThanOrEqual(50 / 255);
    }
  });

  it("is reproducible: same options give identical hashes", () => {
    const again = fs.mkdtempSync(path.join(os.tmpdir(), "denoiser-data2-"));
    try {
      const rebuilt = buildDataset({
        outDir: again,
        trainPatterns: 4,
        valPatterns: 2,
        imageSizePx: 24,
        frames: 80,
        noisyPerClean: 3,
        sigmaMin: 1e-4,
        sigmaMax: 50 / 255,
        seed: 0,
        python: "python3",
      });
      expect(rebuilt.entries.map((e) => e.cleanSha256)).toEqual(
        manifest.entries.map((e) => e.cleanSha256),
      );
      expect(rebuilt.entries.map((e) => e.noisySha256)).toEqual(
        manifest.entries.map((e) => e.noisySha256),
      );
    } finally {
      fs.rmSync(again, { recursive: true, force: true });
    }
  });

  it("gaussian stream is deterministic with near-standard moments", () => {
    const a = gaussianStream(42);
    const b = gaussianStream(42);
    const draws = Array.from({ length: 5000 }, () => a());
    expect(draws.slice(0, 10)).toEqual(Array.from({ length: 10 }, () => b()));
    const mean = draws.reduce((s, v) => s + v, 0) / draws.length;
    const varc = draws.reduce((s, v) => s + (v - mean) ** 2, 0) / draws.length;
    expect(Math.abs(mean)).toBeLessThan(0.05);
    expect(Math.abs(varc - 1)).toBeLessThan(0.08);
  });
});

describe("training", () => {
  it("reduces the denoising loss and beats the noisy input on validation", () => {
    const pairs = loadPairs(workDir, "train");
    const { model, losses } = trainDenoiser(pairs, {
      epochs: 12,
      batchSize: 8,
      learningRate: 5e-3,
      seed: 1,
      config: { kernelSize: 5, numFilters: 6, seed: 1 },
    });
    expect(losses[losses.length - 1]).toBeLessThan(losses[0]);

    const val = loadPairs(workDir, "val");
    let noisyDb = 0;
    let denoisedDb = 0;
    for (const pair of val) {
      const out = model.denoiseImage(
        Float32Array.from(pair.noisy.data), pair.noisy.rows, pair.noisy.cols, pair.sigma,
      );
      expect(out.pixels.length).toBe(pair.noisy.data.length);
      noisyDb += psnrOf(pair.noisy, pair.clean);
      denoisedDb += psnrOf(out.pixels, pair.clean);
    }
    expect(denoisedDb / val.length).toBeGreaterThan(noisyDb / val.length);
    model.dispose();
  });
});
