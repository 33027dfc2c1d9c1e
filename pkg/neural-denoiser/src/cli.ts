/**
 * dataset | train | serve entry points.
 *
 *   node dist/cli.js dataset --out data/ [--train-patterns 20] [--val-patterns 5]
 *   node dist/cli.js train --data data/ --out checkpoint.json [--epochs 30]
 *   node dist/cli.js serve --checkpoint checkpoint.json [--port 9700]
 */

import * as fs from "node:fs";
import { parseArgs } from "node:util";

import { DEFAULT_DATASET, buildDataset, loadPairs } from "./dataset.js";
import { GradientStepDenoiser, DEFAULT_CONFIG } from "./model.js";
import { serveDenoiser } from "./serve.js";
import { DEFAULT_TRAIN, psnrOf, trainDenoiser } from "./train.js";

function num(value: string | undefined, fallback: number): number {
  return value === undefined ? fallback : Number(value);
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  if (command === "dataset") {
    const { values } = parseArgs({
      args: rest,
      options: {
        out: { type: "string" },
        "train-patterns": { type: "string" },
        "val-patterns": { type: "string" },
        "image-size": { type: "string" },
        frames: { type: "string" },
        seed: { type: "string" },
        python: { type: "string" },
      },
    });
    if (!values.out) throw new Error("dataset needs --out");
    const manifest = buildDataset({
      ...DEFAULT_DATASET,
      outDir: values.out,
      trainPatterns: num(values["train-patterns"], DEFAULT_DATASET.trainPatterns),
      valPatterns: num(values["val-patterns"], DEFAULT_DATASET.valPatterns),
      imageSizePx: num(values["image-size"], DEFAULT_DATASET.imageSizePx),
      frames: num(values.frames, DEFAULT_DATASET.frames),
      seed: num(values.seed, DEFAULT_DATASET.seed),
      python: values.python ?? DEFAULT_DATASET.python,
    });
    console.log(`wrote ${manifest.entries.length} pairs to ${values.out}`);
    return 0;
  }
  if (command === "train") {
    const { values } = parseArgs({
      args: rest,
      options: {
        data: { type: "string" },
        out: { type: "string" },
        epochs: { type: "string" },
        "batch-size": { type: "string" },
        "learning-rate": { type: "string" },
        filters: { type: "string" },
        "kernel-size": { type: "string" },
      },
    });
    if (!values.data || !values.out) throw new Error("train needs --data and --out");
    const pairs = loadPairs(values.data, "train");
    const val = loadPairs(values.data, "val");
    const { model, losses } = trainDenoiser(pairs, {
      ...DEFAULT_TRAIN,
      epochs: num(values.epochs, DEFAULT_TRAIN.epochs),
      batchSize: num(values["batch-size"], DEFAULT_TRAIN.batchSize),
      learningRate: num(values["learning-rate"], DEFAULT_TRAIN.learningRate),
      config: {
        ...DEFAULT_CONFIG,
        numFilters: num(values.filters, DEFAULT_CONFIG.numFilters),
        kernelSize: num(values["kernel-size"], DEFAULT_CONFIG.kernelSize),
      },
      onEpoch: (epoch, loss) => console.log(`epoch ${epoch}: loss ${loss.toExponential(4)}`),
    });
    if (val.length) {
      let noisy = 0;
      let denoised = 0;
      for (const pair of val) {
        const out = model.denoiseImage(
          Float32Array.from(pair.noisy.data), pair.noisy.rows, pair.noisy.cols, pair.sigma,
        );
        noisy += psnrOf(pair.noisy, pair.clean);
        denoised += psnrOf(out.pixels, pair.clean);
      }
      console.log(
        `validation PSNR: noisy ${(noisy / val.length).toFixed(2)} dB -> ` +
        `denoised ${(denoised / val.length).toFixed(2)} dB`,
      );
    }
    fs.writeFileSync(values.out, JSON.stringify(model.toCheckpoint(losses), null, 2));
    console.log(`wrote checkpoint ${values.out}`);
    return 0;
  }
  if (command === "serve") {
    const { values } = parseArgs({
      args: rest,
      options: { checkpoint: { type: "string" }, port: { type: "string" } },
    });
    if (!values.checkpoint) throw new Error("serve needs --checkpoint");
    const model = GradientStepDenoiser.fromCheckpoint(
      JSON.parse(fs.readFileSync(values.checkpoint, "utf-8")),
    );
    const done = new Promise<void>((resolve) => {
      serveDenoiser(model, num(values.port, 0), resolve).then((handle) =>
        console.log(`PORT ${handle.port}`),
      );
    });
    await done; // resolves on a shutdown frame
    return 0;
  }
  console.error("usage: cli.js dataset|train|serve ...");
  return 2;
}

main().then(
  (code) => {
    if (code !== 0) process.exitCode = code;
  },
  (err) => {
    console.error(err instanceof Error ? err.message : err);
    process.exitCode = 1;
  },
);
