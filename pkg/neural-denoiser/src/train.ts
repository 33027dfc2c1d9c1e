/**
 * ADAM training of the gradient-step denoiser on clean/noisy pairs.
 * The loss is the denoising mean squared error of D_sigma(noisy)
 * against the clean image, averaged over the batch.
 */

import * as tf from "@tensorflow/tfjs";

import { GradientStepDenoiser, ModelConfig, DEFAULT_CONFIG } from "./model.js";
import { NpyArray } from "./npy.js";

export interface Pair {
  clean: NpyArray;
  noisy: NpyArray;
  sigma: number;
}

export interface TrainOptions {
  epochs: number;
  batchSize: number;
  learningRate: number;
  seed: number;
  config: ModelConfig;
  onEpoch?: (epoch: number, loss: number) => void;
}

export const DEFAULT_TRAIN: TrainOptions = {
  epochs: 30,
  batchSize: 16,
  learningRate: 3e-3,
  seed: 0,
  config: DEFAULT_CONFIG,
};

function shuffled(n: number, seed: number): number[] {
  const order = Array.from({ length: n }, (_, i) => i);
  let state = seed >>> 0;
  const rand = () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 4294967296;
  };
  for (let i = n - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [order[i], order[j]] = [order[j], order[i]];
  }
  return order;
}

function toBatch(pairs: Pair[], indices: number[]) {
  const { rows, cols } = pairs[0].clean;
  const b = indices.length;
  const noisy = new Float32Array(b * rows * cols);
  const clean = new Float32Array(b * rows * cols);
  const sigma = new Float32Array(b);
  indices.forEach((idx, slot) => {
    const pair = pairs[idx];
    noisy.set(Float32Array.from(pair.noisy.data), slot * rows * cols);
    clean.set(Float32Array.from(pair.clean.data), slot * rows * cols);
    sigma[slot] = pair.sigma;
  });
  return {
    noisy: tf.tensor4d(noisy, [b, rows, cols, 1]),
    clean: tf.tensor4d(clean, [b, rows, cols, 1]),
    sigma: tf.tensor1d(sigma),
  };
}

export function trainDenoiser(
  pairs: Pair[],
  options: TrainOptions = DEFAULT_TRAIN,
): { model: GradientStepDenoiser; losses: number[] } {
  if (!pairs.length) throw new Error("no training pairs");
  const model = new GradientStepDenoiser(options.config);
  const optimizer = tf.train.adam(options.learningRate);
  const losses: number[] = [];
  for (let epoch = 0; epoch < options.epochs; epoch++) {
    const order = shuffled(pairs.length, options.seed + epoch);
    let epochLoss = 0;
    let batches = 0;
    for (let start = 0; start < order.length; start += options.batchSize) {
      const indices = order.slice(start, start + options.batchSize);
      const batch = toBatch(pairs, indices);
      const lossTensor = optimizer.minimize(
        () => {
          const denoised = model.denoiseBatch(batch.noisy as tf.Tensor4D, batch.sigma);
          return tf.losses.meanSquaredError(batch.clean, denoised) as tf.Scalar;
        },
        true,
        model.trainables,
      ) as tf.Scalar;
      const loss = lossTensor.dataSync()[0];
      lossTensor.dispose();
      batch.noisy.dispose();
      batch.clean.dispose();
      batch.sigma.dispose();
      if (!Number.isFinite(loss)) {
        throw new Error(`training diverged at epoch ${epoch} (loss ${loss}); trace: ${losses}`);
      }
      epochLoss += loss;
      batches += 1;
    }
    const mean = epochLoss / batches;
    losses.push(mean);
    options.onEpoch?.(epoch, mean);
  }
  optimizer.dispose();
  return { model, losses };
}

export function psnrOf(a: NpyArray | Float32Array, b: NpyArray, peak = 1.0): number {
  const dataA = a instanceof Float32Array ? a : a.data;
  let mse = 0;
  for (let i = 0; i < b.data.length; i++) {
    const d = dataA[i] - b.data[i];
    mse += d * d;
  }
  mse /= b.data.length;
  if (mse === 0) return Infinity;
  return 10 * Math.log10((peak * peak) / mse);
}
