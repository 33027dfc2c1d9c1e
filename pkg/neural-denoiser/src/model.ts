/**
 * Gradient-step denoiser with an explicit learned potential.
 *
 * The potential is a field-of-experts energy over a trainable filter
 * bank:
 *
 *   R_sigma(z) = gain * sigma^2 * sum_f w_f * sum_ij log(1 + (f_k * z)_ij^2)
 *
 * with w_f = softplus(rawWeights_f) and gain = softplus(rawGain). Its
 * gradient has the closed form
 *
 *   grad R_sigma(z) = gain * sigma^2 * sum_f w_f * corr_f( 2 u / (1 + u^2) ),
 *   u = conv_f(z),
 *
 * built from conv2d and its exact transpose, so the denoiser
 *
 *   D_sigma(z) = z - grad R_sigma(z)
 *
 * is trainable with ordinary first-order backprop on the denoising MSE
 * (no second-order autodiff needed), while tf.grad of the scalar
 * R_sigma provides an independent automatic-differentiation check of
 * the gradient-step identity. The bounded expert derivative keeps
 * grad R Lipschitz, and D_sigma tends to the identity as sigma -> 0.
 */

import * as tf from "@tensorflow/tfjs";

export interface ModelConfig {
  kernelSize: number;
  numFilters: number;
  seed: number;
}

export const DEFAULT_CONFIG: ModelConfig = { kernelSize: 7, numFilters: 8, seed: 0 };

export interface Checkpoint {
  version: number;
  config: ModelConfig;
  weights: { filters: string; rawWeights: string; rawGain: string };
  trainingLoss?: number[];
}

function b64(data: Float32Array): string {
  return Buffer.from(data.buffer, data.byteOffset, data.byteLength).toString("base64");
}

function fromB64(text: string): Float32Array {
  const buf = Buffer.from(text, "base64");
  return new Float32Array(buf.buffer, buf.byteOffset, buf.byteLength / 4);
}

export class GradientStepDenoiser {
  readonly config: ModelConfig;
  filters: tf.Variable; // [k, k, 1, F]
  rawWeights: tf.Variable; // [F]
  rawGain: tf.Variable; // scalar

  constructor(config: ModelConfig = DEFAULT_CONFIG) {
    this.config = config;
    const { kernelSize: k, numFilters: f, seed } = config;
    const init = tf.tidy(() => {
      const raw = tf.randomNormal([k, k, 1, f], 0, 1.0 / k, "float32", seed);
      return raw.sub(raw.mean([0, 1], true)); // zero-mean filters respond to structure
    });
    // names left auto-generated: tfjs registers variable names globally
    this.filters = tf.variable(init, true);
    this.rawWeights = tf.variable(tf.zeros([f]), true);
    this.rawGain = tf.variable(tf.scalar(0.0), true);
  }

  get trainables(): tf.Variable[] {
    return [this.filters, this.rawWeights, this.rawGain];
  }

  /** R_sigma per batch element; z4d is [b, h, w, 1], sigma is [b] or scalar. */
  potentialPerSample(z4d: tf.Tensor4D, sigma: tf.Tensor): tf.Tensor1D {
    return tf.tidy(() => {
      const u = tf.conv2d(z4d, this.filters as tf.Tensor4D, 1, "same"); // [b,h,w,F]
      const per = tf.log1p(u.square()).sum([1, 2]); // [b, F]
      const w = tf.softplus(this.rawWeights); // [F]
      const core = per.mul(w).sum(1); // [b]
      const gain = tf.softplus(this.rawGain);
      return core.mul(gain).mul(sigma.square()) as tf.Tensor1D;
    });
  }

  /** Closed-form grad of R_sigma with respect to z. */
  gradPotential(z4d: tf.Tensor4D, sigma: tf.Tensor): tf.Tensor4D {
    return tf.tidy(() => {
      const u = tf.conv2d(z4d, this.filters as tf.Tensor4D, 1, "same");
      const rho = u.mul(2).div(u.square().add(1)); // d/du log(1+u^2)
      const w = tf.softplus(this.rawWeights).reshape([1, 1, 1, -1]);
      const weighted = rho.mul(w) as tf.Tensor4D;
      const [b, h, wd] = [z4d.shape[0], z4d.shape[1], z4d.shape[2]];
      const back = tf.conv2dTranspose(
        weighted,
        this.filters as tf.Tensor4D,
        [b, h, wd, 1],
        1,
        "same",
      );
      const gain = tf.softplus(this.rawGain);
      const scale = sigma.square().mul(gain).reshape([-1, 1, 1, 1]);
      return back.mul(scale) as tf.Tensor4D;
    });
  }

  /** D_sigma(z) = z - grad R_sigma(z) on a batch. */
  denoiseBatch(z4d: tf.Tensor4D, sigma: tf.Tensor): tf.Tensor4D {
    return tf.tidy(() => z4d.sub(this.gradPotential(z4d, sigma)) as tf.Tensor4D);
  }

  /** Single-image convenience: returns the denoised image and R_sigma(z). */
  denoiseImage(
    pixels: Float32Array,
    height: number,
    width: number,
    sigma: number,
  ): { pixels: Float32Array; potential: number } {
    const out = tf.tidy(() => {
      const z = tf.tensor4d(pixels, [1, height, width, 1]);
      const s = tf.tensor1d([sigma]);
      const denoised = this.denoiseBatch(z, s);
      const potential = this.potentialPerSample(z, s);
      return {
        pixels: denoised.dataSync() as Float32Array,
        potential: potential.dataSync()[0],
      };
    });
    return { pixels: new Float32Array(out.pixels), potential: out.potential };
  }

  /** grad R_sigma by tf autodiff; the identity check compares this
   * against the closed form the server actually uses. */
  gradPotentialAutodiff(pixels: Float32Array, height: number, width: number, sigma: number): Float32Array {
    const g = tf.tidy(() => {
      const z = tf.tensor4d(pixels, [1, height, width, 1]);
      const s = tf.tensor1d([sigma]);
      const gradFn = tf.grad((zz: tf.Tensor) =>
        this.potentialPerSample(zz as tf.Tensor4D, s).sum(),
      );
      return gradFn(z).dataSync() as Float32Array;
    });
    return new Float32Array(g);
  }

  toCheckpoint(trainingLoss?: number[]): Checkpoint {
    return {
      version: 1,
      config: this.config,
      weights: {
        filters: b64(this.filters.dataSync() as Float32Array),
        rawWeights: b64(this.rawWeights.dataSync() as Float32Array),
        rawGain: b64(this.rawGain.dataSync() as Float32Array),
      },
      trainingLoss,
    };
  }

  static fromCheckpoint(ckpt: Checkpoint): GradientStepDenoiser {
    if (ckpt.version !== 1) throw new Error(`unsupported checkpoint version ${ckpt.version}`);
    const model = new GradientStepDenoiser(ckpt.config);
    const { kernelSize: k, numFilters: f } = ckpt.config;
    model.filters.assign(tf.tensor(fromB64(ckpt.weights.filters), [k, k, 1, f]));
    model.rawWeights.assign(tf.tensor(fromB64(ckpt.weights.rawWeights), [f]));
    model.rawGain.assign(tf.scalar(fromB64(ckpt.weights.rawGain)[0]));
    return model;
  }

  dispose(): void {
    this.filters.dispose();
    this.rawWeights.dispose();
    this.rawGain.dispose();
  }
}
