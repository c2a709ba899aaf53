/**
 * TensorFlow.js detector binding.
 *
 * A deterministic convolutional scorer standing in for a full pretrained
 * detector: Sobel edge energy feeds an objectness head over the target
 * box and a small class head over pooled features. Losses follow the
 * engine's convention (value = log-likelihood of the wrong prediction,
 * maximized by attacks) and pixel gradients come from tf autodiff,
 * chained back through the adapter-owned resize/normalization so they
 * live in the engine's original [0,1] pixel space.
 */

import * as tf from "@tensorflow/tfjs";

export interface BindingConfig {
  seed: number;
  inputSize: number; // model-native square input; images are nearest-resized to it
  scoreThreshold: number;
  numClasses: number;
  normalization: { mean: number; std: number };
}

export const defaultBinding: BindingConfig = {
  seed: 0,
  inputSize: 64,
  scoreThreshold: 0.5,
  numClasses: 4,
  normalization: { mean: 0.5, std: 0.5 },
};

export interface Detection {
  bbox: [number, number, number, number];
  score: number;
  category: number;
}

export interface EvalResult {
  value: number;
  detections: Detection[];
}

export type ObjectiveKind = "vanishing" | "mislabel";

export interface WireObjective {
  kind: string;
  target: { bbox: number[]; category: number };
}

/** Deterministic PRNG so the binding reproduces bit-identical weights. */
const mulberry32 = (seed: number) => {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
};

const gaussians = (rand: () => number, count: number): Float32Array => {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i += 1) {
    const u = Math.max(rand(), 1e-12);
    out[i] = Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * rand());
  }
  return out;
};

const SOBEL_X = [-1, 0, 1, -2, 0, 2, -1, 0, 1];
const SOBEL_Y = [-1, -2, -1, 0, 0, 0, 1, 2, 1];
const LUMA = [0.299, 0.587, 0.114];

export class DetectorBinding {
  readonly config: BindingConfig;
  readonly objectives: ObjectiveKind[] = ["vanishing", "mislabel"];
  private readonly sobelX: tf.Tensor4D;
  private readonly sobelY: tf.Tensor4D;
  private readonly luma: tf.Tensor1D;
  private readonly heads: tf.Tensor2D; // [16, numClasses]
  private readonly headBias: tf.Tensor1D;
  private readonly alpha: number;
  private readonly beta: number;

  constructor(config: Partial<BindingConfig> = {}) {
    this.config = { ...defaultBinding, ...config };
    const rand = mulberry32(this.config.seed + 0x5eed);
    this.alpha = 1.2 + 0.6 * rand();
    this.beta = -(1.0 + 0.4 * rand());
    this.heads = tf.tensor2d(gaussians(rand, 16 * this.config.numClasses), [16, this.config.numClasses]);
    this.headBias = tf.tensor1d(gaussians(rand, this.config.numClasses));
    this.sobelX = tf.tensor4d(SOBEL_X, [3, 3, 1, 1]);
    this.sobelY = tf.tensor4d(SOBEL_Y, [3, 3, 1, 1]);
    this.luma = tf.tensor1d(LUMA);
  }

  /** Scale a bbox from original pixel coordinates into model space. */
  private scaledBox(bbox: number[], height: number, width: number): [number, number, number, number] {
    const s = this.config.inputSize;
    const sx = s / width;
    const sy = s / height;
    const x0 = Math.min(Math.max(Math.round(bbox[0] * sx), 0), s - 1);
    const y0 = Math.min(Math.max(Math.round(bbox[1] * sy), 0), s - 1);
    const x1 = Math.min(Math.max(Math.round((bbox[0] + bbox[2]) * sx), x0 + 1), s);
    const y1 = Math.min(Math.max(Math.round((bbox[1] + bbox[3]) * sy), y0 + 1), s);
    return [x0, y0, x1 - x0, y1 - y0];
  }

  /** Normalize into model space (adapter owns resize + normalization). */
  private toModelSpace(image: tf.Tensor3D, height: number, width: number): tf.Tensor3D {
    const s = this.config.inputSize;
    const { mean, std } = this.config.normalization;
    const resized =
      height === s && width === s
        ? image
        : (tf.image
            .resizeNearestNeighbor(image.expandDims(0) as tf.Tensor4D, [s, s])
            .squeeze([0]) as tf.Tensor3D);
    return tf.div(tf.sub(resized, mean), std) as tf.Tensor3D;
  }

  /** Edge-energy map of a model-space image, shape [s, s]. */
  private energy(model: tf.Tensor3D): tf.Tensor2D {
    const gray = tf.sum(tf.mul(model, this.luma), -1).expandDims(0).expandDims(-1) as tf.Tensor4D;
    const gx = tf.conv2d(gray, this.sobelX, 1, "same");
    const gy = tf.conv2d(gray, this.sobelY, 1, "same");
    return tf.add(tf.square(gx), tf.square(gy)).squeeze([0, 3]) as tf.Tensor2D;
  }

  /** Energy restricted to the (padded) scaled target box. */
  private boxEnergy(e: tf.Tensor2D, objective: WireObjective, height: number, width: number): tf.Tensor2D {
    const s = this.config.inputSize;
    const [bx, by, bw, bh] = this.scaledBox(objective.target.bbox, height, width);
    const pad = 2;
    const y0 = Math.max(by - pad, 0);
    const x0 = Math.max(bx - pad, 0);
    return tf.slice(e, [y0, x0], [Math.min(bh + 2 * pad, s - y0), Math.min(bw + 2 * pad, s - x0)]);
  }

  /** Class logits from 4x4-pooled box energy. */
  private classLogits(boxEnergy: tf.Tensor2D): tf.Tensor1D {
    const pooled = tf.image.resizeBilinear(boxEnergy.expandDims(-1) as tf.Tensor3D, [4, 4]);
    const flat = tf.reshape(pooled, [1, 16]);
    return tf.add(tf.matMul(flat, this.heads), this.headBias).squeeze() as tf.Tensor1D;
  }

  private objectnessLogit(boxEnergy: tf.Tensor2D): tf.Scalar {
    return tf.add(tf.mul(tf.mean(boxEnergy), this.alpha), this.beta).asScalar();
  }

  /** Objective value; differentiable w.r.t. the original-space image. */
  private objectiveValue(image: tf.Tensor3D, objective: WireObjective, height: number, width: number): tf.Scalar {
    const model = this.toModelSpace(image, height, width);
    const box = this.boxEnergy(this.energy(model), objective, height, width);
    const floor = Math.log(1e-12);
    if (objective.kind === "vanishing") {
      // log(1 - sigmoid(logit)) = -softplus(logit), stable near saturation,
      // floored to keep values finite at full saturation
      return tf.maximum(tf.neg(tf.softplus(this.objectnessLogit(box))), floor).asScalar();
    }
    const logProbs = tf.logSoftmax(this.classLogits(box));
    const n = this.config.numClasses;
    const cls = ((objective.target.category % n) + n) % n;
    return tf.minimum(tf.neg(tf.gather(logProbs, cls)), -floor).asScalar();
  }

  /** Predicted box (original pixel coordinates) from the energy centroid. */
  private predict(image: tf.Tensor3D, objective: WireObjective, height: number, width: number): Detection {
    return tf.tidy(() => {
      const s = this.config.inputSize;
      const model = this.toModelSpace(image, height, width);
      const e = this.energy(model);
      const amp = tf.sqrt(tf.add(e, 1e-12)) as tf.Tensor2D;
      const total = tf.sum(amp).dataSync()[0];
      const [bx, by, bw, bh] = this.scaledBox(objective.target.bbox, height, width);
      let cx: number, cy: number, pw: number, ph: number;
      if (total < 1e-6) {
        cx = bx + bw / 2;
        cy = by + bh / 2;
        pw = Math.max(bw / 2, 1);
        ph = Math.max(bh / 2, 1);
      } else {
        const xs = tf.range(0, s).expandDims(0).tile([s, 1]);
        const ys = tf.range(0, s).expandDims(1).tile([1, s]);
        cx = tf.sum(tf.mul(xs, amp)).dataSync()[0] / total;
        cy = tf.sum(tf.mul(ys, amp)).dataSync()[0] / total;
        const vx = tf.sum(tf.mul(tf.square(tf.sub(xs, cx)), amp)).dataSync()[0] / total;
        const vy = tf.sum(tf.mul(tf.square(tf.sub(ys, cy)), amp)).dataSync()[0] / total;
        pw = Math.max(Math.sqrt(6 * vx), 1);
        ph = Math.max(Math.sqrt(6 * vy), 1);
      }
      const px0 = Math.min(Math.max(Math.round(cx - pw / 2), 0), s - 1);
      const py0 = Math.min(Math.max(Math.round(cy - ph / 2), 0), s - 1);
      const pbox = tf.slice(
        e,
        [py0, px0],
        [Math.max(Math.min(Math.round(ph), s - py0), 1), Math.max(Math.min(Math.round(pw), s - px0), 1)]
      );
      const logit = tf.mean(pbox).dataSync()[0] * this.alpha + this.beta;
      const score = 1 / (1 + Math.exp(-logit));
      const cls = tf.argMax(this.classLogits(pbox as tf.Tensor2D)).dataSync()[0];
      const sx = width / s;
      const sy = height / s;
      return {
        bbox: [(cx - pw / 2) * sx, (cy - ph / 2) * sy, pw * sx, ph * sy] as [number, number, number, number],
        score: Math.min(Math.max(score, 0), 1),
        category: cls,
      };
    });
  }

  supports(kind: string): kind is ObjectiveKind {
    return (this.objectives as string[]).includes(kind);
  }

  evaluate(values: Float32Array, dims: number[], objective: WireObjective): EvalResult {
    const [h, w] = dims;
    const image = tf.tensor3d(values, [h, w, 3]);
    try {
      const valueT = tf.tidy(() => this.objectiveValue(image, objective, h, w));
      const value = valueT.dataSync()[0];
      valueT.dispose();
      const det = this.predict(image, objective, h, w);
      return { value, detections: [det] };
    } finally {
      image.dispose();
    }
  }

  gradient(values: Float32Array, dims: number[], objective: WireObjective): Float32Array {
    const [h, w] = dims;
    const image = tf.tensor3d(values, [h, w, 3]);
    try {
      const gradT = tf.tidy(() => {
        const g = tf.grad((img: tf.Tensor) =>
          this.objectiveValue(img as tf.Tensor3D, objective, h, w)
        );
        return g(image);
      });
      const grads = Float32Array.from(gradT.dataSync() as Float32Array);
      gradT.dispose();
      return grads;
    } finally {
      image.dispose();
    }
  }
}
