/**
 * Encoder registry.
 *
 * "vit-b-16" is the default identifier and expects real model assets,
 * which this tool does not ship; without them it fails with a clear
 * message. The "seeded-projection-<width>" family is a deterministic
 * stand-in used for conformance testing: images are box-downsampled to a
 * 16x16 grayscale patch and pushed through a fixed seeded Gaussian
 * projection, so re-running extraction is byte-identical.
 */

import { DecodedImage } from "./images";

export interface Encoder {
  name: string;
  width: number;
  encode(image: DecodedImage): Float32Array;
}

const PATCH = 16;

/** splitmix64, the stateless seed expander. */
function splitmix64(state: bigint): [bigint, bigint] {
  let z = (state + 0x9e3779b97f4a7c15n) & 0xffffffffffffffffn;
  let x = z;
  x = ((x ^ (x >> 30n)) * 0xbf58476d1ce4e5b9n) & 0xffffffffffffffffn;
  x = ((x ^ (x >> 27n)) * 0x94d049bb133111ebn) & 0xffffffffffffffffn;
  x = x ^ (x >> 31n);
  return [x, z];
}

function gaussianMatrix(rows: number, cols: number, seed: bigint): Float64Array {
  const out = new Float64Array(rows * cols);
  let state = seed;
  let i = 0;
  while (i < out.length) {
    // Box-Muller from two 53-bit uniforms.
    let u1: number, u2: number;
    [, state] = splitmix64(state);
    let [x1] = splitmix64(state);
    [, state] = splitmix64(state);
    let [x2] = splitmix64(state);
    u1 = Number(x1 >> 11n) / 2 ** 53;
    u2 = Number(x2 >> 11n) / 2 ** 53;
    if (u1 <= 0) continue;
    const radius = Math.sqrt(-2 * Math.log(u1));
    out[i++] = radius * Math.cos(2 * Math.PI * u2);
    if (i < out.length) {
      out[i++] = radius * Math.sin(2 * Math.PI * u2);
    }
  }
  return out;
}

function hashName(name: string): bigint {
  let h = 0xcbf29ce484222325n;
  for (const ch of Buffer.from(name, "utf8")) {
    h = ((h ^ BigInt(ch)) * 0x100000001b3n) & 0xffffffffffffffffn;
  }
  return h;
}

/** Box-average the image down to a PATCH x PATCH grayscale grid in [0, 1]. */
export function grayPatch(image: DecodedImage): Float64Array {
  const out = new Float64Array(PATCH * PATCH);
  const counts = new Float64Array(PATCH * PATCH);
  for (let y = 0; y < image.height; y++) {
    const py = Math.min(PATCH - 1, Math.floor((y * PATCH) / image.height));
    for (let x = 0; x < image.width; x++) {
      const px = Math.min(PATCH - 1, Math.floor((x * PATCH) / image.width));
      const base = (y * image.width + x) * 4;
      const gray =
        (image.rgba[base] + image.rgba[base + 1] + image.rgba[base + 2]) / (3 * 255);
      out[py * PATCH + px] += gray;
      counts[py * PATCH + px] += 1;
    }
  }
  for (let i = 0; i < out.length; i++) {
    if (counts[i] > 0) out[i] /= counts[i];
  }
  return out;
}

class SeededProjectionEncoder implements Encoder {
  readonly name: string;
  readonly width: number;
  private readonly matrix: Float64Array;

  constructor(width: number) {
    this.name = `seeded-projection-${width}`;
    this.width = width;
    this.matrix = gaussianMatrix(width, PATCH * PATCH, hashName(this.name));
  }

  encode(image: DecodedImage): Float32Array {
    const patch = grayPatch(image);
    const out = new Float32Array(this.width);
    // 1/sqrt(patch) keeps embedding entries O(1) like a real encoder's
    const norm = 1 / Math.sqrt(patch.length);
    for (let row = 0; row < this.width; row++) {
      let acc = 0;
      const offset = row * patch.length;
      for (let col = 0; col < patch.length; col++) {
        acc += this.matrix[offset + col] * patch[col];
      }
      out[row] = Math.fround(acc * norm);
    }
    return out;
  }
}

export function resolveEncoder(name: string): Encoder {
  const projection = name.match(/^seeded-projection-(\d+)$/);
  if (projection) {
    const width = parseInt(projection[1], 10);
    if (width < 1 || width > 65536) {
      throw new Error(`bad projection width ${projection[1]}`);
    }
    return new SeededProjectionEncoder(width);
  }
  if (name === "vit-b-16") {
    throw new Error(
      "encoder 'vit-b-16' needs pretrained vision-language model assets, which " +
        "are not bundled; point a model-backed encoder here or use " +
        "'seeded-projection-512' for format-level testing",
    );
  }
  throw new Error(`unknown encoder '${name}'`);
}
