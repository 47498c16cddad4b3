/**
 * Embedding backends behind one interface.
 *
 * The engine only requires L2-normalized row vectors; which model produces
 * them is a deployment choice. This module ships "bag-v1", a deterministic
 * bag-of-byte-n-grams random-projection encoder that needs no downloaded
 * weights, and rejects unknown backbone ids with a clear error so real
 *(pretrained) backends can be slotted in where weights exist locally.
 */

import { fnv1a, mulberry32, randInt } from "./rng.js";

export interface EncodeOptions {
  /** train-time augmentation (random byte-window crop + flip); off = center crop */
  augment: boolean;
  /** per-sample seed controlling the augmentation draw */
  seed: number;
}

export interface Encoder {
  readonly id: string;
  readonly dim: number;
  encodeImage(content: Uint8Array, opts: EncodeOptions): Float32Array;
  encodeText(text: string): Float32Array;
}

export function l2Normalize(v: Float32Array): Float32Array {
  let sq = 0;
  for (let i = 0; i < v.length; i++) sq += v[i] * v[i];
  const norm = Math.sqrt(sq);
  if (norm === 0) throw new Error("cannot normalize a zero embedding");
  const out = new Float32Array(v.length);
  for (let i = 0; i < v.length; i++) out[i] = v[i] / norm;
  return out;
}

const NGRAM = 4;
const CROP_FRACTION = 0.75;

/**
 * Deterministic content encoder: sums a pseudo-random unit-variance vector
 * per byte 4-gram, then L2-normalizes. Similar byte streams land close in
 * cosine space, so class-consistent content clusters without any training.
 */
export class BagOfBytesEncoder implements Encoder {
  readonly id: string;
  readonly dim: number;
  private readonly tokenCache = new Map<number, Float32Array>();

  constructor(dim = 64) {
    if (dim < 2) throw new Error("dim must be >= 2");
    this.dim = dim;
    this.id = `bag-v1-${dim}`;
  }

  private tokenVector(hash: number): Float32Array {
    let vec = this.tokenCache.get(hash);
    if (!vec) {
      const rng = mulberry32(hash);
      vec = new Float32Array(this.dim);
      for (let i = 0; i < this.dim; i++) vec[i] = rng() * 2 - 1;
      this.tokenCache.set(hash, vec);
    }
    return vec;
  }

  // Sentinel-padded n-grams per whitespace-delimited chunk: a token never
  // straddles chunk boundaries, so the same chunk always yields the same
  // tokens regardless of its neighbors (images and prompts can agree).
  private addChunk(acc: Float32Array, bytes: Uint8Array, lo: number, hi: number): void {
    const padded = new Uint8Array(hi - lo + 2);
    padded[0] = 0x02;
    padded.set(bytes.subarray(lo, hi), 1);
    padded[padded.length - 1] = 0x03;
    for (let start = 0; start + NGRAM <= padded.length; start++) {
      let h = 0x811c9dc5;
      for (let k = 0; k < NGRAM; k++) {
        h ^= padded[start + k];
        h = Math.imul(h, 0x01000193) >>> 0;
      }
      const tok = this.tokenVector(h >>> 0);
      for (let i = 0; i < this.dim; i++) acc[i] += tok[i];
    }
  }

  private embedBytes(bytes: Uint8Array): Float32Array {
    const acc = new Float32Array(this.dim);
    let lo = -1;
    for (let i = 0; i <= bytes.length; i++) {
      const ws = i === bytes.length || bytes[i] === 0x20 || bytes[i] === 0x0a ||
        bytes[i] === 0x0d || bytes[i] === 0x09;
      if (ws) {
        if (lo >= 0) this.addChunk(acc, bytes, lo, i);
        lo = -1;
      } else if (lo < 0) {
        lo = i;
      }
    }
    if (!acc.some((x) => x !== 0)) {
      throw new Error("content produced an empty embedding");
    }
    return l2Normalize(acc);
  }

  encodeImage(content: Uint8Array, opts: EncodeOptions): Float32Array {
    const window = Math.max(NGRAM, Math.ceil(content.length * CROP_FRACTION));
    const slack = Math.max(0, content.length - window);
    let view: Uint8Array;
    if (opts.augment) {
      const rng = mulberry32(opts.seed);
      const start = slack > 0 ? randInt(rng, slack + 1) : 0;
      view = content.slice(start, start + window);
      if (rng() < 0.5) view.reverse(); // horizontal-flip analogue
    } else {
      const start = Math.floor(slack / 2); // deterministic center crop
      view = content.slice(start, start + window);
    }
    return this.embedBytes(view);
  }

  encodeText(text: string): Float32Array {
    return this.embedBytes(new TextEncoder().encode(text.toLowerCase()));
  }
}

const BAG_PATTERN = /^bag-v1-(\d+)$/;

/**
 * Instantiate a backbone by id. Pretrained neural backbones require their
 * weights to exist locally; none are bundled, so unknown ids fail fast.
 */
export function loadEncoder(backbone: string): Encoder {
  const match = BAG_PATTERN.exec(backbone);
  if (match) return new BagOfBytesEncoder(parseInt(match[1], 10));
  throw new Error(
    `unknown backbone "${backbone}": only bag-v1-<dim> is bundled; ` +
      "pretrained encoders need local weights and a matching Encoder implementation",
  );
}
