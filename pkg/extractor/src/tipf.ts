/**
 * Binary feature/label files consumed by the classification engine.
 *
 * Layouts (little-endian, fixed width, single-precision payloads):
 *   "TIPF" | u32 version=1 | u64 rows | u64 cols | u8 normalized | f32 payload
 *   "TIPL" | u32 version=1 | u64 rows | u64 numClasses | u32 payload
 *
 * Writes go through a temp file and rename so readers never observe a
 * partial file.
 */

import { renameSync, writeFileSync, readFileSync } from "node:fs";

export const FEATURE_MAGIC = "TIPF";
export const LABEL_MAGIC = "TIPL";
export const FORMAT_VERSION = 1;

export interface FeatureBlock {
  rows: number;
  cols: number;
  normalized: boolean;
  /** row-major, rows*cols entries */
  data: Float32Array;
}

export interface LabelBlock {
  numClasses: number;
  labels: Uint32Array;
}

function putMagic(view: DataView, magic: string): void {
  for (let i = 0; i < 4; i++) view.setUint8(i, magic.charCodeAt(i));
}

function getMagic(view: DataView): string {
  return String.fromCharCode(
    view.getUint8(0), view.getUint8(1), view.getUint8(2), view.getUint8(3),
  );
}

export function encodeFeatures(block: FeatureBlock): Uint8Array {
  const { rows, cols, normalized, data } = block;
  if (data.length !== rows * cols) {
    throw new Error(`payload length ${data.length} != rows*cols ${rows * cols}`);
  }
  const buf = new Uint8Array(25 + rows * cols * 4);
  const view = new DataView(buf.buffer);
  putMagic(view, FEATURE_MAGIC);
  view.setUint32(4, FORMAT_VERSION, true);
  view.setBigUint64(8, BigInt(rows), true);
  view.setBigUint64(16, BigInt(cols), true);
  view.setUint8(24, normalized ? 1 : 0);
  for (let i = 0; i < data.length; i++) {
    view.setFloat32(25 + i * 4, data[i], true);
  }
  return buf;
}

export function decodeFeatures(buf: Uint8Array): FeatureBlock {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  if (buf.length < 25) throw new Error("truncated feature header");
  const magic = getMagic(view);
  if (magic !== FEATURE_MAGIC) throw new Error(`bad magic: ${magic}`);
  const version = view.getUint32(4, true);
  if (version !== FORMAT_VERSION) throw new Error(`unsupported version ${version}`);
  const rows = Number(view.getBigUint64(8, true));
  const cols = Number(view.getBigUint64(16, true));
  const flag = view.getUint8(24);
  if (flag !== 0 && flag !== 1) throw new Error(`invalid normalized flag ${flag}`);
  if (buf.length !== 25 + rows * cols * 4) {
    throw new Error(`payload size mismatch for ${rows}x${cols}`);
  }
  const data = new Float32Array(rows * cols);
  for (let i = 0; i < data.length; i++) {
    data[i] = view.getFloat32(25 + i * 4, true);
  }
  return { rows, cols, normalized: flag === 1, data };
}

export function encodeLabels(block: LabelBlock): Uint8Array {
  const { numClasses, labels } = block;
  for (const label of labels) {
    if (label >= numClasses) {
      throw new Error(`label ${label} out of range for ${numClasses} classes`);
    }
  }
  const buf = new Uint8Array(24 + labels.length * 4);
  const view = new DataView(buf.buffer);
  putMagic(view, LABEL_MAGIC);
  view.setUint32(4, FORMAT_VERSION, true);
  view.setBigUint64(8, BigInt(labels.length), true);
  view.setBigUint64(16, BigInt(numClasses), true);
  for (let i = 0; i < labels.length; i++) {
    view.setUint32(24 + i * 4, labels[i], true);
  }
  return buf;
}

export function decodeLabels(buf: Uint8Array): LabelBlock {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  if (buf.length < 24) throw new Error("truncated label header");
  const magic = getMagic(view);
  if (magic !== LABEL_MAGIC) throw new Error(`bad magic: ${magic}`);
  const version = view.getUint32(4, true);
  if (version !== FORMAT_VERSION) throw new Error(`unsupported version ${version}`);
  const rows = Number(view.getBigUint64(8, true));
  const numClasses = Number(view.getBigUint64(16, true));
  if (buf.length !== 24 + rows * 4) throw new Error("payload size mismatch");
  const labels = new Uint32Array(rows);
  for (let i = 0; i < rows; i++) {
    labels[i] = view.getUint32(24 + i * 4, true);
    if (labels[i] >= numClasses) {
      throw new Error(`label ${labels[i]} out of range for ${numClasses} classes`);
    }
  }
  return { numClasses, labels };
}

/** Write bytes atomically: temp file in the same directory, then rename. */
export function atomicWrite(path: string, bytes: Uint8Array): void {
  const tmp = `${path}.tmp-${process.pid}`;
  writeFileSync(tmp, bytes);
  renameSync(tmp, path);
}

export function writeFeatures(path: string, block: FeatureBlock): void {
  atomicWrite(path, encodeFeatures(block));
}

export function readFeatures(path: string): FeatureBlock {
  return decodeFeatures(readFileSync(path));
}

export function writeLabels(path: string, block: LabelBlock): void {
  atomicWrite(path, encodeLabels(block));
}

export function readLabels(path: string): LabelBlock {
  return decodeLabels(readFileSync(path));
}
