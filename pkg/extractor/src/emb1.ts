/**
 * EMB1 container writer/reader.
 *
 * Layout (all integers little-endian):
 *   bytes 0-3   magic ASCII "EMB1"
 *   bytes 4-7   u32 version (1)
 *   bytes 8-11  u32 n (rows)
 *   bytes 12-15 u32 p (embedding dimension)
 *   byte  16    u8 dtype code (1 = float32)
 *   byte  17    u8 flag: 1 = per-row provenance tags appended
 *   bytes 18-19 zero padding
 *   ...         n*p float32 row-major embeddings
 *   ...         n u32 labels
 *   ...         n u8 provenance tags (only when flagged)
 */

import * as fs from "fs";

const MAGIC = "EMB1";
const VERSION = 1;
const DTYPE_F32 = 1;
const HEADER_SIZE = 20;

export interface Emb1Split {
  /** Row-major (n * dim) float32 embeddings. */
  data: Float32Array;
  labels: Uint32Array;
  dim: number;
  provenance?: Uint8Array;
}

export function encodeEmb1(split: Emb1Split): Buffer {
  const n = split.labels.length;
  if (split.data.length !== n * split.dim) {
    throw new Error(
      `embedding buffer has ${split.data.length} values, expected ${n * split.dim}`,
    );
  }
  const flag = split.provenance ? 1 : 0;
  if (split.provenance && split.provenance.length !== n) {
    throw new Error("provenance length must match row count");
  }
  const size = HEADER_SIZE + n * split.dim * 4 + n * 4 + (flag ? n : 0);
  const buf = Buffer.alloc(size);
  buf.write(MAGIC, 0, "ascii");
  buf.writeUInt32LE(VERSION, 4);
  buf.writeUInt32LE(n, 8);
  buf.writeUInt32LE(split.dim, 12);
  buf.writeUInt8(DTYPE_F32, 16);
  buf.writeUInt8(flag, 17);

  let pos = HEADER_SIZE;
  for (let i = 0; i < split.data.length; i++) {
    buf.writeFloatLE(split.data[i], pos);
    pos += 4;
  }
  for (let i = 0; i < n; i++) {
    buf.writeUInt32LE(split.labels[i], pos);
    pos += 4;
  }
  if (split.provenance) {
    split.provenance.forEach((tag, i) => buf.writeUInt8(tag, pos + i));
  }
  return buf;
}

export function writeEmb1(path: string, split: Emb1Split): void {
  fs.writeFileSync(path, encodeEmb1(split));
}

export function readEmb1(path: string): Emb1Split {
  const buf = fs.readFileSync(path);
  if (buf.length < HEADER_SIZE) {
    throw new Error(`file shorter than the fixed header (byte offset ${buf.length})`);
  }
  if (buf.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error("bad magic (byte offset 0)");
  }
  if (buf.readUInt32LE(4) !== VERSION) {
    throw new Error("unsupported version (byte offset 4)");
  }
  const n = buf.readUInt32LE(8);
  const dim = buf.readUInt32LE(12);
  if (buf.readUInt8(16) !== DTYPE_F32) {
    throw new Error("unsupported dtype code (byte offset 16)");
  }
  const flag = buf.readUInt8(17);
  const expected = HEADER_SIZE + n * dim * 4 + n * 4 + (flag ? n : 0);
  if (buf.length !== expected) {
    throw new Error(
      `size mismatch: expected ${expected} bytes, got ${buf.length}`,
    );
  }
  const data = new Float32Array(n * dim);
  let pos = HEADER_SIZE;
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readFloatLE(pos);
    pos += 4;
  }
  const labels = new Uint32Array(n);
  for (let i = 0; i < n; i++) {
    labels[i] = buf.readUInt32LE(pos);
    pos += 4;
  }
  let provenance: Uint8Array | undefined;
  if (flag) {
    provenance = new Uint8Array(buf.subarray(pos, pos + n));
  }
  return { data, labels, dim, provenance };
}

export interface ManifestDomain {
  domain: string;
  train_path: string;
  test_path: string;
}

export interface Manifest {
  name: string;
  dim: number;
  classes: number;
  domains: ManifestDomain[];
}

export function writeManifest(path: string, manifest: Manifest): void {
  fs.writeFileSync(path, JSON.stringify(manifest, null, 2) + "\n");
}
