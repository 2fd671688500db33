/**
 * Binary embedding-file codec (.zsml), bit-compatible with the Python reader.
 *
 * Layout (integers little-endian): magic "ZSML", version u16 = 1, dtype
 * u8 = 0 (float32 LE), rows u64, cols u64, then rows*cols float32 row-major.
 *
 * Writes are atomic: a temp file in the target directory is renamed over the
 * destination once fully written.
 */

import { randomBytes } from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";

const MAGIC = Buffer.from("ZSML", "ascii");
const VERSION = 1;
const DTYPE_FLOAT32 = 0;
const HEADER_BYTES = 4 + 2 + 1 + 8 + 8;

export interface Matrix {
  rows: number;
  cols: number;
  /** row-major, length rows*cols */
  data: Float64Array;
}

export function encodeEmbeddings(m: Matrix): Buffer {
  if (m.data.length !== m.rows * m.cols) {
    throw new Error(`matrix data length ${m.data.length} != ${m.rows}x${m.cols}`);
  }
  const buf = Buffer.alloc(HEADER_BYTES + m.rows * m.cols * 4);
  MAGIC.copy(buf, 0);
  buf.writeUInt16LE(VERSION, 4);
  buf.writeUInt8(DTYPE_FLOAT32, 6);
  buf.writeBigUInt64LE(BigInt(m.rows), 7);
  buf.writeBigUInt64LE(BigInt(m.cols), 15);
  for (let i = 0; i < m.data.length; i++) {
    const v = m.data[i];
    if (!Number.isFinite(v)) {
      throw new Error(`non-finite value at index ${i}`);
    }
    buf.writeFloatLE(v, HEADER_BYTES + 4 * i);
  }
  return buf;
}

export function decodeEmbeddings(buf: Buffer): Matrix {
  if (buf.length < 4 || !buf.subarray(0, 4).equals(MAGIC)) {
    throw new Error("bad magic");
  }
  if (buf.length < HEADER_BYTES) {
    throw new Error("truncated header");
  }
  const version = buf.readUInt16LE(4);
  const dtype = buf.readUInt8(6);
  if (version !== VERSION || dtype !== DTYPE_FLOAT32) {
    throw new Error(`unsupported version/dtype ${version}/${dtype}`);
  }
  const rows = Number(buf.readBigUInt64LE(7));
  const cols = Number(buf.readBigUInt64LE(15));
  const expected = HEADER_BYTES + rows * cols * 4;
  if (buf.length !== expected) {
    throw new Error(`payload length ${buf.length} != ${expected}`);
  }
  const data = new Float64Array(rows * cols);
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readFloatLE(HEADER_BYTES + 4 * i);
  }
  return { rows, cols, data };
}

export function writeFileAtomic(target: string, payload: Buffer | string): void {
  const dir = path.dirname(target);
  fs.mkdirSync(dir, { recursive: true });
  const tmp = path.join(dir, `.${path.basename(target)}.${randomBytes(6).toString("hex")}.tmp`);
  fs.writeFileSync(tmp, payload);
  fs.renameSync(tmp, target);
}

export function writeEmbeddings(target: string, m: Matrix): void {
  writeFileAtomic(target, encodeEmbeddings(m));
}

export function l2NormalizeRows(m: Matrix): Matrix {
  for (let r = 0; r < m.rows; r++) {
    let sq = 0;
    for (let c = 0; c < m.cols; c++) {
      const v = m.data[r * m.cols + c];
      sq += v * v;
    }
    const norm = Math.sqrt(sq);
    if (norm <= 1e-12) {
      throw new Error(`row ${r} has zero norm`);
    }
    for (let c = 0; c < m.cols; c++) {
      m.data[r * m.cols + c] /= norm;
    }
  }
  return m;
}
