import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { afterAll, describe, expect, it } from "vitest";
import { decodeEmbeddings, encodeEmbeddings, l2NormalizeRows, writeEmbeddings, type Matrix } from "../src/format.js";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "zsml-format-"));
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }));

function randomMatrix(rows: number, cols: number, scale = 1): Matrix {
  const data = new Float64Array(rows * cols);
  for (let i = 0; i < data.length; i++) data[i] = (Math.random() - 0.5) * scale;
  return { rows, cols, data };
}

describe("embedding codec", () => {
  it("round-trips values to float32 precision", () => {
    const m = randomMatrix(5, 7, 10);
    const out = decodeEmbeddings(encodeEmbeddings(m));
    expect(out.rows).toBe(5);
    expect(out.cols).toBe(7);
    for (let i = 0; i < m.data.length; i++) {
      expect(out.data[i]).toBe(Math.fround(m.data[i]));
    }
  });

  it("writes the exact header layout", () => {
    const buf = encodeEmbeddings({ rows: 2, cols: 3, data: new Float64Array(6) });
    expect(buf.subarray(0, 4).toString("ascii")).toBe("ZSML");
    expect(buf.readUInt16LE(4)).toBe(1);
    expect(buf.readUInt8(6)).toBe(0);
    expect(Number(buf.readBigUInt64LE(7))).toBe(2);
    expect(Number(buf.readBigUInt64LE(15))).toBe(3);
    expect(buf.length).toBe(23 + 24);
  });

  it("rejects non-finite values", () => {
    const m: Matrix = { rows: 1, cols: 1, data: new Float64Array([Infinity]) };
    expect(() => encodeEmbeddings(m)).toThrow(/non-finite/);
  });

  it("atomic write leaves no temp files behind", () => {
    const target = path.join(tmp, "atomic.zsml");
    writeEmbeddings(target, randomMatrix(3, 3));
    expect(fs.existsSync(target)).toBe(true);
    const leftovers = fs.readdirSync(tmp).filter((f) => f.includes(".tmp"));
    expect(leftovers).toEqual([]);
  });

  it("normalizes rows to unit length", () => {
    const m = randomMatrix(4, 9, 100);
    l2NormalizeRows(m);
    for (let r = 0; r < m.rows; r++) {
      let sq = 0;
      for (let c = 0; c < m.cols; c++) sq += m.data[r * m.cols + c] ** 2;
      expect(Math.abs(Math.sqrt(sq) - 1)).toBeLessThan(1e-12);
    }
  });

  it("rejects zero rows", () => {
    const m: Matrix = { rows: 1, cols: 4, data: new Float64Array(4) };
    expect(() => l2NormalizeRows(m)).toThrow(/zero norm/);
  });
});
