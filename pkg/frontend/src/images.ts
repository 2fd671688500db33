/**
 * Patch-image loading: PNG files reduced to a fixed grayscale grid.
 *
 * Average-pooling onto a gridSize x gridSize luminance grid keeps the
 * encoder input size independent of the source resolution.
 */

import * as fs from "node:fs";
import { PNG } from "pngjs";

export const GRID_SIZE = 16;

export function pngToGrid(buffer: Buffer, gridSize: number = GRID_SIZE): Float64Array {
  let png: PNG;
  try {
    png = PNG.sync.read(buffer);
  } catch (err) {
    throw new Error(`unreadable image: ${(err as Error).message}`);
  }
  const { width, height, data } = png;
  const grid = new Float64Array(gridSize * gridSize);
  const counts = new Float64Array(gridSize * gridSize);
  for (let y = 0; y < height; y++) {
    const gy = Math.min(gridSize - 1, Math.floor((y * gridSize) / height));
    for (let x = 0; x < width; x++) {
      const gx = Math.min(gridSize - 1, Math.floor((x * gridSize) / width));
      const p = (y * width + x) * 4;
      const lum = (0.299 * data[p] + 0.587 * data[p + 1] + 0.114 * data[p + 2]) / 255;
      grid[gy * gridSize + gx] += lum;
      counts[gy * gridSize + gx] += 1;
    }
  }
  for (let i = 0; i < grid.length; i++) {
    grid[i] = counts[i] > 0 ? grid[i] / counts[i] : 0;
  }
  return grid;
}

export function loadPatchGrid(path: string, gridSize: number = GRID_SIZE): Float64Array {
  let buffer: Buffer;
  try {
    buffer = fs.readFileSync(path);
  } catch (err) {
    throw new Error(`unreadable image ${path}: ${(err as Error).message}`);
  }
  return pngToGrid(buffer, gridSize);
}
