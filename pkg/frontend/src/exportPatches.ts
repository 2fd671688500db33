/**
 * Slide export: patch images -> one embedding file per slide, plus manifest
 * entries appended to the dataset's manifest.jsonl.
 *
 * The input directory either contains one subdirectory per slide (each
 * holding that slide's patch images) or is itself a single slide's patch
 * folder. Rows are l2-normalized before the float32 write, matching the
 * convention of encoder-exported features.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import type { Encoder } from "./encoder.js";
import { l2NormalizeRows, writeEmbeddings, writeFileAtomic, type Matrix } from "./format.js";
import { GRID_SIZE, loadPatchGrid } from "./images.js";

export interface SlideExport {
  slideId: string;
  label: number;
  split: string;
  nPatches: number;
  relPath: string;
}

export interface ExportPatchesOptions {
  encoder: Encoder;
  inputDir: string;
  outDir: string;
  split: string;
  /** label applied to every slide unless labels[slideId] overrides it */
  label: number;
  labels?: Record<string, number>;
}

const IMAGE_EXT = new Set([".png"]);

function listPatchFiles(dir: string): string[] {
  return fs
    .readdirSync(dir)
    .filter((name) => IMAGE_EXT.has(path.extname(name).toLowerCase()))
    .sort()
    .map((name) => path.join(dir, name));
}

function listSlideDirs(inputDir: string): Array<{ slideId: string; dir: string }> {
  const subdirs = fs
    .readdirSync(inputDir, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort();
  if (subdirs.length > 0) {
    return subdirs.map((name) => ({ slideId: name, dir: path.join(inputDir, name) }));
  }
  return [{ slideId: path.basename(inputDir), dir: inputDir }];
}

export function exportSlide(
  encoder: Encoder,
  slideId: string,
  patchFiles: string[],
  outPath: string,
): Matrix {
  if (patchFiles.length === 0) {
    throw new Error(`slide ${slideId}: no patch images found`);
  }
  const grids = patchFiles.map((file) => loadPatchGrid(file, GRID_SIZE));
  const rows = encoder.encodeImagePatches(grids, GRID_SIZE);
  const matrix: Matrix = {
    rows: rows.length,
    cols: encoder.dim,
    data: new Float64Array(rows.length * encoder.dim),
  };
  rows.forEach((row, r) => matrix.data.set(row, r * encoder.dim));
  l2NormalizeRows(matrix);
  writeEmbeddings(outPath, matrix);
  return matrix;
}

export function exportPatches(options: ExportPatchesOptions): SlideExport[] {
  const { encoder, inputDir, outDir } = options;
  if (!fs.existsSync(inputDir)) {
    throw new Error(`input directory not found: ${inputDir}`);
  }
  fs.mkdirSync(path.join(outDir, "embeddings"), { recursive: true });
  const results: SlideExport[] = [];
  for (const { slideId, dir } of listSlideDirs(inputDir)) {
    const files = listPatchFiles(dir);
    const relPath = path.posix.join("embeddings", `${slideId}.zsml`);
    const matrix = exportSlide(encoder, slideId, files, path.join(outDir, relPath));
    results.push({
      slideId,
      label: options.labels?.[slideId] ?? options.label,
      split: options.split,
      nPatches: matrix.rows,
      relPath,
    });
  }
  appendManifest(path.join(outDir, "manifest.jsonl"), results, encoder.modelId);
  return results;
}

function appendManifest(manifestPath: string, slides: SlideExport[], modelId: string): void {
  const lines = slides
    .map((s) =>
      JSON.stringify({
        label: s.label,
        model: modelId,
        n_patches: s.nPatches,
        path: s.relPath,
        slide_id: s.slideId,
        split: s.split,
      }),
    )
    .join("\n");
  const existing = fs.existsSync(manifestPath)
    ? fs.readFileSync(manifestPath, "utf-8")
    : "";
  const payload = existing.length > 0 && !existing.endsWith("\n")
    ? `${existing}\n${lines}\n`
    : `${existing}${lines}\n`;
  writeFileAtomic(manifestPath, payload);
}
