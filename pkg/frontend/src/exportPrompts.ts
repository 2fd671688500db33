/**
 * Prompt export: a template file plus class names -> per-class template
 * embeddings in the primary format, with the index JSON the `zsmil ensemble`
 * command consumes. The exporter never reduces templates to prototypes
 * itself; that single implementation lives in the primary component.
 *
 * Template file: plain text, one template per line, each containing a `{}`
 * placeholder for the class name. Blank lines and `#` comments are skipped.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import type { Encoder } from "./encoder.js";
import { writeEmbeddings, writeFileAtomic, type Matrix } from "./format.js";

export interface ExportPromptsOptions {
  encoder: Encoder;
  templatesFile: string;
  classNames: string[];
  outDir: string;
  indexName?: string;
}

export function parseTemplates(text: string): string[] {
  const templates = text
    .split(/\r?\n/)
    .map((line) => line.trim())
    .filter((line) => line.length > 0 && !line.startsWith("#"));
  if (templates.length === 0) {
    throw new Error("template file has no templates");
  }
  for (const t of templates) {
    if (!t.includes("{}")) {
      throw new Error(`template missing {} placeholder: ${JSON.stringify(t)}`);
    }
  }
  return templates;
}

export function exportPrompts(options: ExportPromptsOptions): string {
  const { encoder, classNames, outDir } = options;
  if (classNames.length < 2) {
    throw new Error("need at least two class names");
  }
  if (new Set(classNames).size !== classNames.length) {
    throw new Error("class names must be unique");
  }
  const templates = parseTemplates(fs.readFileSync(options.templatesFile, "utf-8"));
  fs.mkdirSync(outDir, { recursive: true });
  const index: { schema_version: number; model: string; classes: Array<object> } = {
    schema_version: 1,
    model: encoder.modelId,
    classes: [],
  };
  for (const className of classNames) {
    const texts = templates.map((t) => t.replaceAll("{}", className));
    const rows = encoder.encodeTexts(texts);
    const matrix: Matrix = {
      rows: rows.length,
      cols: encoder.dim,
      data: new Float64Array(rows.length * encoder.dim),
    };
    rows.forEach((row, r) => matrix.data.set(row, r * encoder.dim));
    const fileName = `templates_${className.replace(/[^A-Za-z0-9_-]+/g, "_")}.zsml`;
    writeEmbeddings(path.join(outDir, fileName), matrix);
    index.classes.push({ class_name: className, n_templates: rows.length, path: fileName });
  }
  const indexPath = path.join(outDir, options.indexName ?? "templates.json");
  writeFileAtomic(indexPath, JSON.stringify(index, null, 2) + "\n");
  return indexPath;
}
