#!/usr/bin/env node
/**
 * zsmil-export: bridge from encoders to the zsmil dataset formats.
 *
 *   export-patches  patch images -> embeddings/<slide>.zsml + manifest lines
 *   export-prompts  templates + class names -> per-class template embeddings
 *
 * The built-in model family `seeded:<dim>[:<seed>]` is a deterministic
 * projection encoder; real checkpoints plug in through the Encoder
 * interface without touching the file formats.
 */

import * as fs from "node:fs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { loadEncoder } from "./encoder.js";
import { exportPatches } from "./exportPatches.js";
import { exportPrompts } from "./exportPrompts.js";

export async function main(argv: string[]): Promise<number> {
  try {
    await yargs(argv)
      .scriptName("zsmil-export")
      .strict()
      .demandCommand(1)
      .command(
        "export-patches",
        "encode patch images into per-slide embedding files",
        (y) =>
          y
            .option("model", { type: "string", default: "seeded:64:1" })
            .option("input", { type: "string", demandOption: true,
                               describe: "slide folder, or folder of slide folders" })
            .option("out", { type: "string", demandOption: true })
            .option("split", { type: "string", default: "test",
                               choices: ["train_pool", "val", "test"] })
            .option("label", { type: "number", default: 0 })
            .option("labels", { type: "string",
                                describe: "JSON file mapping slide_id to label" }),
        (args) => {
          const labels = args.labels
            ? (JSON.parse(fs.readFileSync(args.labels, "utf-8")) as Record<string, number>)
            : undefined;
          const slides = exportPatches({
            encoder: loadEncoder(args.model),
            inputDir: args.input,
            outDir: args.out,
            split: args.split,
            label: args.label,
            labels,
          });
          const total = slides.reduce((acc, s) => acc + s.nPatches, 0);
          console.log(`exported ${slides.length} slide(s), ${total} patches -> ${args.out}`);
        },
      )
      .command(
        "export-prompts",
        "encode prompt templates per class into template embeddings",
        (y) =>
          y
            .option("model", { type: "string", default: "seeded:64:1" })
            .option("templates", { type: "string", demandOption: true,
                                   describe: "text file, one template per line with {}" })
            .option("class-names", { type: "string", demandOption: true,
                                     describe: "comma-separated class names" })
            .option("out", { type: "string", demandOption: true }),
        (args) => {
          const indexPath = exportPrompts({
            encoder: loadEncoder(args.model),
            templatesFile: args.templates,
            classNames: args["class-names"].split(",").map((s: string) => s.trim()),
            outDir: args.out,
          });
          console.log(`wrote template index ${indexPath}`);
        },
      )
      .fail((msg, err) => {
        throw err ?? new Error(msg);
      })
      .parseAsync();
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

const isDirectRun =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (isDirectRun) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
