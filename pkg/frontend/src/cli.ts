#!/usr/bin/env node
/**
 * sasv-extractor: dump per-layer frame features (W2VF) and speaker
 * embeddings (EMB1) for every .wav file under an audio directory.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import {
  extractSslFeatures,
  extractSpeakerEmbeddings,
  validateLayers,
  type JobResult,
} from "./extract.js";

function report(result: JobResult): number {
  console.log(`wrote ${result.written.length} file(s)`);
  if (result.written.length === 0 && result.failures.length === 0) {
    console.warn("warning: no audio files found, nothing written");
    return 0;
  }
  if (result.failures.length > 0) {
    console.error(`${result.failures.length} file(s) could not be read:`);
    for (const failure of result.failures) {
      console.error(`  ${failure.file}: ${failure.reason}`);
    }
    return 1;
  }
  return 0;
}

function parseLayers(raw: (string | number)[]): number[] {
  const layers: number[] = [];
  for (const piece of raw) {
    for (const token of String(piece).split(",")) {
      if (token.trim() === "") continue;
      layers.push(Number(token));
    }
  }
  if (layers.length === 0) throw new Error("at least one --layers index is required");
  return layers;
}

export async function main(argv: string[]): Promise<number> {
  let exitCode = 0;
  await yargs(argv)
    .scriptName("sasv-extractor")
    .command(
      "extract-features",
      "write one W2VF feature file per (utterance, layer)",
      (cmd) =>
        cmd
          .option("audio-dir", { type: "string", demandOption: true })
          .option("out-dir", { type: "string", demandOption: true })
          .option("layers", { type: "array", demandOption: true, describe: "0-based layer indices" })
          .option("model", { type: "string", default: "xlsr53" }),
      async (args) => {
        const layers = parseLayers(args.layers as (string | number)[]);
        validateLayers(layers); // bounds are checked before any audio is touched
        const result = await extractSslFeatures({
          audioDir: args.audioDir as string,
          outDir: args.outDir as string,
          modelId: args.model as string,
          layers,
        });
        exitCode = report(result);
      },
    )
    .command(
      "extract-speaker-embeddings",
      "write one EMB1 embedding file per utterance",
      (cmd) =>
        cmd
          .option("audio-dir", { type: "string", demandOption: true })
          .option("out-dir", { type: "string", demandOption: true })
          .option("model", { type: "string", default: "ecapa" }),
      async (args) => {
        const result = await extractSpeakerEmbeddings({
          audioDir: args.audioDir as string,
          outDir: args.outDir as string,
          modelId: args.model as string,
          layers: [],
        });
        exitCode = report(result);
      },
    )
    .demandCommand(1)
    .strict()
    .fail((message, err) => {
      console.error(`error: ${err ? err.message : message}`);
      process.exit(1);
    })
    .parseAsync();
  return exitCode;
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (invokedDirectly) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
