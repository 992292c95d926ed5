/**
 * Batch extraction jobs: walk an audio directory, run the model over every
 * clip, and write one output file per (utterance, layer) or per utterance.
 */

import { promises as fs } from "node:fs";
import path from "node:path";

import { decodeWav } from "./wav.js";
import { encodeFeatureFile, encodeEmbeddingFile, featureFileName } from "./formats.js";
import {
  extractLayerFeatures,
  extractSpeakerEmbedding,
  FEATURE_DIM,
  TRANSFORMER_BLOCKS,
} from "./model.js";

export interface ExtractionJob {
  audioDir: string;
  outDir: string;
  modelId: string;
  layers: number[];
}

export interface JobResult {
  written: string[];
  failures: { file: string; reason: string }[];
}

export function validateLayers(layers: number[]): void {
  for (const layer of layers) {
    if (!Number.isInteger(layer) || layer < 0 || layer >= TRANSFORMER_BLOCKS) {
      throw new Error(
        `layer ${layer} out of range for a ${TRANSFORMER_BLOCKS}-block model (valid: 0-${TRANSFORMER_BLOCKS - 1})`,
      );
    }
  }
}

/** Recursively list .wav files; duplicate filename stems are an error. */
export async function listAudioFiles(audioDir: string): Promise<{ stem: string; file: string }[]> {
  const found: { stem: string; file: string }[] = [];
  async function walk(dir: string): Promise<void> {
    const entries = await fs.readdir(dir, { withFileTypes: true });
    for (const entry of entries.sort((a, b) => a.name.localeCompare(b.name))) {
      const full = path.join(dir, entry.name);
      if (entry.isDirectory()) {
        await walk(full);
      } else if (entry.name.toLowerCase().endsWith(".wav")) {
        found.push({ stem: entry.name.slice(0, entry.name.length - 4), file: full });
      }
    }
  }
  await walk(audioDir);
  const seen = new Map<string, string>();
  for (const item of found) {
    const prior = seen.get(item.stem);
    if (prior !== undefined) {
      throw new Error(`utterance id collision: ${prior} and ${item.file} share stem "${item.stem}"`);
    }
    seen.set(item.stem, item.file);
  }
  return found;
}

async function runJob(
  job: ExtractionJob,
  emit: (stem: string, samples: Float64Array, sampleRate: number) => Promise<string[]>,
): Promise<JobResult> {
  const files = await listAudioFiles(job.audioDir);
  await fs.mkdir(job.outDir, { recursive: true });
  const result: JobResult = { written: [], failures: [] };
  for (const { stem, file } of files) {
    let clip;
    try {
      clip = decodeWav(await fs.readFile(file));
    } catch (err) {
      result.failures.push({ file, reason: err instanceof Error ? err.message : String(err) });
      continue;
    }
    result.written.push(...(await emit(stem, clip.samples, clip.sampleRate)));
  }
  return result;
}

export async function extractSslFeatures(job: ExtractionJob): Promise<JobResult> {
  validateLayers(job.layers);
  return runJob(job, async (stem, samples, sampleRate) => {
    const written: string[] = [];
    for (const layer of job.layers) {
      const frames = extractLayerFeatures(samples, sampleRate, job.modelId, layer);
      const outPath = path.join(job.outDir, featureFileName(stem, layer));
      await fs.writeFile(outPath, encodeFeatureFile(layer, frames, FEATURE_DIM));
      written.push(outPath);
    }
    return written;
  });
}

export async function extractSpeakerEmbeddings(job: ExtractionJob): Promise<JobResult> {
  return runJob(job, async (stem, samples, sampleRate) => {
    const embedding = extractSpeakerEmbedding(samples, sampleRate, job.modelId);
    const outPath = path.join(job.outDir, `${stem}.emb`);
    await fs.writeFile(outPath, encodeEmbeddingFile(embedding));
    return [outPath];
  });
}
