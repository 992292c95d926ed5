import { execFile } from "node:child_process";
import { promises as fs } from "node:fs";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { promisify } from "node:util";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { makeVoice } from "./fixtures.js";

const run = promisify(execFile);
const HERE = path.dirname(fileURLToPath(import.meta.url));
const CLI = path.join(HERE, "..", "dist", "cli.js");

let tmp: string;

beforeAll(async () => {
  tmp = await fs.mkdtemp(path.join(os.tmpdir(), "extractor-cli-"));
});

afterAll(async () => {
  await fs.rm(tmp, { recursive: true, force: true });
});

async function cli(...args: string[]): Promise<{ code: number; stdout: string; stderr: string }> {
  try {
    const { stdout, stderr } = await run(process.execPath, [CLI, ...args]);
    return { code: 0, stdout, stderr };
  } catch (err) {
    const e = err as { code?: number; stdout?: string; stderr?: string };
    return { code: e.code ?? 1, stdout: e.stdout ?? "", stderr: e.stderr ?? "" };
  }
}

describe("extractor CLI", () => {
  it("warns and exits 0 on an empty audio directory", async () => {
    const audio = path.join(tmp, "empty");
    await fs.mkdir(audio);
    const res = await cli("extract-features", "--audio-dir", audio, "--out-dir", path.join(tmp, "o1"), "--layers", "5");
    expect(res.code).toBe(0);
    expect(res.stderr).toMatch(/no audio files found/);
    expect(await fs.readdir(path.join(tmp, "o1"))).toEqual([]);
  });

  it("rejects layer 24 before touching any audio", async () => {
    const audio = path.join(tmp, "never-read");
    // intentionally not created: bounds must fail first
    const res = await cli("extract-features", "--audio-dir", audio, "--out-dir", path.join(tmp, "o2"), "--layers", "24");
    expect(res.code).toBe(1);
    expect(res.stderr).toMatch(/layer 24 out of range/);
  });

  it("lists unreadable audio at the end and fails the job", async () => {
    const audio = path.join(tmp, "mixed");
    await fs.mkdir(audio);
    await fs.writeFile(path.join(audio, "good.wav"), makeVoice(120, 0.8));
    await fs.writeFile(path.join(audio, "bad.wav"), Buffer.from("not audio"));
    const res = await cli("extract-speaker-embeddings", "--audio-dir", audio, "--out-dir", path.join(tmp, "o3"));
    expect(res.code).toBe(1);
    expect(res.stderr).toMatch(/1 file\(s\) could not be read/);
    expect(res.stderr).toMatch(/bad\.wav/);
    // readable files are still processed
    expect(await fs.readdir(path.join(tmp, "o3"))).toContain("good.emb");
  });

  it("errors on utterance id collisions across subdirectories", async () => {
    const audio = path.join(tmp, "collide");
    await fs.mkdir(path.join(audio, "a"), { recursive: true });
    await fs.mkdir(path.join(audio, "b"), { recursive: true });
    await fs.writeFile(path.join(audio, "a", "utt.wav"), makeVoice(120, 0.8));
    await fs.writeFile(path.join(audio, "b", "utt.wav"), makeVoice(130, 0.9));
    const res = await cli("extract-features", "--audio-dir", audio, "--out-dir", path.join(tmp, "o4"), "--layers", "0");
    expect(res.code).toBe(1);
    expect(res.stderr).toMatch(/collision/);
  });
});
