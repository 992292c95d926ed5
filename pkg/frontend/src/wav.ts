/**
 * Minimal RIFF/WAVE reader: PCM16 and IEEE float32, any channel count
 * (channels are averaged down to mono).
 */

export interface AudioClip {
  sampleRate: number;
  samples: Float64Array;
}

export class WavError extends Error {}

export function decodeWav(buffer: Buffer): AudioClip {
  if (buffer.length < 44) {
    throw new WavError(`file too short for a WAV header (${buffer.length} bytes)`);
  }
  if (buffer.toString("ascii", 0, 4) !== "RIFF" || buffer.toString("ascii", 8, 12) !== "WAVE") {
    throw new WavError("not a RIFF/WAVE file");
  }

  let fmt: { format: number; channels: number; sampleRate: number; bitsPerSample: number } | null = null;
  let data: Buffer | null = null;

  let offset = 12;
  while (offset + 8 <= buffer.length) {
    const chunkId = buffer.toString("ascii", offset, offset + 4);
    const chunkSize = buffer.readUInt32LE(offset + 4);
    const body = offset + 8;
    if (body + chunkSize > buffer.length) {
      throw new WavError(`chunk ${chunkId} overruns the file`);
    }
    if (chunkId === "fmt ") {
      fmt = {
        format: buffer.readUInt16LE(body),
        channels: buffer.readUInt16LE(body + 2),
        sampleRate: buffer.readUInt32LE(body + 4),
        bitsPerSample: buffer.readUInt16LE(body + 14),
      };
    } else if (chunkId === "data") {
      data = buffer.subarray(body, body + chunkSize);
    }
    offset = body + chunkSize + (chunkSize % 2); // chunks are word-aligned
  }

  if (!fmt) throw new WavError("missing fmt chunk");
  if (!data) throw new WavError("missing data chunk");
  if (fmt.channels < 1) throw new WavError("zero channels");

  const { format, channels, sampleRate, bitsPerSample } = fmt;
  let frames: number;
  let read: (frame: number, channel: number) => number;

  if (format === 1 && bitsPerSample === 16) {
    frames = Math.floor(data.length / (2 * channels));
    read = (f, c) => data!.readInt16LE(2 * (f * channels + c)) / 32768;
  } else if (format === 3 && bitsPerSample === 32) {
    frames = Math.floor(data.length / (4 * channels));
    read = (f, c) => data!.readFloatLE(4 * (f * channels + c));
  } else {
    throw new WavError(`unsupported encoding: format ${format}, ${bitsPerSample}-bit`);
  }

  const samples = new Float64Array(frames);
  for (let f = 0; f < frames; f++) {
    let acc = 0;
    for (let c = 0; c < channels; c++) acc += read(f, c);
    samples[f] = acc / channels;
  }
  return { sampleRate, samples };
}

/** PCM16 mono encoder, used by the test fixtures. */
export function encodeWavPcm16(samples: Float64Array | number[], sampleRate: number): Buffer {
  const n = samples.length;
  const buffer = Buffer.alloc(44 + 2 * n);
  buffer.write("RIFF", 0, "ascii");
  buffer.writeUInt32LE(36 + 2 * n, 4);
  buffer.write("WAVE", 8, "ascii");
  buffer.write("fmt ", 12, "ascii");
  buffer.writeUInt32LE(16, 16);
  buffer.writeUInt16LE(1, 20); // PCM
  buffer.writeUInt16LE(1, 22); // mono
  buffer.writeUInt32LE(sampleRate, 24);
  buffer.writeUInt32LE(sampleRate * 2, 28);
  buffer.writeUInt16LE(2, 32);
  buffer.writeUInt16LE(16, 34);
  buffer.write("data", 36, "ascii");
  buffer.writeUInt32LE(2 * n, 40);
  for (let i = 0; i < n; i++) {
    const clamped = Math.max(-1, Math.min(1, samples[i]));
    buffer.writeInt16LE(Math.round(clamped * 32767), 44 + 2 * i);
  }
  return buffer;
}
