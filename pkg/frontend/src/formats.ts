/**
 * Binary writers for the downstream toolkit's file formats (little-endian):
 *
 *   feature file:   "W2VF" | u32 version=1 | u32 T | u32 D | u32 layer | T*D f32
 *   embedding file: "EMB1" | u32 version=1 | u32 dim | dim f32
 */

export const FORMAT_VERSION = 1;

export function encodeFeatureFile(layer: number, frames: Float32Array[], dim: number): Buffer {
  const t = frames.length;
  if (t < 1) throw new Error("feature file needs at least one frame");
  const buffer = Buffer.alloc(20 + 4 * t * dim);
  buffer.write("W2VF", 0, "ascii");
  buffer.writeUInt32LE(FORMAT_VERSION, 4);
  buffer.writeUInt32LE(t, 8);
  buffer.writeUInt32LE(dim, 12);
  buffer.writeUInt32LE(layer, 16);
  let offset = 20;
  for (const frame of frames) {
    if (frame.length !== dim) {
      throw new Error(`frame width ${frame.length} != declared dim ${dim}`);
    }
    for (let j = 0; j < dim; j++) {
      buffer.writeFloatLE(frame[j], offset);
      offset += 4;
    }
  }
  return buffer;
}

export function encodeEmbeddingFile(vector: Float32Array): Buffer {
  const buffer = Buffer.alloc(12 + 4 * vector.length);
  buffer.write("EMB1", 0, "ascii");
  buffer.writeUInt32LE(FORMAT_VERSION, 4);
  buffer.writeUInt32LE(vector.length, 8);
  for (let j = 0; j < vector.length; j++) {
    buffer.writeFloatLE(vector[j], 12 + 4 * j);
  }
  return buffer;
}

export function featureFileName(uttId: string, layer: number): string {
  return `${uttId}.layer${layer}.w2vf`;
}
