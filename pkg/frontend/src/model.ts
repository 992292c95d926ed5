/**
 * Deterministic feature and speaker-embedding models.
 *
 * Real deployments plug a pretrained 24-block speech encoder and a pretrained
 * speaker network in here. This built-in model keeps the same contract —
 * per-layer 1024-dim frame features at the encoder frame rate and 192-dim
 * utterance embeddings — computed from windowed spectral analysis followed by
 * a projection seeded from (model id, layer index). Output is a pure function
 * of the audio bytes, the model id, and the layer index.
 */

export const FEATURE_DIM = 1024;
export const SPEAKER_DIM = 192;
export const TRANSFORMER_BLOCKS = 24;

const BANDS = 64;

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/** mulberry32: small deterministic PRNG for projection matrices. */
function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function projectionMatrix(seedText: string, rows: number, cols: number): Float64Array {
  const rand = mulberry32(fnv1a(seedText));
  const scale = Math.sqrt(3.0 / cols);
  const matrix = new Float64Array(rows * cols);
  for (let i = 0; i < matrix.length; i++) {
    matrix[i] = (2 * rand() - 1) * scale;
  }
  return matrix;
}

/** Log band energies of one Hann-windowed frame via direct DFT bins. */
function logBandEnergies(samples: Float64Array, start: number, win: number): Float64Array {
  const out = new Float64Array(BANDS);
  const step = Math.max(1, Math.floor((win / 2 - 1) / BANDS));
  for (let b = 0; b < BANDS; b++) {
    const k = 1 + b * step;
    const omega = (2 * Math.PI * k) / win;
    let re = 0;
    let im = 0;
    for (let n = 0; n < win; n++) {
      const idx = start + n;
      const x = idx < samples.length ? samples[idx] : 0;
      const windowed = x * (0.5 - 0.5 * Math.cos((2 * Math.PI * n) / win));
      re += windowed * Math.cos(omega * n);
      im -= windowed * Math.sin(omega * n);
    }
    out[b] = Math.log(1e-9 + re * re + im * im);
  }
  return out;
}

function frameGrid(nSamples: number, win: number, hop: number): number[] {
  const starts: number[] = [];
  for (let s = 0; s + win <= nSamples; s += hop) starts.push(s);
  if (starts.length === 0) starts.push(0); // short clip: single zero-padded frame
  return starts;
}

/**
 * Per-layer frame features. Window/hop follow the encoder frame rate
 * (25 ms window, 20 ms hop: 49 frames for 1 s of 16 kHz audio).
 */
export function extractLayerFeatures(
  samples: Float64Array,
  sampleRate: number,
  modelId: string,
  layer: number,
): Float32Array[] {
  if (!Number.isInteger(layer) || layer < 0 || layer >= TRANSFORMER_BLOCKS) {
    throw new Error(
      `layer ${layer} out of range for a ${TRANSFORMER_BLOCKS}-block model (0-based)`,
    );
  }
  const win = Math.round(sampleRate / 40);
  const hop = Math.round(sampleRate / 50);
  const projection = projectionMatrix(`${modelId}:layer${layer}`, FEATURE_DIM, BANDS);
  const frames: Float32Array[] = [];
  for (const start of frameGrid(samples.length, win, hop)) {
    const bands = logBandEnergies(samples, start, win);
    const feature = new Float32Array(FEATURE_DIM);
    for (let i = 0; i < FEATURE_DIM; i++) {
      let acc = 0;
      const row = i * BANDS;
      for (let j = 0; j < BANDS; j++) acc += projection[row + j] * bands[j];
      feature[i] = Math.tanh(acc);
    }
    frames.push(feature);
  }
  return frames;
}

/**
 * Utterance-level speaker embedding: long-term mean and deviation of the
 * band energies, projected to the embedding space.
 */
export function extractSpeakerEmbedding(
  samples: Float64Array,
  sampleRate: number,
  modelId: string,
): Float32Array {
  const win = Math.round(sampleRate / 40);
  const hop = Math.round(sampleRate / 100); // denser hop for stable statistics
  const starts = frameGrid(samples.length, win, hop);
  const mean = new Float64Array(BANDS);
  const meanSq = new Float64Array(BANDS);
  for (const start of starts) {
    const bands = logBandEnergies(samples, start, win);
    for (let j = 0; j < BANDS; j++) {
      mean[j] += bands[j];
      meanSq[j] += bands[j] * bands[j];
    }
  }
  const stats = new Float64Array(2 * BANDS);
  for (let j = 0; j < BANDS; j++) {
    mean[j] /= starts.length;
    meanSq[j] /= starts.length;
    stats[j] = mean[j];
    stats[BANDS + j] = Math.sqrt(Math.max(meanSq[j] - mean[j] * mean[j], 0));
  }
  const projection = projectionMatrix(`${modelId}:speaker`, SPEAKER_DIM, 2 * BANDS);
  const embedding = new Float32Array(SPEAKER_DIM);
  for (let i = 0; i < SPEAKER_DIM; i++) {
    let acc = 0;
    const row = i * 2 * BANDS;
    for (let j = 0; j < 2 * BANDS; j++) acc += projection[row + j] * stats[j];
    embedding[i] = Math.tanh(acc / 4);
  }
  return embedding;
}
