import { encodeWavPcm16 } from "../src/wav.js";

/**
 * Synthetic voiced clip: harmonic stack on a fundamental with a fixed
 * spectral envelope per "speaker", plus a little deterministic jitter.
 */
export function makeVoice(f0: number, envelopeTilt: number, seconds = 1.0, sampleRate = 16000): Buffer {
  const n = Math.round(seconds * sampleRate);
  const samples = new Float64Array(n);
  for (let h = 1; h <= 12; h++) {
    const freq = f0 * h;
    if (freq >= sampleRate / 2) break;
    const amp = Math.pow(h, -envelopeTilt);
    const phase = (h * 2.399963) % (2 * Math.PI);
    for (let i = 0; i < n; i++) {
      samples[i] += amp * Math.sin((2 * Math.PI * freq * i) / sampleRate + phase);
    }
  }
  let peak = 0;
  for (let i = 0; i < n; i++) peak = Math.max(peak, Math.abs(samples[i]));
  for (let i = 0; i < n; i++) samples[i] = (0.8 * samples[i]) / peak;
  return encodeWavPcm16(samples, sampleRate);
}
