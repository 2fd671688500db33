/**
 * Encoder abstraction and the built-in deterministic model.
 *
 * A model id selects the encoder pair (image + text). The built-in
 * `seeded:<dim>[:<seed>]` model is a fixed random-projection encoder: image
 * patches are reduced to a pixel grid and texts to hashed character
 * trigrams, then projected into the embedding space with a seed-determined
 * gaussian matrix and l2-normalized. It is fully deterministic, makes the
 * exporter testable offline, and exercises every contract a pretrained
 * checkpoint would (dimensionality, normalization, file formats). Real
 * encoders plug in by implementing `Encoder` and registering a parser.
 */

export interface Encoder {
  readonly modelId: string;
  readonly dim: number;
  encodeImagePatches(grids: Float64Array[], gridSize: number): Float64Array[];
  encodeTexts(texts: string[]): Float64Array[];
}

/** deterministic 32-bit PRNG (mulberry32) */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussianMatrix(rows: number, cols: number, seed: number): Float64Array {
  const rand = mulberry32(seed);
  const out = new Float64Array(rows * cols);
  for (let i = 0; i < out.length; i += 2) {
    // Box-Muller; u1 guarded away from zero
    const u1 = Math.max(rand(), 1e-12);
    const u2 = rand();
    const r = Math.sqrt(-2 * Math.log(u1));
    out[i] = r * Math.cos(2 * Math.PI * u2);
    if (i + 1 < out.length) {
      out[i + 1] = r * Math.sin(2 * Math.PI * u2);
    }
  }
  return out;
}

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

function project(features: Float64Array, proj: Float64Array, dim: number): Float64Array {
  const out = new Float64Array(dim);
  const inDim = features.length;
  for (let k = 0; k < inDim; k++) {
    const f = features[k];
    if (f === 0) continue;
    const base = k * dim;
    for (let j = 0; j < dim; j++) {
      out[j] += f * proj[base + j];
    }
  }
  let sq = 0;
  for (let j = 0; j < dim; j++) sq += out[j] * out[j];
  const norm = Math.sqrt(sq);
  if (norm <= 1e-12) {
    throw new Error("degenerate embedding (zero norm)");
  }
  for (let j = 0; j < dim; j++) out[j] /= norm;
  return out;
}

const TEXT_BUCKETS = 512;

export class SeededProjectionEncoder implements Encoder {
  readonly modelId: string;
  readonly dim: number;
  private imageProj: Float64Array | null = null;
  private imageProjInDim = 0;
  private readonly textProj: Float64Array;
  private readonly seed: number;

  constructor(dim: number, seed: number) {
    if (!Number.isInteger(dim) || dim < 2) {
      throw new Error(`embedding dim must be an integer >= 2, got ${dim}`);
    }
    this.dim = dim;
    this.seed = seed;
    this.modelId = `seeded:${dim}:${seed}`;
    this.textProj = gaussianMatrix(TEXT_BUCKETS, dim, seed ^ 0x7e57);
  }

  encodeImagePatches(grids: Float64Array[], gridSize: number): Float64Array[] {
    const inDim = gridSize * gridSize + 1; // constant bias: blank patches stay encodable
    if (this.imageProj === null || this.imageProjInDim !== inDim) {
      this.imageProj = gaussianMatrix(inDim, this.dim, this.seed ^ 0x1a6e);
      this.imageProjInDim = inDim;
    }
    return grids.map((grid) => {
      if (grid.length !== gridSize * gridSize) {
        throw new Error(`grid has ${grid.length} cells, expected ${gridSize * gridSize}`);
      }
      const features = new Float64Array(inDim);
      features[0] = 1.0;
      features.set(grid, 1);
      return project(features, this.imageProj!, this.dim);
    });
  }

  encodeTexts(texts: string[]): Float64Array[] {
    return texts.map((text) => {
      const features = new Float64Array(TEXT_BUCKETS);
      const padded = `${text.toLowerCase()}`;
      for (let i = 0; i + 3 <= padded.length; i++) {
        features[fnv1a(padded.slice(i, i + 3)) % TEXT_BUCKETS] += 1;
      }
      if (padded.length < 3) features[0] += 1;
      return project(features, this.textProj, this.dim);
    });
  }
}

export function loadEncoder(modelId: string): Encoder {
  const parts = modelId.split(":");
  if (parts[0] === "seeded") {
    const dim = parts.length > 1 ? Number(parts[1]) : 64;
    const seed = parts.length > 2 ? Number(parts[2]) : 1;
    if (!Number.isFinite(dim) || !Number.isFinite(seed)) {
      throw new Error(`cannot load model ${modelId!}: bad dim/seed`);
    }
    return new SeededProjectionEncoder(dim, seed);
  }
  throw new Error(
    `cannot load model ${modelId}: unknown family ${parts[0]!} (built-in: seeded:<dim>[:<seed>])`,
  );
}
