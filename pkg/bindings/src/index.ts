/**
 * In-process-style bindings for the depthmix core.
 *
 * Exposes label synthesis, the three sparse samplers, and the training
 * loss to JS/TS training loops as typed-array calls. Every call round
 * trips through the core CLI and its bit-exact file formats in a private
 * temp directory, so binding outputs are identical to what the CLI
 * produces for the same inputs and seed; there is no state shared
 * between calls.
 *
 * Array exchange: depth grids travel as contiguous row-major
 * Float32Array buffers plus Uint8Array validity masks. Reading results
 * back uses a zero-copy view over the file buffer where alignment and
 * scanline order permit (see pfm.ts); otherwise the documented fallback
 * copies once into a fresh buffer. Inputs handed to the core are always
 * serialized (copied) into files.
 */

import { mkdtempSync, mkdirSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { CoreError, coreVersion, runCli } from "./cli.js";
import { decodePfm, encodePfm } from "./pfm.js";
import { encodeGrayPng } from "./png.js";

export { CoreError, coreBinary, coreVersion, runCli } from "./cli.js";
export { decodePfm, encodePfm } from "./pfm.js";
export { encodeGrayPng } from "./png.js";

export const BINDING_VERSION = "0.1.0";

export interface DepthArray {
  width: number;
  height: number;
  /** Row-major float32 depth in meters; entries behind the mask are ignored. */
  values: Float32Array;
  /** 1 = valid, 0 = no data. */
  valid: Uint8Array;
}

export interface SparseResult {
  /** Row-major pixel indices, strictly increasing. */
  indices: Uint32Array;
  /** Depth at each index, bit-identical to the source map. */
  values: Float32Array;
}

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
}

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major 8-bit intensities. */
  pixels: Uint8Array;
}

export type SamplerSpec =
  | { pattern: "uniform"; rho?: number }
  | {
      pattern: "lidar";
      beams: number;
      azimuthBinDeg?: number;
      elevationDeg?: [number, number];
    }
  | { pattern: "features"; points: number; nmsRadius?: number };

export interface Prediction {
  modelId: string;
  depth: DepthArray;
  scaleKind: "relative" | "metric";
}

export interface SynthesizeRequest {
  gt?: DepthArray;
  predictions: Prediction[];
  /** Pipeline global seed; the same value through the CLI reproduces the result. */
  seed: number;
  /** Synthesis knobs mirroring the core config (p_interpolation, relocation, ...). */
  config?: Record<string, unknown>;
  intrinsics?: Intrinsics;
}

export interface SynthesizeResult {
  label: DepthArray;
  provenance: Record<string, unknown>;
}

/** Build a DepthArray from dense values; non-positive or non-finite = invalid. */
export function depthArray(
  values: Float32Array | number[],
  width: number,
  height: number,
): DepthArray {
  const v = values instanceof Float32Array ? values : Float32Array.from(values);
  if (v.length !== width * height) throw new Error("depthArray: size mismatch");
  const valid = new Uint8Array(v.length);
  for (let i = 0; i < v.length; i++) valid[i] = v[i] > 0 && Number.isFinite(v[i]) ? 1 : 0;
  return { width, height, values: v, valid };
}

function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "depthmix-bind-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

function writeDepthFile(path: string, d: DepthArray): void {
  const masked = new Float32Array(d.values.length);
  for (let i = 0; i < d.values.length; i++) masked[i] = d.valid[i] ? d.values[i] : 0;
  writeFileSync(path, encodePfm(masked, d.width, d.height));
}

function readDepthFile(path: string): DepthArray {
  const img = decodePfm(readFileSync(path));
  const valid = new Uint8Array(img.values.length);
  for (let i = 0; i < img.values.length; i++) {
    valid[i] = img.values[i] > 0 && Number.isFinite(img.values[i]) ? 1 : 0;
  }
  return { width: img.width, height: img.height, values: img.values, valid };
}

function sparseFromDepth(d: DepthArray): SparseResult {
  let n = 0;
  for (let i = 0; i < d.valid.length; i++) if (d.valid[i]) n++;
  const indices = new Uint32Array(n);
  const values = new Float32Array(n);
  let k = 0;
  for (let i = 0; i < d.valid.length; i++) {
    if (d.valid[i]) {
      indices[k] = i;
      values[k] = d.values[i];
      k++;
    }
  }
  return { indices, values };
}

/** Synthesize one pseudo label; bit-identical to the CLI for the same seed. */
export function bindSynthesize(req: SynthesizeRequest): SynthesizeResult {
  const source = req.gt ?? req.predictions[0]?.depth;
  if (!source) throw new Error("bindSynthesize: need gt or at least one prediction");
  const { width, height } = source;
  const k = req.intrinsics ?? { fx: width, fy: width, cx: width / 2, cy: height / 2 };

  return withTempDir((dir) => {
    writeFileSync(
      join(dir, "image.png"),
      encodeGrayPng(new Uint8Array(width * height), width, height),
    );
    const entry: Record<string, unknown> = {
      image_path: "image.png",
      intrinsics: k,
      depth_unit: "m",
      predictions: req.predictions.map((p, i) => {
        writeDepthFile(join(dir, `pred${i}.pfm`), p.depth);
        return { model_id: p.modelId, path: `pred${i}.pfm`, scale_kind: p.scaleKind };
      }),
    };
    if (req.gt) {
      writeDepthFile(join(dir, "gt.pfm"), req.gt);
      entry.depth_path = "gt.pfm";
    }
    writeFileSync(
      join(dir, "manifest.json"),
      JSON.stringify({ schema_version: 1, entries: [entry] }),
    );
    writeFileSync(
      join(dir, "config.json"),
      JSON.stringify({
        schema_version: 1,
        synthesis: req.config ?? {},
        samplers: [{ kind: "uniform", rho: 0.001 }],
        n_labels: 1,
        m_sparse: 1,
        global_seed: req.seed,
        output_format: "pfm",
      }),
    );
    const out = join(dir, "out");
    mkdirSync(out);
    runCli([
      "synthesize",
      "--manifest", join(dir, "manifest.json"),
      "--config", join(dir, "config.json"),
      "--out", out,
      "--workers", "1",
    ]);
    const lines = readFileSync(join(out, "index.jsonl"), "utf-8").trim().split("\n");
    if (lines.length < 2) throw new CoreError("synthesis emitted no records", 1);
    const record = JSON.parse(lines[1]) as {
      label_path: string;
      provenance: Record<string, unknown>;
    };
    return {
      label: readDepthFile(join(out, record.label_path)),
      provenance: record.provenance,
    };
  });
}

/** Sub-sample a sparse map; returns parallel (indices, values) arrays. */
export function bindSample(
  depth: DepthArray,
  spec: SamplerSpec,
  seed: number,
  opts: { intrinsics?: Intrinsics; image?: GrayImage } = {},
): SparseResult {
  return withTempDir((dir) => {
    const depthPath = join(dir, "depth.pfm");
    writeDepthFile(depthPath, depth);
    const outPath = join(dir, "sparse.pfm");
    const args = [
      "sample",
      "--depth", depthPath,
      "--pattern", spec.pattern,
      "--seed", String(seed),
      "--out", outPath,
    ];
    if (spec.pattern === "uniform" && spec.rho !== undefined) {
      args.push("--rho", String(spec.rho));
    } else if (spec.pattern === "lidar") {
      const k = opts.intrinsics;
      if (!k) throw new Error("bindSample: lidar needs intrinsics");
      args.push(
        "--beams", String(spec.beams),
        "--fx", String(k.fx), "--fy", String(k.fy),
        "--cx", String(k.cx), "--cy", String(k.cy),
      );
      if (spec.azimuthBinDeg !== undefined) args.push("--az-bin-deg", String(spec.azimuthBinDeg));
      if (spec.elevationDeg) {
        args.push("--elevation-deg", String(spec.elevationDeg[0]), String(spec.elevationDeg[1]));
      }
    } else if (spec.pattern === "features") {
      const img = opts.image;
      if (!img) throw new Error("bindSample: features needs a grayscale image");
      const imgPath = join(dir, "image.png");
      writeFileSync(imgPath, encodeGrayPng(img.pixels, img.width, img.height));
      args.push("--points", String(spec.points), "--image", imgPath);
      if (spec.nmsRadius !== undefined) args.push("--nms-radius", String(spec.nmsRadius));
    }
    runCli(args);
    return sparseFromDepth(readDepthFile(outPath));
  });
}

export interface LossBreakdown {
  total: number;
  [component: string]: number;
}

/** Evaluate the training objective between two maps. */
export function bindLoss(
  pred: DepthArray,
  label: DepthArray,
  kind: "g2" | "l1l2" = "g2",
  pyramidNorm: "per_level" | "full_eta" = "per_level",
): LossBreakdown {
  return withTempDir((dir) => {
    const predPath = join(dir, "pred.pfm");
    const labelPath = join(dir, "label.pfm");
    writeDepthFile(predPath, pred);
    writeDepthFile(labelPath, label);
    const out = runCli([
      "loss",
      "--pred", predPath,
      "--label", labelPath,
      "--loss", kind,
      "--pyramid-norm", pyramidNorm,
    ]);
    return JSON.parse(out) as LossBreakdown;
  });
}

/** Throw unless the core on PATH reports the version this binding targets. */
export function assertVersionMatch(): void {
  const core = coreVersion();
  if (core !== BINDING_VERSION) {
    throw new CoreError(
      `core version ${core} does not match binding version ${BINDING_VERSION}`,
      null,
    );
  }
}
