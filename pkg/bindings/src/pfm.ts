/**
 * Grayscale PFM encode/decode.
 *
 * Layout: "Pf\n<width> <height>\n<scale>\n" followed by width*height
 * float32 samples, bottom scanline first; a negative scale marks
 * little-endian payloads. The core stores depth in meters with
 * non-positive / non-finite samples meaning "no data".
 */

export interface PfmImage {
  width: number;
  height: number;
  /** Row-major, top row first (already unflipped from PFM order). */
  values: Float32Array;
  /**
   * True when `values` is a zero-copy view over the file buffer. Only
   * single-row images can skip the copy: taller ones must reorder
   * scanlines, and misaligned payload offsets force a copy as well.
   */
  zeroCopy: boolean;
}

export function decodePfm(buf: Buffer): PfmImage {
  let off = 0;
  const line = (): string => {
    const nl = buf.indexOf(0x0a, off);
    if (nl < 0) throw new Error("pfm: truncated header");
    const s = buf.toString("ascii", off, nl);
    off = nl + 1;
    return s.trim();
  };
  const magic = line();
  if (magic === "PF") throw new Error("pfm: color images are not depth maps");
  if (magic !== "Pf") throw new Error("pfm: bad magic");
  const dims = line().split(/\s+/);
  const width = Number(dims[0]);
  const height = Number(dims[1]);
  const scale = Number(line());
  if (!Number.isInteger(width) || !Number.isInteger(height) || !Number.isFinite(scale)) {
    throw new Error("pfm: bad header");
  }
  const n = width * height;
  if (buf.length - off < n * 4) throw new Error("pfm: truncated payload");
  if (scale > 0) {
    // big-endian payload: swap into a fresh buffer
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) out[i] = buf.readFloatBE(off + i * 4);
    return { width, height, values: flipRows(out, width, height), zeroCopy: false };
  }

  const aligned = (buf.byteOffset + off) % 4 === 0;
  if (height === 1 && aligned) {
    return {
      width,
      height,
      values: new Float32Array(buf.buffer, buf.byteOffset + off, n),
      zeroCopy: true,
    };
  }
  const raw = new Float32Array(n);
  const view = aligned
    ? new Float32Array(buf.buffer, buf.byteOffset + off, n)
    : null;
  if (view) raw.set(view);
  else for (let i = 0; i < n; i++) raw[i] = buf.readFloatLE(off + i * 4);
  return { width, height, values: flipRows(raw, width, height), zeroCopy: false };
}

export function encodePfm(values: Float32Array, width: number, height: number): Buffer {
  if (values.length !== width * height) throw new Error("pfm: size mismatch");
  const header = Buffer.from(`Pf\n${width} ${height}\n-1.0\n`, "ascii");
  const payload = Buffer.alloc(width * height * 4);
  // bottom scanline first
  for (let y = 0; y < height; y++) {
    const src = (height - 1 - y) * width;
    for (let x = 0; x < width; x++) {
      payload.writeFloatLE(values[src + x], (y * width + x) * 4);
    }
  }
  return Buffer.concat([header, payload]);
}

function flipRows(a: Float32Array, width: number, height: number): Float32Array {
  if (height <= 1) return a;
  const out = new Float32Array(a.length);
  for (let y = 0; y < height; y++) {
    out.set(a.subarray((height - 1 - y) * width, (height - y) * width), y * width);
  }
  return out;
}
