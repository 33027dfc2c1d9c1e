/**
 * Minimal .npy reader/writer for 2-D little-endian float arrays.
 *
 * Supports version 1.0 files with '<f4' or '<f8' dtypes in C order,
 * which is exactly what the covariance pipeline emits.
 */

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

export interface NpyArray {
  rows: number;
  cols: number;
  data: Float64Array; // row-major
}

export function parseNpy(buf: Buffer): NpyArray {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new Error("not an npy file (bad magic)");
  }
  const major = buf.readUInt8(6);
  let headerLen: number;
  let offset: number;
  if (major === 1) {
    headerLen = buf.readUInt16LE(8);
    offset = 10;
  } else {
    headerLen = buf.readUInt32LE(8);
    offset = 12;
  }
  const header = buf.subarray(offset, offset + headerLen).toString("latin1");
  const descr = /'descr':\s*'([^']+)'/.exec(header)?.[1];
  const fortran = /'fortran_order':\s*(True|False)/.exec(header)?.[1];
  const shape = /'shape':\s*\(([^)]*)\)/.exec(header)?.[1];
  if (!descr || !fortran || shape === undefined) {
    throw new Error(`unparseable npy header: ${header}`);
  }
  if (fortran === "True") {
    throw new Error("fortran-order npy arrays are not supported");
  }
  const dims = shape.split(",").map((s) => s.trim()).filter((s) => s.length).map(Number);
  if (dims.length !== 2) {
    throw new Error(`expected a 2-D array, got shape (${shape})`);
  }
  const [rows, cols] = dims;
  const body = buf.subarray(offset + headerLen);
  const n = rows * cols;
  const data = new Float64Array(n);
  if (descr === "<f8") {
    if (body.length < 8 * n) throw new Error("truncated npy payload");
    for (let i = 0; i < n; i++) data[i] = body.readDoubleLE(8 * i);
  } else if (descr === "<f4") {
    if (body.length < 4 * n) throw new Error("truncated npy payload");
    for (let i = 0; i < n; i++) data[i] = body.readFloatLE(4 * i);
  } else {
    throw new Error(`unsupported npy dtype ${descr}`);
  }
  return { rows, cols, data };
}

export function encodeNpy(arr: NpyArray, dtype: "<f4" | "<f8" = "<f8"): Buffer {
  const headerBase = `{'descr': '${dtype}', 'fortran_order': False, 'shape': (${arr.rows}, ${arr.cols}), }`;
  const unpadded = 10 + headerBase.length + 1; // +1 for the trailing newline
  const padding = (64 - (unpadded % 64)) % 64;
  const header = headerBase + " ".repeat(padding) + "\n";
  const head = Buffer.alloc(10);
  MAGIC.copy(head, 0);
  head.writeUInt8(1, 6);
  head.writeUInt8(0, 7);
  head.writeUInt16LE(header.length, 8);
  const n = arr.rows * arr.cols;
  const itemSize = dtype === "<f8" ? 8 : 4;
  const body = Buffer.alloc(itemSize * n);
  for (let i = 0; i < n; i++) {
    if (dtype === "<f8") body.writeDoubleLE(arr.data[i], 8 * i);
    else body.writeFloatLE(arr.data[i], 4 * i);
  }
  return Buffer.concat([head, Buffer.from(header, "latin1"), body]);
}
