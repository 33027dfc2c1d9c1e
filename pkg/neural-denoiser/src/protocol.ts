/**
 * Server-side framing for the DNZ1 denoiser wire protocol (v1).
 *
 * Little-endian frames over a byte stream:
 *   handshake request   magic, u8 type=3
 *   handshake response  magic, u8 status, u16 version, u8 flags (bit0: potential)
 *   denoise request     magic, u8 type=1, f64 sigma, u32 h, u32 w, h*w f32
 *   denoise response    magic, u8 status=0, f64 potential (NaN = none), h*w f32
 *   error response      magic, u8 status=1 (frame ends)
 *   shutdown            magic, u8 type=2
 */

export const MAGIC = Buffer.from("DNZ1", "latin1");
export const PROTOCOL_VERSION = 1;
export const MSG_DENOISE = 1;
export const MSG_SHUTDOWN = 2;
export const MSG_HANDSHAKE = 3;
export const FLAG_RETURNS_POTENTIAL = 0x01;

export type Frame =
  | { kind: "handshake" }
  | { kind: "shutdown" }
  | { kind: "denoise"; sigma: number; height: number; width: number; pixels: Float32Array }
  | { kind: "garbage" };

/** Incremental parser over possibly fragmented stream chunks. */
export class FrameReader {
  private buffer: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): void {
    this.buffer = this.buffer.length ? Buffer.concat([this.buffer, chunk]) : chunk;
  }

  /** Returns the next complete frame, or null if more bytes are needed. */
  next(): Frame | null {
    if (this.buffer.length < 5) return null;
    if (!this.buffer.subarray(0, 4).equals(MAGIC)) {
      this.buffer = Buffer.alloc(0);
      return { kind: "garbage" };
    }
    const msgType = this.buffer.readUInt8(4);
    if (msgType === MSG_HANDSHAKE) {
      this.buffer = this.buffer.subarray(5);
      return { kind: "handshake" };
    }
    if (msgType === MSG_SHUTDOWN) {
      this.buffer = this.buffer.subarray(5);
      return { kind: "shutdown" };
    }
    if (msgType !== MSG_DENOISE) {
      this.buffer = this.buffer.subarray(5);
      return { kind: "garbage" };
    }
    if (this.buffer.length < 21) return null;
    const sigma = this.buffer.readDoubleLE(5);
    const height = this.buffer.readUInt32LE(13);
    const width = this.buffer.readUInt32LE(17);
    const payloadBytes = 4 * height * width;
    if (this.buffer.length < 21 + payloadBytes) return null;
    const pixels = new Float32Array(height * width);
    for (let i = 0; i < pixels.length; i++) {
      pixels[i] = this.buffer.readFloatLE(21 + 4 * i);
    }
    this.buffer = this.buffer.subarray(21 + payloadBytes);
    return { kind: "denoise", sigma, height, width, pixels };
  }
}

export function encodeHandshakeResponse(returnsPotential: boolean): Buffer {
  const out = Buffer.alloc(8);
  MAGIC.copy(out, 0);
  out.writeUInt8(0, 4);
  out.writeUInt16LE(PROTOCOL_VERSION, 5);
  out.writeUInt8(returnsPotential ? FLAG_RETURNS_POTENTIAL : 0, 7);
  return out;
}

export function encodeDenoiseResponse(pixels: Float32Array, potential: number | null): Buffer {
  const out = Buffer.alloc(13 + 4 * pixels.length);
  MAGIC.copy(out, 0);
  out.writeUInt8(0, 4);
  out.writeDoubleLE(potential === null ? NaN : potential, 5);
  for (let i = 0; i < pixels.length; i++) out.writeFloatLE(pixels[i], 13 + 4 * i);
  return out;
}

export function encodeErrorResponse(): Buffer {
  const out = Buffer.alloc(5);
  MAGIC.copy(out, 0);
  out.writeUInt8(1, 4);
  return out;
}

// client-side encoders, used by the tests to speak to the server
export function encodeHandshakeRequest(): Buffer {
  const out = Buffer.alloc(5);
  MAGIC.copy(out, 0);
  out.writeUInt8(MSG_HANDSHAKE, 4);
  return out;
}

export function encodeShutdown(): Buffer {
  const out = Buffer.alloc(5);
  MAGIC.copy(out, 0);
  out.writeUInt8(MSG_SHUTDOWN, 4);
  return out;
}

export function encodeDenoiseRequest(
  pixels: Float32Array,
  height: number,
  width: number,
  sigma: number,
): Buffer {
  const out = Buffer.alloc(21 + 4 * pixels.length);
  MAGIC.copy(out, 0);
  out.writeUInt8(MSG_DENOISE, 4);
  out.writeDoubleLE(sigma, 5);
  out.writeUInt32LE(height, 13);
  out.writeUInt32LE(width, 17);
  for (let i = 0; i < pixels.length; i++) out.writeFloatLE(pixels[i], 21 + 4 * i);
  return out;
}
