import { spawn, spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as net from "node:net";
import * as os from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { GradientStepDenoiser } from "../src/model.js";
import {
  FLAG_RETURNS_POTENTIAL,
  encodeDenoiseRequest,
  encodeHandshakeRequest,
  encodeShutdown,
} from "../src/protocol.js";
import { ServerHandle, serveDenoiser } from "../src/serve.js";

let model: GradientStepDenoiser;
let handle: ServerHandle;

beforeAll(async () => {
  model = new GradientStepDenoiser({ kernelSize: 5, numFilters: 4, seed: 9 });
  handle = await serveDenoiser(model);
});

afterAll(async () => {
  await handle.close();
  model.dispose();
});

class WireClient {
  private buffer = Buffer.alloc(0);
  private waiters: Array<() => void> = [];
  private failure: Error | null = null;

  private constructor(readonly socket: net.Socket) {
    socket.on("data", (chunk) => {
      this.buffer = Buffer.concat([this.buffer, chunk]);
      this.waiters.splice(0).forEach((wake) => wake());
    });
    const fail = (err: Error) => {
      this.failure = err;
      this.waiters.splice(0).forEach((wake) => wake());
    };
    socket.once("error", fail);
    socket.once("end", () => fail(new Error("stream ended")));
  }

  static connect(port: number): Promise<WireClient> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host: "127.0.0.1", port }, () =>
        resolve(new WireClient(socket)),
      );
      socket.once("error", reject);
    });
  }

  write(data: Buffer): void {
    this.socket.write(data);
  }

  async take(n: number): Promise<Buffer> {
    while (this.buffer.length < n) {
      if (this.failure) throw this.failure;
      await new Promise<void>((wake) => this.waiters.push(wake));
    }
    const out = this.buffer.subarray(0, n);
    this.buffer = this.buffer.subarray(n);
    return out;
  }

  close(): void {
    this.socket.destroy();
  }
}

function testImage(h: number, w: number): Float32Array {
  const z = new Float32Array(h * w);
  for (let i = 0; i < z.length; i++) z[i] = 0.5 + 0.3 * Math.sin(i * 0.17);
  return z;
}

describe("wire server", () => {
  it("handshakes with version 1 and the potential flag set", async () => {
    const client = await WireClient.connect(handle.port);
    client.write(encodeHandshakeRequest());
    const resp = await client.take(8);
    expect(resp.subarray(0, 4).toString("latin1")).toBe("DNZ1");
    expect(resp.readUInt8(4)).toBe(0);
    expect(resp.readUInt16LE(5)).toBe(1);
    expect(resp.readUInt8(7) & FLAG_RETURNS_POTENTIAL).toBe(1);
    client.close();
  });

  it("answers denoise requests with the model output and potential", async () => {
    const h = 12, w = 10;
    const z = testImage(h, w);
    const sigma = 0.12;
    const client = await WireClient.connect(handle.port);
    client.write(encodeHandshakeRequest());
    await client.take(8);
    client.write(encodeDenoiseRequest(z, h, w, sigma));
    const head = await client.take(13);
    expect(head.readUInt8(4)).toBe(0);
    const potential = head.readDoubleLE(5);
    const payload = await client.take(4 * h * w);
    client.close();

    const local = model.denoiseImage(z, h, w, sigma);
    expect(potential).toBeCloseTo(local.potential, 10);
    for (let i = 0; i < z.length; i++) {
      expect(payload.readFloatLE(4 * i)).toBeCloseTo(local.pixels[i], 6);
    }
  });

  it("served output satisfies the gradient-step identity at 1e-5 over the wire", async () => {
    const h = 16, w = 16;
    const z = testImage(h, w);
    const sigma = 0.2;
    const client = await WireClient.connect(handle.port);
    client.write(encodeDenoiseRequest(z, h, w, sigma));
    const head = await client.take(13);
    expect(head.readUInt8(4)).toBe(0);
    const payload = await client.take(4 * h * w);
    client.close();

    const auto = model.gradPotentialAutodiff(z, h, w, sigma);
    let worst = 0, scale = 0;
    for (let i = 0; i < z.length; i++) {
      worst = Math.max(worst, Math.abs(z[i] - payload.readFloatLE(4 * i) - auto[i]));
      scale = Math.max(scale, Math.abs(auto[i]));
    }
    expect(worst / scale).toBeLessThan(1e-5);
  });

  it("passes the primary toolkit's bridge-check against a served checkpoint", async () => {
    // the server must live in its own process: a synchronous python client
    // inside this one would deadlock against the in-process event loop
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "denoiser-ckpt-"));
    const ckptPath = path.join(dir, "ckpt.json");
    fs.writeFileSync(ckptPath, JSON.stringify(model.toCheckpoint()));
    const testDir = path.dirname(fileURLToPath(import.meta.url));
    const server = spawn("node", [
      path.join(testDir, "..", "dist", "cli.js"), "serve", "--checkpoint", ckptPath,
    ]);
    try {
      const port = await new Promise<number>((resolve, reject) => {
        let text = "";
        server.stdout.on("data", (chunk) => {
          text += chunk.toString();
          const match = /PORT (\d+)/.exec(text);
          if (match) resolve(Number(match[1]));
        });
        server.once("exit", (code) => reject(new Error(`server exited early (${code})`)));
        setTimeout(() => reject(new Error("server did not report a port")), 20000);
      });
      const res = spawnSync(
        "python3",
        ["-m", "fluctdecon.cli", "bridge-check", "--tcp", `127.0.0.1:${port}`, "--size", "9"],
        { encoding: "utf-8" },
      );
      expect(res.status, res.stderr).toBe(0);
      const report = JSON.parse(res.stdout);
      expect(report.protocol_version).toBe(1);
      expect(report.returns_potential).toBe(true);
      expect(Number.isFinite(report.potential)).toBe(true);
    } finally {
      server.kill();
      fs.rmSync(dir, { recursive: true, force: true });
    }
  });
});

describe("shutdown frame", () => {
  it("closes the server", async () => {
    const local = new GradientStepDenoiser({ kernelSize: 3, numFilters: 2, seed: 10 });
    let closed = false;
    const h = await serveDenoiser(local, 0, () => {
      closed = true;
    });
    const client = await WireClient.connect(h.port);
    client.write(encodeShutdown());
    await new Promise((resolve) => client.socket.once("close", resolve));
    expect(closed).toBe(true);
    local.dispose();
  });
});
