/**
 * TCP server exposing a trained gradient-step denoiser over the DNZ1
 * protocol, with returns_potential set: every denoise response carries
 * R_sigma(z) of the request image. One connection, one request at a
 * time, matching the client contract.
 */

import * as net from "node:net";

import { GradientStepDenoiser } from "./model.js";
import {
  FrameReader,
  encodeDenoiseResponse,
  encodeErrorResponse,
  encodeHandshakeResponse,
} from "./protocol.js";

export interface ServerHandle {
  port: number;
  close(): Promise<void>;
}

export function serveDenoiser(
  model: GradientStepDenoiser,
  port = 0,
  onShutdown?: () => void,
): Promise<ServerHandle> {
  const server = net.createServer((socket) => {
    const reader = new FrameReader();
    socket.on("data", (chunk) => {
      reader.push(chunk);
      for (let frame = reader.next(); frame !== null; frame = reader.next()) {
        if (frame.kind === "handshake") {
          socket.write(encodeHandshakeResponse(true));
        } else if (frame.kind === "shutdown") {
          socket.end();
          server.close();
          onShutdown?.();
          return;
        } else if (frame.kind === "denoise") {
          try {
            const { pixels, potential } = model.denoiseImage(
              frame.pixels, frame.height, frame.width, frame.sigma,
            );
            if (!pixels.every(Number.isFinite) || !Number.isFinite(potential)) {
              socket.write(encodeErrorResponse());
            } else {
              socket.write(encodeDenoiseResponse(pixels, potential));
            }
          } catch {
            socket.write(encodeErrorResponse());
          }
        } else {
          socket.write(encodeErrorResponse());
          socket.end();
          return;
        }
      }
    });
  });
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, "127.0.0.1", () => {
      const address = server.address() as net.AddressInfo;
      resolve({
        port: address.port,
        close: () =>
          new Promise<void>((done) => {
            server.close(() => done());
          }),
      });
    });
  });
}
