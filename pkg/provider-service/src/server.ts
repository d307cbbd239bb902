// JSON/HTTP server implementing the provider wire protocol:
//   POST /v1/embed_text, POST /v1/embed_image, POST /v1/generate,
//   GET /v1/manifest.
// Stateless between requests; generation requests queue behind a
// configurable concurrency limit since decoding is the bottleneck.

import { createServer, IncomingMessage, Server, ServerResponse } from "node:http";

import { embedImageBytes, embedText, looksLikeImage } from "./embeddings.js";
import { beamSearch } from "./textgen.js";

export interface ProviderConfig {
  port: number;
  dimension: number;
  embeddingModel: string;
  generationModel: string;
  eosToken: string;
  device: string;
  halfPrecision: boolean;
  maxConcurrentGenerate: number;
}

export const DEFAULT_CONFIG: ProviderConfig = {
  port: 8484,
  dimension: 512,
  embeddingModel: "hash-sim-512",
  generationModel: "ngram-beam",
  eosToken: "</s>",
  device: "cpu",
  halfPrecision: false,
  maxConcurrentGenerate: 2,
};

const MAX_BODY_BYTES = 32 * 1024 * 1024;

class HttpError extends Error {
  constructor(
    readonly status: number,
    readonly type: string,
    message: string,
  ) {
    super(message);
  }
}

function reply(res: ServerResponse, status: number, payload: unknown): void {
  const body = JSON.stringify(payload);
  res.writeHead(status, {
    "Content-Type": "application/json",
    "Content-Length": Buffer.byteLength(body),
  });
  res.end(body);
}

function replyError(res: ServerResponse, error: unknown): void {
  if (error instanceof HttpError) {
    reply(res, error.status, { error: { type: error.type, message: error.message } });
  } else {
    const message = error instanceof Error ? error.message : String(error);
    reply(res, 500, { error: { type: "internal", message } });
  }
}

function readBody(req: IncomingMessage): Promise<Buffer> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    let size = 0;
    req.on("data", (chunk: Buffer) => {
      size += chunk.length;
      if (size > MAX_BODY_BYTES) {
        reject(new HttpError(413, "payload_too_large", "request body too large"));
        req.destroy();
        return;
      }
      chunks.push(chunk);
    });
    req.on("end", () => resolve(Buffer.concat(chunks)));
    req.on("error", reject);
  });
}

function parseJsonBody(raw: Buffer): Record<string, unknown> {
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw.toString("utf-8"));
  } catch {
    throw new HttpError(400, "invalid_json", "request body is not valid JSON");
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new HttpError(400, "invalid_request", "request body must be a JSON object");
  }
  return parsed as Record<string, unknown>;
}

class Semaphore {
  private active = 0;
  private readonly waiters: Array<() => void> = [];

  constructor(private readonly limit: number) {}

  async acquire(): Promise<void> {
    if (this.active < this.limit) {
      this.active += 1;
      return;
    }
    await new Promise<void>((resolve) => this.waiters.push(resolve));
    this.active += 1;
  }

  release(): void {
    this.active -= 1;
    const next = this.waiters.shift();
    if (next) {
      next();
    }
  }
}

function requirePositiveInt(body: Record<string, unknown>, field: string): number {
  const value = body[field];
  if (typeof value !== "number" || !Number.isInteger(value) || value < 1) {
    throw new HttpError(400, "invalid_request", `${field} must be a positive integer`);
  }
  return value;
}

export function createProviderServer(config: ProviderConfig = DEFAULT_CONFIG): Server {
  const generateGate = new Semaphore(config.maxConcurrentGenerate);

  const handleEmbedText = (body: Record<string, unknown>) => {
    const texts = body.texts;
    if (!Array.isArray(texts) || texts.length === 0) {
      throw new HttpError(400, "invalid_request", "texts must be a non-empty array");
    }
    const embeddings = texts.map((text, index) => {
      if (typeof text !== "string" || text.length === 0) {
        throw new HttpError(400, "invalid_request", `texts[${index}] must be a non-empty string`);
      }
      return embedText(text, config.dimension);
    });
    return { embeddings };
  };

  const handleEmbedImage = (body: Record<string, unknown>) => {
    if (typeof body.image_b64 !== "string" || body.image_b64.length === 0) {
      throw new HttpError(400, "invalid_request", "image_b64 must be a non-empty string");
    }
    let payload: Buffer;
    try {
      payload = Buffer.from(body.image_b64, "base64");
    } catch {
      throw new HttpError(400, "invalid_request", "image_b64 is not valid base64");
    }
    if (payload.length === 0 || !looksLikeImage(payload)) {
      throw new HttpError(400, "undecodable_image", "payload is not a decodable image");
    }
    return { embedding: embedImageBytes(payload, config.dimension) };
  };

  const handleGenerate = async (body: Record<string, unknown>) => {
    if (typeof body.prompt !== "string" || body.prompt.length === 0) {
      throw new HttpError(400, "invalid_request", "prompt must be a non-empty string");
    }
    const numCandidates = requirePositiveInt(body, "num_candidates");
    const beamSize = requirePositiveInt(body, "beam_size");
    const maxNewTokens = requirePositiveInt(body, "max_new_tokens");
    if (numCandidates > beamSize) {
      throw new HttpError(
        400,
        "invalid_request",
        `num_candidates (${numCandidates}) must not exceed beam_size (${beamSize}); candidates are the top beams`,
      );
    }
    const stop = typeof body.stop === "string" && body.stop.length > 0 ? body.stop : config.eosToken;
    await generateGate.acquire();
    try {
      const candidates = beamSearch({
        prompt: body.prompt,
        numCandidates,
        beamSize,
        maxNewTokens,
        stop,
      });
      if (candidates.length !== numCandidates) {
        throw new HttpError(500, "internal", "decoder produced the wrong candidate count");
      }
      return { candidates };
    } finally {
      generateGate.release();
    }
  };

  return createServer(async (req, res) => {
    try {
      if (req.method === "GET" && req.url === "/v1/manifest") {
        reply(res, 200, {
          provider_id: config.embeddingModel,
          embedding_dimension: config.dimension,
          eos_token: config.eosToken,
        });
        return;
      }
      if (req.method !== "POST") {
        throw new HttpError(
          req.url?.startsWith("/v1/") ? 405 : 404,
          req.url?.startsWith("/v1/") ? "method_not_allowed" : "not_found",
          `${req.method} ${req.url} is not supported`,
        );
      }
      const body = parseJsonBody(await readBody(req));
      switch (req.url) {
        case "/v1/embed_text":
          reply(res, 200, handleEmbedText(body));
          return;
        case "/v1/embed_image":
          reply(res, 200, handleEmbedImage(body));
          return;
        case "/v1/generate":
          reply(res, 200, await handleGenerate(body));
          return;
        default:
          throw new HttpError(404, "not_found", `unknown endpoint ${req.url}`);
      }
    } catch (error) {
      replyError(res, error);
    }
  });
}
