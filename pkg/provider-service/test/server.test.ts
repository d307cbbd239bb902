import assert from "node:assert/strict";
import { after, before, test } from "node:test";
import { AddressInfo } from "node:net";
import { Server } from "node:http";

import { createProviderServer, DEFAULT_CONFIG } from "../src/server.js";

const TINY_PNG = Buffer.from(
  "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR4nGNgYGBgAAAABQAB" +
    "h6FO1AAAAABJRU5ErkJggg==",
  "base64",
);

let server: Server;
let base: string;

before(async () => {
  server = createProviderServer({ ...DEFAULT_CONFIG, dimension: 64 });
  await new Promise<void>((resolve) => server.listen(0, "127.0.0.1", resolve));
  const address = server.address() as AddressInfo;
  base = `http://127.0.0.1:${address.port}`;
});

after(() => {
  server.close();
});

async function post(path: string, payload: unknown): Promise<{ status: number; body: any }> {
  const response = await fetch(base + path, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
  return { status: response.status, body: await response.json() };
}

function norm(values: number[]): number {
  return Math.sqrt(values.reduce((acc, v) => acc + v * v, 0));
}

const PROMPT =
  "I am an intelligent image captioning bot. Similar images have the " +
  "following captions: a dog runs across a field</s> a brown dog plays " +
  "outside</s> A creative short caption I can generate to describe this " +
  "image in english is:";

test("manifest declares id, dimension, and eos token", async () => {
  const response = await fetch(`${base}/v1/manifest`);
  assert.equal(response.status, 200);
  const manifest = await response.json();
  assert.deepEqual(manifest, {
    provider_id: "hash-sim-512",
    embedding_dimension: 64,
    eos_token: "</s>",
  });
});

test("embed_text returns one unit vector per input, order preserved", async () => {
  const { status, body } = await post("/v1/embed_text", { texts: ["a dog", "a cat", "a dog"] });
  assert.equal(status, 200);
  assert.equal(body.embeddings.length, 3);
  for (const embedding of body.embeddings) {
    assert.equal(embedding.length, 64);
    assert.ok(Math.abs(norm(embedding) - 1) < 1e-9);
  }
  assert.deepEqual(body.embeddings[0], body.embeddings[2]);
  assert.notDeepEqual(body.embeddings[0], body.embeddings[1]);
});

test("embed_text rejects empty input", async () => {
  assert.equal((await post("/v1/embed_text", { texts: [] })).status, 400);
  assert.equal((await post("/v1/embed_text", { texts: ["ok", ""] })).status, 400);
});

test("embed_image embeds a decodable payload", async () => {
  const { status, body } = await post("/v1/embed_image", {
    image_b64: TINY_PNG.toString("base64"),
  });
  assert.equal(status, 200);
  assert.equal(body.embedding.length, 64);
  assert.ok(Math.abs(norm(body.embedding) - 1) < 1e-9);
});

test("embed_image rejects junk payloads", async () => {
  const { status, body } = await post("/v1/embed_image", {
    image_b64: Buffer.from("not an image").toString("base64"),
  });
  assert.equal(status, 400);
  assert.equal(body.error.type, "undecodable_image");
});

test("generate returns exactly num_candidates, sorted, stop-free", async () => {
  const { status, body } = await post("/v1/generate", {
    prompt: PROMPT,
    num_candidates: 3,
    beam_size: 3,
    max_new_tokens: 16,
    stop: "</s>",
  });
  assert.equal(status, 200);
  assert.equal(body.candidates.length, 3);
  for (let i = 0; i < body.candidates.length; i += 1) {
    const candidate = body.candidates[i];
    assert.equal(typeof candidate.text, "string");
    assert.ok(candidate.text.length > 0);
    assert.ok(!candidate.text.includes("</s>"));
    if (i > 0) {
      assert.ok(body.candidates[i - 1].score >= candidate.score);
    }
  }
});

test("generate rejects num_candidates above beam_size", async () => {
  const { status, body } = await post("/v1/generate", {
    prompt: PROMPT,
    num_candidates: 5,
    beam_size: 3,
    max_new_tokens: 16,
    stop: "</s>",
  });
  assert.equal(status, 400);
  assert.match(body.error.message, /beam_size/);
});

test("generate is deterministic across requests", async () => {
  const payload = {
    prompt: PROMPT,
    num_candidates: 3,
    beam_size: 3,
    max_new_tokens: 16,
    stop: "</s>",
  };
  const first = await post("/v1/generate", payload);
  const second = await post("/v1/generate", payload);
  assert.deepEqual(first.body, second.body);
});

test("concurrent generate requests all succeed", async () => {
  const payload = {
    prompt: PROMPT,
    num_candidates: 2,
    beam_size: 2,
    max_new_tokens: 12,
    stop: "</s>",
  };
  const responses = await Promise.all(
    Array.from({ length: 6 }, () => post("/v1/generate", payload)),
  );
  for (const response of responses) {
    assert.equal(response.status, 200);
    assert.equal(response.body.candidates.length, 2);
  }
});

test("malformed JSON is a 400", async () => {
  const response = await fetch(`${base}/v1/generate`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: "{nope",
  });
  assert.equal(response.status, 400);
});

test("unknown endpoint is a 404, wrong method a 405", async () => {
  assert.equal((await post("/v1/nope", {})).status, 404);
  const response = await fetch(`${base}/v1/embed_text`);
  assert.equal(response.status, 405);
});
