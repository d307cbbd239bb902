// Entry point: load the optional JSON config file, start the service.
// Usage: node dist/src/main.js [--config service.json]
// PORT in the environment overrides the configured port.

import { readFileSync } from "node:fs";

import { createProviderServer, DEFAULT_CONFIG, ProviderConfig } from "./server.js";

function loadConfig(argv: string[]): ProviderConfig {
  const config: ProviderConfig = { ...DEFAULT_CONFIG };
  const flagAt = argv.indexOf("--config");
  if (flagAt >= 0) {
    const path = argv[flagAt + 1];
    if (!path) {
      throw new Error("--config requires a path");
    }
    const overrides = JSON.parse(readFileSync(path, "utf-8")) as Partial<ProviderConfig>;
    Object.assign(config, overrides);
  }
  if (process.env.PORT) {
    config.port = Number.parseInt(process.env.PORT, 10);
  }
  return config;
}

const config = loadConfig(process.argv.slice(2));
const server = createProviderServer(config);
server.listen(config.port, () => {
  console.log(
    `provider-service listening on :${config.port} ` +
      `(embedding ${config.embeddingModel} d=${config.dimension}, ` +
      `generation ${config.generationModel}, device ${config.device}` +
      `${config.halfPrecision ? ", fp16" : ""})`,
  );
});
