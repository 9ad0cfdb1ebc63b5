import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    globalSetup: "./tests/engine.setup.ts",
    testTimeout: 30_000,
    hookTimeout: 60_000,
    pool: "forks",
  },
});
