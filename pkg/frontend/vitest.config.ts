import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    globalSetup: ["tests/globalSetup.ts"],
    testTimeout: 120_000,
    hookTimeout: 300_000,
  },
});
