import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    testTimeout: 20_000,
    // the e2e suite trains a toy checkpoint on first run
    hookTimeout: 600_000,
  },
});
