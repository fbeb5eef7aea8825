import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // every binding call shells out to the core, so tests are I/O bound
    testTimeout: 180_000,
    hookTimeout: 60_000,
  },
});
