import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["test/**/*.test.ts"],
    testTimeout: 30_000,
    hookTimeout: 60_000,
    // The e2e file spawns one service per suite; run files sequentially so
    // ports and child processes stay predictable.
    fileParallelism: false,
  },
});
