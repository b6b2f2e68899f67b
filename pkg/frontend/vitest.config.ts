import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    testTimeout: 30_000,
    hookTimeout: 30_000,
    // integration tests spawn the real annotation service; keep files
    // sequential so ports, globals, and stores never interleave
    fileParallelism: false,
  },
});
