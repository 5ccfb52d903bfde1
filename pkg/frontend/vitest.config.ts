import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // The live test spawns a real server subprocess; give it headroom.
    testTimeout: 30_000,
    hookTimeout: 30_000,
  },
});
