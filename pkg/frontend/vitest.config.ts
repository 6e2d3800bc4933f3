import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // e2e suites spawn the Python service; keep them on one worker so the
    // scripted provider fixtures are consumed in a deterministic order
    fileParallelism: false,
  },
});
