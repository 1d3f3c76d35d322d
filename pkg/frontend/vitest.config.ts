import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    environment: "node",
    testTimeout: 90000,
    hookTimeout: 60000,
    // The integration test drives one real optimization job; keep files
    // sequential so two servers never race for the port.
    fileParallelism: false,
  },
});
