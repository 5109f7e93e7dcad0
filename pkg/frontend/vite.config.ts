import { defineConfig } from "vitest/config";

export default defineConfig({
  server: {
    port: 5173,
    proxy: {
      // the engine API; start it with e.g. `aoglab serve --data-root demo_data`
      "/v1": "http://127.0.0.1:8000",
    },
  },
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
  },
});
