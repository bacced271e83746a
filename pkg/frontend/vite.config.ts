/// <reference types="vitest/config" />
import { defineConfig } from "vite";

export default defineConfig({
  test: {
    environment: "happy-dom",
    // the e2e suite trains nothing but does load a real checkpoint-backed
    // service, so give it breathing room beyond the default 5s
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
