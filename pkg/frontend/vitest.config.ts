import { defineConfig } from "vitest/config";

// Two projects: pure-logic unit tests, and the studio loop which talks to a
// live inference service spawned by its global setup (slow on first run while
// the fixture checkpoint trains; cached afterwards).
export default defineConfig({
  test: {
    projects: [
      {
        test: {
          name: "unit",
          environment: "node",
          include: ["tests/unit/**/*.test.ts"],
        },
      },
      {
        test: {
          name: "studio",
          environment: "node",
          include: ["tests/studio/**/*.test.ts"],
          globalSetup: ["tests/studio/global_setup.ts"],
          testTimeout: 120_000,
          hookTimeout: 120_000,
        },
      },
    ],
  },
});
