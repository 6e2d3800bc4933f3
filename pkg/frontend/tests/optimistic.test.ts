import { describe, expect, it } from "vitest";

import { withRollback } from "../src/optimistic.js";

describe("withRollback", () => {
  it("keeps the optimistic state on success", async () => {
    let value = "before";
    const result = await withRollback(
      () => value,
      (v) => (value = v),
      () => "optimistic",
      async () => "server-result",
    );
    expect(result).toBe("server-result");
    expect(value).toBe("optimistic");
  });

  it("restores the snapshot and re-throws on failure", async () => {
    let value = "before";
    await expect(
      withRollback(
        () => value,
        (v) => (value = v),
        () => "optimistic",
        async () => {
          throw new Error("409 conflict");
        },
      ),
    ).rejects.toThrow("409 conflict");
    expect(value).toBe("before");
  });

  it("runs reconcile with the mutation result", async () => {
    let value = 0;
    let reconciled = 0;
    await withRollback(
      () => value,
      (v) => (value = v),
      () => 1,
      async () => 42,
      (result) => {
        reconciled = result;
      },
    );
    expect(reconciled).toBe(42);
  });
});
