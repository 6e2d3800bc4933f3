// Optimistic mutation wrapper: reflect the change locally right away, then
// reconcile with the server; any rejection restores the snapshot and
// re-throws so the caller can surface the error.

export async function withRollback<S, R>(
  getState: () => S,
  setState: (state: S) => void,
  optimistic: (state: S) => S,
  mutate: () => Promise<R>,
  reconcile?: (result: R) => Promise<void> | void,
): Promise<R> {
  const snapshot = getState();
  setState(optimistic(snapshot));
  try {
    const result = await mutate();
    if (reconcile) await reconcile(result);
    return result;
  } catch (error) {
    setState(snapshot);
    throw error;
  }
}
