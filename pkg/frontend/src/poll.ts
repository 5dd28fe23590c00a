// Fixed-interval polling with latest-wins delivery: when responses come back
// out of order, a stale one never overwrites a newer one.

export interface PollHandle {
  stop(): void;
  tick(): Promise<void>;
}

export function startPoll<T>(
  fetcher: () => Promise<T>,
  onData: (data: T) => void,
  onError: (error: unknown) => void,
  intervalMs = 2000,
  schedule: (fn: () => void, ms: number) => unknown = setInterval,
  cancel: (handle: unknown) => void = (h) => clearInterval(h as Parameters<typeof clearInterval>[0]),
): PollHandle {
  let issued = 0;
  let applied = 0;
  let stopped = false;

  const tick = async () => {
    const seq = ++issued;
    try {
      const data = await fetcher();
      if (!stopped && seq > applied) {
        applied = seq;
        onData(data);
      }
    } catch (error) {
      if (!stopped && seq > applied) {
        applied = seq;
        onError(error);
      }
    }
  };

  const timer = schedule(() => void tick(), intervalMs);
  void tick();
  return {
    stop() {
      stopped = true;
      cancel(timer);
    },
    tick,
  };
}
