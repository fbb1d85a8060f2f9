/**
 * Trailing-edge debouncer: only the last value of a burst is delivered,
 * after `ms` of quiet. Slider commits use 150 ms to respect the service's
 * inversion latency budget.
 */
export function debounce<A>(fn: (value: A) => void, ms: number): (value: A) => void {
  let timer: ReturnType<typeof setTimeout> | undefined;
  let last: A;
  return (value: A) => {
    last = value;
    if (timer !== undefined) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = undefined;
      fn(last);
    }, ms);
  };
}
