import { ConsoleApi } from "./api.js";
import { EventFeed } from "./feed.js";
import { ConsoleStore } from "./store.js";
import { renderConsole } from "./render.js";
import { DoorCommand } from "./types.js";

export interface ConsoleOptions {
  root: HTMLElement;
  api: ConsoleApi;
  /** Called when the feed or a command drops an error; defaults to console.error. */
  onError?: (err: unknown) => void;
}

export interface Console {
  store: ConsoleStore;
  /** Backfill then follow; resolves when the stream ends or stop() is called. */
  start(): Promise<void>;
  stop(): void;
}

/**
 * Wire store, feed, renderer, and button clicks to a root element.
 *
 * The page re-renders on every journal record and only on journal
 * records: clicking shutdown/clear posts the command and nothing
 * else, so a door panel changes when the door actually reports the
 * transition, not when the button is pressed.
 */
export function createConsole(opts: ConsoleOptions): Console {
  const { root, api } = opts;
  const onError = opts.onError ?? ((err) => console.error(err));
  const store = new ConsoleStore();
  const controller = new AbortController();

  const repaint = () => {
    root.innerHTML = renderConsole(store);
  };

  const feed = new EventFeed(api, (rec) => {
    store.apply(rec);
    repaint();
  });

  root.addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement | null;
    const button = target?.closest<HTMLElement>("button[data-command]");
    if (!button) return;
    const doorId = button.dataset.door;
    const command = button.dataset.command as DoorCommand | undefined;
    if (!doorId || (command !== "shutdown" && command !== "clear")) return;
    api.doorCommand(doorId, command).catch(onError);
  });

  return {
    store,
    async start() {
      repaint();
      try {
        await feed.run(controller.signal);
      } catch (err) {
        if (!controller.signal.aborted) throw err;
      }
    },
    stop() {
      controller.abort();
    },
  };
}
