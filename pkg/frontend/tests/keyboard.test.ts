import { describe, expect, it } from "vitest";

import { bindShortcuts } from "../src/keyboard.js";
import type { ShortcutHandlers } from "../src/keyboard.js";

function recordingHandlers(): { handlers: ShortcutHandlers; events: string[] } {
  const events: string[] = [];
  return {
    events,
    handlers: {
      onVerdictKey: (verdict) => events.push(`verdict:${verdict}`),
      onMoveSelection: (delta) => events.push(`move:${delta}`),
      onFocusSearch: () => events.push("focus"),
    },
  };
}

function press(target: EventTarget, key: string, init: KeyboardEventInit = {}): void {
  target.dispatchEvent(new KeyboardEvent("keydown", { key, bubbles: true, ...init }));
}

describe("bindShortcuts", () => {
  it("maps i/o/s to verdicts and j/k plus arrows to navigation", () => {
    const { handlers, events } = recordingHandlers();
    const unbind = bindShortcuts(document, handlers);
    for (const key of ["i", "o", "s", "j", "k", "ArrowDown", "ArrowUp", "/"]) {
      press(document, key);
    }
    unbind();
    expect(events).toEqual([
      "verdict:in",
      "verdict:out",
      "verdict:abstain",
      "move:1",
      "move:-1",
      "move:1",
      "move:-1",
      "focus",
    ]);
  });

  it("ignores keys while typing in a form field", () => {
    const { handlers, events } = recordingHandlers();
    const unbind = bindShortcuts(document, handlers);
    const input = document.createElement("input");
    document.body.append(input);
    press(input, "i");
    press(input, "j");
    unbind();
    input.remove();
    expect(events).toEqual([]);
  });

  it("ignores chords with modifiers", () => {
    const { handlers, events } = recordingHandlers();
    const unbind = bindShortcuts(document, handlers);
    press(document, "i", { ctrlKey: true });
    press(document, "o", { metaKey: true });
    unbind();
    expect(events).toEqual([]);
  });

  it("stops firing after unbind", () => {
    const { handlers, events } = recordingHandlers();
    const unbind = bindShortcuts(document, handlers);
    press(document, "i");
    unbind();
    press(document, "i");
    expect(events).toEqual(["verdict:in"]);
  });
});
