/**
 * keyboard.ts — labeling shortcuts.
 *
 *   i / o / s   verdict In / Out / Skip on the selected card
 *   j / k       move selection down / up (ArrowDown / ArrowUp too)
 *   /           focus the search input
 *
 * Everything except "/" is ignored while a form field has focus, so typing a
 * query never fires verdicts.
 */

export interface ShortcutHandlers {
  onVerdictKey(verdict: "in" | "out" | "abstain"): void;
  onMoveSelection(delta: 1 | -1): void;
  onFocusSearch(): void;
}

function inFormField(target: EventTarget | null): boolean {
  if (!(target instanceof HTMLElement)) return false;
  const tag = target.tagName;
  return tag === "INPUT" || tag === "TEXTAREA" || tag === "SELECT" || target.isContentEditable;
}

export function bindShortcuts(target: EventTarget, handlers: ShortcutHandlers): () => void {
  const onKeydown = (event: Event): void => {
    const e = event as KeyboardEvent;
    if (e.ctrlKey || e.metaKey || e.altKey) return;
    if (inFormField(e.target)) return;
    switch (e.key) {
      case "i":
        handlers.onVerdictKey("in");
        break;
      case "o":
        handlers.onVerdictKey("out");
        break;
      case "s":
        handlers.onVerdictKey("abstain");
        break;
      case "j":
      case "ArrowDown":
        handlers.onMoveSelection(1);
        break;
      case "k":
      case "ArrowUp":
        handlers.onMoveSelection(-1);
        break;
      case "/":
        handlers.onFocusSearch();
        break;
      default:
        return;
    }
    e.preventDefault();
  };
  target.addEventListener("keydown", onKeydown);
  return () => target.removeEventListener("keydown", onKeydown);
}
