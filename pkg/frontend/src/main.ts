import { fetchItems, fetchProgress, postDecision } from './api.js';
import { actionForKey, isTypingTarget } from './keyboard.js';
import { visibleItems } from './queue.js';
import { currentItem, initialState, overlaySrc, reduce } from './state.js';
import type { Action, ReviewState } from './state.js';
import { toItemView } from './types.js';
import type { Filter, Verdict } from './types.js';

let state: ReviewState = initialState();

function dispatch(action: Action): void {
  state = reduce(state, action);
  render();
}

async function loadAll(): Promise<void> {
  try {
    const [items, progress] = await Promise.all([fetchItems(), fetchProgress()]);
    dispatch({ kind: 'items-loaded', items: items.map(toItemView) });
    dispatch({ kind: 'progress-loaded', progress });
  } catch (err) {
    dispatch({ kind: 'service-error',
               message: `service unreachable: ${String(err)}` });
  }
}

async function decide(verdict: Verdict): Promise<void> {
  const item = currentItem(state);
  if (!item) return;
  const imageId = item.imageId;
  dispatch({ kind: 'decide-optimistic', imageId, verdict });
  try {
    await postDecision(imageId, verdict, reviewerName());
    dispatch({ kind: 'decide-ack', imageId, verdict });
    dispatch({ kind: 'progress-loaded', progress: await fetchProgress() });
  } catch (err) {
    dispatch({ kind: 'decide-rollback', imageId, message: String(err) });
  }
}

function reviewerName(): string {
  const input = document.querySelector<HTMLInputElement>('#reviewer');
  return input?.value ?? '';
}

function el<T extends HTMLElement>(selector: string): T {
  const node = document.querySelector<T>(selector);
  if (!node) throw new Error(`missing element ${selector}`);
  return node;
}

function render(): void {
  const banner = el<HTMLDivElement>('#banner');
  if (state.banner) {
    banner.hidden = false;
    el<HTMLSpanElement>('#banner-text').textContent = state.banner;
  } else {
    banner.hidden = true;
  }

  const progress = state.progress;
  el<HTMLDivElement>('#progress').textContent = progress
    ? `${progress.decided}/${progress.total} decided — ` +
      `accept ${progress.verdicts.accept}, invert ${progress.verdicts.invert}, ` +
      `exclude ${progress.verdicts.exclude}`
    : 'loading…';

  const visible = visibleItems(state.items, state.filter);
  const item = currentItem(state);
  const overlay = el<HTMLImageElement>('#overlay');
  const meta = el<HTMLDivElement>('#item-meta');
  if (item) {
    overlay.src = overlaySrc(item);
    overlay.alt = `mask overlay for ${item.imageId}`;
    meta.textContent =
      `${item.imageId} — border fraction ${item.borderFraction.toFixed(3)}` +
      `${item.autoInverted ? ' (auto-inverted)' : ''} — ${item.decisionState}` +
      ` — ${state.cursor + 1}/${visible.length}`;
  } else {
    overlay.removeAttribute('src');
    meta.textContent = 'queue empty';
  }

  const list = el<HTMLUListElement>('#queue');
  list.replaceChildren(
    ...visible.map((entry, idx) => {
      const li = document.createElement('li');
      li.textContent = `${entry.imageId} [${entry.decisionState}]`;
      li.className = idx === state.cursor ? 'current' : '';
      li.onclick = () => dispatch({ kind: 'set-cursor', cursor: idx });
      return li;
    }),
  );
}

function wire(): void {
  document.addEventListener('keydown', (event) => {
    if (isTypingTarget((event.target as HTMLElement | null)?.tagName)) return;
    const action = actionForKey(event.key);
    if (!action) return;
    event.preventDefault();
    if (action.kind === 'move') {
      dispatch({ kind: 'move', delta: action.delta });
    } else {
      void decide(action.verdict);
    }
  });
  el<HTMLSelectElement>('#filter').onchange = (event) => {
    const filter = (event.target as HTMLSelectElement).value as Filter;
    dispatch({ kind: 'set-filter', filter });
  };
  el<HTMLButtonElement>('#retry').onclick = () => void loadAll();
  for (const verdict of ['accept', 'invert', 'exclude'] as const) {
    el<HTMLButtonElement>(`#btn-${verdict}`).onclick = () => void decide(verdict);
  }
}

wire();
void loadAll();
