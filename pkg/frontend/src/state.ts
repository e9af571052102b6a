import { cursorAfterDecision, firstUndecidedIndex, moveCursor, visibleItems } from './queue.js';
import type { DecisionState, Filter, Progress, ReviewItemView, Verdict } from './types.js';

/**
 * The UI holds no authoritative state: items and progress mirror the last
 * service responses, and an optimistic decision is rolled back unless the
 * POST is acknowledged.
 */
export interface ReviewState {
  items: ReviewItemView[];
  cursor: number;
  filter: Filter;
  progress: Progress | null;
  banner: string | null;
  /** imageId -> decision state to restore if the POST fails */
  pendingRollback: Record<string, DecisionState>;
}

export type Action =
  | { kind: 'items-loaded'; items: ReviewItemView[] }
  | { kind: 'progress-loaded'; progress: Progress }
  | { kind: 'move'; delta: 1 | -1 }
  | { kind: 'set-cursor'; cursor: number }
  | { kind: 'set-filter'; filter: Filter }
  | { kind: 'decide-optimistic'; imageId: string; verdict: Verdict }
  | { kind: 'decide-ack'; imageId: string; verdict: Verdict }
  | { kind: 'decide-rollback'; imageId: string; message: string }
  | { kind: 'service-error'; message: string }
  | { kind: 'banner-dismissed' };

export function initialState(): ReviewState {
  return { items: [], cursor: 0, filter: 'all', progress: null,
           banner: null, pendingRollback: {} };
}

export function currentItem(state: ReviewState): ReviewItemView | undefined {
  return visibleItems(state.items, state.filter)[state.cursor];
}

function withItem(items: ReviewItemView[], imageId: string,
                  update: (item: ReviewItemView) => ReviewItemView): ReviewItemView[] {
  return items.map((i) => (i.imageId === imageId ? update(i) : i));
}

export function reduce(state: ReviewState, action: Action): ReviewState {
  switch (action.kind) {
    case 'items-loaded': {
      const next = { ...state, items: action.items, banner: null,
                     pendingRollback: {} };
      const visible = visibleItems(next.items, next.filter);
      return { ...next, cursor: firstUndecidedIndex(visible) };
    }
    case 'progress-loaded':
      return { ...state, progress: action.progress };
    case 'move': {
      const visible = visibleItems(state.items, state.filter);
      return { ...state, cursor: moveCursor(state.cursor, visible.length, action.delta) };
    }
    case 'set-cursor': {
      const visible = visibleItems(state.items, state.filter);
      const clamped = Math.max(0, Math.min(action.cursor, visible.length - 1));
      return { ...state, cursor: clamped };
    }
    case 'set-filter': {
      const visible = visibleItems(state.items, action.filter);
      return { ...state, filter: action.filter,
               cursor: firstUndecidedIndex(visible) };
    }
    case 'decide-optimistic': {
      const item = state.items.find((i) => i.imageId === action.imageId);
      if (!item) return state;
      return {
        ...state,
        pendingRollback: { ...state.pendingRollback,
                           [action.imageId]: item.decisionState },
        items: withItem(state.items, action.imageId,
                        (i) => ({ ...i, decisionState: action.verdict })),
      };
    }
    case 'decide-ack': {
      const { [action.imageId]: _, ...rest } = state.pendingRollback;
      const items = withItem(state.items, action.imageId, (i) => ({
        ...i,
        decisionState: action.verdict,
        // an acknowledged invert changes the mask server-side: refetch overlay
        overlayVersion: action.verdict === 'invert'
          ? i.overlayVersion + 1 : i.overlayVersion,
      }));
      const visible = visibleItems(items, state.filter);
      return { ...state, items, pendingRollback: rest,
               cursor: cursorAfterDecision(state.cursor, visible.length) };
    }
    case 'decide-rollback': {
      const previous = state.pendingRollback[action.imageId];
      const { [action.imageId]: _, ...rest } = state.pendingRollback;
      const items = previous === undefined ? state.items
        : withItem(state.items, action.imageId,
                   (i) => ({ ...i, decisionState: previous }));
      return { ...state, items, pendingRollback: rest, banner: action.message };
    }
    case 'service-error':
      return { ...state, banner: action.message };
    case 'banner-dismissed':
      return { ...state, banner: null };
  }
}

export function overlaySrc(item: ReviewItemView): string {
  return `${item.overlayUrl}?v=${item.overlayVersion}`;
}
