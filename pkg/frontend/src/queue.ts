import type { Filter, ReviewItemView } from './types.js';

/**
 * Review ordering: undecided items first, then decided ones, each group
 * stable by image id so the traversal never jumps around on refresh.
 */
export function orderQueue(items: ReviewItemView[]): ReviewItemView[] {
  const byId = (a: ReviewItemView, b: ReviewItemView) =>
    a.imageId < b.imageId ? -1 : a.imageId > b.imageId ? 1 : 0;
  const undecided = items.filter((i) => i.decisionState === 'undecided').sort(byId);
  const decided = items.filter((i) => i.decisionState !== 'undecided').sort(byId);
  return [...undecided, ...decided];
}

export function visibleItems(items: ReviewItemView[], filter: Filter): ReviewItemView[] {
  const ordered = orderQueue(items);
  return filter === 'undecided'
    ? ordered.filter((i) => i.decisionState === 'undecided')
    : ordered;
}

/** Arrow-key navigation wraps around the visible queue. */
export function moveCursor(cursor: number, length: number, delta: 1 | -1): number {
  if (length <= 0) return 0;
  return (cursor + delta + length) % length;
}

/** Index of the first undecided item, or 0 when everything is decided. */
export function firstUndecidedIndex(items: ReviewItemView[]): number {
  const idx = items.findIndex((i) => i.decisionState === 'undecided');
  return idx >= 0 ? idx : 0;
}

/**
 * Cursor position after a decision: stay in place so the next undecided
 * item (which slides into this slot under the undecided-first order)
 * becomes current, clamping to the end of the possibly shrunken queue.
 */
export function cursorAfterDecision(cursor: number, visibleLength: number): number {
  if (visibleLength <= 0) return 0;
  return Math.min(cursor, visibleLength - 1);
}
