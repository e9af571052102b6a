import type { Verdict } from './types.js';

export type UiAction =
  | { kind: 'decide'; verdict: Verdict }
  | { kind: 'move'; delta: 1 | -1 }
  | null;

/** A=accept, I=invert, X=exclude, arrow keys navigate the queue. */
export function actionForKey(key: string): UiAction {
  switch (key.length === 1 ? key.toLowerCase() : key) {
    case 'a':
      return { kind: 'decide', verdict: 'accept' };
    case 'i':
      return { kind: 'decide', verdict: 'invert' };
    case 'x':
      return { kind: 'decide', verdict: 'exclude' };
    case 'ArrowRight':
    case 'ArrowDown':
      return { kind: 'move', delta: 1 };
    case 'ArrowLeft':
    case 'ArrowUp':
      return { kind: 'move', delta: -1 };
    default:
      return null;
  }
}

/** Ignore shortcuts while the user is typing into a form control. */
export function isTypingTarget(tagName: string | undefined): boolean {
  return tagName === 'INPUT' || tagName === 'TEXTAREA' || tagName === 'SELECT';
}
