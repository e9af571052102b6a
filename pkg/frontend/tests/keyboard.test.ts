import { describe, expect, it } from 'vitest';

import { actionForKey, isTypingTarget } from '../src/keyboard.js';

describe('actionForKey', () => {
  it('maps the decision shortcuts', () => {
    expect(actionForKey('a')).toEqual({ kind: 'decide', verdict: 'accept' });
    expect(actionForKey('I')).toEqual({ kind: 'decide', verdict: 'invert' });
    expect(actionForKey('x')).toEqual({ kind: 'decide', verdict: 'exclude' });
  });

  it('maps arrows to navigation', () => {
    expect(actionForKey('ArrowRight')).toEqual({ kind: 'move', delta: 1 });
    expect(actionForKey('ArrowLeft')).toEqual({ kind: 'move', delta: -1 });
  });

  it('ignores unrelated keys', () => {
    expect(actionForKey('Enter')).toBeNull();
    expect(actionForKey('q')).toBeNull();
  });
});

describe('isTypingTarget', () => {
  it('suppresses shortcuts inside form controls only', () => {
    expect(isTypingTarget('INPUT')).toBe(true);
    expect(isTypingTarget('TEXTAREA')).toBe(true);
    expect(isTypingTarget('DIV')).toBe(false);
    expect(isTypingTarget(undefined)).toBe(false);
  });
});
