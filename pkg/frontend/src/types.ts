export type Verdict = 'accept' | 'invert' | 'exclude';
export type DecisionState = 'undecided' | Verdict;
export type Filter = 'all' | 'undecided';

export interface ReviewItemView {
  imageId: string;
  overlayUrl: string;
  borderFraction: number;
  autoInverted: boolean;
  decisionState: DecisionState;
  /** bumped after an acknowledged invert so the flipped overlay is refetched */
  overlayVersion: number;
}

export interface Progress {
  total: number;
  decided: number;
  undecided: number;
  verdicts: Record<Verdict, number>;
}

/** Raw /api/items entry as the service sends it. */
export interface ApiItem {
  imageId: string;
  status: 'auto' | 'failed';
  borderFraction: number;
  autoInverted: boolean;
  failureReason: string;
  decision: Verdict | null;
  reviewer: string | null;
  overlayUrl: string;
}

export function toItemView(item: ApiItem): ReviewItemView {
  return {
    imageId: item.imageId,
    overlayUrl: item.overlayUrl,
    borderFraction: item.borderFraction,
    autoInverted: item.autoInverted,
    decisionState: item.decision ?? 'undecided',
    overlayVersion: 0,
  };
}
