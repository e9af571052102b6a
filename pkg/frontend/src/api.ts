import type { ApiItem, Progress, Verdict } from './types.js';

async function getJson<T>(url: string): Promise<T> {
  const resp = await fetch(url);
  if (!resp.ok) {
    throw new Error(`GET ${url} failed: ${resp.status}`);
  }
  return (await resp.json()) as T;
}

export function fetchItems(): Promise<ApiItem[]> {
  return getJson<ApiItem[]>('/api/items');
}

export function fetchProgress(): Promise<Progress> {
  return getJson<Progress>('/api/progress');
}

export async function postDecision(imageId: string, verdict: Verdict,
                                   reviewer: string): Promise<void> {
  const resp = await fetch('/api/decision', {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify({ imageId, verdict, reviewer }),
  });
  if (!resp.ok) {
    let message = `decision rejected: ${resp.status}`;
    try {
      const body = (await resp.json()) as { message?: string };
      if (body.message) message = body.message;
    } catch {
      // non-JSON error body: keep the status message
    }
    throw new Error(message);
  }
}
