import type { SearchRequestBody, SearchResponse } from './types.js';

// Service base URL: runtime-configurable via a global set in index.html (or a
// config file loaded before the app), falling back to same-origin :8080.
export function serviceUrl(): string {
  const override = (globalThis as { FINSEARCH_URL?: string }).FINSEARCH_URL;
  return (override ?? 'http://127.0.0.1:8080').replace(/\/$/, '');
}

export async function postSearch(body: SearchRequestBody): Promise<SearchResponse> {
  const resp = await fetch(`${serviceUrl()}/search`, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    throw new Error(`search failed: HTTP ${resp.status}`);
  }
  return (await resp.json()) as SearchResponse;
}

export async function fetchSuggestions(prefix: string, k = 8): Promise<string[]> {
  const params = new URLSearchParams({ prefix, k: String(k) });
  const resp = await fetch(`${serviceUrl()}/autocomplete?${params}`);
  if (!resp.ok) {
    throw new Error(`autocomplete failed: HTTP ${resp.status}`);
  }
  const data = (await resp.json()) as { suggestions: string[] };
  return data.suggestions;
}
