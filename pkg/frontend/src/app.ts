import { fetchSuggestions, postSearch } from './api.js';
import { Autocomplete } from './autocomplete.js';
import { clearError, renderError, renderResults } from './results.js';
import { initialState, toSearchRequest, UiState } from './state.js';
import type { SearchMode } from './types.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function renderChips(container: HTMLElement, values: string[], onRemove: (v: string) => void): void {
  container.textContent = '';
  for (const value of values) {
    const chip = document.createElement('span');
    chip.className = 'chip';
    chip.textContent = value;
    const x = document.createElement('button');
    x.className = 'chip-remove';
    x.textContent = '×';
    x.addEventListener('click', () => onRemove(value));
    chip.appendChild(x);
    container.appendChild(chip);
  }
}

export function startApp(): void {
  const state: UiState = initialState();

  const queryInput = el<HTMLInputElement>('query');
  const suggestionList = el<HTMLElement>('suggestions');
  const resultsPane = el<HTMLElement>('results');
  const errorBanner = el<HTMLElement>('error-banner');
  const dateFrom = el<HTMLInputElement>('date-from');
  const dateTo = el<HTMLInputElement>('date-to');
  const tickerInput = el<HTMLInputElement>('ticker-input');
  const tickerChips = el<HTMLElement>('ticker-chips');
  const tagInput = el<HTMLInputElement>('tag-input');
  const tagChips = el<HTMLElement>('tag-chips');
  const kSelect = el<HTMLSelectElement>('k-select');

  function syncChips(): void {
    renderChips(tickerChips, state.tickers, (v) => {
      state.tickers = state.tickers.filter((t) => t !== v);
      syncChips();
    });
    renderChips(tagChips, state.tags, (v) => {
      state.tags = state.tags.filter((t) => t !== v);
      syncChips();
    });
  }

  async function runSearch(): Promise<void> {
    state.query = queryInput.value;
    if (!state.query.trim()) return;
    const request = toSearchRequest(state);
    try {
      const response = await postSearch(request);
      clearError(errorBanner);
      renderResults(resultsPane, response);
    } catch (err) {
      // keep the last successful results on screen
      renderError(errorBanner, err instanceof Error ? err.message : String(err));
    }
  }

  new Autocomplete(queryInput, suggestionList, {
    fetcher: (prefix) => fetchSuggestions(prefix),
    onSelect: () => void runSearch(),
  });

  el<HTMLFormElement>('search-form').addEventListener('submit', (ev) => {
    ev.preventDefault();
    void runSearch();
  });

  for (const radio of document.querySelectorAll<HTMLInputElement>('input[name="mode"]')) {
    radio.addEventListener('change', () => {
      state.mode = radio.value as SearchMode;
      if (queryInput.value.trim()) void runSearch(); // rerun in the other mode
    });
  }

  dateFrom.addEventListener('change', () => (state.dateFrom = dateFrom.value));
  dateTo.addEventListener('change', () => (state.dateTo = dateTo.value));
  kSelect.addEventListener('change', () => (state.k = Number(kSelect.value)));

  function chipAdder(input: HTMLInputElement, values: () => string[], push: (v: string) => void) {
    input.addEventListener('keydown', (ev) => {
      if (ev.key !== 'Enter') return;
      ev.preventDefault();
      const value = input.value.trim();
      if (value && !values().includes(value)) {
        push(value);
        syncChips();
      }
      input.value = '';
    });
  }

  chipAdder(tickerInput, () => state.tickers, (v) => state.tickers.push(v.toUpperCase()));
  chipAdder(tagInput, () => state.tags, (v) => state.tags.push(v));

  syncChips();
}

if (typeof document !== 'undefined' && document.getElementById('search-form')) {
  startApp();
}
