import type { SearchMode, SearchRequestBody } from './types.js';

// Single source of truth for the controls; every request is serialized from
// this and nothing else, so what you see is what gets sent.
export interface UiState {
  query: string;
  mode: SearchMode;
  k: number;
  dateFrom: string; // ISO date or ''
  dateTo: string;
  tickers: string[];
  tags: string[];
}

export function initialState(): UiState {
  return {
    query: '',
    mode: 'vector',
    k: 10,
    dateFrom: '',
    dateTo: '',
    tickers: [],
    tags: [],
  };
}

export function toSearchRequest(state: UiState): SearchRequestBody {
  return {
    query: state.query,
    mode: state.mode,
    k: state.k,
    filter: {
      date_from: state.dateFrom || null,
      date_to: state.dateTo || null,
      tickers: state.tickers.length ? [...state.tickers] : null,
      tags: state.tags.length ? [...state.tags] : null,
    },
    highlight: true,
  };
}
