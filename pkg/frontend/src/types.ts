// Wire types for the retrieval service JSON API.

export type SearchMode = 'vector' | 'lexical';

export interface SearchFilterBody {
  date_from: string | null;
  date_to: string | null;
  tickers: string[] | null;
  tags: string[] | null;
}

export interface SearchRequestBody {
  query: string;
  mode: SearchMode;
  k: number;
  filter: SearchFilterBody;
  highlight: boolean;
}

export interface HighlightSpan {
  char_start: number;
  char_end: number;
  score: number;
}

export interface SearchHit {
  passage_id: string;
  doc_id: string;
  score: number;
  context_line: string;
  body: string;
  highlights: HighlightSpan[];
}

export interface SearchResponse {
  hits: SearchHit[];
  latency_ms: number;
  index_version: string;
}
