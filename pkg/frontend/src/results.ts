import type { SearchHit, SearchResponse } from './types.js';

// Renders hits with highlight spans emphasized. Server text is never
// transformed: the concatenated text content of a rendered body equals the
// response body byte for byte, with <mark> wrapping exactly the span offsets.

function renderBody(hit: SearchHit): HTMLElement {
  const container = document.createElement('p');
  container.className = 'passage-body';
  const body = hit.body;
  let cursor = 0;
  for (const span of hit.highlights) {
    if (span.char_start > cursor) {
      container.appendChild(document.createTextNode(body.slice(cursor, span.char_start)));
    }
    const mark = document.createElement('mark');
    mark.textContent = body.slice(span.char_start, span.char_end);
    mark.title = `relevance ${span.score.toFixed(3)}`;
    container.appendChild(mark);
    cursor = span.char_end;
  }
  if (cursor < body.length) {
    container.appendChild(document.createTextNode(body.slice(cursor)));
  }
  return container;
}

export function renderResults(target: HTMLElement, response: SearchResponse): void {
  target.textContent = '';
  const meta = document.createElement('div');
  meta.className = 'results-meta';
  meta.textContent =
    `${response.hits.length} hits · ${response.latency_ms.toFixed(1)} ms · ` +
    `index ${response.index_version}`;
  target.appendChild(meta);

  for (const hit of response.hits) {
    const card = document.createElement('article');
    card.className = 'hit';
    card.dataset.passageId = hit.passage_id;

    const context = document.createElement('header');
    context.className = 'context-line';
    context.textContent = hit.context_line;
    card.appendChild(context);

    card.appendChild(renderBody(hit));

    const score = document.createElement('footer');
    score.className = 'hit-score';
    score.textContent = `score ${hit.score.toFixed(4)} · ${hit.passage_id}`;
    card.appendChild(score);

    target.appendChild(card);
  }
}

export function renderError(banner: HTMLElement, message: string): void {
  banner.textContent = message;
  banner.hidden = false;
}

export function clearError(banner: HTMLElement): void {
  banner.hidden = true;
  banner.textContent = '';
}
