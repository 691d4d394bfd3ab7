import { describe, expect, it } from 'vitest';

import { clearError, renderError, renderResults } from '../src/results.js';
import type { SearchResponse } from '../src/types.js';

function response(hits: SearchResponse['hits']): SearchResponse {
  return { hits, latency_ms: 1.5, index_version: 'vabc+ldef@m1' };
}

describe('result rendering', () => {
  it('emphasizes exactly the span offsets, byte-faithfully', () => {
    const body = 'Acme raised FY24 dividend guidance. Weather was mild. The end.';
    const target = document.createElement('div');
    renderResults(target, response([
      {
        passage_id: 'p0',
        doc_id: 'd0',
        score: 0.9,
        context_line: 'Acme Corp (ACME) | call | 2023-05-01',
        body,
        highlights: [
          { char_start: 0, char_end: 35, score: 0.8 },
          { char_start: 36, char_end: 54, score: 0.2 },
        ],
      },
    ]));
    const rendered = target.querySelector('.passage-body') as HTMLElement;
    // byte-faithful: concatenated text equals the response body exactly
    expect(rendered.textContent).toBe(body);
    const marks = [...rendered.querySelectorAll('mark')].map((m) => m.textContent);
    expect(marks).toEqual([body.slice(0, 35), body.slice(36, 54)]);
  });

  it('renders context line and passage id per hit', () => {
    const target = document.createElement('div');
    renderResults(target, response([
      {
        passage_id: 'p7',
        doc_id: 'd7',
        score: 0.5,
        context_line: 'news | file.txt | 2023-07-14',
        body: 'Body text.',
        highlights: [],
      },
    ]));
    expect(target.querySelector('.context-line')?.textContent)
      .toBe('news | file.txt | 2023-07-14');
    expect((target.querySelector('.hit') as HTMLElement).dataset.passageId).toBe('p7');
  });

  it('handles unicode bodies without drift', () => {
    const body = 'Résultats: marge élevée — «très solide». Fin.';
    const target = document.createElement('div');
    renderResults(target, response([
      {
        passage_id: 'p1', doc_id: 'd1', score: 0.1, context_line: 'c', body,
        highlights: [{ char_start: 11, char_end: 24, score: 0.3 }],
      },
    ]));
    const rendered = target.querySelector('.passage-body') as HTMLElement;
    expect(rendered.textContent).toBe(body);
    expect(rendered.querySelector('mark')?.textContent).toBe(body.slice(11, 24));
  });

  it('replaces previous results on re-render', () => {
    const target = document.createElement('div');
    renderResults(target, response([
      { passage_id: 'a', doc_id: 'd', score: 1, context_line: 'c', body: 'one', highlights: [] },
    ]));
    renderResults(target, response([
      { passage_id: 'b', doc_id: 'd', score: 1, context_line: 'c', body: 'two', highlights: [] },
    ]));
    expect(target.querySelectorAll('.hit').length).toBe(1);
    expect(target.textContent).toContain('two');
    expect(target.textContent).not.toContain('one');
  });

  it('error banner shows and clears without touching results', () => {
    const banner = document.createElement('div');
    banner.hidden = true;
    renderError(banner, 'search failed: HTTP 503');
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain('503');
    clearError(banner);
    expect(banner.hidden).toBe(true);
  });
});
