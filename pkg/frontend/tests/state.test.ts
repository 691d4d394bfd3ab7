import { describe, expect, it } from 'vitest';

import { initialState, toSearchRequest } from '../src/state.js';

describe('request serialization', () => {
  it('serializes exactly the control state', () => {
    const state = initialState();
    state.query = 'Acme FY24 guidance';
    state.mode = 'lexical';
    state.k = 25;
    state.dateFrom = '2023-01-01';
    state.dateTo = '2023-12-31';
    state.tickers = ['ACME', 'GLBX'];
    state.tags = ['transcript'];

    expect(toSearchRequest(state)).toEqual({
      query: 'Acme FY24 guidance',
      mode: 'lexical',
      k: 25,
      filter: {
        date_from: '2023-01-01',
        date_to: '2023-12-31',
        tickers: ['ACME', 'GLBX'],
        tags: ['transcript'],
      },
      highlight: true,
    });
  });

  it('maps empty controls to null filter fields', () => {
    const state = initialState();
    state.query = 'q';
    expect(toSearchRequest(state)).toEqual({
      query: 'q',
      mode: 'vector',
      k: 10,
      filter: { date_from: null, date_to: null, tickers: null, tags: null },
      highlight: true,
    });
  });

  it('snapshot: a request body round-trips through JSON unchanged', () => {
    const state = initialState();
    state.query = 'pulpwood costs';
    state.tickers = ['UPM'];
    const body = toSearchRequest(state);
    expect(JSON.parse(JSON.stringify(body))).toEqual(body);
    expect(JSON.stringify(body)).toMatchSnapshot();
  });

  it('does not alias mutable arrays into the request', () => {
    const state = initialState();
    state.query = 'q';
    state.tickers = ['ACME'];
    const body = toSearchRequest(state);
    state.tickers.push('ZZZZ');
    expect(body.filter.tickers).toEqual(['ACME']);
  });
});
