// Typeahead dropdown over GET /autocomplete: debounced, minimum two typed
// characters, stale responses discarded via monotonically increasing ids.

export interface AutocompleteOptions {
  minChars?: number;
  debounceMs?: number;
  fetcher: (prefix: string) => Promise<string[]>;
  onSelect: (suggestion: string) => void;
}

export class Autocomplete {
  private readonly input: HTMLInputElement;
  private readonly list: HTMLElement;
  private readonly minChars: number;
  private readonly debounceMs: number;
  private readonly fetcher: (prefix: string) => Promise<string[]>;
  private readonly onSelect: (suggestion: string) => void;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private requestSeq = 0; // id of the newest issued request

  constructor(input: HTMLInputElement, list: HTMLElement, options: AutocompleteOptions) {
    this.input = input;
    this.list = list;
    this.minChars = options.minChars ?? 2;
    this.debounceMs = options.debounceMs ?? 150;
    this.fetcher = options.fetcher;
    this.onSelect = options.onSelect;
    input.addEventListener('input', () => this.onInput());
    input.addEventListener('keydown', (ev) => {
      if (ev.key === 'Escape') this.hide();
    });
  }

  private onInput(): void {
    const prefix = this.input.value;
    if (this.timer !== null) clearTimeout(this.timer);
    if (prefix.length < this.minChars) {
      this.requestSeq++; // invalidate anything in flight
      this.hide();
      return;
    }
    this.timer = setTimeout(() => void this.issue(prefix), this.debounceMs);
  }

  private async issue(prefix: string): Promise<void> {
    const id = ++this.requestSeq;
    let suggestions: string[];
    try {
      suggestions = await this.fetcher(prefix);
    } catch {
      this.hide(); // network failure: suggestions hidden, input untouched
      return;
    }
    if (id !== this.requestSeq) return; // a newer prefix superseded this one
    this.render(suggestions);
  }

  private render(suggestions: string[]): void {
    this.list.textContent = '';
    if (!suggestions.length) {
      this.hide();
      return;
    }
    for (const text of suggestions) {
      const item = document.createElement('li');
      item.className = 'suggestion';
      item.textContent = text; // verbatim server text
      item.addEventListener('mousedown', (ev) => {
        ev.preventDefault();
        this.input.value = text;
        this.hide();
        this.onSelect(text);
      });
      this.list.appendChild(item);
    }
    this.list.hidden = false;
  }

  hide(): void {
    this.list.hidden = true;
    this.list.textContent = '';
  }
}
