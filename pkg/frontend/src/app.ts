// DOM wiring: renders the annotation screen, drives it from keyboard or
// mouse, and talks to the service. The service is the single source of
// truth; after every successful submit the app simply asks for the next
// image, so a page refresh resumes exactly where the service says.

import { ApiClient, ReferenceResponse, StoredRecord } from './api.js';
import {
  DIMS,
  FormState,
  KEY_TO_VALUE,
  SCALE,
  canSubmit,
  freshForm,
  pressKey,
  setValue,
} from './state.js';
import type { Dim } from './api.js';

const DIM_NAMES: Record<Dim, string> = {
  v: 'Valence', a: 'Arousal', d: 'Dominance',
};

export interface AppOptions {
  baseUrl?: string;
  annotator: string;
}

export class AnnotatorApp {
  readonly api: ApiClient;
  state: FormState = freshForm();
  currentIndex: number | null = null;
  private readonly root: HTMLElement;
  private readonly annotator: string;
  private reference: ReferenceResponse | null = null;
  private pending: Promise<void> = Promise.resolve();
  private readonly keyHandler: (e: KeyboardEvent) => void;

  constructor(root: HTMLElement, opts: AppOptions) {
    this.root = root;
    this.annotator = opts.annotator;
    this.api = new ApiClient(opts.baseUrl ?? '');
    this.root.innerHTML = this.skeleton();
    this.bindButtons();
    this.keyHandler = (e) => this.onKey(e);
    this.root.ownerDocument.addEventListener('keydown', this.keyHandler);
    this.enqueue(async () => {
      this.reference = await this.api.reference();
      this.renderReference();
      await this.loadNext();
    });
  }

  /** resolves once all queued async work (fetches, submits) has finished */
  settle(): Promise<void> {
    return this.pending;
  }

  dispose(): void {
    this.root.ownerDocument.removeEventListener('keydown', this.keyHandler);
  }

  private enqueue(task: () => Promise<void>): void {
    this.pending = this.pending.then(task).catch((err) => {
      this.showBanner(`network trouble: ${err}; your selections are kept - retry`, true);
    });
  }

  // ------------------------------------------------------------------ dom

  private skeleton(): string {
    const rows = DIMS.map((dim) => {
      const buttons = SCALE.map((val, i) =>
        `<button class="value-btn" data-dim="${dim}" data-value="${val}">` +
        `${val}<span class="hint">${i + 1}</span></button>`).join('');
      return `<div class="dim-row" data-row="${dim}">` +
        `<span class="dim-label">${DIM_NAMES[dim]} <kbd>${dim}</kbd></span>${buttons}</div>`;
    }).join('');
    return `
      <header><h1>VAD annotation</h1><span id="progress"></span></header>
      <div id="banner" hidden></div>
      <main>
        <div id="image-panel"><img id="face" alt="face to annotate" width="288" height="288"></div>
        <div id="form-panel">
          ${rows}
          <button id="submit" disabled>submit <kbd>Enter</kbd></button>
          <div id="dup-panel" hidden>
            <p id="dup-text"></p>
            <button id="overwrite">replace previous label</button>
            <button id="keep">keep previous, skip ahead</button>
          </div>
        </div>
      </main>
      <section id="reference" hidden></section>
      <div id="done-panel" hidden></div>
      <footer>keys: <kbd>1</kbd>-<kbd>5</kbd> pick value (-2..2), <kbd>v</kbd>/<kbd>a</kbd>/<kbd>d</kbd> switch row,
        <kbd>r</kbd> reference card, <kbd>Enter</kbd> submit</footer>`;
  }

  private el<T extends HTMLElement>(selector: string): T {
    const found = this.root.querySelector(selector);
    if (!found) throw new Error(`missing element ${selector}`);
    return found as T;
  }

  private bindButtons(): void {
    for (const btn of this.root.querySelectorAll<HTMLButtonElement>('.value-btn')) {
      btn.addEventListener('click', () => {
        const dim = btn.dataset.dim as Dim;
        this.state = setValue(this.state, dim, Number(btn.dataset.value));
        this.render();
      });
    }
    this.el<HTMLButtonElement>('#submit').addEventListener('click', () => this.trySubmit());
    this.el<HTMLButtonElement>('#overwrite').addEventListener('click', () =>
      this.trySubmit(true));
    this.el<HTMLButtonElement>('#keep').addEventListener('click', () => {
      this.el('#dup-panel').hidden = true;
      this.state = freshForm();
      this.enqueue(() => this.loadNext());
    });
  }

  private onKey(e: KeyboardEvent): void {
    if (this.currentIndex === null) return;
    const action = pressKey(this.state, e.key);
    if (action.kind === 'state') {
      this.state = action.state;
      this.render();
    } else if (action.kind === 'submit') {
      this.trySubmit();
    }
  }

  // ------------------------------------------------------------------ flow

  private async loadNext(): Promise<void> {
    const next = await this.api.next(this.annotator);
    this.el('#banner').hidden = true;
    this.el('#dup-panel').hidden = true;
    if (next.done) {
      this.currentIndex = null;
      const done = this.el('#done-panel');
      done.hidden = false;
      done.textContent =
        `All images labeled - you contributed ${next.labeled} of ${next.total}. Thank you!`;
      this.el('main').hidden = true;
      this.renderProgress(next.labeled, next.total);
      return;
    }
    this.currentIndex = next.image_index;
    const img = this.el<HTMLImageElement>('#face');
    img.src = this.api.imageUrl(next.image_index as number);
    this.state = freshForm();
    this.renderProgress(next.labeled, next.total);
    this.render();
  }

  private trySubmit(overwrite = false): void {
    if (!canSubmit(this.state) || this.currentIndex === null) return;
    const body = {
      image_index: this.currentIndex,
      annotator_id: this.annotator,
      v: this.state.selections.v as number,
      a: this.state.selections.a as number,
      d: this.state.selections.d as number,
      overwrite,
    };
    this.enqueue(async () => {
      const result = await this.api.submit(body);
      if (result.kind === 'created') {
        this.state = freshForm();
        await this.loadNext();
      } else if (result.kind === 'duplicate') {
        this.showDuplicate(result.existing);
      } else {
        this.showBanner(`rejected: ${result.detail}`, true);
      }
    });
  }

  // ------------------------------------------------------------------ render

  private render(): void {
    for (const row of this.root.querySelectorAll<HTMLElement>('.dim-row')) {
      const dim = row.dataset.row as Dim;
      row.classList.toggle('active', dim === this.state.activeRow);
      for (const btn of row.querySelectorAll<HTMLButtonElement>('.value-btn')) {
        btn.classList.toggle('selected',
          this.state.selections[dim] === Number(btn.dataset.value));
      }
    }
    this.el<HTMLButtonElement>('#submit').disabled = !canSubmit(this.state);
    this.el('#reference').hidden = !this.state.referenceVisible;
  }

  private renderProgress(labeled: number, total: number): void {
    this.el('#progress').textContent = `${labeled} / ${total} labeled`;
  }

  private renderReference(): void {
    if (!this.reference) return;
    const defs = Object.entries(this.reference.dimensions)
      .map(([name, text]) => `<dt>${name}</dt><dd>${text}</dd>`).join('');
    const anchorRows = this.reference.anchors.map((a) =>
      `<tr data-emotion="${a.emotion}"><td>${a.emotion}</td>` +
      `<td>${a.v}</td><td>${a.a}</td><td>${a.d}</td></tr>`).join('');
    this.el('#reference').innerHTML = `
      <h2>Reference <kbd>r</kbd></h2>
      <dl>${defs}</dl>
      <table><thead><tr><th>emotion</th><th>V</th><th>A</th><th>D</th></tr></thead>
      <tbody>${anchorRows}</tbody></table>`;
  }

  private showDuplicate(existing: StoredRecord): void {
    const panel = this.el('#dup-panel');
    panel.hidden = false;
    this.el('#dup-text').textContent =
      `You already labeled image ${existing.image_index} as ` +
      `(${existing.v}, ${existing.a}, ${existing.d}). Replace it?`;
  }

  private showBanner(text: string, visible: boolean): void {
    const banner = this.el('#banner');
    banner.hidden = !visible;
    banner.textContent = text;
  }
}

export { KEY_TO_VALUE };
