// Pure form-state machine for one image's three 5-point choices.
//
// Keys 1..5 map to -2..2 on the active row; v/a/d jump rows; a filled row
// auto-advances the cursor to the next unset row. Submit is possible only
// when all three dimensions are chosen.

import type { Dim } from './api.js';

export const DIMS: Dim[] = ['v', 'a', 'd'];
export const SCALE = [-2, -1, 0, 1, 2];
export const KEY_TO_VALUE: Record<string, number> = {
  '1': -2, '2': -1, '3': 0, '4': 1, '5': 2,
};

export interface FormState {
  selections: Partial<Record<Dim, number>>;
  activeRow: Dim;
  referenceVisible: boolean;
}

export function freshForm(): FormState {
  return { selections: {}, activeRow: 'v', referenceVisible: false };
}

export function canSubmit(s: FormState): boolean {
  return DIMS.every((d) => s.selections[d] !== undefined);
}

function nextUnsetRow(s: FormState, after: Dim): Dim {
  const start = DIMS.indexOf(after);
  for (let step = 1; step <= DIMS.length; step++) {
    const cand = DIMS[(start + step) % DIMS.length];
    if (s.selections[cand] === undefined) return cand;
  }
  return after;
}

export function setValue(s: FormState, dim: Dim, value: number): FormState {
  if (!SCALE.includes(value)) return s; // controls are the only input path
  const selections = { ...s.selections, [dim]: value };
  const moved = { ...s, selections };
  return { ...moved, activeRow: nextUnsetRow(moved, dim) };
}

export type KeyAction =
  | { kind: 'state'; state: FormState }
  | { kind: 'submit' }
  | { kind: 'none' };

export function pressKey(s: FormState, key: string): KeyAction {
  if (key in KEY_TO_VALUE) {
    return { kind: 'state', state: setValue(s, s.activeRow, KEY_TO_VALUE[key]) };
  }
  if (key === 'v' || key === 'a' || key === 'd') {
    return { kind: 'state', state: { ...s, activeRow: key } };
  }
  if (key === 'r') {
    return { kind: 'state', state: { ...s, referenceVisible: !s.referenceVisible } };
  }
  if (key === 'Enter' && canSubmit(s)) {
    return { kind: 'submit' };
  }
  return { kind: 'none' };
}
