import { AnnotatorApp } from './app.js';

function annotatorId(): string {
  const params = new URLSearchParams(window.location.search);
  const fromUrl = params.get('annotator');
  if (fromUrl) {
    localStorage.setItem('annotator', fromUrl);
    return fromUrl;
  }
  const stored = localStorage.getItem('annotator');
  if (stored) return stored;
  const entered = window.prompt('Annotator id:') || `anon-${Date.now()}`;
  localStorage.setItem('annotator', entered);
  return entered;
}

const root = document.getElementById('app');
if (root) {
  new AnnotatorApp(root, { annotator: annotatorId() });
}
