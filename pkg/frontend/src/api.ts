// Typed client for the annotation service JSON API.

export type Dim = 'v' | 'a' | 'd';

export interface NextResponse {
  done: boolean;
  image_index: number | null;
  labeled: number;
  total: number;
}

export interface AnnotationBody {
  image_index: number;
  annotator_id: string;
  v: number;
  a: number;
  d: number;
  overwrite?: boolean;
}

export interface StoredRecord {
  image_index: number;
  annotator_id: string;
  v: number;
  a: number;
  d: number;
  timestamp: number;
  reviewed: boolean;
}

export interface ReferenceAnchor {
  emotion: string;
  v: number;
  a: number;
  d: number;
}

export interface ReferenceResponse {
  dimensions: Record<string, string>;
  scale: number[];
  anchors: ReferenceAnchor[];
}

export interface ProgressResponse {
  annotator: string;
  labeled: number;
  total: number;
}

export type PostResult =
  | { kind: 'created'; record: StoredRecord }
  | { kind: 'duplicate'; existing: StoredRecord }
  | { kind: 'rejected'; detail: string };

export class ApiClient {
  constructor(private readonly baseUrl: string = '') {}

  imageUrl(index: number): string {
    return `${this.baseUrl}/api/image/${index}`;
  }

  async next(annotator: string): Promise<NextResponse> {
    const r = await fetch(
      `${this.baseUrl}/api/next?annotator=${encodeURIComponent(annotator)}`);
    if (!r.ok) throw new Error(`next failed: ${r.status}`);
    return r.json();
  }

  async submit(body: AnnotationBody): Promise<PostResult> {
    const r = await fetch(`${this.baseUrl}/api/annotation`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (r.status === 201) return { kind: 'created', record: await r.json() };
    if (r.status === 409) {
      const payload = await r.json();
      return { kind: 'duplicate', existing: payload.detail.existing };
    }
    const payload = await r.json().catch(() => ({ detail: `status ${r.status}` }));
    return { kind: 'rejected', detail: JSON.stringify(payload.detail) };
  }

  async reference(): Promise<ReferenceResponse> {
    const r = await fetch(`${this.baseUrl}/api/reference`);
    if (!r.ok) throw new Error(`reference failed: ${r.status}`);
    return r.json();
  }

  async progress(annotator: string): Promise<ProgressResponse> {
    const r = await fetch(
      `${this.baseUrl}/api/progress?annotator=${encodeURIComponent(annotator)}`);
    if (!r.ok) throw new Error(`progress failed: ${r.status}`);
    return r.json();
  }
}
