// Client-side state: the last two frames (for interpolation), camera,
// selection, connection status. Rendering is a pure function of this —
// there is no simulation logic here beyond linear interpolation.
import type { AgvFrame, SnapshotFrame } from "./protocol";

export interface Camera {
  offsetX: number;
  offsetY: number;
  scale: number; // pixels per cell
}

export type Selection = { kind: "agv"; id: number } | { kind: "cell"; x: number; y: number } | null;

export interface InterpolatedAgv extends AgvFrame {
  ix: number;
  iy: number;
}

export class ViewModel {
  previous: SnapshotFrame | null = null;
  latest: SnapshotFrame | null = null;
  latestAt = 0; // ms timestamp when latest arrived
  frameGapMs = 200;
  camera: Camera = { offsetX: 12, offsetY: 12, scale: 32 };
  selection: Selection = null;
  connected = false;
  lastAck: string | null = null;
  lastError: string | null = null;

  pushFrame(frame: SnapshotFrame, nowMs: number): void {
    if (this.latest && nowMs > this.latestAt) {
      this.frameGapMs = Math.min(Math.max(nowMs - this.latestAt, 16), 2000);
    }
    this.previous = this.latest;
    this.latest = frame;
    this.latestAt = nowMs;
  }

  /** Poses interpolated linearly between the two most recent frames. */
  agvsAt(nowMs: number): InterpolatedAgv[] {
    if (!this.latest) return [];
    const cur = this.latest.agvs;
    if (!this.previous || this.previous.step >= this.latest.step) {
      return cur.map((a) => ({ ...a, ix: a.x, iy: a.y }));
    }
    const prevById = new Map(this.previous.agvs.map((a) => [a.id, a]));
    const t = Math.min(Math.max((nowMs - this.latestAt) / this.frameGapMs, 0), 1);
    return cur.map((a) => {
      const p = prevById.get(a.id);
      if (!p) return { ...a, ix: a.x, iy: a.y };
      return { ...a, ix: p.x + (a.x - p.x) * t, iy: p.y + (a.y - p.y) * t };
    });
  }

  selectedAgv(): AgvFrame | null {
    if (!this.latest || !this.selection || this.selection.kind !== "agv") return null;
    return this.latest.agvs.find((a) => a.id === (this.selection as { id: number }).id) ?? null;
  }

  cellAtPixel(px: number, py: number): { x: number; y: number } | null {
    if (!this.latest) return null;
    const { offsetX, offsetY, scale } = this.camera;
    const gx = Math.floor((px - offsetX) / scale);
    const gy = Math.floor((py - offsetY) / scale);
    return { x: gx, y: gy };
  }

  /** Grid y grows north; canvas y grows down. Height comes from the layout. */
  toPixel(gridX: number, gridY: number, gridHeight: number): { px: number; py: number } {
    const { offsetX, offsetY, scale } = this.camera;
    return {
      px: offsetX + gridX * scale,
      py: offsetY + (gridHeight - 1 - gridY) * scale,
    };
  }
}
