// Rendering splits into a pure draw-list computation (unit-testable) and a
// thin canvas painter. Grid y grows north, canvas y grows down.
import type { SnapshotFrame } from "./protocol";
import type { InterpolatedAgv, Selection } from "./viewmodel";

export interface DrawRect {
  kind: "floor" | "shelf" | "shelf-away" | "station" | "obstacle" | "corridor" | "agv" | "goal" | "selection";
  x: number; // grid coords, anchor cell
  y: number;
  w: number; // in cells
  h: number;
  color: string;
  label?: string;
}

const STAGE_COLORS: Record<string, string> = {
  go_to_shelf: "#4d9de0",
  lift_shelf: "#7768ae",
  carry_to_station: "#e1953d",
  wait_service: "#d64550",
  return_shelf: "#3bb273",
  drop_shelf: "#7768ae",
};

export function agvColor(a: { health: string; stage: string | null }): string {
  if (a.health === "failed") return "#777777";
  if (a.stage && STAGE_COLORS[a.stage]) return STAGE_COLORS[a.stage];
  return "#2a9d8f"; // idle
}

export function computeDrawList(
  frame: SnapshotFrame,
  agvs: InterpolatedAgv[],
  selection: Selection,
): DrawRect[] {
  const out: DrawRect[] = [];
  out.push({ kind: "floor", x: 0, y: 0, w: frame.width, h: frame.height, color: "#f4f1ea" });
  for (const [ox, oy] of frame.obstacles) {
    out.push({ kind: "obstacle", x: ox, y: oy, w: 1, h: 1, color: "#3d3d3d" });
  }
  for (const s of frame.stations) {
    out.push({ kind: "station", x: s.x, y: s.y, w: 1, h: 1, color: "#ffd166", label: s.id });
  }
  // corridors get hazard styling, visually distinct from everything else
  for (const corridor of frame.corridors) {
    for (const [cx, cy] of corridor.cells) {
      out.push({ kind: "corridor", x: cx, y: cy, w: 1, h: 1, color: "rgba(214,69,80,0.45)" });
    }
  }
  for (const shelf of frame.shelves) {
    out.push({
      kind: shelf.stored ? "shelf" : "shelf-away",
      x: shelf.x,
      y: shelf.y,
      w: shelf.size,
      h: shelf.size,
      color: shelf.stored ? "#8d6a4f" : "rgba(141,106,79,0.25)",
      label: shelf.id,
    });
  }
  for (const a of agvs) {
    out.push({
      kind: "agv",
      x: a.ix,
      y: a.iy,
      w: a.footprint, // footprint-true: a 2x2 carrier draws 2x2
      h: a.footprint,
      color: agvColor(a),
      label: String(a.id),
    });
    if (selection && selection.kind === "agv" && selection.id === a.id) {
      out.push({ kind: "selection", x: a.ix, y: a.iy, w: a.footprint, h: a.footprint,
                 color: "#1d3557" });
      if (a.goal) {
        out.push({ kind: "goal", x: a.goal[0], y: a.goal[1], w: 1, h: 1, color: "#1d3557" });
      }
    }
  }
  return out;
}

export function paint(
  ctx: CanvasRenderingContext2D,
  rects: DrawRect[],
  gridHeight: number,
  camera: { offsetX: number; offsetY: number; scale: number },
): void {
  const { offsetX, offsetY, scale } = camera;
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  for (const r of rects) {
    const px = offsetX + r.x * scale;
    const py = offsetY + (gridHeight - r.y - r.h) * scale;
    const w = r.w * scale;
    const h = r.h * scale;
    if (r.kind === "selection") {
      ctx.strokeStyle = r.color;
      ctx.lineWidth = 3;
      ctx.strokeRect(px - 2, py - 2, w + 4, h + 4);
      continue;
    }
    if (r.kind === "goal") {
      ctx.strokeStyle = r.color;
      ctx.lineWidth = 2;
      ctx.setLineDash([4, 3]);
      ctx.strokeRect(px + 3, py + 3, w - 6, h - 6);
      ctx.setLineDash([]);
      continue;
    }
    ctx.fillStyle = r.color;
    if (r.kind === "corridor") {
      ctx.fillRect(px, py, w, h);
      ctx.strokeStyle = "#d64550";
      ctx.lineWidth = 1;
      ctx.setLineDash([3, 3]);
      ctx.strokeRect(px + 1, py + 1, w - 2, h - 2);
      ctx.setLineDash([]);
      continue;
    }
    ctx.fillRect(px, py, w, h);
    if (r.kind === "floor") {
      ctx.strokeStyle = "#ddd8cc";
      ctx.lineWidth = 1;
      for (let gx = 0; gx <= r.w; gx++) {
        ctx.beginPath();
        ctx.moveTo(offsetX + gx * scale, offsetY);
        ctx.lineTo(offsetX + gx * scale, offsetY + r.h * scale);
        ctx.stroke();
      }
      for (let gy = 0; gy <= r.h; gy++) {
        ctx.beginPath();
        ctx.moveTo(offsetX, offsetY + gy * scale);
        ctx.lineTo(offsetX + r.w * scale, offsetY + gy * scale);
        ctx.stroke();
      }
    }
    if (r.label && (r.kind === "agv" || r.kind === "station") && scale >= 20) {
      ctx.fillStyle = "#111";
      ctx.font = `${Math.floor(scale * 0.4)}px sans-serif`;
      ctx.textAlign = "center";
      ctx.textBaseline = "middle";
      ctx.fillText(r.label, px + w / 2, py + h / 2);
    }
  }
}
