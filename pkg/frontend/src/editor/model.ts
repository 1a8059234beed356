// Layout editor document: palette placement plus validation that mirrors the
// server's rules, so anything exported here loads server-side unchanged.

export type Heading = "N" | "E" | "S" | "W";

export interface EditorShelf {
  id: string;
  x: number;
  y: number;
  size: 1 | 2;
  contents: { sku: string; count: number }[];
}

export interface EditorStation {
  id: string;
  x: number;
  y: number;
  service_time: number;
}

export interface EditorAgv {
  id: number;
  x: number;
  y: number;
  heading: Heading;
  footprint: 1 | 2;
  steps_per_cell: number;
  turn_cost: number;
  kind: string;
}

export interface EditorDocument {
  width: number;
  height: number;
  shelves: EditorShelf[];
  stations: EditorStation[];
  parking: { x: number; y: number }[];
  obstacles: { x: number; y: number }[];
  agvs: EditorAgv[];
}

export interface Violation {
  message: string;
  cells: [number, number][];
}

export type Tool = "shelf" | "shelf2" | "station" | "parking" | "obstacle" | "agv" | "agv2" | "erase";

export function emptyDocument(width = 20, height = 15): EditorDocument {
  return { width, height, shelves: [], stations: [], parking: [], obstacles: [], agvs: [] };
}

export function footprintCells(x: number, y: number, size: number): [number, number][] {
  const out: [number, number][] = [];
  for (let dx = 0; dx < size; dx++) {
    for (let dy = 0; dy < size; dy++) {
      out.push([x + dx, y + dy]);
    }
  }
  return out;
}

const key = (x: number, y: number) => `${x},${y}`;

function nextId(prefix: string, existing: string[]): string {
  let i = 0;
  const taken = new Set(existing);
  while (taken.has(`${prefix}${i}`)) i++;
  return `${prefix}${i}`;
}

export function applyTool(doc: EditorDocument, tool: Tool, x: number, y: number): EditorDocument {
  const d: EditorDocument = JSON.parse(JSON.stringify(doc));
  if (x < 0 || y < 0 || x >= d.width || y >= d.height) return d;
  if (tool === "erase") {
    d.shelves = d.shelves.filter((s) => !footprintCells(s.x, s.y, s.size).some(([cx, cy]) => cx === x && cy === y));
    d.stations = d.stations.filter((s) => s.x !== x || s.y !== y);
    d.parking = d.parking.filter((c) => c.x !== x || c.y !== y);
    d.obstacles = d.obstacles.filter((c) => c.x !== x || c.y !== y);
    d.agvs = d.agvs.filter((a) => !footprintCells(a.x, a.y, a.footprint).some(([cx, cy]) => cx === x && cy === y));
    return d;
  }
  if (tool === "shelf" || tool === "shelf2") {
    const id = nextId("S", d.shelves.map((s) => s.id));
    const size = tool === "shelf2" ? 2 : 1;
    d.shelves.push({ id, x, y, size: size as 1 | 2, contents: [{ sku: `sku_${id}`, count: 100 }] });
  } else if (tool === "station") {
    d.stations.push({ id: nextId("R", d.stations.map((s) => s.id)), x, y, service_time: 2 });
  } else if (tool === "parking") {
    d.parking.push({ x, y });
  } else if (tool === "obstacle") {
    d.obstacles.push({ x, y });
  } else if (tool === "agv" || tool === "agv2") {
    const ids = d.agvs.map((a) => a.id);
    const id = ids.length ? Math.max(...ids) + 1 : 0;
    d.agvs.push({
      id, x, y, heading: "N",
      footprint: tool === "agv2" ? 2 : 1,
      steps_per_cell: 1, turn_cost: 0, kind: "carrier",
    });
  }
  return d;
}

/** Same rule set as the server-side loader; export is blocked until empty. */
export function validateDocument(doc: EditorDocument): Violation[] {
  const out: Violation[] = [];
  if (doc.width < 1 || doc.height < 1) {
    out.push({ message: `grid must be at least 1x1, got ${doc.width}x${doc.height}`, cells: [] });
    return out;
  }
  const inBounds = ([x, y]: [number, number]) => x >= 0 && y >= 0 && x < doc.width && y < doc.height;

  const occupied = new Map<string, string>();
  for (const s of doc.shelves) {
    if (s.size !== 1 && s.size !== 2) {
      out.push({ message: `shelf ${s.id}: size must be 1 or 2`, cells: [[s.x, s.y]] });
      continue;
    }
    for (const c of footprintCells(s.x, s.y, s.size)) {
      if (!inBounds(c)) out.push({ message: `shelf ${s.id}: cell out of bounds`, cells: [c] });
      else if (occupied.has(key(...c))) {
        out.push({ message: `shelf ${s.id} overlaps ${occupied.get(key(...c))}`, cells: [c] });
      } else occupied.set(key(...c), `shelf ${s.id}`);
    }
    for (const item of s.contents) {
      if (item.count < 0) out.push({ message: `shelf ${s.id}: negative count`, cells: [[s.x, s.y]] });
    }
  }
  for (const s of doc.stations) {
    const c: [number, number] = [s.x, s.y];
    if (!inBounds(c)) out.push({ message: `station ${s.id}: out of bounds`, cells: [c] });
    else if (s.service_time < 1) out.push({ message: `station ${s.id}: service_time must be >= 1`, cells: [c] });
    else if (occupied.has(key(...c))) {
      out.push({ message: `station ${s.id} overlaps ${occupied.get(key(...c))}`, cells: [c] });
    } else occupied.set(key(...c), `station ${s.id}`);
  }
  for (const o of doc.obstacles) {
    const c: [number, number] = [o.x, o.y];
    if (!inBounds(c)) out.push({ message: "obstacle out of bounds", cells: [c] });
    else if (occupied.has(key(...c))) {
      out.push({ message: `obstacle overlaps ${occupied.get(key(...c))}`, cells: [c] });
    } else occupied.set(key(...c), "obstacle");
  }
  for (const p of doc.parking) {
    if (!inBounds([p.x, p.y])) out.push({ message: "parking cell out of bounds", cells: [[p.x, p.y]] });
  }

  const seen = new Set<number>();
  const agvCells = new Map<string, number>();
  const stationCells = new Set(doc.stations.map((s) => key(s.x, s.y)));
  const obstacleCells = new Set(doc.obstacles.map((o) => key(o.x, o.y)));
  for (const a of doc.agvs) {
    if (seen.has(a.id)) out.push({ message: `duplicate agv id ${a.id}`, cells: [[a.x, a.y]] });
    seen.add(a.id);
    if (a.footprint !== 1 && a.footprint !== 2) {
      out.push({ message: `agv ${a.id}: footprint must be 1 or 2`, cells: [[a.x, a.y]] });
      continue;
    }
    if (a.steps_per_cell < 1) out.push({ message: `agv ${a.id}: steps_per_cell must be >= 1`, cells: [[a.x, a.y]] });
    if (a.turn_cost < 0) out.push({ message: `agv ${a.id}: turn_cost must be >= 0`, cells: [[a.x, a.y]] });
    for (const c of footprintCells(a.x, a.y, a.footprint)) {
      if (!inBounds(c)) out.push({ message: `agv ${a.id}: start cell out of bounds`, cells: [c] });
      else if (obstacleCells.has(key(...c))) out.push({ message: `agv ${a.id}: starts on obstacle`, cells: [c] });
      else if (stationCells.has(key(...c))) out.push({ message: `agv ${a.id}: starts on station`, cells: [c] });
      else if (agvCells.has(key(...c))) {
        out.push({ message: `agv ${a.id}: overlaps agv ${agvCells.get(key(...c))}`, cells: [c] });
      } else agvCells.set(key(...c), a.id);
    }
  }
  return out;
}

/** Emit the layout file format the server loads; identical key set. */
export function exportLayout(doc: EditorDocument): string {
  const violations = validateDocument(doc);
  if (violations.length) {
    throw new Error(`document invalid: ${violations[0].message}`);
  }
  return JSON.stringify(
    {
      width: doc.width,
      height: doc.height,
      shelves: doc.shelves.map((s) => ({
        id: s.id, x: s.x, y: s.y, size: s.size,
        contents: s.contents.map((c) => ({ sku: c.sku, count: c.count })),
      })),
      stations: doc.stations.map((s) => ({ id: s.id, x: s.x, y: s.y, service_time: s.service_time })),
      parking: doc.parking.map((p) => ({ x: p.x, y: p.y })),
      obstacles: doc.obstacles.map((o) => ({ x: o.x, y: o.y })),
      agvs: doc.agvs.map((a) => ({
        id: a.id, x: a.x, y: a.y, heading: a.heading, footprint: a.footprint,
        steps_per_cell: a.steps_per_cell, turn_cost: a.turn_cost, kind: a.kind,
      })),
    },
    null,
    2,
  );
}

export function importLayout(text: string): EditorDocument {
  const data = JSON.parse(text);
  return {
    width: data.width,
    height: data.height,
    shelves: (data.shelves ?? []).map((s: EditorShelf) => ({ ...s, contents: s.contents ?? [] })),
    stations: data.stations ?? [],
    parking: data.parking ?? [],
    obstacles: data.obstacles ?? [],
    agvs: data.agvs ?? [],
  };
}

/** The 20x15 / 9-AGV / 32-shelf / 8-station floor, authored with the palette. */
export function preset20x15(): EditorDocument {
  let doc = emptyDocument(20, 15);
  const stationXs = [1, 3, 6, 8, 11, 13, 16, 18];
  for (const x of stationXs) doc = applyTool(doc, "station", x, 0);
  const parkXs = [1, 3, 5, 7, 10, 12, 14, 16, 18];
  for (const x of parkXs) {
    doc = applyTool(doc, "parking", x, 14);
    doc = applyTool(doc, "agv", x, 14);
  }
  const shelfCols = [2, 3, 4, 6, 7, 8];
  for (const y of [4, 5, 7, 8]) {
    for (const x of shelfCols) doc = applyTool(doc, "shelf", x, y);
  }
  for (const y of [4, 5]) {
    for (const x of [10, 11, 12, 14]) doc = applyTool(doc, "shelf", x, y);
  }
  return doc;
}
