// App wiring: live view (socket + canvas + control panel) and the layout
// editor. All logic lives in the imported modules; this file touches the DOM.
import { panelCommands, type ServerMessage } from "./protocol";
import { connectConsole } from "./socket";
import { ViewModel } from "./viewmodel";
import { computeDrawList, paint } from "./renderer";
import {
  applyTool,
  emptyDocument,
  exportLayout,
  importLayout,
  preset20x15,
  validateDocument,
  type EditorDocument,
  type Tool,
} from "./editor/model";

const $ = <T extends HTMLElement>(id: string): T => document.getElementById(id) as T;

// ---------------------------------------------------------------- live view
const vm = new ViewModel();
const canvas = $<HTMLCanvasElement>("grid");
const ctx = canvas.getContext("2d")!;
const wsUrl =
  new URLSearchParams(location.search).get("ws") ??
  `ws://${location.hostname || "127.0.0.1"}:8571`;

const socket = connectConsole(
  wsUrl,
  (msg: ServerMessage) => {
    if (msg.type === "snapshot") {
      vm.pushFrame(msg, performance.now());
      $("m-step").textContent = String(msg.step);
      $("m-completed").textContent = String(msg.metrics.completed);
      $("m-generated").textContent = String(msg.metrics.generated);
      $("m-failures").textContent = String(msg.metrics.failures);
    } else if (msg.type === "ack") {
      vm.lastAck = `${msg.command} applied at step ${msg.applied_step}`;
      $("ack").textContent = vm.lastAck;
      $("cmd-error").textContent = "";
    } else {
      vm.lastError = msg.message;
      $("cmd-error").textContent = msg.message;
    }
  },
  (connected) => {
    vm.connected = connected;
    $("conn-banner").classList.toggle("hidden", connected);
  },
);

$("btn-pause").onclick = () => socket.send(panelCommands.pause());
$("btn-resume").onclick = () => socket.send(panelCommands.resume());
$("btn-step").onclick = () => socket.send(panelCommands.stepOnce());
$<HTMLInputElement>("speed").oninput = (ev) => {
  const value = Number((ev.target as HTMLInputElement).value);
  $("speed-label").textContent = String(value);
  socket.send(panelCommands.setSpeed(value));
};
$("btn-inject").onclick = () => {
  const agv = vm.selectedAgv();
  if (agv) socket.send(panelCommands.injectFailure(agv.id));
};

canvas.onclick = (ev) => {
  if (!vm.latest) return;
  const rect = canvas.getBoundingClientRect();
  const cell = vm.cellAtPixel(ev.clientX - rect.left, ev.clientY - rect.top);
  if (!cell) return;
  const gy = vm.latest.height - 1 - cell.y; // canvas y is flipped
  const hit = vm
    .agvsAt(performance.now())
    .find(
      (a) =>
        cell.x >= Math.floor(a.ix) && cell.x < a.ix + a.footprint &&
        gy >= Math.floor(a.iy) && gy < a.iy + a.footprint,
    );
  vm.selection = hit ? { kind: "agv", id: hit.id } : { kind: "cell", x: cell.x, y: gy };
};

function renderLive(now: number) {
  if (vm.latest) {
    const frame = vm.latest;
    vm.camera.scale = Math.min(
      (canvas.width - 24) / frame.width,
      (canvas.height - 24) / frame.height,
    );
    const agvs = vm.agvsAt(now);
    paint(ctx, computeDrawList(frame, agvs, vm.selection), frame.height, vm.camera);

    const sel = vm.selectedAgv();
    $("btn-inject").toggleAttribute("disabled", !sel || sel.health !== "active");
    $("sel-info").textContent = sel
      ? `AGV ${sel.id} (${sel.footprint}x${sel.footprint})\n` +
        `health: ${sel.health}\ntask: ${sel.task ?? "-"}\nstage: ${sel.stage ?? "idle"}\n` +
        `carrying: ${sel.carrying ?? "-"}\ngoal: ${sel.goal ? sel.goal.join(",") : "-"}`
      : "click an AGV";
  }
  requestAnimationFrame(renderLive);
}
requestAnimationFrame(renderLive);

// ------------------------------------------------------------------ editor
let doc: EditorDocument = emptyDocument();
let tool: Tool = "shelf";
const edCanvas = $<HTMLCanvasElement>("editor-grid");
const edCtx = edCanvas.getContext("2d")!;

function renderEditor() {
  const scale = Math.min((edCanvas.width - 24) / doc.width, (edCanvas.height - 24) / doc.height);
  const camera = { offsetX: 12, offsetY: 12, scale };
  const frame = {
    proto: 1 as const,
    type: "snapshot" as const,
    step: 0,
    width: doc.width,
    height: doc.height,
    stations: doc.stations,
    obstacles: doc.obstacles.map((o) => [o.x, o.y] as [number, number]),
    agvs: doc.agvs.map((a) => ({
      id: a.id, x: a.x, y: a.y, heading: a.heading, footprint: a.footprint,
      health: "active" as const, carrying: null, stage: null, task: null, goal: null,
    })),
    shelves: doc.shelves.map((s) => ({ id: s.id, x: s.x, y: s.y, size: s.size, stored: true, carrier: null })),
    corridors: [],
    metrics: { completed: 0, generated: 0, expired: 0, failures: 0 },
    events: [],
  };
  const agvs = frame.agvs.map((a) => ({ ...a, ix: a.x, iy: a.y }));
  paint(edCtx, computeDrawList(frame, agvs, null), doc.height, camera);

  const violations = validateDocument(doc);
  $("ed-violations").textContent = violations.length
    ? violations.slice(0, 6).map((v) => `${v.message} @ ${JSON.stringify(v.cells)}`).join("\n")
    : "";
  $("ed-export").toggleAttribute("disabled", violations.length > 0);
  // highlight offending cells
  for (const v of violations) {
    for (const [cx, cy] of v.cells) {
      edCtx.strokeStyle = "#c0392b";
      edCtx.lineWidth = 3;
      edCtx.strokeRect(
        camera.offsetX + cx * scale,
        camera.offsetY + (doc.height - 1 - cy) * scale,
        scale,
        scale,
      );
    }
  }
}

document.querySelectorAll<HTMLButtonElement>(".tool").forEach((btn) => {
  btn.onclick = () => {
    document.querySelectorAll(".tool").forEach((b) => b.classList.remove("active"));
    btn.classList.add("active");
    tool = btn.dataset.tool as Tool;
  };
});

edCanvas.onclick = (ev) => {
  const rect = edCanvas.getBoundingClientRect();
  const scale = Math.min((edCanvas.width - 24) / doc.width, (edCanvas.height - 24) / doc.height);
  const x = Math.floor((ev.clientX - rect.left - 12) / scale);
  const yCanvas = Math.floor((ev.clientY - rect.top - 12) / scale);
  const y = doc.height - 1 - yCanvas;
  doc = applyTool(doc, tool, x, y);
  renderEditor();
};

$("ed-resize").onclick = () => {
  doc.width = Number($<HTMLInputElement>("ed-width").value);
  doc.height = Number($<HTMLInputElement>("ed-height").value);
  renderEditor();
};
$("ed-preset").onclick = () => {
  doc = preset20x15();
  renderEditor();
};
$("ed-clear").onclick = () => {
  doc = emptyDocument(doc.width, doc.height);
  renderEditor();
};
$("ed-export").onclick = () => {
  try {
    const text = exportLayout(doc);
    const blob = new Blob([text], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "layout.json";
    a.click();
    URL.revokeObjectURL(a.href);
  } catch (err) {
    $("ed-violations").textContent = String(err);
  }
};
$<HTMLInputElement>("ed-import").onchange = async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  doc = importLayout(await file.text());
  renderEditor();
};

// -------------------------------------------------------------------- tabs
$("tab-live").onclick = () => {
  $("view-live").classList.remove("hidden");
  $("view-editor").classList.add("hidden");
  $("tab-live").classList.add("active");
  $("tab-editor").classList.remove("active");
};
$("tab-editor").onclick = () => {
  $("view-editor").classList.remove("hidden");
  $("view-live").classList.add("hidden");
  $("tab-editor").classList.add("active");
  $("tab-live").classList.remove("active");
  renderEditor();
};
renderEditor();
