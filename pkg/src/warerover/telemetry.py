"""Step-boundary telemetry streaming and queued run control over WebSocket.

Clients receive one full snapshot frame on connect, then a frame per step
(decimated to 20/s at high speeds). Control commands are queued and applied
only at step boundaries, each acknowledged with the step it took effect;
attaching clients never perturbs simulation results.
"""
from __future__ import annotations

import asyncio
import json
import logging
import threading
import time

from websockets.asyncio.server import broadcast, serve as ws_serve

from .engine import Simulation

log = logging.getLogger("warerover.telemetry")

MAX_FRAME_RATE = 20.0
COMMANDS = ("pause", "resume", "set_speed", "inject_failure", "step_once")


class SimulationController:
    """Single owner of the stepping loop; drains the command queue each boundary."""

    def __init__(self, sim: Simulation, speed: float = 5.0):
        self.sim = sim
        self.speed = max(0.1, speed)
        self.paused = False
        self.step_once = False
        self._commands: list[tuple[dict, object]] = []
        self._lock = threading.Lock()
        self._cursor = 0

    def submit(self, command: dict, reply) -> None:
        with self._lock:
            self._commands.append((command, reply))

    def apply_commands(self) -> list[tuple[dict, object, dict]]:
        """Apply queued commands at this boundary; returns (cmd, reply, ack)."""
        with self._lock:
            pending, self._commands = self._commands, []
        acks = []
        for cmd, reply in pending:
            kind = cmd.get("type")
            ack = {"type": "ack", "command": kind, "applied_step": self.sim.clock}
            if kind == "pause":
                self.paused = True
            elif kind == "resume":
                self.paused = False
            elif kind == "set_speed":
                self.speed = max(0.1, float(cmd.get("value", self.speed)))
            elif kind == "step_once":
                self.step_once = True
            elif kind == "inject_failure":
                agv = int(cmd["agv"])
                rt = self.sim.fleet.get(agv)
                if rt is None or not rt.state.active:
                    ack = {"type": "error",
                           "message": f"agv {agv} is not active", "command": kind}
                else:
                    self.sim.queue_injection(agv)
            acks.append((cmd, reply, ack))
        return acks

    def tick(self) -> dict | None:
        """Advance one boundary if running; always returns the current frame."""
        if not self.sim.done() and (not self.paused or self.step_once):
            self.sim.step()
            self.step_once = False
        frame, self._cursor = self.sim.snapshot(self._cursor)
        return frame


async def _serve_async(controller: SimulationController, host: str, port: int,
                       ready: threading.Event | None, stop: asyncio.Event):
    connections = set()

    async def handler(conn):
        connections.add(conn)
        try:
            frame, _ = controller.sim.snapshot(0)
            await conn.send(json.dumps(frame))
            async for message in conn:
                try:
                    cmd = json.loads(message)
                    if not isinstance(cmd, dict) or cmd.get("type") not in COMMANDS:
                        raise ValueError(f"unknown command {message[:80]!r}")
                except (ValueError, KeyError, TypeError) as exc:
                    await conn.send(json.dumps({"type": "error", "message": str(exc)}))
                    continue
                controller.submit(cmd, conn)
        finally:
            connections.discard(conn)

    async with ws_serve(handler, host, port) as server:
        if ready is not None:
            ready.set()
        last_frame = 0.0
        while not stop.is_set():
            for _cmd, reply, ack in controller.apply_commands():
                try:
                    await reply.send(json.dumps(ack))
                except Exception:  # noqa: BLE001 - client already gone
                    pass
            frame = controller.tick()
            now = time.monotonic()
            min_interval = 1.0 / MAX_FRAME_RATE if controller.speed > MAX_FRAME_RATE else 0.0
            if frame is not None and connections and now - last_frame >= min_interval:
                broadcast(connections, json.dumps(frame))
                last_frame = now
            try:
                await asyncio.wait_for(stop.wait(), timeout=1.0 / controller.speed)
            except asyncio.TimeoutError:
                pass
        server.close()


class TelemetryServer:
    """Runs the controller + WebSocket endpoint on a background event loop."""

    def __init__(self, sim: Simulation, port: int, host: str = "127.0.0.1",
                 speed: float = 5.0, start_paused: bool = False):
        self.controller = SimulationController(sim, speed=speed)
        self.controller.paused = start_paused
        self.host = host
        self.port = port
        self._loop: asyncio.AbstractEventLoop | None = None
        self._stop: asyncio.Event | None = None
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        ready = threading.Event()

        def _run():
            self._loop = asyncio.new_event_loop()
            asyncio.set_event_loop(self._loop)
            self._stop = asyncio.Event()
            self._loop.run_until_complete(
                _serve_async(self.controller, self.host, self.port, ready, self._stop)
            )
            self._loop.close()

        self._thread = threading.Thread(target=_run, daemon=True)
        self._thread.start()
        if not ready.wait(timeout=10):
            raise RuntimeError("telemetry server failed to start")

    def stop(self) -> None:
        if self._loop and self._stop:
            self._loop.call_soon_threadsafe(self._stop.set)
        if self._thread:
            self._thread.join(timeout=10)

    def serve_forever(self) -> None:
        ready = threading.Event()
        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        self._stop = asyncio.Event()
        log.info("telemetry listening on ws://%s:%d", self.host, self.port)
        self._loop.run_until_complete(
            _serve_async(self.controller, self.host, self.port, ready, self._stop)
        )
