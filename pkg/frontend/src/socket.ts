// Reconnecting WebSocket wrapper: the server replays a full snapshot on
// every (re)connect, so resync is free.
import { encodeCommand, parseServerMessage, type ControlCommand, type ServerMessage } from "./protocol";

export interface ConsoleSocket {
  send(cmd: ControlCommand): void;
  close(): void;
}

export function connectConsole(
  url: string,
  onMessage: (msg: ServerMessage) => void,
  onStatus: (connected: boolean) => void,
): ConsoleSocket {
  let ws: WebSocket | null = null;
  let closed = false;
  let retryMs = 500;

  const open = () => {
    ws = new WebSocket(url);
    ws.onopen = () => {
      retryMs = 500;
      onStatus(true);
    };
    ws.onmessage = (ev) => {
      const msg = parseServerMessage(String(ev.data));
      if (msg) onMessage(msg);
    };
    ws.onclose = () => {
      onStatus(false);
      if (!closed) {
        setTimeout(open, retryMs);
        retryMs = Math.min(retryMs * 2, 8000);
      }
    };
    ws.onerror = () => {
      // onclose drives the retry
    };
  };
  open();

  return {
    send(cmd: ControlCommand) {
      if (ws && ws.readyState === WebSocket.OPEN) {
        ws.send(encodeCommand(cmd));
      }
    },
    close() {
      closed = true;
      ws?.close();
    },
  };
}
