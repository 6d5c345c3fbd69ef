// WebSocket client for the gateway. Messages sent while disconnected
// are queued and flushed on reconnect; the UI shows an offline banner
// driven by the connection state callbacks.

import type { ClientMessage, ServerMessage } from "./wire";
import { clientMessage } from "./wire";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((event: { data: string }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
}

export interface SessionClientOptions {
  onMessage: (message: ServerMessage) => void;
  onConnectionChange?: (connected: boolean) => void;
  socketFactory?: (url: string) => SocketLike;
}

export class SessionClient {
  private socket: SocketLike | null = null;
  private queue: ClientMessage[] = [];
  private connected = false;
  readonly sessionId: string;

  constructor(private readonly url: string, private readonly options: SessionClientOptions) {
    this.sessionId = `web-${Math.random().toString(36).slice(2, 10)}`;
  }

  connect(): void {
    const factory =
      this.options.socketFactory ?? ((url: string) => new WebSocket(url) as unknown as SocketLike);
    const socket = factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.connected = true;
      this.options.onConnectionChange?.(true);
      for (const queued of this.queue.splice(0)) {
        socket.send(JSON.stringify(queued));
      }
    };
    socket.onclose = () => {
      this.connected = false;
      this.options.onConnectionChange?.(false);
    };
    socket.onmessage = (event) => {
      this.options.onMessage(JSON.parse(event.data) as ServerMessage);
    };
  }

  get isConnected(): boolean {
    return this.connected;
  }

  private send(message: ClientMessage): void {
    if (this.connected && this.socket) {
      this.socket.send(JSON.stringify(message));
    } else {
      this.queue.push(message);
    }
  }

  join(name: string, angleDeg: number): void {
    this.send(clientMessage("join", this.sessionId, { name, angle_deg: angleDeg }));
  }

  utterance(participant: string, text: string, facingRobot: boolean): void {
    this.send(
      clientMessage("utterance", this.sessionId, {
        participant,
        text,
        facing_robot: facingRobot,
      }),
    );
  }

  speech(participant: string, state: "start" | "end"): void {
    this.send(clientMessage("speech", this.sessionId, { participant, state }));
  }

  configureNoise(noise: Record<string, number>): void {
    this.send(clientMessage("config", this.sessionId, { noise }));
  }

  close(): void {
    this.socket?.close();
  }
}
