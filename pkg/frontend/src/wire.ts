// Wire schema for the gateway message channel. Field shapes mirror
// docs/wire-schema.md in the engine repository exactly; the playground
// never invents state that is not on the wire.

export interface WireEnvelope<T extends string, B> {
  type: T;
  session: string;
  body: B;
}

// client -> server
export type JoinMsg = WireEnvelope<"join", { name: string; angle_deg: number }>;
export type UtteranceMsg = WireEnvelope<
  "utterance",
  { participant: string; text: string; facing_robot: boolean }
>;
export type SpeechMsg = WireEnvelope<
  "speech",
  { participant: string; state: "start" | "end" }
>;
export type ConfigMsg = WireEnvelope<"config", { noise: Record<string, number> }>;
export type ClientMessage = JoinMsg | UtteranceMsg | SpeechMsg | ConfigMsg;

// server -> client
export type RobotSayMsg = WireEnvelope<
  "robot_say",
  { text: string; addressee: string | null; onset_ms: number }
>;
export type StateMsg = WireEnvelope<
  "state",
  { listening: boolean; current_speaker: string | null; gaze_angle: number | null }
>;
export type TurnMsg = WireEnvelope<"turn", { trigger: string }>;
export type TranscriptMsg = WireEnvelope<
  "transcript",
  { participant: string; text: string }
>;
export type ErrorMsg = WireEnvelope<"error", { message: string }>;
export type ServerMessage = RobotSayMsg | StateMsg | TurnMsg | TranscriptMsg | ErrorMsg;

export function clientMessage<T extends ClientMessage["type"]>(
  type: T,
  session: string,
  body: Extract<ClientMessage, { type: T }>["body"],
): ClientMessage {
  return { type, session, body } as ClientMessage;
}
