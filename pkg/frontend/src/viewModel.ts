// The session view is a pure function of the received message log:
// replaying a captured log reproduces the identical view model. No
// engine decision is computed here; the client only renders what the
// gateway said happened.

import type { ServerMessage } from "./wire";

export interface ParticipantView {
  name: string;
  angle: number;
  colour: string;
}

export interface TranscriptEntry {
  kind: "user" | "robot";
  speaker: string;
  text: string;
  addressee: string | null;
  onsetMs: number | null;
  // onset gap to the previous robot reply, from server times only
  gapMs: number | null;
  provisional: boolean;
  truncated: boolean;
}

export interface RobotView {
  listening: boolean;
  currentSpeaker: string | null;
  gazeAngle: number | null;
  lastTurnTrigger: string | null;
}

export interface SessionView {
  participants: ParticipantView[];
  transcript: TranscriptEntry[];
  robot: RobotView;
  errors: string[];
  lastReplyOnsetMs: number | null;
}

const COLOURS = ["#4c78a8", "#f58518", "#54a24b", "#b279a2"];

export function initialView(): SessionView {
  return {
    participants: [],
    transcript: [],
    robot: { listening: true, currentSpeaker: null, gazeAngle: null, lastTurnTrigger: null },
    errors: [],
    lastReplyOnsetMs: null,
  };
}

export function addParticipant(view: SessionView, name: string, angle: number): SessionView {
  if (view.participants.some((p) => p.name === name)) {
    return view;
  }
  const colour = COLOURS[view.participants.length % COLOURS.length];
  return { ...view, participants: [...view.participants, { name, angle, colour }] };
}

export function addProvisionalUtterance(view: SessionView, speaker: string, text: string): SessionView {
  const entry: TranscriptEntry = {
    kind: "user", speaker, text, addressee: null,
    onsetMs: null, gapMs: null, provisional: true, truncated: false,
  };
  return { ...view, transcript: [...view.transcript, entry] };
}

export function applyServerMessage(view: SessionView, message: ServerMessage): SessionView {
  switch (message.type) {
    case "state": {
      const { listening, current_speaker, gaze_angle } = message.body;
      return {
        ...view,
        robot: {
          ...view.robot,
          listening,
          currentSpeaker: current_speaker,
          gazeAngle: gaze_angle,
        },
      };
    }
    case "turn":
      return { ...view, robot: { ...view.robot, lastTurnTrigger: message.body.trigger } };
    case "transcript": {
      // confirm the oldest matching provisional echo, if any
      const transcript = [...view.transcript];
      const index = transcript.findIndex(
        (e) => e.provisional && e.kind === "user" && e.text === message.body.text,
      );
      const entry: TranscriptEntry = {
        kind: "user",
        speaker: message.body.participant,
        text: message.body.text,
        addressee: null,
        onsetMs: null,
        gapMs: null,
        provisional: false,
        truncated: false,
      };
      if (index >= 0) {
        transcript[index] = entry;
      } else {
        transcript.push(entry);
      }
      return { ...view, transcript };
    }
    case "robot_say": {
      const { text, addressee, onset_ms } = message.body;
      // A repeat with a known onset is the interruption-safe correction:
      // the reply truncates in place to the words actually spoken.
      const existing = view.transcript.findIndex(
        (e) => e.kind === "robot" && e.onsetMs === onset_ms,
      );
      if (existing >= 0) {
        const transcript = [...view.transcript];
        transcript[existing] = { ...transcript[existing], text, truncated: true };
        return { ...view, transcript };
      }
      const gap = view.lastReplyOnsetMs === null ? null : onset_ms - view.lastReplyOnsetMs;
      const entry: TranscriptEntry = {
        kind: "robot",
        speaker: "robot",
        text,
        addressee,
        onsetMs: onset_ms,
        gapMs: gap,
        provisional: false,
        truncated: false,
      };
      return {
        ...view,
        transcript: [...view.transcript, entry],
        lastReplyOnsetMs: onset_ms,
      };
    }
    case "error":
      return { ...view, errors: [...view.errors, message.body.message] };
    default:
      return view;
  }
}

export function replayLog(messages: ServerMessage[]): SessionView {
  let view = initialView();
  for (const message of messages) {
    view = applyServerMessage(view, message);
  }
  return view;
}
