// DOM wiring for the playground: one tester steers both participants
// side by side while the robot's turn, LED, gaze, and addressee state
// feed back into the next move.

import { SessionClient } from "./session";
import {
  SessionView,
  addParticipant,
  addProvisionalUtterance,
  applyServerMessage,
  initialView,
} from "./viewModel";

let view: SessionView = initialView();
let client: SessionClient;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function render(): void {
  const banner = el<HTMLDivElement>("offline-banner");
  banner.style.display = client.isConnected ? "none" : "block";

  const led = el<HTMLSpanElement>("led");
  led.className = view.robot.listening ? "led on" : "led off";
  el<HTMLSpanElement>("current-speaker").textContent =
    view.robot.currentSpeaker ?? "nobody";
  el<HTMLSpanElement>("turn-trigger").textContent =
    view.robot.lastTurnTrigger ?? "none yet";
  const dial = el<HTMLDivElement>("gaze-needle");
  const angle = view.robot.gazeAngle;
  dial.style.transform = `rotate(${angle === null ? 90 : 180 - angle}deg)`;
  el<HTMLSpanElement>("gaze-label").textContent =
    angle === null ? "idle" : `${angle} deg`;

  const transcript = el<HTMLUListElement>("transcript");
  transcript.innerHTML = "";
  for (const entry of view.transcript) {
    const item = document.createElement("li");
    item.className = entry.kind + (entry.provisional ? " provisional" : "");
    const badge = document.createElement("span");
    badge.className = "badge";
    const colour = view.participants.find((p) => p.name === entry.speaker)?.colour;
    if (colour) badge.style.background = colour;
    badge.textContent = entry.kind === "robot" ? "Robot" : entry.speaker;
    item.appendChild(badge);
    const text = document.createElement("span");
    text.textContent = entry.truncated ? `${entry.text}…` : entry.text;
    item.appendChild(text);
    if (entry.kind === "robot") {
      const meta = document.createElement("span");
      meta.className = "meta";
      const addressee = entry.addressee ? ` to ${entry.addressee}` : "";
      const onset = entry.onsetMs === null ? "" : ` at +${(entry.onsetMs / 1000).toFixed(2)}s`;
      meta.textContent = `${addressee}${onset}`;
      item.appendChild(meta);
      if (entry.addressee) {
        item.classList.add("addressed");
      }
    }
    transcript.appendChild(item);
  }
  transcript.scrollTop = transcript.scrollHeight;

  const errors = el<HTMLDivElement>("errors");
  errors.textContent = view.errors.slice(-3).join(" | ");

  renderPanes();
}

function renderPanes(): void {
  const host = el<HTMLDivElement>("panes");
  for (const participant of view.participants) {
    if (document.getElementById(`pane-${participant.name}`)) continue;
    const pane = document.createElement("div");
    pane.className = "pane";
    pane.id = `pane-${participant.name}`;
    pane.style.borderTopColor = participant.colour;

    const title = document.createElement("h3");
    title.textContent = `${participant.name} @ ${participant.angle} deg`;
    pane.appendChild(title);

    const input = document.createElement("input");
    input.placeholder = "say something";
    pane.appendChild(input);

    const facing = document.createElement("label");
    const facingBox = document.createElement("input");
    facingBox.type = "checkbox";
    facingBox.checked = true;
    facing.appendChild(facingBox);
    facing.appendChild(document.createTextNode(" facing the robot"));
    pane.appendChild(facing);

    const say = document.createElement("button");
    say.textContent = "Say";
    say.onclick = () => {
      if (!input.value.trim()) return;
      view = addProvisionalUtterance(view, participant.name, input.value);
      client.utterance(participant.name, input.value, facingBox.checked);
      input.value = "";
      render();
    };
    pane.appendChild(say);

    const hold = document.createElement("button");
    hold.textContent = "Hold to speak";
    hold.onmousedown = () => client.speech(participant.name, "start");
    hold.onmouseup = () => client.speech(participant.name, "end");
    hold.onmouseleave = () => client.speech(participant.name, "end");
    pane.appendChild(hold);

    host.appendChild(pane);
  }
}

function wireJoinForm(): void {
  const name = el<HTMLInputElement>("join-name");
  const angle = el<HTMLInputElement>("join-angle");
  const button = el<HTMLButtonElement>("join-button");
  button.onclick = () => {
    const angleDeg = Number(angle.value);
    if (!name.value.trim()) return;
    if (!(angleDeg >= 0 && angleDeg < 180)) {
      // participants sit in front of the robot; reject locally
      view = { ...view, errors: [...view.errors, `seat angle must be in [0, 180)`] };
      render();
      return;
    }
    view = addParticipant(view, name.value.trim(), angleDeg);
    client.join(name.value.trim(), angleDeg);
    name.value = "";
    render();
  };
}

export function start(url?: string): void {
  const target = url ?? `ws://${location.hostname}:8790`;
  client = new SessionClient(target, {
    onMessage: (message) => {
      view = applyServerMessage(view, message);
      render();
    },
    onConnectionChange: () => render(),
  });
  client.connect();
  wireJoinForm();
  render();
}

if (typeof document !== "undefined" && document.getElementById("panes")) {
  start();
}
