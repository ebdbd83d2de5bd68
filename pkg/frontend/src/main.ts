// Boot: connect to the session server, bind keyboard and buttons, and
// re-render on every inbound frame.

import { SessionClient } from "./client.js";
import type { ClientAction, PolicyId } from "./protocol.js";
import { CellState, initialState, isLegal, reduce } from "./state.js";
import { ACTIONS, render } from "./view.js";

let state: CellState = initialState();

const params = new URLSearchParams(window.location.search);
const serverUrl =
  params.get("server") ?? `ws://${window.location.hostname}:8750/ws/session`;

const client = new SessionClient(
  serverUrl,
  (frame) => {
    state = reduce(state, frame);
    render(state);
  },
  (conn) => {
    state = { ...state, connection: conn };
    if (conn === "closed" && state.status === "running") {
      state = { ...state, status: "aborted" };
    }
    render(state);
  },
);

function act(action: ClientAction): void {
  if (isLegal(state, action)) client.act(action);
}

document.getElementById("start-btn")!.addEventListener("click", () => {
  const select = document.getElementById("policy") as HTMLSelectElement;
  client.start(select.value as PolicyId);
});

for (const { action } of ACTIONS) {
  document
    .getElementById(`btn-${action}`)!
    .addEventListener("click", () => act(action));
}

// Keyboard-first: number keys map to the four actions so motor time, not
// mouse travel, dominates the measured placement rhythm.
window.addEventListener("keydown", (event) => {
  const hit = ACTIONS.find((a) => a.key === event.key);
  if (hit) {
    event.preventDefault();
    act(hit.action);
  }
});

render(state);
client.connect();
