import { httpClient } from "./api.js";
import { EditorApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("service") ?? "http://127.0.0.1:8000";
const seedParam = params.get("seed");

const root = document.getElementById("editor");
if (root instanceof HTMLElement) {
  const app = new EditorApp(root, httpClient(base));
  void app.start(seedParam === null ? undefined : Number(seedParam));
}
