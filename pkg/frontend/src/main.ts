import { createApp } from "./app";
import "./style.css";

// The service origin is configurable at load time: `?api=<origin>` wins,
// then a global set by the embedding page, then the serve command's default.
declare global {
  interface Window {
    SEARCHUI_BASE?: string;
  }
}

const baseUrl =
  new URLSearchParams(window.location.search).get("api") ??
  window.SEARCHUI_BASE ??
  "http://127.0.0.1:8765";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app mount point");
}
createApp(root, { baseUrl, storage: window.sessionStorage }).start();
