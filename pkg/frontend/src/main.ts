import { ConsoleApi } from "./api.js";
import { createConsole } from "./console.js";

/**
 * Browser entry point. Server and token come from query parameters so
 * the page can be served as plain static files:
 *
 *   index.html?server=http://127.0.0.1:7400&token=campus-admin
 *
 * Defaults match the dev server defaults.
 */
function bootstrap(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const params = new URLSearchParams(window.location.search);
  const api = new ConsoleApi({
    baseUrl: params.get("server") ?? "http://127.0.0.1:7400",
    token: params.get("token") ?? "campus-admin",
  });
  const ui = createConsole({ root, api });
  ui.start().catch((err) => {
    root.innerHTML = `<p class="error">feed stopped: ${String(err)}</p>`;
  });
}

bootstrap();
