import { ComposerApi } from "./api.js";
import { ComposerApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? "http://127.0.0.1:8000";

const app = new ComposerApp(new ComposerApi(base), document);
void app.start();
