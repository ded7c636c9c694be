import { ApiClient } from "./api.js";
import { mount } from "./render.js";
import { ConsultationStore } from "./state.js";

const meta = document.querySelector('meta[name="graphdx-api-base"]');
const api = new ApiClient(meta?.getAttribute("content") ?? "");
const store = new ConsultationStore(api);
const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app container");
}
mount(root, store);
