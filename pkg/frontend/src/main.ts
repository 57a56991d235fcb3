import { createApp } from "./ui.js";

declare global {
	interface Window {
		SERVICE_BASE_URL?: string;
	}
}

const root = document.getElementById("app");
if (root) {
	createApp(root, { baseUrl: window.SERVICE_BASE_URL ?? "" });
}
