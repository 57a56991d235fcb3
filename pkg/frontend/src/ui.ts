// Page assembly and event wiring. Layout: prompt form across the top,
// frame strip on the left, server log on the right. The store owns all
// request state; this module only projects it into the DOM.

import {
	ApiClient,
	type FetchLike,
	type GenerateRequest,
	type TemplateInfo,
} from "./api.js";
import { AppStore, type FrameView, type ViewState } from "./state.js";

export interface AppOptions {
	baseUrl?: string;
	fetchFn?: FetchLike;
}

export interface AppHandles {
	store: AppStore;
	input: HTMLInputElement;
	seedInput: HTMLInputElement;
	submitButton: HTMLButtonElement;
	form: HTMLFormElement;
	banner: HTMLElement;
	frameStrip: HTMLElement;
	logPanel: HTMLElement;
	templateBar: HTMLElement;
	/** Resolves once the template list request has settled. */
	templatesLoaded: Promise<void>;
	/** Resolves when the most recently submitted request has settled. */
	settled(): Promise<void>;
	selectedTemplate(): number | null;
}

function el<K extends keyof HTMLElementTagNameMap>(
	tag: K,
	className?: string,
): HTMLElementTagNameMap[K] {
	const node = document.createElement(tag);
	if (className) node.className = className;
	return node;
}

export function createApp(
	root: HTMLElement,
	options: AppOptions = {},
): AppHandles {
	const client = new ApiClient(options.baseUrl ?? "", options.fetchFn);
	const store = new AppStore();

	const banner = el("div", "banner");
	banner.hidden = true;
	banner.setAttribute("role", "alert");

	const input = el("input", "prompt-input");
	input.type = "text";
	input.placeholder = "describe a face, e.g. smug green frog";
	input.setAttribute("aria-label", "caption");

	const seedInput = el("input", "seed-input");
	seedInput.type = "number";
	seedInput.min = "0";
	seedInput.placeholder = "random";
	seedInput.setAttribute("aria-label", "seed");

	const advanced = el("details", "advanced");
	const summary = el("summary");
	summary.textContent = "advanced";
	const seedLabel = el("label");
	seedLabel.append("seed ", seedInput);
	advanced.append(summary, seedLabel);

	const submitButton = el("button", "submit-button");
	submitButton.type = "submit";
	submitButton.textContent = "generate";
	submitButton.disabled = true;

	const form = el("form", "prompt-form");
	form.append(input, advanced, submitButton);

	const templateBar = el("div", "template-bar");
	templateBar.hidden = true;

	const frameStrip = el("section", "frame-strip");
	frameStrip.setAttribute("aria-label", "frames");
	const logPanel = el("aside", "log-panel");
	logPanel.setAttribute("aria-label", "log");
	const logLines = el("pre", "log-lines");
	logPanel.append(logLines);

	const columns = el("main", "columns");
	columns.append(frameStrip, logPanel);

	root.append(banner, form, templateBar, columns);

	let selected: number | null = null;

	const templatesLoaded = client
		.templates()
		.then((templates) => {
			renderTemplateBar(templates);
			templateBar.hidden = templates.length === 0;
		})
		.catch(() => {
			// No template list; the server default applies.
			templateBar.hidden = true;
		});

	function renderTemplateBar(templates: TemplateInfo[]): void {
		for (const info of templates) {
			const chip = el("button", "template-chip");
			chip.type = "button";
			chip.dataset["templateId"] = String(info.id);
			chip.setAttribute("aria-pressed", "false");
			const thumb = el("img", "template-thumb");
			thumb.src = `data:image/png;base64,${info.thumbnail_b64}`;
			thumb.alt = `template ${info.id}`;
			const caption = el("span");
			caption.textContent = `#${info.id} (${info.member_count})`;
			chip.append(thumb, caption);
			chip.addEventListener("click", () => {
				if (selected === info.id) return;
				selected = info.id;
				for (const other of templateBar.querySelectorAll(".template-chip")) {
					const mine = other === chip;
					other.classList.toggle("selected", mine);
					other.setAttribute("aria-pressed", String(mine));
				}
			});
			templateBar.append(chip);
		}
	}

	// Frame strip rendering is an append when new frames extend the
	// previous list, and a rebuild when ordering changed underneath.
	let renderedFrames: FrameView[] = [];

	function renderFrames(frames: FrameView[]): void {
		const extendsRendered =
			frames.length >= renderedFrames.length &&
			renderedFrames.every((frame, i) => frames[i] === frame);
		if (!extendsRendered) {
			frameStrip.replaceChildren();
			renderedFrames = [];
		}
		for (const frame of frames.slice(renderedFrames.length)) {
			const figure = el("figure", "frame");
			figure.dataset["epoch"] = String(frame.epoch);
			const img = el("img", "frame-thumb");
			img.src = frame.imageUrl;
			img.alt = `epoch ${frame.epoch}`;
			const caption = el("figcaption");
			caption.textContent = `epoch ${frame.epoch} (${frame.elapsedMs} ms)`;
			figure.append(img, caption);
			frameStrip.append(figure);
		}
		renderedFrames = frames;
	}

	function render(state: ViewState): void {
		banner.hidden = state.error === null;
		banner.textContent = state.error ?? "";
		input.disabled = store.busy;
		seedInput.disabled = store.busy;
		submitButton.disabled = store.busy || input.value.trim() === "";
		renderFrames(state.frames);
		logLines.textContent = state.log.join("\n");
	}

	store.subscribe(render);
	input.addEventListener("input", () => {
		submitButton.disabled = store.busy || input.value.trim() === "";
	});

	let controller: AbortController | null = null;
	let lastRun: Promise<void> = Promise.resolve();

	// A submission while another request is in flight supersedes it:
	// the old token goes stale and the old stream can no longer paint.
	function submit(): void {
		const text = input.value.trim();
		if (text === "") return;
		controller?.abort();
		controller = new AbortController();
		const token = store.beginRequest();
		const request: GenerateRequest = { text };
		if (selected !== null) request.template_id = selected;
		const seed = parseSeed(seedInput.value);
		if (seed !== null) request.seed = seed;
		lastRun = client
			.generate(
				request,
				{
					onFrame: (frame) =>
						store.addFrame(token, {
							epoch: frame.epoch,
							imageUrl: `data:image/png;base64,${frame.image_b64}`,
							elapsedMs: frame.elapsed_ms,
						}),
					onDone: (log, resolution) => {
						store.appendLog(token, log);
						store.finish(token, resolution);
					},
				},
				controller.signal,
			)
			.catch((err: unknown) => {
				// Stale tokens are dropped inside the store, so a late
				// failure from a superseded request changes nothing.
				store.fail(token, describeError(err));
			});
	}

	form.addEventListener("submit", (event) => {
		event.preventDefault();
		submit();
	});

	return {
		store,
		input,
		seedInput,
		submitButton,
		form,
		banner,
		frameStrip,
		logPanel,
		templateBar,
		templatesLoaded,
		settled: () => lastRun,
		selectedTemplate: () => selected,
	};
}

function parseSeed(raw: string): number | null {
	const trimmed = raw.trim();
	if (trimmed === "") return null;
	const value = Number(trimmed);
	if (!Number.isFinite(value) || value < 0) return null;
	return Math.floor(value);
}

function describeError(err: unknown): string {
	if (err instanceof Error) return err.message;
	return String(err);
}
