// Typed client for the synthesis service HTTP API.
// Everything the UI renders comes through these schemas; no other
// channel to the backend exists.

export interface GenerateRequest {
	text: string;
	template_id?: number;
	seed?: number;
}

export interface Frame {
	epoch: number;
	image_b64: string;
	elapsed_ms: number;
}

export interface GenerateResponse {
	frames: Frame[];
	log: string[];
	resolution: number;
}

export interface TemplateInfo {
	id: number;
	member_count: number;
	thumbnail_b64: string;
}

export interface HealthInfo {
	status: string;
	n_checkpoints: number;
}

export interface GenerateEvents {
	onFrame(frame: Frame): void;
	onDone(log: string[], resolution: number): void;
}

export class ApiError extends Error {
	constructor(
		public status: number,
		detail: string,
	) {
		super(detail);
		this.name = "ApiError";
	}
}

interface StreamRecord {
	frame?: Frame;
	done?: boolean;
	log?: string[];
	resolution?: number;
}

export type FetchLike = (
	input: string,
	init?: RequestInit,
) => Promise<Response>;

export class ApiClient {
	constructor(
		private baseUrl: string = "",
		private fetchFn: FetchLike = (input, init) => fetch(input, init),
	) {}

	async health(): Promise<HealthInfo> {
		const res = await this.fetchFn(`${this.baseUrl}/health`);
		if (!res.ok) throw await toApiError(res);
		return (await res.json()) as HealthInfo;
	}

	async templates(): Promise<TemplateInfo[]> {
		const res = await this.fetchFn(`${this.baseUrl}/templates`);
		if (!res.ok) throw await toApiError(res);
		return (await res.json()) as TemplateInfo[];
	}

	/**
	 * Run one generation request, delivering frames through `events` as
	 * they arrive. Asks the server to stream; when the response comes
	 * back as a plain JSON document instead, the frames are replayed
	 * from it so callers see the same event sequence either way.
	 */
	async generate(
		request: GenerateRequest,
		events: GenerateEvents,
		signal?: AbortSignal,
	): Promise<void> {
		const res = await this.fetchFn(`${this.baseUrl}/generate?stream=true`, {
			method: "POST",
			headers: { "content-type": "application/json" },
			body: JSON.stringify(request),
			signal,
		});
		if (!res.ok) throw await toApiError(res);

		const contentType = res.headers.get("content-type") ?? "";
		if (res.body && contentType.includes("ndjson")) {
			await this.consumeStream(res.body, events);
			return;
		}
		const doc = (await res.json()) as GenerateResponse;
		for (const frame of doc.frames) events.onFrame(frame);
		events.onDone(doc.log, doc.resolution);
	}

	private async consumeStream(
		body: ReadableStream<Uint8Array>,
		events: GenerateEvents,
	): Promise<void> {
		const reader = body.getReader();
		const decoder = new TextDecoder();
		let buffered = "";
		for (;;) {
			const { done, value } = await reader.read();
			if (done) break;
			buffered += decoder.decode(value, { stream: true });
			let newline: number;
			while ((newline = buffered.indexOf("\n")) >= 0) {
				const line = buffered.slice(0, newline).trim();
				buffered = buffered.slice(newline + 1);
				if (line) dispatchRecord(JSON.parse(line) as StreamRecord, events);
			}
		}
		const tail = (buffered + decoder.decode()).trim();
		if (tail) dispatchRecord(JSON.parse(tail) as StreamRecord, events);
	}
}

function dispatchRecord(record: StreamRecord, events: GenerateEvents): void {
	if (record.frame) {
		events.onFrame(record.frame);
	} else if (record.done) {
		events.onDone(record.log ?? [], record.resolution ?? 0);
	}
}

async function toApiError(res: Response): Promise<ApiError> {
	let detail = `request failed with status ${res.status}`;
	try {
		const doc = (await res.json()) as { detail?: unknown };
		if (typeof doc.detail === "string") detail = doc.detail;
	} catch {
		// non-JSON error body, keep the generic message
	}
	return new ApiError(res.status, detail);
}
