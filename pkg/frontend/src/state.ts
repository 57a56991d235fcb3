// View state for the demo page, kept apart from the DOM so the
// lifecycle can be exercised directly. Every mutation that belongs to
// a request carries the token handed out by beginRequest; mutations
// with a stale token are dropped, which is what guarantees a
// superseded request never paints anything.

export type Phase = "idle" | "requesting" | "rendering";

export interface FrameView {
	epoch: number;
	imageUrl: string;
	elapsedMs: number;
}

export interface ViewState {
	phase: Phase;
	frames: FrameView[];
	log: string[];
	error: string | null;
	resolution: number | null;
}

export type Listener = (state: ViewState) => void;

function initialState(): ViewState {
	return { phase: "idle", frames: [], log: [], error: null, resolution: null };
}

export class AppStore {
	private state: ViewState = initialState();
	private token = 0;
	private listeners: Listener[] = [];

	subscribe(listener: Listener): void {
		this.listeners.push(listener);
		listener(this.state);
	}

	get current(): ViewState {
		return this.state;
	}

	/** True while a request owns the page; input stays disabled. */
	get busy(): boolean {
		return this.state.phase !== "idle";
	}

	/** Start a new request, invalidating any still in flight. */
	beginRequest(): number {
		this.token += 1;
		this.state = { ...initialState(), phase: "requesting" };
		this.emit();
		return this.token;
	}

	isCurrent(token: number): boolean {
		return token === this.token;
	}

	addFrame(token: number, frame: FrameView): void {
		if (!this.isCurrent(token)) return;
		// Keep the strip in ascending epoch order even if the transport
		// delivers out of order.
		const frames = [...this.state.frames];
		let at = frames.length;
		while (at > 0 && frames[at - 1]!.epoch > frame.epoch) at -= 1;
		frames.splice(at, 0, frame);
		this.state = { ...this.state, phase: "rendering", frames };
		this.emit();
	}

	appendLog(token: number, lines: string[]): void {
		if (!this.isCurrent(token) || lines.length === 0) return;
		this.state = { ...this.state, log: [...this.state.log, ...lines] };
		this.emit();
	}

	finish(token: number, resolution: number): void {
		if (!this.isCurrent(token)) return;
		this.state = { ...this.state, phase: "idle", resolution };
		this.emit();
	}

	/** Request failed: show the banner and drop any partial frames. */
	fail(token: number, message: string): void {
		if (!this.isCurrent(token)) return;
		this.state = { ...initialState(), error: message };
		this.emit();
	}

	private emit(): void {
		for (const listener of this.listeners) listener(this.state);
	}
}
