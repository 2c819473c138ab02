// Trial session state machine. Owns the invariants the screen relies on:
// submit stays disabled until the participant has auditioned at least one
// slider position and released the slider, double clicks collapse into a
// single server-side response, and stimulus preloading retries with
// backoff while keeping submit disabled.

import { ApiError, ExperimentApi, NoWork, SubmitAck, TrialManifest } from './api'

export interface AudioSink {
  // hand a decoded/raw stimulus to the playback layer
  play(key: string, data: ArrayBuffer): void
}

export type SleepFn = (ms: number) => Promise<void>

const defaultSleep: SleepFn = (ms) => new Promise((r) => setTimeout(r, ms))

export type SessionPhase = 'idle' | 'loading' | 'ready' | 'submitting' | 'waiting' | 'done'

export class TrialSession {
  phase: SessionPhase = 'idle'
  manifest: TrialManifest | null = null
  sliderIndex: number
  auditioned = false
  retryAfterMs = 5000
  completedTrials = 0

  private stimuli = new Map<string, ArrayBuffer>()
  private idempotencyKey: string | null = null
  private inflight: Promise<SubmitAck> | null = null

  constructor(
    private api: ExperimentApi,
    private participantId: string,
    private audio: AudioSink,
    private opts: {
      preloadRetries?: number
      backoffMs?: number[]
      sleep?: SleepFn
      makeKey?: () => string
    } = {},
  ) {
    this.sliderIndex = 0
  }

  get canSubmit(): boolean {
    return this.phase === 'ready' && this.auditioned
  }

  /** Fetch the next trial and preload every slider position's audio. */
  async loadNextTrial(): Promise<TrialManifest | NoWork> {
    this.phase = 'loading'
    this.manifest = null
    this.auditioned = false
    this.stimuli.clear()
    this.idempotencyKey = null
    this.inflight = null

    const next = await this.api.nextTrial(this.participantId)
    if (next.status === 'no_work') {
      this.phase = 'waiting'
      this.retryAfterMs = next.retry_after_s * 1000
      return next
    }
    this.manifest = next
    this.sliderIndex = Math.floor(next.slider.resolution / 2)
    await this.preloadAll(next)
    // one key per displayed trial: a double click or a retried request
    // after a network hiccup lands on the same server-side record
    this.idempotencyKey = this.opts.makeKey
      ? this.opts.makeKey()
      : `${this.participantId}:${next.trial_id}`
    this.phase = 'ready'
    return next
  }

  private async preloadAll(manifest: TrialManifest): Promise<void> {
    const retries = this.opts.preloadRetries ?? 3
    const backoff = this.opts.backoffMs ?? [250, 1000, 4000]
    const sleep = this.opts.sleep ?? defaultSleep
    await Promise.all(
      manifest.stimulus_keys.map(async (key) => {
        for (let attempt = 0; ; attempt++) {
          try {
            this.stimuli.set(key, await this.api.fetchStimulus(key))
            return
          } catch (err) {
            if (attempt >= retries) throw err
            await sleep(backoff[Math.min(attempt, backoff.length - 1)])
          }
        }
      }),
    )
  }

  /** Slider release at a detent: play that position's cached stimulus. */
  releaseSliderAt(index: number): void {
    if (!this.manifest || this.phase !== 'ready') {
      throw new Error('no trial on screen')
    }
    const n = this.manifest.slider.resolution
    if (!Number.isInteger(index) || index < 0 || index >= n) {
      throw new Error(`detent ${index} outside [0, ${n})`)
    }
    this.sliderIndex = index
    const key = this.manifest.stimulus_keys[index]
    const data = this.stimuli.get(key)
    if (!data) {
      throw new Error(`stimulus ${key} not preloaded`)
    }
    this.audio.play(key, data)
    this.auditioned = true
  }

  /** Submit the current detent. Safe to call twice (double click). */
  async submit(): Promise<SubmitAck> {
    if (!this.canSubmit && !this.inflight) {
      throw new Error('submit is disabled until a position is auditioned')
    }
    if (this.inflight) {
      return this.inflight
    }
    const manifest = this.manifest!
    const key = this.idempotencyKey!
    this.phase = 'submitting'
    this.inflight = this.api
      .submitResponse(manifest.trial_id, this.sliderIndex, key)
      .then((ack) => {
        this.completedTrials += 1
        this.phase = 'idle'
        return ack
      })
      .catch((err) => {
        // allow a retry with the same key after transient failures
        this.inflight = null
        this.phase = 'ready'
        throw err
      })
    return this.inflight
  }
}

export { ApiError }
