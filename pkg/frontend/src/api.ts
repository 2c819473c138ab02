// Typed client for the experiment service web API. Every call goes over
// plain fetch so tests can inject a mock transport.

export type SliderSpec = {
  dimension: number
  lo: number
  hi: number
  resolution: number
}

export type TrialManifest = {
  status: 'trial'
  trial_id: string
  chain_id: string
  iteration: number
  face_ref: string
  sentence_id: string
  stimulus_keys: string[]
  slider: SliderSpec
}

export type NoWork = {
  status: 'no_work'
  retry_after_s: number
}

export type SubmitAck = {
  trial_id: string
  iteration_sealed: boolean
  chain_status: 'active' | 'complete' | 'terminated'
}

export type RatingTask = {
  status: 'rating'
  chain_id: string
  iteration: number
  stimulus_key: string
  labels: string[]
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message)
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

export class ExperimentApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/$/, '')
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init)
    if (!res.ok) {
      let detail = `${res.status}`
      try {
        const body = await res.json()
        detail = body.error ?? body.detail ?? detail
      } catch {
        // non-JSON error body; keep the status code
      }
      throw new ApiError(res.status, `${path}: ${detail}`)
    }
    return res
  }

  private async postJson(path: string, payload: unknown): Promise<unknown> {
    const res = await this.request(path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    })
    return res.json()
  }

  async register(participantId?: string): Promise<string> {
    const body = (await this.postJson('/participants', {
      participant_id: participantId ?? null,
    })) as { participant_id: string }
    return body.participant_id
  }

  async nextTrial(participantId: string): Promise<TrialManifest | NoWork> {
    const res = await this.request(
      `/trials/next?participant_id=${encodeURIComponent(participantId)}`,
    )
    return (await res.json()) as TrialManifest | NoWork
  }

  async submitResponse(
    trialId: string,
    sliderIndex: number,
    idempotencyKey: string,
  ): Promise<SubmitAck> {
    return (await this.postJson(`/trials/${encodeURIComponent(trialId)}/response`, {
      slider_index: sliderIndex,
      idempotency_key: idempotencyKey,
    })) as SubmitAck
  }

  async fetchStimulus(key: string): Promise<ArrayBuffer> {
    const res = await this.request(`/stimuli/${encodeURIComponent(key)}`)
    return res.arrayBuffer()
  }

  async nextRating(raterId: string): Promise<RatingTask | NoWork> {
    const res = await this.request(
      `/ratings/next?rater_id=${encodeURIComponent(raterId)}`,
    )
    return (await res.json()) as RatingTask | NoWork
  }

  async submitRating(
    raterId: string,
    chainId: string,
    iteration: number,
    score: number,
  ): Promise<{ recorded: boolean }> {
    return (await this.postJson('/ratings', {
      rater_id: raterId,
      chain_id: chainId,
      iteration,
      score,
    })) as { recorded: boolean }
  }

  async chainView(chainId: string): Promise<Record<string, unknown>> {
    const res = await this.request(`/chains/${encodeURIComponent(chainId)}`)
    return (await res.json()) as Record<string, unknown>
  }
}
