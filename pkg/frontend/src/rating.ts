// MOS rating flow: fetch a stimulus, let the rater replay it freely,
// record exactly one of the five labels.

import { ExperimentApi, NoWork, RatingTask } from './api'
import { AudioSink } from './session'

export const LABEL_SCORES: Record<string, number> = {
  'Bad match': 1,
  Poor: 2,
  Fair: 3,
  Good: 4,
  Excellent: 5,
}

export function labelToScore(label: string): number {
  const score = LABEL_SCORES[label]
  if (score === undefined) {
    throw new Error(`unknown rating label: ${label}`)
  }
  return score
}

export class RatingSession {
  task: RatingTask | null = null
  selected: string | null = null
  completed = 0

  private stimulus: ArrayBuffer | null = null

  constructor(
    private api: ExperimentApi,
    private raterId: string,
    private audio: AudioSink,
    private quota: number = Infinity,
  ) {}

  get quotaReached(): boolean {
    return this.completed >= this.quota
  }

  async loadNext(): Promise<RatingTask | NoWork | null> {
    if (this.quotaReached) {
      return null
    }
    this.task = null
    this.selected = null
    this.stimulus = null
    const next = await this.api.nextRating(this.raterId)
    if (next.status === 'no_work') {
      return next
    }
    this.task = next
    this.stimulus = await this.api.fetchStimulus(next.stimulus_key)
    return next
  }

  /** Replay is always allowed before (and after) selecting a label. */
  play(): void {
    if (!this.task || !this.stimulus) {
      throw new Error('no stimulus loaded')
    }
    this.audio.play(this.task.stimulus_key, this.stimulus)
  }

  select(label: string): void {
    labelToScore(label) // validates
    this.selected = label
  }

  async submit(): Promise<void> {
    if (!this.task) {
      throw new Error('no rating task loaded')
    }
    if (this.selected === null) {
      throw new Error('select exactly one label before submitting')
    }
    await this.api.submitRating(
      this.raterId,
      this.task.chain_id,
      this.task.iteration,
      labelToScore(this.selected),
    )
    this.completed += 1
    this.task = null
    this.selected = null
    this.stimulus = null
  }
}
