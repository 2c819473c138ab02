// Minimal DOM wiring for the trial screen: face image, 31-detent slider,
// play/replay, submit, progress. Audio plays on slider release, never
// during the drag, so scrubbing does not spray artifacts.

import { ExperimentApi } from './api'
import { AudioSink, TrialSession } from './session'

class WebAudioSink implements AudioSink {
  private ctx = new AudioContext()

  play(_key: string, data: ArrayBuffer): void {
    // decodeAudioData consumes the buffer, so hand it a copy
    void this.ctx.decodeAudioData(data.slice(0)).then((decoded) => {
      const node = this.ctx.createBufferSource()
      node.buffer = decoded
      node.connect(this.ctx.destination)
      node.start()
    })
  }
}

export function mountTrialScreen(root: HTMLElement, baseUrl: string): void {
  root.innerHTML = `
    <div class="trial">
      <img class="face" alt="target face" />
      <div class="status"></div>
      <input type="range" min="0" max="30" step="1" disabled />
      <button class="replay" disabled>Replay</button>
      <button class="submit" disabled>This one matches best</button>
      <div class="progress"></div>
    </div>`
  const face = root.querySelector('.face') as HTMLImageElement
  const status = root.querySelector('.status') as HTMLElement
  const slider = root.querySelector('input[type=range]') as HTMLInputElement
  const replay = root.querySelector('.replay') as HTMLButtonElement
  const submit = root.querySelector('.submit') as HTMLButtonElement
  const progress = root.querySelector('.progress') as HTMLElement

  const api = new ExperimentApi(baseUrl)
  let session: TrialSession

  const sync = () => {
    submit.disabled = !session.canSubmit
    replay.disabled = !(session.phase === 'ready' && session.auditioned)
    progress.textContent = `${session.completedTrials} trials completed`
  }

  const nextTrial = async () => {
    status.textContent = 'Loading the next voice…'
    const trial = await session.loadNextTrial()
    if (trial.status === 'no_work') {
      status.textContent = 'No trial available right now; retrying shortly.'
      sync()
      setTimeout(nextTrial, session.retryAfterMs)
      return
    }
    face.src = `faces/${trial.face_ref}.png`
    slider.max = String(trial.slider.resolution - 1)
    slider.value = String(session.sliderIndex)
    slider.disabled = false
    status.textContent = 'Move the slider and release it to hear that voice.'
    sync()
  }

  slider.addEventListener('change', () => {
    session.releaseSliderAt(Number(slider.value))
    sync()
  })
  replay.addEventListener('click', () => {
    session.releaseSliderAt(Number(slider.value))
  })
  submit.addEventListener('click', async () => {
    if (!session.canSubmit) return
    sync()
    await session.submit()
    sync()
    await nextTrial()
  })

  void (async () => {
    const pid = await api.register()
    session = new TrialSession(api, pid, new WebAudioSink())
    await nextTrial()
  })()
}
