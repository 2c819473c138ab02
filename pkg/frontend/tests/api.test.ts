import { describe, expect, it } from 'vitest'

import { ApiError, ExperimentApi } from '../src/api'
import { MockServer } from './mock_server'

describe('ExperimentApi', () => {
  it('strips a trailing slash from the base url', async () => {
    const server = new MockServer()
    const api = new ExperimentApi('http://svc/', server.fetch)
    expect(await api.register('p9')).toBe('p9')
  })

  it('raises ApiError with the server detail on 422', async () => {
    const server = new MockServer()
    const api = new ExperimentApi('http://svc', server.fetch)
    const err = await api.nextTrial('ghost').catch((e) => e)
    expect(err).toBeInstanceOf(ApiError)
    expect(err.status).toBe(422)
    expect(String(err.message)).toContain('unknown participant')
  })

  it('returns stimulus bytes as an ArrayBuffer', async () => {
    const server = new MockServer()
    const api = new ExperimentApi('http://svc', server.fetch)
    const buf = await api.fetchStimulus('stim-0-0')
    expect(new Uint8Array(buf.slice(0, 4))).toEqual(new Uint8Array([82, 73, 70, 70]))
  })

  it('re-fetching a pending trial returns the same manifest', async () => {
    const server = new MockServer()
    const api = new ExperimentApi('http://svc', server.fetch)
    const pid = await api.register('p0')
    const a = await api.nextTrial(pid)
    const b = await api.nextTrial(pid)
    expect(a).toEqual(b)
  })
})
