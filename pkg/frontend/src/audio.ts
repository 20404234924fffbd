// Client-side playback: one triangle oscillator per note, scheduled ahead
// of time so the UI thread stays free during long pieces.

import type { NoteDatum } from "./types.js";

export const TICKS_PER_QUARTER = 480;

export function pitchToFrequency(pitch: number): number {
  return 440 * Math.pow(2, (pitch - 69) / 12);
}

export interface ScheduledVoice {
  startSec: number;
  durationSec: number;
  frequency: number;
}

/** Pure scheduling: ticks to seconds at the given tempo. */
export function buildSchedule(notes: NoteDatum[], bpm = 100): ScheduledVoice[] {
  const secPerTick = 60 / bpm / TICKS_PER_QUARTER;
  return notes.map((n) => ({
    startSec: n.onset * secPerTick,
    durationSec: Math.max(n.duration * secPerTick, 0.05),
    frequency: pitchToFrequency(n.pitch),
  }));
}

export interface Playback {
  stop(): void;
  readonly durationSec: number;
}

export function play(context: AudioContext, notes: NoteDatum[], bpm = 100): Playback {
  const schedule = buildSchedule(notes, bpm);
  const master = context.createGain();
  master.gain.value = 0.25 / Math.max(Math.sqrt(schedule.length / 8), 1);
  master.connect(context.destination);
  const t0 = context.currentTime + 0.05;
  const oscillators: OscillatorNode[] = [];
  for (const voice of schedule) {
    const osc = context.createOscillator();
    osc.type = "triangle";
    osc.frequency.value = voice.frequency;
    const gain = context.createGain();
    gain.gain.setValueAtTime(0, t0 + voice.startSec);
    gain.gain.linearRampToValueAtTime(1, t0 + voice.startSec + 0.01);
    gain.gain.setTargetAtTime(0, t0 + voice.startSec + voice.durationSec, 0.03);
    osc.connect(gain).connect(master);
    osc.start(t0 + voice.startSec);
    osc.stop(t0 + voice.startSec + voice.durationSec + 0.2);
    oscillators.push(osc);
  }
  const durationSec = schedule.reduce((m, v) => Math.max(m, v.startSec + v.durationSec), 0);
  return {
    durationSec,
    stop() {
      for (const osc of oscillators) {
        try {
          osc.stop();
        } catch {
          /* already stopped */
        }
      }
      master.disconnect();
    },
  };
}
