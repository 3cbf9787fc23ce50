//! Deterministic toy songs in the three-track layout (melody, bridge, piano)
//! with per-step chord annotations.
//!
//! Songs follow a diatonic progression in a random key, one chord per bar,
//! with an occasional colour chord (sus, aug, dim). Accompaniment density drifts
//! from bar to bar so both valence and arousal vary across a piece.

use crate::score::{
    format_chord_annotations, write_tracks, BarStructure, Chord, ChordQuality, ChromaSequence,
    MidiError, NoteEvent, PianoRoll, Role, TempoMap, TrackSet, STEPS_PER_BAR,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Diatonic degrees as (semitones above the key, quality).
const DEGREES: [(u8, ChordQuality); 6] = [
    (0, ChordQuality::Maj),
    (2, ChordQuality::Min7),
    (4, ChordQuality::Min),
    (5, ChordQuality::Maj7),
    (7, ChordQuality::Dom7),
    (9, ChordQuality::Min),
];
const COLOUR: [ChordQuality; 4] = [ChordQuality::Sus2, ChordQuality::Sus4, ChordQuality::Aug, ChordQuality::Dim];
/// Piano onsets per bar at each density level.
const DENSITY: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSong {
    pub name: String,
    pub tracks: TrackSet,
}

impl SynthSong {
    pub fn bpm(&self) -> f64 {
        self.tracks.tempo.bpm()
    }

    /// Three-track MIDI with chord markers.
    pub fn midi(&self) -> Result<Vec<u8>, MidiError> {
        let t = &self.tracks;
        write_tracks(
            &[("MELODY", &t.melody), ("BRIDGE", &t.bridge), ("PIANO", &t.piano)],
            self.bpm(),
            Some(&t.chords),
        )
    }

    pub fn annotations(&self) -> String {
        format_chord_annotations(&self.tracks.chords, &self.tracks.tempo)
    }
}

fn chord_tones(chord: Chord, octave_base: u8) -> Vec<u8> {
    chord.quality.intervals().iter().map(|&i| octave_base + (chord.root + i as u8) % 12).collect()
}

/// A song of `bars` bars; identical for identical `(seed, bars)`.
pub fn synth_song(seed: u64, bars: usize) -> SynthSong {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bars = bars.max(1);
    let steps = bars * STEPS_PER_BAR;
    let key: u8 = rng.random_range(0..12);
    let bpm = rng.random_range(80..=130) as f64;

    let mut chords = Vec::with_capacity(steps);
    let mut melody = Vec::new();
    let mut bridge = Vec::new();
    let mut piano = Vec::new();
    let mut level: usize = rng.random_range(0..DENSITY.len());

    for bar in 0..bars {
        let (offset, mut quality) = DEGREES[rng.random_range(0..DEGREES.len())];
        if rng.random_bool(0.15) {
            quality = COLOUR[rng.random_range(0..COLOUR.len())];
        }
        let chord = Chord::new((key + offset) % 12, quality);
        chords.extend(std::iter::repeat_n(Some(chord), STEPS_PER_BAR));
        let start = (bar * STEPS_PER_BAR) as u32;

        // Bass root, whole bar.
        bridge.push(NoteEvent::new(36 + chord.root, start, STEPS_PER_BAR as u32, 70).expect("valid"));

        // Piano: chord tones around middle C at the bar's density.
        if rng.random_bool(0.5) {
            level = match level {
                0 => 1,
                l if l + 1 == DENSITY.len() => l - 1,
                l if rng.random_bool(0.5) => l + 1,
                l => l - 1,
            };
        }
        let hits = DENSITY[level];
        let len = (STEPS_PER_BAR / hits) as u32;
        let tones = chord_tones(chord, 48);
        for h in 0..hits {
            let onset = start + h as u32 * len;
            let vel = rng.random_range(60..100);
            if hits <= 2 {
                for &p in &tones {
                    piano.push(NoteEvent::new(p + 12, onset, len, vel).expect("valid"));
                }
            } else {
                let p = tones[h % tones.len()] + 12;
                piano.push(NoteEvent::new(p, onset, len, vel).expect("valid"));
            }
        }

        // Melody: quarter and eighth notes on chord and scale tones.
        let mut t = 0u32;
        while t < STEPS_PER_BAR as u32 {
            let dur = if rng.random_bool(0.6) { 4 } else { 2 }.min(STEPS_PER_BAR as u32 - t);
            if rng.random_bool(0.9) {
                let pc = if rng.random_bool(0.7) {
                    tones[rng.random_range(0..tones.len())] % 12
                } else {
                    (key + [0u8, 2, 4, 5, 7, 9, 11][rng.random_range(0..7)]) % 12
                };
                melody.push(NoteEvent::new(72 + pc, start + t, dur, rng.random_range(70..110)).expect("valid"));
            }
            t += dur;
        }
    }

    let roll = |role, notes: &[NoteEvent]| PianoRoll::from_notes(role, steps, notes).expect("bar multiple");
    let tracks = TrackSet::new(
        roll(Role::Melody, &melody),
        roll(Role::Accompaniment, &bridge),
        roll(Role::Accompaniment, &piano),
        BarStructure::uniform(steps),
        ChromaSequence::from_chords(&chords),
        TempoMap::constant(bpm),
    )
    .expect("tracks share the time axis");
    SynthSong { name: format!("synth_{seed:05}"), tracks }
}

/// `count` songs with seeds `seed, seed + 1, ...` and bar counts in `[min_bars, max_bars]`.
pub fn synth_corpus(seed: u64, count: usize, min_bars: usize, max_bars: usize) -> Vec<SynthSong> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..count)
        .map(|i| {
            let bars = rng.random_range(min_bars.max(1)..=max_bars.max(min_bars.max(1)));
            synth_song(seed + i as u64, bars)
        })
        .collect()
}

/// Writes each song as `<name>.mid` plus `<name>.chords.txt`; returns the MIDI paths.
pub fn write_corpus(songs: &[SynthSong], dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for s in songs {
        let mid = dir.join(format!("{}.mid", s.name));
        let bytes = s.midi().map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        std::fs::write(&mid, bytes)?;
        std::fs::write(dir.join(format!("{}.chords.txt", s.name)), s.annotations())?;
        paths.push(mid);
    }
    Ok(paths)
}
