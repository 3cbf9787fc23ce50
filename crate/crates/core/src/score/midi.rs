//! Standard MIDI File (format 0/1) reading and writing on the 16th-note grid.

use super::chord::{parse_chord_label, Chord, ChromaSequence};
use super::{BarStructure, PianoRoll, Role, ScoreError, TrackSet, STEPS_PER_BAR, STEPS_PER_BEAT};
use std::collections::HashMap;
use thiserror::Error;

/// Ticks per quarter note used when writing.
const WRITE_TPQ: u16 = 480;
const DEFAULT_BPM: f64 = 120.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MidiError {
    #[error("malformed MIDI at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported MIDI: {0}")]
    Unsupported(String),
    #[error("unknown track layout; found tracks {found:?}")]
    Layout { found: Vec<String> },
    #[error("time signature {numerator}/{denominator} is not supported; only 4/4 scores can be segmented")]
    TimeSignature { numerator: u8, denominator: u32 },
    #[error("score contains no note events (T = 0)")]
    Empty,
    #[error("nothing to write: no tracks given")]
    EmptyOutput,
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Tempo changes as `(step, bpm)` pairs, the first at step 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TempoMap {
    changes: Vec<(f64, f64)>,
}

impl TempoMap {
    pub fn constant(bpm: f64) -> Self {
        Self { changes: vec![(0.0, bpm)] }
    }

    fn from_changes(mut changes: Vec<(f64, f64)>) -> Self {
        changes.sort_by(|a, b| a.0.total_cmp(&b.0));
        if changes.first().is_none_or(|c| c.0 > 0.0) {
            changes.insert(0, (0.0, DEFAULT_BPM));
        }
        // Several changes on one step: the last one wins.
        let mut dedup: Vec<(f64, f64)> = Vec::new();
        for c in changes {
            match dedup.last_mut() {
                Some(last) if last.0 == c.0 => *last = c,
                _ => dedup.push(c),
            }
        }
        Self { changes: dedup }
    }

    pub fn changes(&self) -> &[(f64, f64)] {
        &self.changes
    }

    pub fn bpm_at(&self, step: f64) -> f64 {
        self.changes.iter().take_while(|c| c.0 <= step).last().map_or(DEFAULT_BPM, |c| c.1)
    }

    /// Initial tempo.
    pub fn bpm(&self) -> f64 {
        self.changes[0].1
    }

    /// The same map re-based so that `step` becomes step 0.
    pub fn starting_at(&self, step: usize) -> Self {
        let s = step as f64;
        let mut changes = vec![(0.0, self.bpm_at(s))];
        changes.extend(self.changes.iter().filter(|c| c.0 > s).map(|c| (c.0 - s, c.1)));
        Self { changes }
    }

    pub fn seconds_to_steps(&self, seconds: f64) -> f64 {
        let mut remaining = seconds;
        for (i, &(start, bpm)) in self.changes.iter().enumerate() {
            let steps_per_second = bpm / 60.0 * STEPS_PER_BEAT as f64;
            match self.changes.get(i + 1) {
                Some(&(next, _)) => {
                    let span = (next - start) / steps_per_second;
                    if remaining <= span {
                        return start + remaining * steps_per_second;
                    }
                    remaining -= span;
                }
                None => return start + remaining * steps_per_second,
            }
        }
        unreachable!("tempo map always has an entry")
    }

    pub fn steps_to_seconds(&self, steps: f64) -> f64 {
        let mut seconds = 0.0;
        for (i, &(start, bpm)) in self.changes.iter().enumerate() {
            let steps_per_second = bpm / 60.0 * STEPS_PER_BEAT as f64;
            let end = self.changes.get(i + 1).map_or(f64::INFINITY, |c| c.0);
            if steps <= end {
                return seconds + (steps - start) / steps_per_second;
            }
            seconds += (end - start) / steps_per_second;
        }
        unreachable!("tempo map always has an entry")
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, MidiError> {
        Err(MidiError::Parse { offset, message: message.into() })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], MidiError> {
        if self.pos + n > self.bytes.len() {
            return self.err(self.pos, format!("unexpected end of data reading {what}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, MidiError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, MidiError> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, MidiError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8("variable-length quantity")?;
            value = (value << 7) | u32::from(b & 0x7F);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        self.err(start, "variable-length quantity longer than 4 bytes")
    }
}

#[derive(Default)]
struct RawTrack {
    name: Option<String>,
    notes: Vec<(u64, u64, u8, u8)>,
    markers: Vec<(u64, String)>,
    end_tick: u64,
}

struct RawFile {
    tpq: u16,
    tracks: Vec<RawTrack>,
    tempos: Vec<(u64, u32)>,
    time_signatures: Vec<(u8, u32)>,
}

fn read_file(bytes: &[u8]) -> Result<RawFile, MidiError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "header id").ok() != Some(b"MThd".as_slice()) {
        return r.err(0, "missing MThd header");
    }
    let header_len = r.u32("header length")? as usize;
    if header_len < 6 {
        return r.err(4, format!("header length {header_len} < 6"));
    }
    let format = r.u16("format")?;
    if format > 1 {
        return Err(MidiError::Unsupported(format!("SMF format {format}")));
    }
    let ntracks = r.u16("track count")?;
    let division = r.u16("division")?;
    if division & 0x8000 != 0 {
        return Err(MidiError::Unsupported("SMPTE time division".into()));
    }
    if division == 0 {
        return r.err(12, "zero ticks per quarter note");
    }
    r.take(header_len - 6, "header padding")?;

    let mut file = RawFile { tpq: division, tracks: Vec::new(), tempos: Vec::new(), time_signatures: Vec::new() };
    while file.tracks.len() < ntracks as usize {
        let chunk_start = r.pos;
        let id = r.take(4, "chunk id")?;
        let len = r.u32("chunk length")? as usize;
        if r.pos + len > bytes.len() {
            return r.err(chunk_start, format!("chunk length {len} runs past end of file"));
        }
        if id != b"MTrk" {
            r.pos += len;
            continue;
        }
        let end = r.pos + len;
        let track = read_track(&mut r, end, &mut file)?;
        r.pos = end;
        file.tracks.push(track);
    }
    Ok(file)
}

fn read_track(r: &mut Reader<'_>, end: usize, file: &mut RawFile) -> Result<RawTrack, MidiError> {
    let mut track = RawTrack::default();
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut sounding: HashMap<(u8, u8), Vec<(u64, u8)>> = HashMap::new();
    while r.pos < end {
        tick += u64::from(r.vlq()?);
        let event_start = r.pos;
        let first = r.u8("event status")?;
        match first {
            0xFF => {
                running = None;
                let kind = r.u8("meta type")?;
                let len = r.vlq()? as usize;
                let data = r.take(len, "meta data")?;
                match kind {
                    0x03 if track.name.is_none() => {
                        track.name = Some(String::from_utf8_lossy(data).trim().to_string());
                    }
                    0x06 => track.markers.push((tick, String::from_utf8_lossy(data).to_string())),
                    0x51 => {
                        if len != 3 {
                            return r.err(event_start, "tempo event must carry 3 bytes");
                        }
                        let usec = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if usec == 0 {
                            return r.err(event_start, "zero tempo");
                        }
                        file.tempos.push((tick, usec));
                    }
                    0x58 => {
                        if len < 2 {
                            return r.err(event_start, "time signature event too short");
                        }
                        file.time_signatures.push((data[0], 1u32 << data[1].min(31)));
                    }
                    0x2F => {
                        track.end_tick = tick;
                        break;
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len, "sysex data")?;
            }
            0xF1..=0xFE => return r.err(event_start, format!("unexpected status byte {first:#04x}")),
            _ => {
                let (status, first_data) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, None)
                } else {
                    match running {
                        Some(s) => (s, Some(first)),
                        None => return r.err(event_start, "data byte without running status"),
                    }
                };
                let kind = status & 0xF0;
                let channel = status & 0x0F;
                let count = if kind == 0xC0 || kind == 0xD0 { 1 } else { 2 };
                let mut data = [0u8; 2];
                let mut i = 0;
                if let Some(d) = first_data {
                    data[0] = d;
                    i = 1;
                }
                while i < count {
                    data[i] = r.u8("channel message data")?;
                    i += 1;
                }
                if data.iter().any(|b| b & 0x80 != 0) {
                    return r.err(event_start, "data byte has the high bit set");
                }
                let key = (channel, data[0]);
                match (kind, data[1]) {
                    (0x90, v) if v > 0 => sounding.entry(key).or_default().push((tick, v)),
                    (0x80, _) | (0x90, _) => {
                        if let Some(stack) = sounding.get_mut(&key) {
                            if !stack.is_empty() {
                                let (on, v) = stack.remove(0);
                                track.notes.push((on, tick, data[0], v));
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    for ((_, pitch), stack) in sounding {
        for (on, v) in stack {
            track.notes.push((on, tick.max(on), pitch, v));
        }
    }
    track.notes.sort();
    Ok(track)
}

fn quantize(tick: u64, tpq: u16) -> u64 {
    let q = 2 * u64::from(tpq);
    (tick * STEPS_PER_BEAT as u64 * 2 + u64::from(tpq)) / q
}

const TRACK_NAMES: [&str; 3] = ["MELODY", "BRIDGE", "PIANO"];

/// Parses a Standard MIDI File into the three POP909 tracks.
///
/// Tracks are identified by name (`MELODY`, `BRIDGE`, `PIANO`, case
/// insensitive). Without matching names the note-bearing tracks are taken in
/// order: one track is the melody, two are melody and piano, three are
/// melody, bridge and piano. Onsets and offsets are rounded to the nearest
/// 16th note, with every note lasting at least one step. The roll length is
/// rounded up to whole bars. Chord names stored as marker events become the
/// chord annotations; otherwise the chords are left empty.
pub fn parse_midi(bytes: &[u8]) -> Result<TrackSet, MidiError> {
    let file = read_file(bytes)?;
    for &(n, d) in &file.time_signatures {
        if (n, d) != (4, 4) {
            return Err(MidiError::TimeSignature { numerator: n, denominator: d });
        }
    }

    let upper: Vec<Option<String>> =
        file.tracks.iter().map(|t| t.name.as_ref().map(|n| n.to_uppercase())).collect();
    let by_name: Vec<Option<usize>> = TRACK_NAMES
        .iter()
        .map(|want| upper.iter().position(|n| n.as_deref() == Some(*want)))
        .collect();
    let assignment: [Option<usize>; 3] = if by_name.iter().any(Option::is_some) {
        [by_name[0], by_name[1], by_name[2]]
    } else {
        let with_notes: Vec<usize> =
            (0..file.tracks.len()).filter(|&i| !file.tracks[i].notes.is_empty()).collect();
        match with_notes.as_slice() {
            [] => return Err(MidiError::Empty),
            [m] => [Some(*m), None, None],
            [m, p] => [Some(*m), None, Some(*p)],
            [m, b, p] => [Some(*m), Some(*b), Some(*p)],
            _ => {
                let found = file
                    .tracks
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t.name.clone().unwrap_or_else(|| format!("<unnamed #{i}>")))
                    .collect();
                return Err(MidiError::Layout { found });
            }
        }
    };

    let tpq = file.tpq;
    let quantized: Vec<Vec<super::NoteEvent>> = assignment
        .iter()
        .map(|idx| {
            idx.map(|i| {
                file.tracks[i]
                    .notes
                    .iter()
                    .map(|&(on, off, pitch, velocity)| {
                        let s = quantize(on, tpq);
                        let e = quantize(off, tpq).max(s + 1);
                        super::NoteEvent {
                            onset: s as u32,
                            pitch,
                            duration: (e - s) as u32,
                            velocity,
                        }
                    })
                    .collect()
            })
            .unwrap_or_default()
        })
        .collect();
    let last = quantized.iter().flatten().map(|n| n.end() as usize).max().unwrap_or(0);
    if last == 0 {
        return Err(MidiError::Empty);
    }
    // Trailing silence up to the end-of-track event belongs to the piece.
    let end_of_track = file.tracks.iter().map(|t| quantize(t.end_tick, tpq) as usize).max().unwrap_or(0);
    let last = last.max(end_of_track);
    let steps = last.div_ceil(STEPS_PER_BAR) * STEPS_PER_BAR;
    let roles = [Role::Melody, Role::Accompaniment, Role::Accompaniment];
    let mut rolls = quantized
        .iter()
        .zip(roles)
        .map(|(notes, role)| PianoRoll::from_notes(role, steps, notes))
        .collect::<Result<Vec<_>, _>>()?;
    let piano = rolls.pop().expect("three rolls");
    let bridge = rolls.pop().expect("three rolls");
    let melody = rolls.pop().expect("three rolls");

    let tempo = TempoMap::from_changes(
        file.tempos
            .iter()
            .map(|&(tick, usec)| (quantize(tick, tpq) as f64, 60_000_000.0 / f64::from(usec)))
            .collect(),
    );

    let mut markers: Vec<(u64, Option<Chord>)> = file
        .tracks
        .iter()
        .flat_map(|t| t.markers.iter())
        .filter_map(|(tick, text)| parse_chord_label(text).ok().map(|c| (quantize(*tick, tpq), c)))
        .collect();
    markers.sort_by_key(|m| m.0);
    let chords = if markers.is_empty() {
        ChromaSequence::silent(steps)
    } else {
        let mut per_step = vec![None; steps];
        for (i, &(s, chord)) in markers.iter().enumerate() {
            let end = markers.get(i + 1).map_or(steps as u64, |m| m.0).min(steps as u64);
            for slot in per_step.iter_mut().take(end as usize).skip(s as usize) {
                *slot = chord;
            }
        }
        ChromaSequence::from_chords(&per_step)
    };

    Ok(TrackSet::new(melody, bridge, piano, BarStructure::uniform(steps), chords, tempo)?)
}

fn role_track_name(role: Role) -> &'static str {
    match role {
        Role::Melody => "MELODY",
        Role::Accompaniment | Role::Merged => "PIANO",
    }
}

/// Writes a single-track (format 0) file at the given tempo.
pub fn write_midi(roll: &PianoRoll, bpm: f64) -> Result<Vec<u8>, MidiError> {
    write_tracks(&[(role_track_name(roll.role()), roll)], bpm, None)
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7F) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

/// Writes named tracks into one file (format 0 for one track, else format 1).
/// Tempo, a 4/4 time signature and, optionally, chord markers go on the first track.
pub fn write_tracks(
    tracks: &[(&str, &PianoRoll)],
    bpm: f64,
    chords: Option<&ChromaSequence>,
) -> Result<Vec<u8>, MidiError> {
    if tracks.is_empty() {
        return Err(MidiError::EmptyOutput);
    }
    let ticks_per_step = u64::from(WRITE_TPQ) / STEPS_PER_BEAT as u64;
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&(if tracks.len() == 1 { 0u16 } else { 1u16 }).to_be_bytes());
    out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
    out.extend_from_slice(&WRITE_TPQ.to_be_bytes());

    for (ti, (name, roll)) in tracks.iter().enumerate() {
        if roll.steps() == 0 {
            return Err(MidiError::EmptyOutput);
        }
        // (tick, order, bytes); meta events first, then note-offs before note-ons.
        let mut events: Vec<(u64, u8, Vec<u8>)> = Vec::new();
        let mut meta = |tick: u64, kind: u8, data: &[u8]| {
            let mut e = vec![0xFF, kind];
            push_vlq(&mut e, data.len() as u32);
            e.extend_from_slice(data);
            events.push((tick, 0, e));
        };
        meta(0, 0x03, name.as_bytes());
        if ti == 0 {
            let usec = (60_000_000.0 / bpm).round().clamp(1.0, 16_777_215.0) as u32;
            meta(0, 0x51, &usec.to_be_bytes()[1..]);
            meta(0, 0x58, &[4, 2, 24, 8]);
            if let Some(chords) = chords {
                let mut prev: Option<Option<Chord>> = None;
                for t in 0..chords.len() {
                    let c = chords.chord_at(t);
                    if prev != Some(c) {
                        let label = c.map_or_else(|| "N".to_string(), |c| c.label());
                        meta(t as u64 * ticks_per_step, 0x06, label.as_bytes());
                        prev = Some(c);
                    }
                }
            }
        }
        for n in roll.notes() {
            let on = u64::from(n.onset) * ticks_per_step;
            let off = u64::from(n.end()) * ticks_per_step;
            events.push((on, 2, vec![0x90, n.pitch, n.velocity]));
            events.push((off, 1, vec![0x80, n.pitch, 0]));
        }
        events.sort_by(|a, b| (a.0, a.1, &a.2).cmp(&(b.0, b.1, &b.2)));

        let mut body = Vec::new();
        let mut last = 0u64;
        for (tick, _, bytes) in &events {
            push_vlq(&mut body, (tick - last) as u32);
            body.extend_from_slice(bytes);
            last = *tick;
        }
        let end = (roll.steps() as u64 * ticks_per_step).max(last);
        push_vlq(&mut body, (end - last) as u32);
        body.extend_from_slice(&[0xFF, 0x2F, 0x00]);

        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}
