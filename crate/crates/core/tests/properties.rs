use emoacc_core::emotion::{arousal_map, quantize_arousal, quantize_valence, valence_map, EmotionCurve, EmotionKind};
use emoacc_core::evaluation::{mute_fs, mute_fspc, mute_scores, pearson};
use emoacc_core::rules::{delta_c, SHIFTS};
use emoacc_core::score::{
    normalize_root, parse_midi, rotate_chroma, write_midi, Chord, ChordQuality, ChromaSequence, NoteEvent,
    PianoRoll, Role,
};
use proptest::prelude::*;

fn note() -> impl Strategy<Value = (u8, u32, u32, u8)> {
    (0u8..128, 0u32..64, 1u32..20, 1u8..128)
}

fn roll_from(role: Role, notes: &[(u8, u32, u32, u8)]) -> PianoRoll {
    let ev: Vec<NoteEvent> = notes.iter().map(|&(p, t, d, v)| NoteEvent::new(p, t, d, v).unwrap()).collect();
    PianoRoll::from_notes(role, 64, &ev).unwrap()
}

fn chord() -> impl Strategy<Value = Option<Chord>> {
    prop_oneof![
        1 => Just(None),
        6 => (0u8..12, 0usize..9).prop_map(|(r, q)| Some(Chord::new(r, ChordQuality::ALL[q]))),
    ]
}

/// Notes read back with an independent SMF parser, as (onset step, pitch, steps, velocity).
fn midly_notes(bytes: &[u8]) -> Vec<(u32, u8, u32, u8)> {
    let smf = midly::Smf::parse(bytes).unwrap();
    let tpq = match smf.header.timing {
        midly::Timing::Metrical(t) => t.as_int() as u32,
        _ => panic!("metrical timing expected"),
    };
    let mut out = Vec::new();
    for track in &smf.tracks {
        let mut tick = 0u32;
        let mut open: std::collections::HashMap<u8, Vec<(u32, u8)>> = Default::default();
        for ev in track {
            tick += ev.delta.as_int();
            if let midly::TrackEventKind::Midi { message, .. } = ev.kind {
                match message {
                    midly::MidiMessage::NoteOn { key, vel } if vel.as_int() > 0 => {
                        open.entry(key.as_int()).or_default().push((tick, vel.as_int()))
                    }
                    midly::MidiMessage::NoteOn { key, .. } | midly::MidiMessage::NoteOff { key, .. } => {
                        let (on, vel) = open.get_mut(&key.as_int()).unwrap().remove(0);
                        let step = tpq / 4;
                        out.push((on / step, key.as_int(), (tick - on) / step, vel));
                    }
                    _ => {}
                }
            }
        }
    }
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn written_midi_agrees_with_independent_parser(notes in prop::collection::vec(note(), 0..40)) {
        let roll = roll_from(Role::Accompaniment, &notes);
        let bytes = write_midi(&roll, 120.0).unwrap();
        let ours: Vec<(u32, u8, u32, u8)> = roll.notes().iter().map(|n| (n.onset, n.pitch, n.duration, n.velocity)).collect();
        let mut ours = ours;
        ours.sort();
        prop_assert_eq!(midly_notes(&bytes), ours);
        if !roll.is_silent() {
            let back = parse_midi(&bytes).unwrap();
            prop_assert_eq!(back.piano.notes(), roll.notes());
        }
    }

    #[test]
    fn valence_is_transposition_invariant(chords in prop::collection::vec(chord(), 8), k in -11i32..12) {
        let c = ChromaSequence::from_chords(&chords);
        let a = valence_map(&normalize_root(&c)).unwrap();
        let b = valence_map(&normalize_root(&c.transposed(k))).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn valence_stays_in_unit_interval(chords in prop::collection::vec(chord(), 1..24)) {
        let q = quantize_valence(&valence_map(&normalize_root(&ChromaSequence::from_chords(&chords))).unwrap());
        prop_assert!(q.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn adding_a_note_never_lowers_arousal(notes in prop::collection::vec(note(), 0..30), extra in note()) {
        let before = roll_from(Role::Merged, &notes);
        let mut after = before.clone();
        let (p, t, d, v) = extra;
        // keep the new note clear of existing ones so it adds exactly one note
        let free = (t..(t + d).min(64)).all(|s| !before.is_active(p as usize, s as usize));
        prop_assume!(free);
        after.add_note(&NoteEvent::new(p, t, d, v).unwrap());
        let qa = quantize_arousal(&arousal_map(&before)).values();
        let qb = quantize_arousal(&arousal_map(&after)).values();
        for (a, b) in qa.iter().zip(&qb) {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn curve_json_round_trips(values in prop::collection::vec(0.0f64..=1.0, 2..20)) {
        let samples: Vec<(u32, f64)> = values.iter().enumerate().map(|(i, v)| (i as u32 * 3, *v)).collect();
        let horizon = samples.last().unwrap().0 + 1;
        let c = EmotionCurve::new(EmotionKind::Valence, horizon, samples).unwrap();
        prop_assert_eq!(EmotionCurve::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn mute_f1_is_symmetric(a in prop::collection::vec(note(), 0..20), b in prop::collection::vec(note(), 0..20)) {
        let (x, y) = (roll_from(Role::Merged, &a), roll_from(Role::Merged, &b));
        let s = mute_scores(&x, &y).unwrap();
        let t = mute_scores(&y, &x).unwrap();
        prop_assert_eq!(s.fs, t.fs);
        prop_assert_eq!(s.fspc, t.fspc);
        prop_assert_eq!(s.fs_precision, t.fs_recall);
    }

    #[test]
    fn single_octave_folding_is_injective(a in prop::collection::vec((60u8..72, 0u32..64, 1u32..8, 1u8..128), 1..20),
                                          b in prop::collection::vec((60u8..72, 0u32..64, 1u32..8, 1u8..128), 1..20)) {
        let (x, y) = (roll_from(Role::Merged, &a), roll_from(Role::Merged, &b));
        prop_assert_eq!(mute_fs(&x, &y).unwrap(), mute_fspc(&x, &y).unwrap());
    }

    #[test]
    fn pearson_affine_invariance(x in prop::collection::vec(-10.0f64..10.0, 3..30), a in 0.1f64..5.0, c in -3.0f64..3.0) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() + i as f64 * 0.1).collect();
        if let Ok(r) = pearson(&x, &y) {
            let x2: Vec<f64> = x.iter().map(|v| a * v + c).collect();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            prop_assert!((pearson(&x2, &y).unwrap() - r).abs() < 1e-9);
            prop_assert!((pearson(&neg, &y).unwrap() + r).abs() < 1e-9);
        }
    }

    #[test]
    fn best_shift_is_in_range_and_scale_free(
        pre in prop::array::uniform12(0.0f64..1.0),
        gen in prop::array::uniform12(0.0f64..1.0),
        s in 0.01f64..100.0,
    ) {
        let d = delta_c(&pre, &gen);
        prop_assert!(SHIFTS.contains(&d.best_shift));
        let scaled: [f64; 12] = gen.map(|v| v * s);
        let e = delta_c(&pre, &scaled);
        prop_assert_eq!(d.best_shift, e.best_shift);
        prop_assert!((d.similarity - e.similarity).abs() < 1e-12);
        let again = delta_c(&pre, &rotate_chroma(&gen, d.best_shift));
        prop_assert_eq!(again.best_shift, 0);
    }
}
