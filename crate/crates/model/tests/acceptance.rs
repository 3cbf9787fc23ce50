//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails. A positional argument filters criteria by name substring.

use candle_core::{DType, Device, Tensor, Var};
use emoacc_core::emotion::{arousal_map, quantize_arousal, validate_curve, EmotionCurve, EmotionKind};
use emoacc_core::emotion::{REASON_FLATNESS, REASON_TOO_MANY_EXTREMA};
use emoacc_core::evaluation::{flow_correlation, measure_flow, mute_fs, mute_fspc, pearson};
use emoacc_core::rules::{apply_constraint, decide, delta_c, SelectionPolicy};
use emoacc_core::score::{
    parse_midi, rotate_chroma, segment, write_midi, BarStructure, Chord, ChordQuality, ChromaSequence, NoteEvent, PianoRoll, Role,
    STEPS_PER_BAR, STEPS_PER_BEAT,
};
use emoacc_core::synth::synth_song;
use emoacc_model::attention::relative_self_attention;
use emoacc_model::trainer::{epoch_means, train, Control, HistoryRow, TrainingConfig};
use emoacc_model::{
    generate, kl_closed_form, Batch, Example, GaussianLatent, GenerationOptions, ModelConfig, VaVae,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::HashSet;
use std::time::Instant;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_notes(rng: &mut ChaCha8Rng, steps: usize, count: usize) -> Vec<NoteEvent> {
    (0..count)
        .map(|_| {
            let onset = rng.random_range(0..steps as u32);
            let dur = rng.random_range(1..=(steps as u32 - onset).min(24));
            NoteEvent::new(rng.random_range(0..128), onset, dur, rng.random_range(1..128)).unwrap()
        })
        .collect()
}

// ---------------------------------------------------------------- metrics

/// Active `(pitch, step)` cells straight from the note spans.
fn cells(notes: &[NoteEvent], steps: usize) -> HashSet<(usize, usize)> {
    let mut s = HashSet::new();
    for n in notes {
        for t in n.onset as usize..(n.end() as usize).min(steps) {
            s.insert((n.pitch as usize, t));
        }
    }
    s
}

fn set_f1(a: &HashSet<(usize, usize)>, b: &HashSet<(usize, usize)>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * a.intersection(b).count() as f64 / (a.len() + b.len()) as f64
}

fn fold(a: &HashSet<(usize, usize)>) -> HashSet<(usize, usize)> {
    a.iter().map(|&(p, t)| (p % 12, t)).collect()
}

fn direct_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0f64;
    for i in 0..200 {
        let (na, nb) = (rng.random_range(0..40), rng.random_range(0..40));
        let a = random_notes(&mut rng, 32, na);
        // every third pair shares most of its notes so F1 spans the whole range
        let b = if i % 3 == 0 { a.iter().take(na * 2 / 3).copied().collect() } else { random_notes(&mut rng, 32, nb) };
        let ra = PianoRoll::from_notes(Role::Accompaniment, 32, &a).unwrap();
        let rb = PianoRoll::from_notes(Role::Accompaniment, 32, &b).unwrap();
        let (ca, cb) = (cells(&a, 32), cells(&b, 32));
        let fs = mute_fs(&ra, &rb).map_err(|e| e.to_string())?;
        let fspc = mute_fspc(&ra, &rb).map_err(|e| e.to_string())?;
        let (e1, e2) = ((fs - set_f1(&ca, &cb)).abs(), (fspc - set_f1(&fold(&ca), &fold(&cb))).abs());
        worst = worst.max(e1).max(e2);
        ensure(e1 <= 1e-9 && e2 <= 1e-9, || format!("pair {i}: fs err {e1:e}, fspc err {e2:e}"))?;
    }
    let mut worst_r = 0f64;
    for i in 0..200 {
        let n = rng.random_range(3..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| rng.random::<f64>() * 0.5 + v * (i % 5) as f64 * 0.3).collect();
        let e = (pearson(&x, &y).map_err(|e| e.to_string())? - direct_pearson(&x, &y)).abs();
        worst_r = worst_r.max(e);
        ensure(e <= 1e-12, || format!("pearson pair {i}: err {e:e}"))?;
    }
    Ok(format!("max |ΔF1| {worst:.1e}, max |Δr| {worst_r:.1e}"))
}

// ---------------------------------------------------------------- arousal

fn arousal_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0f64;
    for i in 0..100 {
        let bars = rng.random_range(1..=4);
        let steps = bars * STEPS_PER_BAR;
        let count = rng.random_range(0..50 * bars);
        let roll = PianoRoll::from_notes(Role::Merged, steps, &random_notes(&mut rng, steps, count)).unwrap();
        let notes = roll.notes();
        // dense [pitch][step][duration][density] tensor by definition
        let idx = |p: usize, t: usize, d: usize, n: usize| ((p * steps + t) * 16 + d) * 8 + n;
        let mut dense = vec![0f64; 128 * steps * 16 * 8];
        for n in &notes {
            let same = notes.iter().filter(|m| m.onset == n.onset).count();
            dense[idx(n.pitch as usize, n.onset as usize, n.duration.min(16) as usize - 1, same.min(8) - 1)] += 1.0;
        }
        let curve = quantize_arousal(&arousal_map(&roll));
        for b in 0..bars {
            let mut sum = 0.0;
            for p in 0..128 {
                for t in b * STEPS_PER_BAR..(b + 1) * STEPS_PER_BAR {
                    for d in 0..16 {
                        for n in 0..8 {
                            sum += dense[idx(p, t, d, n)];
                        }
                    }
                }
            }
            let want = (sum / (5.0 * STEPS_PER_BAR as f64)).min(1.0);
            let got = curve.samples().iter().find(|s| s.0 as usize == b * STEPS_PER_BAR).map(|s| s.1);
            let got = got.ok_or_else(|| format!("roll {i}: no sample at bar {b}"))?;
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= 1e-12, || format!("roll {i} bar {b}: {got} vs {want}"))?;
        }
    }
    Ok(format!("max error {worst:.1e}"))
}

// ---------------------------------------------------------------- attention

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// softmax((q·kᵀ + s) / √d + mask) · v for one batch item, by loops.
#[allow(clippy::too_many_arguments)]
fn brute_attention(q: &[f64], k: &[f64], v: &[f64], s: &[f64], causal: bool, l: usize, d: usize, dv: usize) -> Vec<f64> {
    let mut out = vec![0.0; l * dv];
    for i in 0..l {
        let mut logits = vec![f64::NEG_INFINITY; l];
        for j in 0..l {
            if causal && j > i {
                continue;
            }
            let dot: f64 = (0..d).map(|c| q[i * d + c] * k[j * d + c]).sum();
            logits[j] = (dot + s[i * l + j]) / (d as f64).sqrt();
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..l {
            for c in 0..dv {
                out[i * dv + c] += e[j] / z * v[j * dv + c];
            }
        }
    }
    out
}

fn mask_for(l: usize, causal: bool) -> Option<Tensor> {
    causal.then(|| emoacc_model::attention::causal_mask(0, l, l, DType::F64).unwrap())
}

fn attention_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let dev = Device::Cpu;
    let (d, dv) = (4, 3);
    let mut worst_fwd = 0f64;
    let mut worst_grad = 0f64;
    for inst in 0..40 {
        let l = rng.random_range(1..=6);
        let causal = inst % 2 == 1;
        let (q, k, v) = (rand_vec(&mut rng, l * d), rand_vec(&mut rng, l * d), rand_vec(&mut rng, l * dv));
        let zero = vec![0.0; l * l];
        let s = rand_vec(&mut rng, l * l);
        let t = |x: &[f64], shape: &[usize]| Tensor::from_vec(x.to_vec(), shape, &dev).unwrap();
        let mask = mask_for(l, causal);
        for table in [&zero, &s] {
            let (ctx, w) = relative_self_attention(
                &t(&q, &[1, l, d]),
                &t(&k, &[1, l, d]),
                &t(&v, &[1, l, dv]),
                &t(table, &[l, l]),
                mask.as_ref(),
            )
            .map_err(|e| e.to_string())?;
            let got: Vec<f64> = ctx.flatten_all().unwrap().to_vec1().unwrap();
            let want = brute_attention(&q, &k, &v, table, causal, l, d, dv);
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_fwd = worst_fwd.max(err);
            ensure(err <= 1e-10, || format!("instance {inst}: forward error {err:e}"))?;
            let rows: Vec<Vec<f64>> = w.squeeze(0).unwrap().to_vec2().unwrap();
            for r in &rows {
                let sum: f64 = r.iter().sum();
                ensure((sum - 1.0).abs() <= 1e-9 && r.iter().all(|x| *x >= 0.0), || format!("row sum {sum}"))?;
            }
        }

        // analytic vs central differences of Σ ctx ⊙ g
        let g = t(&rand_vec(&mut rng, l * dv), &[1, l, dv]);
        let inputs = [(q.clone(), vec![1, l, d]), (k.clone(), vec![1, l, d]), (v.clone(), vec![1, l, dv]), (s.clone(), vec![l, l])];
        let loss_of = |xs: &[Vec<f64>]| -> f64 {
            let (c, _) = relative_self_attention(
                &t(&xs[0], &[1, l, d]),
                &t(&xs[1], &[1, l, d]),
                &t(&xs[2], &[1, l, dv]),
                &t(&xs[3], &[l, l]),
                mask.as_ref(),
            )
            .unwrap();
            (c * &g).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
        };
        let vars: Vec<Var> = inputs.iter().map(|(x, sh)| Var::from_tensor(&t(x, sh)).unwrap()).collect();
        let (c, _) = relative_self_attention(
            vars[0].as_tensor(),
            vars[1].as_tensor(),
            vars[2].as_tensor(),
            vars[3].as_tensor(),
            mask.as_ref(),
        )
        .map_err(|e| e.to_string())?;
        let grads = (c * &g).unwrap().sum_all().unwrap().backward().map_err(|e| e.to_string())?;
        let base: Vec<Vec<f64>> = inputs.iter().map(|x| x.0.clone()).collect();
        let h = 1e-6;
        for (which, name) in ["Q", "K", "V", "S_rel"].iter().enumerate() {
            let analytic: Vec<f64> = grads.get(vars[which].as_tensor()).map_or_else(
                || vec![0.0; base[which].len()],
                |gr| gr.flatten_all().unwrap().to_vec1().unwrap(),
            );
            let mut numeric = Vec::with_capacity(analytic.len());
            for e in 0..base[which].len() {
                let mut plus = base.clone();
                plus[which][e] += h;
                let mut minus = base.clone();
                minus[which][e] -= h;
                numeric.push((loss_of(&plus) - loss_of(&minus)) / (2.0 * h));
            }
            let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
            let rel = if scale < 1e-12 { diff } else { diff / scale };
            worst_grad = worst_grad.max(rel);
            ensure(rel < 1e-4, || format!("instance {inst} (L={l}): ∂/∂{name} relative error {rel:e}"))?;
        }
    }
    Ok(format!("forward max error {worst_fwd:.1e}, gradient max relative error {worst_grad:.1e}"))
}

// ---------------------------------------------------------------- KL

fn kl_oracle() -> Check {
    let dev = Device::Cpu;
    let (mean, lv) = ([0.7, -1.2], [-0.5, 0.8]);
    let g = GaussianLatent {
        mean: Tensor::from_vec(mean.to_vec(), (1, 2), &dev).unwrap(),
        log_variance: Tensor::from_vec(lv.to_vec(), (1, 2), &dev).unwrap(),
    };
    let closed = g.kl().unwrap().to_vec1::<f64>().unwrap()[0];
    ensure((closed - kl_closed_form(&mean, &lv)).abs() < 1e-12, || "tensor and scalar KL disagree".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let n = 100_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut log_ratio = 0.0;
        for c in 0..2 {
            let eps: f64 = rng.sample(StandardNormal);
            let z = mean[c] + (0.5 * lv[c]).exp() * eps;
            // log q(z) − log p(z); the 2π terms cancel
            log_ratio += -0.5 * lv[c] - 0.5 * eps * eps + 0.5 * z * z;
        }
        sum += log_ratio;
        sq += log_ratio * log_ratio;
    }
    let mc = sum / n as f64;
    let se = ((sq / n as f64 - mc * mc) / n as f64).sqrt();
    ensure((mc - closed).abs() < 3.0 * se, || format!("closed {closed} vs Monte-Carlo {mc} ± {se}"))?;

    let draws = 1000;
    let m: Vec<f64> = (0..draws * 256).map(|_| rng.random_range(-3.0..3.0)).collect();
    let v: Vec<f64> = (0..draws * 256).map(|_| rng.random_range(-6.0..6.0)).collect();
    let batch = GaussianLatent {
        mean: Tensor::from_vec(m, (draws, 256), &dev).unwrap(),
        log_variance: Tensor::from_vec(v, (draws, 256), &dev).unwrap(),
    };
    let kls: Vec<f64> = batch.kl().unwrap().to_vec1().unwrap();
    let min = kls.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(min >= 0.0, || format!("negative KL {min}"))?;
    Ok(format!("closed {closed:.5}, Monte-Carlo {mc:.5} ± {se:.5}; min KL over {draws} draws {min:.3}"))
}

// ---------------------------------------------------------------- training

fn overfit_set() -> Vec<Example> {
    (1..=4).map(|s| Example::from_segment(&segment(&synth_song(s, 2).tracks)[0]).unwrap()).collect()
}

fn overfit_capacity() -> Check {
    let examples = overfit_set();
    let target = PianoRoll::concat(&examples.iter().map(|e| e.target_roll()).collect::<Vec<_>>()).unwrap();
    let chords = ChromaSequence::concat(&examples.iter().map(|e| e.chords.clone()).collect::<Vec<_>>());
    let (v_in, a_in) = measure_flow(&target, &chords).map_err(|e| e.to_string())?;
    let refs: Vec<&Example> = examples.iter().collect();
    let batch = Batch::new(&refs, DType::F32).map_err(|e| e.to_string())?;
    let model = VaVae::new(&ModelConfig::desk(), 0, DType::F32).map_err(|e| e.to_string())?;
    let cfg = TrainingConfig {
        batch_size: 4,
        epochs: 2000,
        max_steps: Some(2000),
        lr: 3e-3,
        lr_decay: 0.9995,
        kl_weight: 0.1,
        kl_warmup: true,
        tf_ratio_pianotree: 1.0,
        tf_ratio_valence: 1.0,
        ..Default::default()
    };
    let mut best = (0.0, None, None, 0usize);
    let mut reached = None;
    train(&model, &examples, &cfg, None, |m, row: &HistoryRow| {
        if row.step % 50 != 49 {
            return Control::Continue;
        }
        let d = m.reconstruct(&batch, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let roll = PianoRoll::concat(&d.rolls).unwrap();
        let out_chords = ChromaSequence::estimated(&d.chroma.concat()).upsample(STEPS_PER_BEAT);
        let fs = mute_fs(&roll, &target).unwrap();
        let rep = flow_correlation("overfit", &v_in, &a_in, &roll, &out_chords).ok();
        let (rv, ra) = (rep.as_ref().and_then(|r| r.valence.r), rep.as_ref().and_then(|r| r.arousal.r));
        if fs >= best.0 {
            best = (fs, rv, ra, row.step + 1);
        }
        if fs > 0.9 && rv.is_some_and(|r| r > 0.6) && ra.is_some_and(|r| r > 0.6) {
            reached = Some(row.step + 1);
            return Control::Stop;
        }
        Control::Continue
    })
    .map_err(|e| e.to_string())?;
    let (fs, rv, ra, step) = best;
    let detail = format!("FS {fs:.3}, r_V {rv:?}, r_A {ra:?} at step {step}");
    match reached {
        Some(s) => Ok(format!("{detail} (criterion met at step {s})")),
        None => Err(format!("not reached in 2000 steps; best {detail}")),
    }
}

fn trend_set() -> Vec<Example> {
    (0..8u64)
        .flat_map(|s| segment(&synth_song(1000 + s, 8).tracks))
        .map(|seg| Example::from_segment(&seg).unwrap())
        .collect()
}

fn loss_trend() -> Check {
    let examples = trend_set();
    let model = VaVae::new(&ModelConfig::desk(), 0, DType::F32).map_err(|e| e.to_string())?;
    let cfg = TrainingConfig { batch_size: 8, ..Default::default() };
    let out = train(&model, &examples, &cfg, None, |_, _| Control::Continue).map_err(|e| e.to_string())?;
    let means = epoch_means(&out.history);
    ensure(means.len() == 6, || format!("{} epochs recorded", means.len()))?;
    let detail = format!(
        "{} segments, batch 8; epoch means {}",
        examples.len(),
        means.iter().map(|m| format!("{m:.1}")).collect::<Vec<_>>().join(" → ")
    );
    ensure(means[5] < means[0], || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- rules

fn chroma(rng: &mut ChaCha8Rng) -> [f64; 12] {
    std::array::from_fn(|_| if rng.random_bool(0.4) { rng.random::<f64>() } else { 0.0 })
}

/// Notes that end inside the bar they start in, away from the MIDI range edges.
fn bar_local_roll(rng: &mut ChaCha8Rng, bars: usize) -> PianoRoll {
    let mut notes = Vec::new();
    for b in 0..bars {
        for _ in 0..rng.random_range(0..12) {
            let on = rng.random_range(0..STEPS_PER_BAR as u32);
            let dur = rng.random_range(1..=STEPS_PER_BAR as u32 - on);
            let start = (b * STEPS_PER_BAR) as u32;
            notes.push(NoteEvent::new(rng.random_range(24..104), start + on, dur, rng.random_range(1..128)).unwrap());
        }
    }
    PianoRoll::from_notes(Role::Accompaniment, bars * STEPS_PER_BAR, &notes).unwrap()
}

fn timing(roll: &PianoRoll) -> Vec<(u32, u32, u8)> {
    let mut v: Vec<_> = roll.notes().iter().map(|n| (n.onset, n.duration, n.velocity)).collect();
    v.sort();
    v
}

fn rule_properties() -> Check {
    let c = Chord::new(0, ChordQuality::Maj).chroma();
    let d = Chord::new(2, ChordQuality::Maj).chroma();
    let cd = delta_c(&c, &d);
    ensure(cd.best_shift == -2 && (cd.similarity - 1.0).abs() < 1e-12, || format!("C vs D: {cd:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let policy = SelectionPolicy::default();
    let mut shifted_bars = 0;
    for i in 0..500 {
        let (pre, gen) = (chroma(&mut rng), chroma(&mut rng));
        let base = delta_c(&pre, &gen);
        let k = rng.random_range(-11..12);
        let rot = delta_c(&rotate_chroma(&pre, k), &rotate_chroma(&gen, k));
        ensure(rot.best_shift == base.best_shift && (rot.similarity - base.similarity).abs() < 1e-12, || {
            format!("instance {i}: rotation by {k} changed {base:?} to {rot:?}")
        })?;
        let (a, b) = (rng.random_range(0.01..100.0), rng.random_range(0.01..100.0));
        let scaled = delta_c(&pre.map(|x| x * a), &gen.map(|x| x * b));
        ensure(scaled.best_shift == base.best_shift && (scaled.similarity - base.similarity).abs() < 1e-12, || {
            format!("instance {i}: scaling changed the decision")
        })?;

        let bars = rng.random_range(1..=6);
        let steps = bars * STEPS_PER_BAR;
        let roll = bar_local_roll(&mut rng, bars);
        let chords = ChromaSequence::from_chords(
            &(0..bars)
                .flat_map(|_| {
                    let ch = Some(Chord::new(rng.random_range(0..12), ChordQuality::ALL[rng.random_range(0..9)]));
                    std::iter::repeat_n(ch, STEPS_PER_BAR)
                })
                .collect::<Vec<_>>(),
        );
        let grid = BarStructure::uniform(steps);
        let first = decide(&roll, &chords, &grid, &policy).map_err(|e| e.to_string())?;
        let once = apply_constraint(&roll, &grid, &first, &policy).map_err(|e| e.to_string())?;
        ensure(once.note_count() == roll.note_count() && timing(&once) == timing(&roll), || {
            format!("instance {i}: timing or note count changed")
        })?;
        let second = decide(&once, &chords, &grid, &policy).map_err(|e| e.to_string())?;
        for (f, s) in first.iter().zip(&second).filter(|(f, _)| f.selected) {
            shifted_bars += 1;
            ensure(s.best_shift == 0 && (s.similarity - f.similarity).abs() < 1e-12, || {
                format!("instance {i} bar {}: second pass {s:?} after {f:?}", f.bar_index)
            })?;
        }
        let mut again = second.clone();
        for (s, f) in again.iter_mut().zip(&first) {
            if !f.selected {
                s.best_shift = 0;
            }
        }
        let twice = apply_constraint(&once, &grid, &again, &policy).map_err(|e| e.to_string())?;
        ensure(twice == once, || format!("instance {i}: second application moved notes"))?;
    }
    Ok(format!("C vs D shift {} similarity {:.3}; {shifted_bars} shifted bars re-checked", cd.best_shift, cd.similarity))
}

// ---------------------------------------------------------------- parser

fn round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut total = 0;
    for i in 0..500 {
        let steps = rng.random_range(1..=8) * STEPS_PER_BAR;
        let count = rng.random_range(1..80);
        let roll = PianoRoll::from_notes(Role::Accompaniment, steps, &random_notes(&mut rng, steps, count)).unwrap();
        let bpm = rng.random_range(40.0..200.0);
        let bytes = write_midi(&roll, bpm).map_err(|e| format!("roll {i}: {e}"))?;
        let back = parse_midi(&bytes).map_err(|e| format!("roll {i}: {e}"))?;
        ensure(back.piano.notes() == roll.notes(), || format!("roll {i}: note sets differ"))?;
        ensure(back.steps() == steps, || format!("roll {i}: {} steps, expected {steps}", back.steps()))?;
        total += roll.note_count();
    }
    Ok(format!("{total} notes over 500 rolls"))
}

// ---------------------------------------------------------------- curve gate

fn curve(kind: EmotionKind, values: &[f64]) -> EmotionCurve {
    let samples = values.iter().enumerate().map(|(i, v)| (i as u32, *v)).collect();
    EmotionCurve::new(kind, values.len() as u32 - 1, samples).unwrap()
}

fn sinusoid(amplitude: f64, periods: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| (0.5 + amplitude * (2.0 * std::f64::consts::PI * periods * i as f64 / n as f64).sin()).clamp(0.0, 1.0))
        .collect()
}

/// Variance of the piecewise-linear interpolant by dense midpoint quadrature.
fn quadrature_variance(values: &[f64]) -> f64 {
    let per = 200;
    let xs: Vec<f64> = values
        .windows(2)
        .flat_map(|w| (0..per).map(move |j| w[0] + (w[1] - w[0]) * (j as f64 + 0.5) / per as f64))
        .collect();
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

fn curve_gate() -> Check {
    let flat = validate_curve(&curve(EmotionKind::Valence, &[0.5; 16]));
    ensure(!flat.valid && flat.reasons == [REASON_FLATNESS], || format!("flat: {flat:?}"))?;

    let wave = sinusoid(0.6, 1.0, 400);
    let ok = validate_curve(&curve(EmotionKind::Arousal, &wave));
    ensure(ok.valid, || format!("amplitude-0.6 sinusoid: {ok:?}"))?;
    let qv = quadrature_variance(&wave);
    ensure((ok.variance - qv).abs() < 1e-6, || format!("variance {} vs quadrature {qv}", ok.variance))?;

    let six = validate_curve(&curve(EmotionKind::Valence, &sinusoid(0.6, 3.0, 600)));
    ensure(!six.valid && six.extreme_point_count == 6 && six.reasons == [REASON_TOO_MANY_EXTREMA], || {
        format!("6 extrema: {six:?}")
    })?;
    let five = validate_curve(&curve(EmotionKind::Valence, &sinusoid(0.7, 2.5, 500)));
    ensure(five.valid && five.extreme_point_count == 5, || format!("5 extrema: {five:?}"))?;

    // square wave 0.5 ± s has variance s² (up to the two ramps); bracket 0.15
    let square = |s: f64| {
        let mut v = vec![0.5 + s; 500];
        v.extend(vec![0.5 - s; 500]);
        v
    };
    let (mut lo, mut hi) = (0.3, 0.45);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if curve(EmotionKind::Valence, &square(mid)).variance() > 0.15 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let below = validate_curve(&curve(EmotionKind::Valence, &square(lo - 1e-9)));
    let above = validate_curve(&curve(EmotionKind::Valence, &square(hi + 1e-9)));
    ensure(!below.valid && above.valid, || format!("boundary: below {below:?}, above {above:?}"))?;
    Ok(format!(
        "sinusoid variance {:.4} (quadrature {qv:.4}); boundary amplitude {hi:.6}; 6 extrema rejected, 5 accepted",
        ok.variance
    ))
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Check {
    let examples = trend_set();
    let cfg = TrainingConfig { batch_size: 8, max_steps: Some(6), seed: 9, ..Default::default() };
    let song = synth_song(77, 6);
    let t = song.tracks.steps() as u32;
    let v = EmotionCurve::new(EmotionKind::Valence, t, vec![(0, 0.2), (t / 2, 0.9), (t, 0.4)]).unwrap();
    let a = EmotionCurve::new(EmotionKind::Arousal, t, vec![(0, 0.1), (t / 3, 0.7), (t, 0.2)]).unwrap();
    let opts = GenerationOptions { temperature: 0.8, seed: 5, ..Default::default() };
    let run = || -> Result<(Vec<HistoryRow>, Vec<u8>), String> {
        let model = VaVae::new(&ModelConfig::desk(), 3, DType::F32).map_err(|e| e.to_string())?;
        let out = train(&model, &examples, &cfg, None, |_, _| Control::Continue).map_err(|e| e.to_string())?;
        let g = generate(&model, &song.tracks, &v, &a, &opts).map_err(|e| e.to_string())?;
        Ok((out.history, g.midi(song.bpm()).map_err(|e| e.to_string())?))
    };
    let (h1, m1) = run()?;
    let (h2, m2) = run()?;
    let bits = |h: &[HistoryRow]| -> Vec<u64> {
        h.iter()
            .flat_map(|r| {
                let l = r.loss;
                [r.lr, l.recon_valence, l.recon_arousal, l.kl_valence, l.kl_arousal, l.total].map(f64::to_bits)
            })
            .collect()
    };
    ensure(h1.len() == 6 && bits(&h1) == bits(&h2), || "loss histories differ".into())?;
    ensure(m1 == m2, || "generated MIDI differs".into())?;
    Ok(format!("{} loss rows and {} MIDI bytes identical", h1.len(), m1.len()))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(&str, f64, fn() -> Check); 10] = [
        ("metric oracle equivalence", 10.0, metric_oracle),
        ("arousal quantizer oracle", 5.0, arousal_oracle),
        ("attention correctness", 30.0, attention_oracle),
        ("loss correctness (KL)", 30.0, kl_oracle),
        ("overfit capacity", 900.0, overfit_capacity),
        ("loss monotonic trend", 1800.0, loss_trend),
        ("rule-constraint properties", 10.0, rule_properties),
        ("round-trip parser fidelity", 20.0, round_trip),
        ("curve gate", 1.0, curve_gate),
        ("determinism", f64::INFINITY, determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let res = f();
        let secs = t0.elapsed().as_secs_f64();
        let res = match res {
            Ok(d) if secs >= budget => Err(format!("{d}; took {secs:.1}s, budget {budget}s")),
            other => other,
        };
        match res {
            Ok(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
