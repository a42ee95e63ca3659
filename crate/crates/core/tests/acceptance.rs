//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Run with
//! `cargo test -p wordmine --release --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wordmine::corpus::{AudioEmbedding, BinaryMask, ImageGrid, UnitSequence};
use wordmine::evalkit::{
    binomial_interval, classification_accuracy, retrieval_eval, sample_episodes, EpisodeMode,
    EvalCorpus,
};
use wordmine::localizer::{iou, mean_iou_for_class, saliency};
use wordmine::pipeline::{eval_corpus, run_pipeline, with_threads, PipelineConfig};
use wordmine::qbe::{fit_align, Scoring};
use wordmine::scorer::{
    attention, loss, loss_gradient, AttentionScorer, ContrastiveBatch, LossOptions, Scorer,
};
use wordmine::segmenter::{expand, segment};
use wordmine::synth::{blob_mask, generate_synthetic, SynthConfig};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

// ---------------------------------------------------------------- alignment

fn brute_global(q: &[u32], t: &[u32], s: &Scoring) -> f64 {
    let sub = |a: u32, b: u32| if a == b { s.match_score } else { s.mismatch };
    match (q.split_first(), t.split_first()) {
        (None, None) => 0.0,
        (Some((_, qr)), None) => s.gap + brute_global(qr, t, s),
        (None, Some((_, tr))) => s.gap + brute_global(q, tr, s),
        (Some((&a, qr)), Some((&b, tr))) => (sub(a, b) + brute_global(qr, tr, s))
            .max(s.gap + brute_global(qr, t, s))
            .max(s.gap + brute_global(q, tr, s)),
    }
}

fn alignment_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for case in 0..1000 {
        let alphabet = rng.random_range(1..=4u32);
        let q: Vec<u32> = (0..rng.random_range(1..=5)).map(|_| rng.random_range(0..alphabet)).collect();
        let t: Vec<u32> = (0..rng.random_range(1..=8)).map(|_| rng.random_range(0..alphabet)).collect();
        // alternate the default scoring with random integer scorings
        let s = if case % 2 == 0 {
            Scoring::default()
        } else {
            Scoring {
                match_score: rng.random_range(0..=3) as f64,
                mismatch: -(rng.random_range(0..=3) as f64),
                gap: -(rng.random_range(0..=3) as f64),
            }
        };
        let mut best = f64::NEG_INFINITY;
        for a in 0..=t.len() {
            for b in a..=t.len() {
                best = best.max(brute_global(&q, &t[a..b], &s));
            }
        }
        let fit = fit_align(&q, &t, &s).unwrap();
        let window = brute_global(&q, &t[fit.start..fit.end], &s);
        if fit.score != best || window != best {
            mismatches += 1;
        }
    }
    let took = start.elapsed();
    check(
        "alignment oracle",
        mismatches == 0 && took < Duration::from_secs(10),
        format!("1000 cases, {mismatches} mismatches, {took:.2?} (limit 10s)"),
    )
}

// ------------------------------------------------------------- segmentation

fn segmentation_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    for i in 0..1000 {
        let k = rng.random_range(1..=6u32);
        let frames: Vec<u32> = (0..rng.random_range(1..=80)).map(|_| rng.random_range(0..k)).collect();
        let u = UnitSequence::new(format!("u{i}"), frames);
        if expand(&segment(&u).unwrap()) != u {
            failures += 1;
        }
    }
    check("segmentation round-trip", failures == 0, format!("1000 sequences, {failures} failures"))
}

// ------------------------------------------------------------ gradient check

const TIE_MARGIN: f64 = 1e-3;

/// True when every term of the batch has a unique argmax (by more than the
/// margin) and a raw score away from the clamp corners.
fn well_posed(batch: &ContrastiveBatch, audio: &[Vec<f64>], images: &[ImageGrid]) -> bool {
    let mut terms = vec![batch.anchor];
    for &(a, v) in &batch.positives {
        terms.push((batch.anchor.0, v));
        terms.push((a, batch.anchor.1));
    }
    for &(a, v, bg) in &batch.negatives {
        terms.push((a, batch.anchor.1));
        terms.push((batch.anchor.0, v));
        terms.push((batch.anchor.0, bg));
    }
    terms.iter().all(|&(a, v)| {
        let att = attention(&audio[a], &images[v]).unwrap();
        let m = att.max();
        let second = att
            .weights
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != att.argmax)
            .map(|(_, &w)| w)
            .fold(f64::NEG_INFINITY, f64::max);
        m - second > TIE_MARGIN && m.abs() > TIE_MARGIN && (m - 100.0).abs() > TIE_MARGIN
    })
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let (d, g) = (4, 2);
    let opts = LossOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut accepted, mut skipped) = (0, 0);
    let mut worst: f64 = 0.0;
    // inputs lie in [-2, 6), so a step of 1e-4 moves any attention weight by
    // less than the tie margin; away from ties and clamp corners the loss is
    // quadratic in each coordinate and the central difference is exact
    let h = 1e-4;
    while accepted < 100 {
        let n_pos = rng.random_range(0..=2);
        let n_neg = rng.random_range(0..=2);
        let n_audio = 1 + n_pos + n_neg;
        let n_img = 1 + n_pos + 2 * n_neg;
        let mut audio: Vec<Vec<f64>> = (0..n_audio)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..6.0)).collect())
            .collect();
        let mut images: Vec<ImageGrid> = (0..n_img)
            .map(|i| {
                let v = (0..g * g * d).map(|_| rng.random_range(-2.0..6.0)).collect();
                ImageGrid::new(format!("v{i}"), g, d, v).unwrap()
            })
            .collect();
        let batch = ContrastiveBatch {
            anchor: (0, 0),
            positives: (0..n_pos).map(|i| (1 + i, 1 + i)).collect(),
            negatives: (0..n_neg)
                .map(|i| (1 + n_pos + i, 1 + n_pos + 2 * i, 2 + n_pos + 2 * i))
                .collect(),
        };
        if !well_posed(&batch, &audio, &images) {
            skipped += 1;
            continue;
        }
        accepted += 1;
        let (_, grads) = loss_gradient(&batch, &audio, &images, opts).unwrap();
        for a in 0..n_audio {
            for k in 0..d {
                let x = audio[a][k];
                audio[a][k] = x + h;
                let up = loss(&batch, &audio, &images, opts).unwrap();
                audio[a][k] = x - h;
                let down = loss(&batch, &audio, &images, opts).unwrap();
                audio[a][k] = x;
                let fd = (up - down) / (2.0 * h);
                let an = grads.audio.get(&a).map_or(0.0, |v| v[k]);
                worst = worst.max(relative_error(an, fd));
            }
        }
        for v in 0..n_img {
            for k in 0..g * g * d {
                let x = images[v].as_slice()[k];
                images[v].as_mut_slice()[k] = x + h;
                let up = loss(&batch, &audio, &images, opts).unwrap();
                images[v].as_mut_slice()[k] = x - h;
                let down = loss(&batch, &audio, &images, opts).unwrap();
                images[v].as_mut_slice()[k] = x;
                let fd = (up - down) / (2.0 * h);
                let an = grads.images.get(&v).map_or(0.0, |g| g[k]);
                worst = worst.max(relative_error(an, fd));
            }
        }
    }
    let took = start.elapsed();
    check(
        "gradient check",
        worst <= 1e-4 && took < Duration::from_secs(30),
        format!(
            "100 batches ({skipped} tie/boundary draws skipped), max relative error {worst:.2e} (limit 1e-4), {took:.2?} (limit 30s)"
        ),
    )
}

// ---------------------------------------------------------- loss calibration

fn loss_calibration() -> Outcome {
    // audio 0 scores 100 on image 0 and 1, audio 1 scores 100 on image 0;
    // every negative term scores 0
    let audio = vec![vec![10.0, 0.0], vec![5.0, 0.0], vec![0.0, 1.0]];
    let grid = |cells: [f64; 8]| ImageGrid::new("v", 2, 2, cells.to_vec()).unwrap();
    let images = vec![
        grid([10.0, 0.0, 20.0, -3.0, 0.0, 0.0, -1.0, 0.0]),
        grid([10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        grid([-1.0, 0.0, 0.0, -4.0, -2.0, 0.0, 0.0, 0.0]),
        grid([0.0, -1.0, -3.0, 0.0, 0.0, 0.0, -5.0, -1.0]),
    ];
    let perfect = ContrastiveBatch {
        anchor: (0, 0),
        positives: vec![(1, 1)],
        negatives: vec![(2, 2, 3)],
    };
    let zero = loss(&perfect, &audio, &images, LossOptions::default()).unwrap();
    let audio90 = vec![vec![9.0, 0.0]];
    let img90 = vec![grid([10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])];
    let hundred = loss(&ContrastiveBatch::anchor_only(0, 0), &audio90, &img90, LossOptions::default()).unwrap();
    check(
        "loss calibration",
        zero == 0.0 && hundred == 100.0,
        format!("ideal batch loss {zero} (want 0), anchor-only S=90 loss {hundred} (want 100)"),
    )
}

// ---------------------------------------------------------------- P@N oracle

fn p_at_n_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for pool in 0..500 {
        let n = rng.random_range(1..=20);
        let query: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..10.0)).collect();
        let mut images: Vec<ImageGrid> = (0..n)
            .map(|i| {
                // coarse values make score ties common
                let cells = (0..4 * 3).map(|_| rng.random_range(-2..5) as f64).collect();
                let g = ImageGrid::new(format!("img{i:02}"), 2, 3, cells).unwrap();
                if rng.random::<bool>() { g.with_labels(["t"]) } else { g }
            })
            .collect();
        images[0].class_labels.insert("t".into());
        let q = AudioEmbedding {
            id: "q".into(),
            vector: query.clone(),
            class_hint: Some("t".into()),
        };
        let corpus = EvalCorpus::new(vec![q], images.clone()).unwrap();
        let got = retrieval_eval(&corpus, &AttentionScorer::default(), 1, pool).unwrap();

        let mut scored: Vec<(f64, &str, bool)> = images
            .iter()
            .map(|g| {
                let s = (0..4)
                    .map(|c| g.cell(c).iter().zip(&query).map(|(a, b)| a * b).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
                    .clamp(0.0, 100.0);
                (s, g.image_id.as_str(), g.has_label("t"))
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let relevant = scored.iter().filter(|x| x.2).count();
        let hits = scored[..relevant].iter().filter(|x| x.2).count();
        if got.per_class["t"].p_at_n != hits as f64 / relevant as f64 {
            mismatches += 1;
        }
    }
    check("P@N oracle", mismatches == 0, format!("500 pools, {mismatches} mismatches"))
}

// ------------------------------------------------- synthetic end-to-end runs

struct EndToEnd {
    outcomes: Vec<Outcome>,
}

fn end_to_end(root: &Path) -> EndToEnd {
    let synth_cfg = SynthConfig::default();
    let bundle = generate_synthetic(&synth_cfg).unwrap();
    let data = bundle.write(root.join("data")).unwrap();
    let cfg = PipelineConfig::synthetic_preset();
    let mut outcomes = Vec::new();

    let start = Instant::now();
    let run1 = with_threads(Some(1), || run_pipeline(&data, &cfg, Some(&root.join("run1"))))
        .unwrap()
        .unwrap();
    let took = start.elapsed();

    // mining precision against the planting records
    let (mut hits, mut total) = (0usize, 0usize);
    for r in &run1.audio_rankings {
        for u in &r.ranked {
            hits += bundle.planting.utterance_has(&u.utterance_id, &r.class_label) as usize;
            total += 1;
        }
    }
    let mining = hits as f64 / total as f64;
    let s = run1.summary();
    let steps = run1.train_log.steps_run;
    outcomes.push(check(
        "synthetic end-to-end",
        mining >= 0.90
            && s.classification_accuracy >= 0.90
            && s.retrieval_p_at_n >= 0.80
            && run1.classification.episodes == 200
            && steps <= 2000
            && took < Duration::from_secs(120),
        format!(
            "K={} L={} n={} N_pos={} N_neg={}: mining precision {mining:.3} (>= 0.90), \
             {}-episode accuracy {:.3} (>= 0.90), P@N {:.3} (>= 0.80), {steps} steps (<= 2000), \
             {took:.2?} single-threaded (< 120s)",
            synth_cfg.shots, cfg.l, cfg.n, cfg.n_pos, cfg.n_neg,
            run1.classification.episodes, s.classification_accuracy, s.retrieval_p_at_n,
        ),
    ));

    // chance control on the same evaluation corpus
    struct Constant;
    impl Scorer for Constant {
        fn score(&self, _: &[f64], _: &ImageGrid) -> wordmine::Result<f64> {
            Ok(50.0)
        }
    }
    let corpus = eval_corpus(&bundle.units, &bundle.grids, &bundle.splits, &bundle.support).unwrap();
    let episodes = sample_episodes(&corpus, 5, 1000, 99, EpisodeMode::Classification).unwrap();
    let chance = classification_accuracy(&corpus, &episodes, &Constant).unwrap().accuracy;
    let (lo, hi) = binomial_interval(0.2, 1000);
    outcomes.push(check(
        "chance-level control",
        (lo..=hi).contains(&chance),
        format!("constant scorer 5-way accuracy {chance:.3} over 1000 episodes, interval [{lo:.3}, {hi:.3}]"),
    ));

    // determinism: a second single-threaded run and a multi-threaded run
    with_threads(Some(1), || run_pipeline(&data, &cfg, Some(&root.join("run2"))))
        .unwrap()
        .unwrap();
    with_threads(Some(4), || run_pipeline(&data, &cfg, Some(&root.join("run3"))))
        .unwrap()
        .unwrap();
    let mut names: Vec<_> = fs::read_dir(root.join("run1"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let a = fs::read(root.join("run1").join(name)).unwrap();
        for other in ["run2", "run3"] {
            if fs::read(root.join(other).join(name)).ok().as_ref() != Some(&a) {
                differing.push(format!("{other}/{}", name.to_string_lossy()));
            }
        }
    }
    outcomes.push(check(
        "determinism",
        differing.is_empty(),
        format!(
            "{} output files compared across 2 single-threaded runs and a 4-thread run; differing: {:?}",
            names.len(),
            differing
        ),
    ));
    EndToEnd { outcomes }
}

// -------------------------------------------------------------- localization

fn localization() -> Outcome {
    let (g, d, size) = (7, 16, 224);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    };
    let signature = unit(&mut rng);
    let mut maps = Vec::new();
    let mut truths = Vec::new();
    for i in 0..100 {
        // interior cell; the blob is the one-spacing square around it
        let cell = rng.random_range(1..g - 1) * g + rng.random_range(1..g - 1);
        let mut cells = Vec::with_capacity(g * g * d);
        for c in 0..g * g {
            let v: Vec<f64> = if c == cell {
                signature.iter().map(|x| 4.0 * x + rng.random_range(-0.1..0.1)).collect()
            } else {
                (0..d).map(|_| rng.random_range(-0.1..0.1)).collect()
            };
            cells.extend(v);
        }
        let grid = ImageGrid::new(format!("blob{i}"), g, d, cells).unwrap();
        maps.push(saliency(&signature, &grid, size, size).unwrap());
        truths.push(blob_mask(cell, g, size, size));
    }
    let mean = mean_iou_for_class(&maps, &truths, 0.9).unwrap();
    let a = BinaryMask::from_fn(8, 8, |y, x| y < 4 && x > 2);
    let b = BinaryMask::from_fn(8, 8, |y, x| y >= 4 && x > 2);
    let same = iou(&a, &a).unwrap();
    let disjoint = iou(&a, &b).unwrap();
    check(
        "localization",
        mean >= 0.8 && same == 1.0 && disjoint == 0.0,
        format!(
            "mean IOU {mean:.3} at quantile 0.9 over 100 blob images (>= 0.8); identical {same}, disjoint {disjoint}"
        ),
    )
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut results = vec![
        alignment_oracle(),
        segmentation_round_trip(),
        gradient_check(),
        loss_calibration(),
        p_at_n_oracle(),
    ];
    let e2e = end_to_end(dir.path());
    let mut rest = e2e.outcomes.into_iter();
    results.push(rest.next().unwrap());
    results.push(rest.next().unwrap());
    results.push(localization());
    results.extend(rest);

    let mut by_status: BTreeMap<bool, usize> = BTreeMap::new();
    for r in &results {
        println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
        *by_status.entry(r.pass).or_default() += 1;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.name).collect();
    println!(
        "{} passed, {} failed",
        by_status.get(&true).copied().unwrap_or(0),
        failed.len()
    );
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
