//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criterion 10 needs a converted Yale dataset; point `PCANET_YALE` at a
//! container or CSV file to enable it (`PCANET_YALE_FULL_SWEEP=1` adds the
//! 25920-point diagonal sweep). Without it the criterion prints SKIP.

mod common;

use std::time::{Duration, Instant};

use pcanet_core::dataio::{self, split, synth, Dataset, SplitSpec};
use pcanet_core::energy::{check_signature, overlap_decomposition, record_ledger};
use pcanet_core::eval::{ablate_second_mean_removal, default_ablation_configs, pcanet_error, raw_pixel_error};
use pcanet_core::fit::{evaluate, fit_poly3, FitResult, LogBase};
use pcanet_core::numcore::{correlate_same, eigh_symmetric, extract_patches, Matrix};
use pcanet_core::pcanet::{self, block_count, train, NetConfig, Overlap};
use pcanet_core::sweep::{self, run_sweep, H2Mode, SweepGrid, SweepOptions};
use pcanet_core::Exec;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn synthetic() -> Dataset {
    synth(10, 20, 32, 32, 2024).unwrap()
}

fn synthetic_split() -> (Dataset, Dataset) {
    let spec = SplitSpec {
        train_count: 100,
        test_count: 100,
        seed: 7,
        stratified: true,
    };
    split(&synthetic(), &spec).unwrap()
}

fn within_budget(t: Duration, secs: u64) -> bool {
    t <= Duration::from_secs(secs)
}

fn c1_parseval() -> Outcome {
    let t0 = Instant::now();
    let mut rng = common::rng(1);
    let images: Vec<Matrix> = (0..50).map(|_| common::random_matrix(&mut rng, 16, 16, 0.0, 255.0)).collect();
    let cfg = NetConfig {
        l1: 9,
        l2: 1,
        ..NetConfig::default()
    };
    let net = train(&images, &cfg).unwrap();
    let mut worst_rel: f64 = 0.0;
    let mut monotone = true;
    for img in &images {
        let patch_energy = common::energy(&extract_patches(img, 3, 3).unwrap());
        let per_filter: Vec<f64> = net
            .stage1
            .filters
            .iter()
            .map(|w| common::energy(&correlate_same(img, w).unwrap()))
            .collect();
        let mut acc = 0.0;
        let mut prev = 0.0;
        for e in &per_filter {
            acc += e;
            monotone &= acc >= prev;
            prev = acc;
        }
        worst_rel = worst_rel.max((acc - patch_energy).abs() / patch_energy);
    }
    let t = t0.elapsed();
    outcome(
        worst_rel <= 1e-9 && monotone && within_budget(t, 5),
        format!("max relative gap {worst_rel:.2e} (tol 1e-9), partial sums monotone: {monotone}, {t:.2?}"),
    )
}

fn c2_eigensolver() -> Outcome {
    let t0 = Instant::now();
    let mut rng = common::rng(2);
    let mut worst_val: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    for i in 0..200 {
        let n = 2 + i % 8;
        let a = common::random_symmetric(&mut rng, n);
        let m = Matrix::from_vec(n, n, a.iter().flatten().copied().collect()).unwrap();
        let eig = eigh_symmetric(&m).unwrap();
        let oracle = common::eigenvalues_bisection(&a);
        for (x, y) in eig.eigenvalues.iter().zip(&oracle) {
            worst_val = worst_val.max((x - y).abs());
        }
        let av = m.matmul(&eig.eigenvectors).unwrap();
        let norm = m.frobenius();
        for r in 0..n {
            for c in 0..n {
                let d = (av[(r, c)] - eig.eigenvectors[(r, c)] * eig.eigenvalues[c]).abs();
                worst_res = worst_res.max(d / norm);
            }
        }
    }
    let t = t0.elapsed();
    outcome(
        worst_val <= 1e-8 && worst_res <= 1e-8 && within_budget(t, 5),
        format!("max |lambda - oracle| {worst_val:.2e}, max |AV - VL|/|A| {worst_res:.2e} (tol 1e-8), {t:.2?}"),
    )
}

fn c3_conv_patch() -> Outcome {
    let mut rng = common::rng(3);
    let mut worst: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for _ in 0..100 {
        let k1 = [1, 3, 5][rng.random_range(0..3)];
        let k2 = [1, 3, 5][rng.random_range(0..3)];
        let m = rng.random_range(k1..14);
        let n = rng.random_range(k2..14);
        let img = common::random_matrix(&mut rng, m, n, -100.0, 100.0);
        let w = common::random_matrix(&mut rng, k1, k2, -1.0, 1.0);
        let out = correlate_same(&img, &w).unwrap();
        let patches = extract_patches(&img, k1, k2).unwrap();
        let wv = w.to_column_major();
        let oracle = common::brute_correlate(&img, &w);
        for r in 0..m {
            for c in 0..n {
                let col = patches.column(r * n + c);
                let dot: f64 = col.iter().zip(&wv).map(|(a, b)| a * b).sum();
                let scale = col.iter().zip(&wv).map(|(a, b)| (a * b).abs()).sum::<f64>().max(f64::MIN_POSITIVE);
                worst = worst.max((out[(r, c)] - dot).abs() / scale);
                worst_oracle = worst_oracle.max((out[(r, c)] - oracle[(r, c)]).abs() / scale);
            }
        }
    }
    outcome(
        worst < 1e-12 && worst_oracle < 1e-12,
        format!("max relative gap vs patch dot {worst:.2e}, vs direct oracle {worst_oracle:.2e} (tol 1e-12)"),
    )
}

fn c4_pipeline_shape() -> Outcome {
    let t0 = Instant::now();
    let data = synthetic();
    let (tr, _) = synthetic_split();
    let half = Overlap::from_tenths(5).unwrap();
    let b = block_count(32, 32, 8, 8, half).unwrap();
    let mut ok = b == 49;
    let mut notes = vec![format!("B={b}")];
    for l in [1usize, 4, 8] {
        let cfg = NetConfig {
            l1: l,
            l2: l,
            h1: 8,
            h2: 8,
            overlap: half,
            ..NetConfig::default()
        };
        let net = train(&tr.images, &cfg).unwrap();
        let feats = pcanet::extract_features(&net, &data.images, Exec::Parallel).unwrap();
        let want_len = (1usize << l) * l * 49;
        let len_ok = feats.iter().all(|f| f.len() == want_len);
        let hist_ok = feats.iter().all(|f| {
            (0..l).all(|ch| (0..49).all(|blk| f.block_histogram(ch, blk).iter().sum::<u32>() == 64))
        });
        let mut energy_ok = true;
        for img in data.images.iter().step_by(10) {
            let outs = pcanet::forward_stage_outputs(&net, img).unwrap();
            let mut e_p = 0.0;
            let mut positives = 0usize;
            for o in &outs.stage2 {
                let p = pcanet::binarize(o);
                e_p += common::energy(&p);
                positives += o.as_slice().iter().filter(|&&v| v > 0.0).count();
            }
            let maps = pcanet::decimal_maps(&net, img).unwrap();
            let e_t: f64 = maps.iter().map(common::energy).sum();
            energy_ok &= e_p == positives as f64 && e_t >= e_p;
        }
        ok &= len_ok && hist_ok && energy_ok;
        notes.push(format!("L={l}: len {want_len} {len_ok}, hist=64 {hist_ok}, E(P)/E(T) {energy_ok}"));
    }
    let t = t0.elapsed();
    ok &= within_budget(t, 60);
    notes.push(format!("{t:.2?}"));
    outcome(ok, notes.join("; "))
}

fn c5_signature() -> Outcome {
    let t0 = Instant::now();
    let (tr, _) = synthetic_split();
    let cfg = NetConfig {
        l1: 4,
        l2: 4,
        h1: 8,
        h2: 8,
        ..NetConfig::default()
    };
    let net = train(&tr.images, &cfg).unwrap();
    let led = record_ledger(&net, &tr.images, Exec::Parallel).unwrap();
    let rep = check_signature(&led);
    let step1 = led.patch_energy_1 > led.train_energy;
    let step2 = led.patch_energy_red_1 < led.patch_energy_1;
    let step4 = led.patch_energy_2 > led.pca_energy_1;
    let step7 = led.binary_energy < led.pca_energy_2;
    let step8 = led.weight_sum_energy > led.binary_energy;
    let step5 = rep.step(5).relative_change.abs();
    let t = t0.elapsed();
    outcome(
        step1 && step2 && step4 && step7 && step8 && step5 < 0.05 && within_budget(t, 60),
        format!(
            "step1 + {step1}, step2 - {step2}, step4 + {step4}, step7 - {step7}, step8 + {step8}, \
             step5 |dE|/E {step5:.4} (< 0.05), observed signs {}, {t:.2?}",
            rep.observed_string()
        ),
    )
}

fn c6_overlap() -> Outcome {
    let (tr, _) = synthetic_split();
    let cfg = NetConfig {
        l1: 4,
        l2: 4,
        h1: 8,
        h2: 8,
        ..NetConfig::default()
    };
    let net = train(&tr.images, &cfg).unwrap();
    let d = overlap_decomposition(&net, &tr.images, 8, 8, Exec::Parallel).unwrap();
    let monotone = d.cumulative_ratio.windows(2).all(|w| w[0] <= w[1]);
    let last = *d.cumulative_ratio.last().unwrap();
    let count = d.per_r_block_energy.len() == 10 && d.increments.len() == 10;
    outcome(
        monotone && (last - 1.0).abs() <= 1e-12 && count,
        format!(
            "10 R values {count}, non-decreasing {monotone}, final ratio {last}, ratio at 7th entry {:.4}",
            d.cumulative_ratio[6]
        ),
    )
}

fn c7_poly3() -> Outcome {
    let p = [2.0, 0.0, -1.0, 0.5];
    let pts: Vec<(f64, f64)> = (0..40)
        .map(|i| {
            let g = 0.25 + 0.01 * i as f64;
            ((1.0 / g).exp(), ((p[0] * g + p[1]) * g + p[2]) * g + p[3])
        })
        .collect();
    let f = fit_poly3(&pts, LogBase::E).unwrap();
    let coef_err = f.coefficients().iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let r2_err = (f.r_square.unwrap() - 1.0).abs();

    let mut rng = common::rng(7);
    let mut worst_sst: f64 = 0.0;
    for _ in 0..20 {
        let pts: Vec<(f64, f64)> = (0..60)
            .map(|_| {
                let be: f64 = rng.random_range(1e3..1e11);
                let g = 1.0 / be.ln();
                let e = (0.9 - 4.0 * g + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0);
                (be, e)
            })
            .collect();
        let f = fit_poly3(&pts, LogBase::E).unwrap();
        worst_sst = worst_sst.max((f.sst - f.sse - f.ssr).abs() / f.sst);
    }
    // Yale reference coefficients, evaluated at g = 0.05.
    let yale = FitResult::from_coefficients([-231.2, 123.3, -17.33, 0.9932], LogBase::E);
    let at = evaluate(&yale, 20f64.exp()).unwrap();
    outcome(
        coef_err <= 1e-9 && r2_err <= 1e-9 && worst_sst <= 1e-6 && (at - 0.40605).abs() < 1e-9,
        format!(
            "coef err {coef_err:.2e}, |R2-1| {r2_err:.2e}, max SST gap {worst_sst:.2e}, model at g=0.05 {at:.5}"
        ),
    )
}

fn c8_sweep_determinism() -> Outcome {
    let t0 = Instant::now();
    let data = synth(10, 20, 32, 32, 8).unwrap();
    let grid = SweepGrid {
        l1: vec![2, 4],
        l2: vec![2, 4],
        h1: vec![4, 8, 12, 16],
        h2: H2Mode::Diagonal,
        r: [0, 5, 9].iter().map(|&t| Overlap::from_tenths(t).unwrap()).collect(),
        seed: 11,
        train_count: 60,
        test_count: 60,
        stratified: true,
        k: 3,
        skip_second_mean_removal: false,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let base = SweepOptions {
        chunk: 10,
        ..SweepOptions::default()
    };

    let full = run_sweep(&data, &grid, &SweepOptions { output: Some(path("full.csv")), ..base.clone() }).unwrap();
    let part = run_sweep(
        &data,
        &grid,
        &SweepOptions { output: Some(path("resumed.csv")), max_points: Some(17), ..base.clone() },
    )
    .unwrap();
    let resumed = run_sweep(
        &data,
        &grid,
        &SweepOptions { output: Some(path("resumed.csv")), resume: true, ..base.clone() },
    )
    .unwrap();
    let _ = run_sweep(
        &data,
        &grid,
        &SweepOptions { output: Some(path("nocache.csv")), cache_filters: false, ..base.clone() },
    )
    .unwrap();
    let _ = run_sweep(
        &data,
        &grid,
        &SweepOptions { output: Some(path("seq.csv")), exec: Exec::Sequential, ..base },
    )
    .unwrap();

    let read = |n: &str| std::fs::read(path(n)).unwrap();
    let a = read("full.csv");
    let same_resumed = a == read("resumed.csv");
    let same_nocache = a == read("nocache.csv");
    let same_seq = a == read("seq.csv");
    let t = t0.elapsed();
    outcome(
        full.records.len() == 48 && !part.complete && resumed.complete && same_resumed && same_nocache && same_seq,
        format!(
            "{} records; interrupted+resumed identical {same_resumed}, uncached identical {same_nocache}, \
             sequential identical {same_seq}, {t:.2?}",
            full.records.len()
        ),
    )
}

// Measured on the fixed synthetic split (seed 2024, split seed 7) and pinned.
const PINNED_PCANET_ERROR: f64 = 0.09;
const PINNED_RAW_ERROR: f64 = 0.36;

fn c9_classifier() -> Outcome {
    let (tr, te) = synthetic_split();
    let cfg = NetConfig {
        l1: 4,
        l2: 4,
        h1: 8,
        h2: 8,
        ..NetConfig::default()
    };
    let e_pca = pcanet_error(&tr, &te, &cfg, Exec::Parallel).unwrap();
    let e_raw = raw_pixel_error(&tr, &te, Exec::Parallel).unwrap();
    let ratio_ok = e_pca <= 0.5 * e_raw;
    let chance_ok = e_pca < 0.9 && e_raw < 0.9;
    let pinned_ok = (e_pca - PINNED_PCANET_ERROR).abs() <= 0.05 && (e_raw - PINNED_RAW_ERROR).abs() <= 0.05;
    outcome(
        ratio_ok && chance_ok && pinned_ok,
        format!(
            "PCANet e {e_pca:.3} (pinned {PINNED_PCANET_ERROR}), raw-pixel e {e_raw:.3} (pinned {PINNED_RAW_ERROR}), \
             e_pca <= 0.5 e_raw {ratio_ok}, below chance {chance_ok}"
        ),
    )
}

fn c10_yale() -> Option<Outcome> {
    let path = std::env::var_os("PCANET_YALE")?;
    let data = match dataio::load(&path) {
        Ok(d) => d,
        Err(e) => return Some(outcome(false, format!("cannot load {}: {e}", path.to_string_lossy()))),
    };
    let seed = std::env::var("PCANET_YALE_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SplitSpec {
        train_count: 30,
        test_count: 135,
        seed,
        stratified: true,
    };
    let (tr, te) = split(&data, &spec).unwrap();
    let half = Overlap::from_tenths(5).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;

    let cfg8 = NetConfig {
        l1: 8,
        l2: 8,
        h1: 8,
        h2: 8,
        overlap: half,
        ..NetConfig::default()
    };
    let e = pcanet_error(&tr, &te, &cfg8, Exec::Parallel).unwrap();
    ok &= (e - 0.1926).abs() <= 0.05;
    notes.push(format!("e(L1=L2=8) {e:.4} vs 0.1926"));

    let cfg_ratio = NetConfig { l1: 9, l2: 1, ..cfg8 };
    let net = train(&tr.images, &cfg_ratio).unwrap();
    let ratio = net.stage1.eigenvalue_ratio(1);
    ok &= (ratio - 0.6820).abs() <= 0.02;
    notes.push(format!("eigen ratio {ratio:.4} vs 0.6820"));

    let cfg6 = NetConfig { l1: 6, l2: 6, ..cfg8 };
    let net6 = train(&tr.images, &cfg6).unwrap();
    let d = overlap_decomposition(&net6, &tr.images, 8, 8, Exec::Parallel).unwrap();
    ok &= (d.cumulative_ratio[6] - 0.9575).abs() <= 0.01;
    notes.push(format!("cumulative ratio[7] {:.4} vs 0.9575", d.cumulative_ratio[6]));

    let configs = default_ablation_configs(32);
    let rep = ablate_second_mean_removal(&tr, &te, &configs, Exec::Parallel).unwrap();
    ok &= rep.mean_delta.abs() < 5e-3;
    notes.push(format!("ablation mean {:.2e}", rep.mean_delta));

    if std::env::var_os("PCANET_YALE_FULL_SWEEP").is_some() {
        let grid = SweepGrid {
            l1: (1..=9).collect(),
            l2: (1..=9).collect(),
            h1: (1..=32).collect(),
            h2: H2Mode::Diagonal,
            r: Overlap::GRID.to_vec(),
            seed,
            train_count: 30,
            test_count: 135,
            stratified: true,
            k: 3,
            skip_second_mean_removal: false,
        };
        let out = run_sweep(&data, &grid, &SweepOptions::default()).unwrap();
        let pts: Vec<(f64, f64)> = out
            .records
            .iter()
            .filter(|r| r.status == sweep::Status::Ok)
            .filter_map(|r| r.block_energy.map(|b| (b, r.e)))
            .collect();
        let f = fit_poly3(&pts, LogBase::E).unwrap();
        let r2 = f.r_square.unwrap_or(f64::NAN);
        ok &= (0.65..=0.85).contains(&r2);
        notes.push(format!("sweep R2 {r2:.4} in [0.65, 0.85]"));
    } else {
        notes.push("full sweep not requested".into());
    }
    Some(outcome(ok, notes.join("; ")))
}

fn main() {
    // Keep the list-mode probe from `cargo test -- --list` quiet.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 parseval energy conservation", c1_parseval),
        ("2 eigensolver vs bisection oracle", c2_eigensolver),
        ("3 correlation vs patch products", c3_conv_patch),
        ("4 pipeline shape and conservation", c4_pipeline_shape),
        ("5 energy signature", c5_signature),
        ("6 overlap decomposition", c6_overlap),
        ("7 poly3 fit", c7_poly3),
        ("8 sweep determinism and reuse", c8_sweep_determinism),
        ("9 classifier sanity", c9_classifier),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        println!("criterion {name}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    match c10_yale() {
        Some(o) => {
            println!("criterion 10 yale reproduction: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            failed += usize::from(!o.pass);
        }
        None => println!("criterion 10 yale reproduction: SKIP | set PCANET_YALE to a converted Yale dataset"),
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
