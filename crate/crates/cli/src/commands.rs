use std::collections::BTreeSet;
use std::path::Path;

use log::info;
use pcanet_core::dataio::{self, Dtype};
use pcanet_core::energy::{check_signature, filter_spectrum, overlap_decomposition, record_ledger, EnergyLedger};
use pcanet_core::eval::ablate_second_mean_removal;
use pcanet_core::fit::{evaluate, fit_poly3, g_of};
use pcanet_core::pcanet::{extract_features, train_with_report, NetConfig, TrainedNet};
use pcanet_core::sweep::{self, error_grid_over, least_error_analysis, read_records, run_sweep, Status};
use pcanet_core::{Dataset, Error, Result, SplitSpec, SweepGrid, SweepOptions, SynthOptions};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::manifest::{sidecar, Recorder};

/// Adds the offending path to I/O errors.
fn with_path<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn load(a: &DataArgs) -> Result<Dataset> {
    let d = with_path(dataio::load_with_dims(&a.data, a.dims), &a.data)?;
    info!("loaded {} ({} images, {}x{})", d.name, d.len(), d.m, d.n);
    Ok(d)
}

fn split_spec(d: &Dataset, s: &SplitArgs, default_half: bool) -> Option<SplitSpec> {
    let (train_count, test_count) = match s.split {
        Some(c) => c,
        None if default_half => (d.len() / 2, d.len() - d.len() / 2),
        None => return None,
    };
    Some(SplitSpec {
        train_count,
        test_count,
        seed: s.seed,
        stratified: s.stratified.enabled(),
    })
}

/// Training images: the train part of `--split`, or the whole dataset.
fn training_set(d: &Dataset, s: &SplitArgs) -> Result<Dataset> {
    match split_spec(d, s, false) {
        Some(spec) => Ok(dataio::split(d, &spec)?.0),
        None => Ok(d.clone()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct LedgerRow {
    step: usize,
    quantity: &'static str,
    energy: f64,
}

fn ledger_rows(l: &EnergyLedger) -> Vec<LedgerRow> {
    EnergyLedger::LABELS
        .iter()
        .zip(l.values())
        .enumerate()
        .map(|(step, (&quantity, energy))| LedgerRow { step, quantity, energy })
        .collect()
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut opts = SynthOptions::default();
    if let Some(snr) = a.snr_db {
        opts.snr_db = snr;
    }
    let mut rec = Recorder::start("synth", &a.out, json!({"classes": a.classes, "per_class": a.per_class, "m": a.m, "n": a.n, "options": opts}), Some(a.seed))?;
    let mut d = dataio::synth_with(a.classes, a.per_class, a.m, a.n, a.seed, &opts)?;
    d.name = a.name.unwrap_or_else(|| {
        a.out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "synth".into())
    });
    d.save(&a.out, d.natural_dtype())?;
    rec.dataset(&d);
    rec.artifact(&a.out);
    rec.finish()?;
    println!("wrote {} images to {}", d.len(), a.out.display());
    Ok(())
}

pub fn convert(a: ConvertArgs) -> Result<()> {
    let d = load(&a.data)?;
    let mut rec = Recorder::start("convert", &a.out, json!({"input": a.data.data, "dtype": a.dtype}), None)?;
    let to_csv = a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if to_csv {
        d.save_csv(&a.out)?;
    } else {
        let dtype = a.dtype.map(Dtype::from).unwrap_or_else(|| d.natural_dtype());
        d.save(&a.out, dtype)?;
    }
    rec.dataset(&d);
    rec.artifact(&a.out);
    rec.finish()?;
    println!("wrote {} images to {}", d.len(), a.out.display());
    Ok(())
}

fn train_net(images: &Dataset, cfg: &NetConfig, exec: &ExecArgs) -> Result<TrainedNet> {
    let e = exec.exec();
    let (net, warnings) = e.with_workers(exec.workers, || train_with_report(&images.images, cfg, e))?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(net)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.net.config();
    cfg.validate()?;
    let d = load(&a.data)?;
    let tr = training_set(&d, &a.split)?;
    let mut rec = Recorder::start("train", &a.out, json!({"net": cfg, "split": a.split.split, "stratified": a.split.stratified}), Some(a.split.seed))?;
    rec.dataset(&d);

    let net = train_net(&tr, &cfg, &a.exec)?;
    net.save(&a.out)?;
    rec.artifact(&a.out);

    let exec = a.exec.exec();
    let ledger = exec.with_workers(a.exec.workers, || record_ledger(&net, &tr.images, exec))?;
    let sig = check_signature(&ledger);
    let ledger_path = sidecar(&a.out, "ledger.json");
    write_json(
        &ledger_path,
        &json!({
            "manifest": rec.reference(),
            "dataset": d.name,
            "train_images": tr.len(),
            "config": cfg,
            "ledger": ledger,
            "signature": sig,
        }),
    )?;
    rec.artifact(&ledger_path);
    let csv_path = sidecar(&a.out, "ledger.csv");
    write_csv(&csv_path, ledger_rows(&ledger))?;
    rec.artifact(&csv_path);
    rec.finish()?;

    println!("{sig}");
    println!("model: {}\nledger: {}", a.out.display(), ledger_path.display());
    Ok(())
}

#[derive(Serialize)]
struct FeatureRow {
    image: usize,
    label: u32,
    index: usize,
    count: u32,
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let d = load(&a.data)?;
    let mut net = with_path(TrainedNet::load(&a.model), &a.model)?;
    let c = net.config;
    let (h1, h2, r) = (a.h1.unwrap_or(c.h1), a.h2.unwrap_or(c.h2), a.r.unwrap_or(c.overlap));
    if (h1, h2, r) != (c.h1, c.h2, c.overlap) {
        net = net.with_block(h1, h2, r);
    }
    let mut rec = Recorder::start("extract", &a.out, json!({"model": a.model, "net": net.config}), None)?;
    rec.dataset(&d);
    let exec = a.exec.exec();
    let feats = exec.with_workers(a.exec.workers, || extract_features(&net, &d.images, exec))?;
    let len = feats.first().map_or(0, |f| f.len());
    let rows = feats.iter().zip(&d.labels).enumerate().flat_map(|(image, (f, &label))| {
        f.nonzeros().map(move |(index, count)| FeatureRow { image, label, index, count })
    });
    write_csv(&a.out, rows)?;
    rec.artifact(&a.out);
    rec.finish()?;
    println!("wrote {} feature vectors of length {len} to {}", feats.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct BlockEnergyRow {
    #[serde(rename = "R")]
    r: f64,
    block_energy: f64,
}

#[derive(Serialize)]
struct IncrementRow {
    rank: usize,
    #[serde(rename = "R")]
    r: f64,
    increment: f64,
    cumulative: f64,
    cumulative_ratio: f64,
}

#[derive(Serialize)]
struct SpectrumCsvRow {
    stage: u8,
    index: usize,
    eigenvalue: f64,
    cumulative_ratio: f64,
}

pub fn energy(a: EnergyArgs) -> Result<()> {
    let cfg = a.net.config();
    cfg.validate()?;
    let d = load(&a.data)?;
    let tr = training_set(&d, &a.split)?;
    let mut rec = Recorder::start("energy", &a.out, json!({"net": cfg, "split": a.split.split, "stratified": a.split.stratified}), Some(a.split.seed))?;
    rec.dataset(&d);

    let net = train_net(&tr, &cfg, &a.exec)?;
    let exec = a.exec.exec();
    let (ledger, decomposition) = exec.with_workers(a.exec.workers, || -> Result<_> {
        let l = record_ledger(&net, &tr.images, exec)?;
        let o = overlap_decomposition(&net, &tr.images, cfg.h1, cfg.h2, exec)?;
        Ok((l, o))
    })?;
    let sig = check_signature(&ledger);
    let spectra = [filter_spectrum(&net.stage1), filter_spectrum(&net.stage2)];

    write_json(
        &a.out,
        &json!({
            "manifest": rec.reference(),
            "dataset": d.name,
            "train_images": tr.len(),
            "config": cfg,
            "ledger": ledger,
            "signature": sig,
            "overlap_decomposition": decomposition,
            "spectrum": {"stage1": spectra[0], "stage2": spectra[1]},
        }),
    )?;
    rec.artifact(&a.out);

    let p = sidecar(&a.out, "ledger.csv");
    write_csv(&p, ledger_rows(&ledger))?;
    rec.artifact(&p);

    let p = sidecar(&a.out, "block_energy.csv");
    let rows = pcanet_core::Overlap::GRID
        .iter()
        .zip(&decomposition.per_r_block_energy)
        .map(|(r, &block_energy)| BlockEnergyRow { r: r.ratio(), block_energy });
    write_csv(&p, rows)?;
    rec.artifact(&p);

    let p = sidecar(&a.out, "decomposition.csv");
    let rows = decomposition.increments.iter().enumerate().map(|(i, inc)| IncrementRow {
        rank: i + 1,
        r: inc.r.ratio(),
        increment: inc.energy,
        cumulative: decomposition.cumulative[i],
        cumulative_ratio: decomposition.cumulative_ratio[i],
    });
    write_csv(&p, rows)?;
    rec.artifact(&p);

    let p = sidecar(&a.out, "spectrum.csv");
    let rows = spectra.iter().zip([1u8, 2]).flat_map(|(s, stage)| {
        s.iter().map(move |row| SpectrumCsvRow {
            stage,
            index: row.index,
            eigenvalue: row.eigenvalue,
            cumulative_ratio: row.cumulative_ratio,
        })
    });
    write_csv(&p, rows)?;
    rec.artifact(&p);
    rec.finish()?;

    println!("{sig}");
    println!("report: {}", a.out.display());
    Ok(())
}

fn read_grid(path: &Path) -> Result<SweepGrid> {
    let text = with_path(std::fs::read_to_string(path).map_err(Error::from), path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let mut grid = read_grid(&a.grid)?;
    if let Some(s) = a.seed {
        grid.seed = s;
    }
    if let Some((tr, te)) = a.split {
        grid.train_count = tr;
        grid.test_count = te;
    }
    if let Some(s) = a.stratified {
        grid.stratified = s.enabled();
    }
    if let Some(k) = a.k {
        grid.k = k;
    }
    grid.skip_second_mean_removal |= a.skip_mean2;
    grid.validate()?;

    let d = load(&a.data)?;
    let mut rec = Recorder::start("sweep", &a.out, &grid, Some(grid.seed))?;
    rec.dataset(&d);
    let opts = SweepOptions {
        exec: a.exec.exec(),
        cache_filters: !a.no_cache,
        output: Some(a.out.clone()),
        resume: a.resume,
        timing: a.timing,
        chunk: a.chunk,
        max_points: a.max_points,
    };
    let outcome = opts.exec.with_workers(a.exec.workers, || run_sweep(&d, &grid, &opts))?;
    rec.artifact(&a.out);
    if !outcome.complete {
        rec.artifact(&sweep::checkpoint_path(&a.out));
        rec.finish()?;
        println!(
            "sweep stopped after {} of {} points; rerun with --resume to continue",
            outcome.records.len(),
            grid.points(d.m, d.n).len()
        );
        return Ok(());
    }

    let records = &outcome.records;
    let ok = records.iter().filter(|r| r.status == Status::Ok).count();
    let best = records
        .iter()
        .filter(|r| r.status == Status::Ok)
        .min_by(|x, y| x.e.total_cmp(&y.e));
    let l1s: Vec<usize> = grid.l1.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let l2s: Vec<usize> = grid.l2.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let blocks: BTreeSet<_> = records
        .iter()
        .filter(|r| r.status == Status::Ok)
        .map(|r| (r.h1, r.h2, r.r))
        .collect();
    let grids: Vec<_> = blocks
        .iter()
        .filter_map(|&(h1, h2, r)| error_grid_over(records, &l1s, &l2s, h1, h2, r).ok())
        .collect();
    let least = match least_error_analysis(records, d.m, d.n) {
        Ok(l) => json!(l),
        Err(e) => json!({"unavailable": e.to_string()}),
    };
    let analysis_path = sidecar(&a.out, "analysis.json");
    write_json(
        &analysis_path,
        &json!({
            "manifest": rec.reference(),
            "dataset": d.name,
            "records": records.len(),
            "feasible": ok,
            "infeasible": records.len() - ok,
            "best": best,
            "error_grids": grids,
            "least_error": least,
        }),
    )?;
    rec.artifact(&analysis_path);
    rec.finish()?;

    println!("{} records ({ok} feasible) in {}", records.len(), a.out.display());
    if let Some(b) = best {
        println!("least error {:.4} at L1={} L2={} h1={} h2={} R={}", b.e, b.l1, b.l2, b.h1, b.h2, b.r);
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    kind: &'static str,
    block_energy: f64,
    g: f64,
    e: f64,
}

pub fn fit(a: FitArgs) -> Result<()> {
    let records = with_path(read_records(&a.records), &a.records)?;
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.status == Status::Ok)
        .filter_map(|r| r.block_energy.map(|b| (b, r.e)))
        .collect();
    let excluded = records.len() - points.len();
    if points.is_empty() {
        return Err(Error::precondition(
            "records",
            format!("no fittable points: all {} records are infeasible", records.len()),
        ));
    }
    let name = a.name.clone().unwrap_or_else(|| {
        a.records
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let mut rec = Recorder::start("fit", &a.out, json!({"records": a.records, "log_base": a.log_base}), None)?;
    let f = fit_poly3(&points, a.log_base)?;

    write_json(
        &a.out,
        &json!({
            "manifest": rec.reference(),
            "name": name,
            "fit": f,
            "points_used": points.len(),
            "infeasible_excluded": excluded,
        }),
    )?;
    rec.artifact(&a.out);
    let table = f.table(&name);
    let p = sidecar(&a.out, "txt");
    std::fs::write(&p, &table)?;
    rec.artifact(&p);

    let p = sidecar(&a.out, "curve.csv");
    let observed = points.iter().map(|&(b, e)| CurveRow {
        kind: "observed",
        block_energy: b,
        g: g_of(b, a.log_base),
        e,
    });
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(b, _)| {
            let l = a.log_base.log(b);
            (lo.min(l), hi.max(l))
        });
    let model: Vec<CurveRow> = (0..=100)
        .map(|i| {
            let l = lo + (hi - lo) * i as f64 / 100.0;
            let b = match a.log_base {
                pcanet_core::LogBase::E => l.exp(),
                pcanet_core::LogBase::Ten => 10f64.powf(l),
            };
            (b, l)
        })
        .filter_map(|(b, l)| {
            evaluate(&f, b).ok().map(|e| CurveRow {
                kind: "model",
                block_energy: b,
                g: 1.0 / l,
                e,
            })
        })
        .collect();
    write_csv(&p, observed.chain(model))?;
    rec.artifact(&p);
    rec.finish()?;

    print!("{table}");
    if excluded > 0 {
        println!("({excluded} infeasible records excluded)");
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    h1: usize,
    h2: usize,
    #[serde(rename = "L1")]
    l1: usize,
    #[serde(rename = "L2")]
    l2: usize,
    #[serde(rename = "R")]
    r: f64,
    e_r: f64,
    e_wr: f64,
    delta: f64,
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let d = load(&a.data)?;
    let spec = split_spec(&d, &a.split, true).expect("default split");
    let hs: Vec<usize> = if a.h.is_empty() {
        (1..=32.min(d.m).min(d.n)).collect()
    } else {
        a.h.clone()
    };
    let configs: Vec<NetConfig> = hs
        .iter()
        .map(|&h| NetConfig {
            k1: a.k,
            k2: a.k,
            l1: a.l,
            l2: a.l,
            h1: h,
            h2: h,
            overlap: a.r,
            skip_second_mean_removal: false,
        })
        .collect();
    if let Some(c) = configs.first() {
        c.validate()?;
    }
    let mut rec = Recorder::start("ablate", &a.out, json!({"split": spec, "configs": configs}), Some(spec.seed))?;
    rec.dataset(&d);
    let (tr, te) = dataio::split(&d, &spec)?;
    let exec = a.exec.exec();
    let report = exec.with_workers(a.exec.workers, || ablate_second_mean_removal(&tr, &te, &configs, exec))?;

    write_json(&a.out, &json!({"manifest": rec.reference(), "report": report}))?;
    rec.artifact(&a.out);
    let p = sidecar(&a.out, "csv");
    write_csv(
        &p,
        report.per_config_delta.iter().map(|e| AblationRow {
            h1: e.config.h1,
            h2: e.config.h2,
            l1: e.config.l1,
            l2: e.config.l2,
            r: e.config.overlap.ratio(),
            e_r: e.e_r,
            e_wr: e.e_wr,
            delta: e.delta,
        }),
    )?;
    rec.artifact(&p);
    rec.finish()?;

    for e in &report.per_config_delta {
        println!("h={:<3} e_R={:.4} e_WR={:.4} delta={:+.4}", e.config.h1, e.e_r, e.e_wr, e.delta);
    }
    for s in &report.skipped {
        println!("skipped h={}: {}", s.config.h1, s.reason);
    }
    println!("mean delta {:+.5} over {} configs", report.mean_delta, report.per_config_delta.len());
    Ok(())
}
