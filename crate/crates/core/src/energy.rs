//! Energy bookkeeping along the pipeline.
//!
//! The energy of a matrix is the sum of its squared entries. [`record_ledger`]
//! sums it over every intermediate of a training set, giving ten checkpoints
//! from the raw images to the block-unrolled decimal maps.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numcore::{correlate_same, extract_patches, remove_patch_mean, Matrix};
use crate::pcanet::{binarize, block_positions, weight_and_sum, FilterBank, Overlap, TrainedNet};

pub fn energy(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum()
}

/// Summed-area table of squared entries, for O(1) block energies.
///
/// Exact when every entry is an integer (decimal maps), since the partial
/// sums stay far below 2^53.
#[derive(Debug, Clone)]
pub struct SquaredIntegral {
    cols: usize,
    table: Vec<f64>,
}

impl SquaredIntegral {
    pub fn new(map: &Matrix) -> Self {
        let (m, n) = map.shape();
        let cols = n + 1;
        let mut table = vec![0.0; (m + 1) * cols];
        for r in 0..m {
            let mut row_acc = 0.0;
            for c in 0..n {
                let v = map[(r, c)];
                row_acc += v * v;
                table[(r + 1) * cols + c + 1] = table[r * cols + c + 1] + row_acc;
            }
        }
        SquaredIntegral { cols, table }
    }

    /// Energy of the `h1 x h2` block with top-left corner `(r, c)`.
    pub fn block(&self, r: usize, c: usize, h1: usize, h2: usize) -> f64 {
        let t = |r: usize, c: usize| self.table[r * self.cols + c];
        t(r + h1, c + h2) - t(r, c + h2) - t(r + h1, c) + t(r, c)
    }
}

/// `E(Z)` for one image's decimal maps under the given block geometry.
pub fn block_energy(maps: &[Matrix], h1: usize, h2: usize, overlap: Overlap) -> Result<f64> {
    let Some(first) = maps.first() else {
        return Ok(0.0);
    };
    let pos = block_positions(first.rows(), first.cols(), h1, h2, overlap)?;
    Ok(maps
        .iter()
        .map(|t| {
            let sat = SquaredIntegral::new(t);
            pos.iter().map(|&(r, c)| sat.block(r, c, h1, h2)).sum::<f64>()
        })
        .sum())
}

/// Energies at the ten pipeline checkpoints, summed over an image set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    #[serde(rename = "TrainEnergy")]
    pub train_energy: f64,
    #[serde(rename = "PatchEnergy1")]
    pub patch_energy_1: f64,
    #[serde(rename = "PatchEnergyRed1")]
    pub patch_energy_red_1: f64,
    #[serde(rename = "PCAEnergy1")]
    pub pca_energy_1: f64,
    #[serde(rename = "PatchEnergy2")]
    pub patch_energy_2: f64,
    #[serde(rename = "PatchEnergyRed2")]
    pub patch_energy_red_2: f64,
    #[serde(rename = "PCAEnergy2")]
    pub pca_energy_2: f64,
    #[serde(rename = "BinaryEnergy")]
    pub binary_energy: f64,
    #[serde(rename = "WeightSumEnergy")]
    pub weight_sum_energy: f64,
    #[serde(rename = "BlockEnergy")]
    pub block_energy: f64,
}

impl EnergyLedger {
    pub const LABELS: [&'static str; 10] = [
        "TrainEnergy",
        "PatchEnergy1",
        "PatchEnergyRed1",
        "PCAEnergy1",
        "PatchEnergy2",
        "PatchEnergyRed2",
        "PCAEnergy2",
        "BinaryEnergy",
        "WeightSumEnergy",
        "BlockEnergy",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.train_energy,
            self.patch_energy_1,
            self.patch_energy_red_1,
            self.pca_energy_1,
            self.patch_energy_2,
            self.patch_energy_red_2,
            self.pca_energy_2,
            self.binary_energy,
            self.weight_sum_energy,
            self.block_energy,
        ]
    }

    fn add(&mut self, o: &EnergyLedger) {
        self.train_energy += o.train_energy;
        self.patch_energy_1 += o.patch_energy_1;
        self.patch_energy_red_1 += o.patch_energy_red_1;
        self.pca_energy_1 += o.pca_energy_1;
        self.patch_energy_2 += o.patch_energy_2;
        self.patch_energy_red_2 += o.patch_energy_red_2;
        self.pca_energy_2 += o.pca_energy_2;
        self.binary_energy += o.binary_energy;
        self.weight_sum_energy += o.weight_sum_energy;
        self.block_energy += o.block_energy;
    }
}

fn image_ledger(net: &TrainedNet, image: &Matrix) -> Result<EnergyLedger> {
    let c = &net.config;
    let (k1, k2) = (c.k1, c.k2);
    let mut led = EnergyLedger {
        train_energy: energy(image),
        ..EnergyLedger::default()
    };
    let x = extract_patches(image, k1, k2)?;
    led.patch_energy_1 = energy(&x);
    led.patch_energy_red_1 = energy(&remove_patch_mean(&x)?);

    let mut maps = Vec::with_capacity(net.stage1.len());
    for w1 in &net.stage1.filters {
        let i1 = correlate_same(image, w1)?;
        led.pca_energy_1 += energy(&i1);
        let y = extract_patches(&i1, k1, k2)?;
        led.patch_energy_2 += energy(&y);
        led.patch_energy_red_2 += if c.skip_second_mean_removal {
            energy(&y)
        } else {
            energy(&remove_patch_mean(&y)?)
        };
        let mut bits = Vec::with_capacity(net.stage2.len());
        for w2 in &net.stage2.filters {
            let i2 = correlate_same(&i1, w2)?;
            led.pca_energy_2 += energy(&i2);
            let p = binarize(&i2);
            led.binary_energy += energy(&p);
            bits.push(p);
        }
        let t = weight_and_sum(&bits)?;
        led.weight_sum_energy += energy(&t);
        maps.push(t);
    }
    led.block_energy = block_energy(&maps, c.h1, c.h2, c.overlap)?;
    Ok(led)
}

/// Runs the full pipeline over `images` and sums each checkpoint's energy.
///
/// Per-image ledgers are added in input order, so the result does not
/// depend on the execution mode.
pub fn record_ledger(net: &TrainedNet, images: &[Matrix], exec: Exec) -> Result<EnergyLedger> {
    if images.is_empty() {
        return Err(Error::precondition("images", "at least one image is required"));
    }
    for (i, img) in images.iter().enumerate() {
        if img.shape() != net.image_dims {
            return Err(Error::precondition(
                "images",
                format!(
                    "image {i} is {}x{}, the net was trained on {}x{}",
                    img.rows(),
                    img.cols(),
                    net.image_dims.0,
                    net.image_dims.1
                ),
            ));
        }
    }
    let parts = exec
        .map(images, |img| image_ledger(net, img))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut total = EnergyLedger::default();
    for p in &parts {
        total.add(p);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Increase,
    #[serde(rename = "-")]
    Decrease,
    #[serde(rename = "0")]
    Equal,
}

impl std::fmt::Display for Sign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sign::Increase => "+",
            Sign::Decrease => "-",
            Sign::Equal => "0",
        })
    }
}

/// Expected direction of a step; `Either` accepts any observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expected {
    #[serde(rename = "+")]
    Increase,
    #[serde(rename = "-")]
    Decrease,
    #[serde(rename = "0")]
    Equal,
    #[serde(rename = "+/-")]
    Either,
}

impl Expected {
    pub fn accepts(self, s: Sign) -> bool {
        matches!(
            (self, s),
            (Expected::Either, _)
                | (Expected::Increase, Sign::Increase)
                | (Expected::Decrease, Sign::Decrease)
                | (Expected::Equal, Sign::Equal)
        )
    }
}

impl std::fmt::Display for Expected {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Expected::Increase => "+",
            Expected::Decrease => "-",
            Expected::Equal => "0",
            Expected::Either => "+/-",
        })
    }
}

/// Relative change below which a step counts as energy-preserving.
pub const EQUAL_TOLERANCE: f64 = 0.05;

/// Expected signs of Steps 1-8.
pub const EXPECTED_SIGNATURE: [Expected; 8] = [
    Expected::Increase,
    Expected::Decrease,
    Expected::Either,
    Expected::Increase,
    Expected::Equal,
    Expected::Decrease,
    Expected::Decrease,
    Expected::Increase,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSign {
    pub step: usize,
    pub from: String,
    pub to: String,
    pub before: f64,
    pub after: f64,
    /// `(after - before) / before`; zero when both are zero.
    pub relative_change: f64,
    pub observed: Sign,
    pub expected: Expected,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureReport {
    pub steps: Vec<StepSign>,
    pub all_match: bool,
}

impl SignatureReport {
    pub fn step(&self, step: usize) -> &StepSign {
        &self.steps[step - 1]
    }

    /// One-line chain such as `+ - + + 0 - - +`.
    pub fn observed_string(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.observed.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl std::fmt::Display for SignatureReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "step  transition                          change     obs  exp  ok")?;
        for s in &self.steps {
            writeln!(
                f,
                "{:<5} {:<35} {:>+9.4} {:>4} {:>4}  {}",
                s.step,
                format!("{} -> {}", s.from, s.to),
                s.relative_change,
                s.observed.to_string(),
                s.expected.to_string(),
                if s.matches { "yes" } else { "no" }
            )?;
        }
        write!(f, "signature {}", if self.all_match { "matches" } else { "differs" })
    }
}

pub fn classify_change(before: f64, after: f64) -> (Sign, f64) {
    let rel = if before == 0.0 {
        if after == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (after - before) / before
    };
    let sign = if rel.abs() < EQUAL_TOLERANCE {
        Sign::Equal
    } else if rel > 0.0 {
        Sign::Increase
    } else {
        Sign::Decrease
    };
    (sign, rel)
}

/// Classifies each of Steps 1-8 and compares with [`EXPECTED_SIGNATURE`].
pub fn check_signature(ledger: &EnergyLedger) -> SignatureReport {
    let v = ledger.values();
    let steps: Vec<StepSign> = (0..8)
        .map(|i| {
            let (observed, relative_change) = classify_change(v[i], v[i + 1]);
            let expected = EXPECTED_SIGNATURE[i];
            StepSign {
                step: i + 1,
                from: EnergyLedger::LABELS[i].to_string(),
                to: EnergyLedger::LABELS[i + 1].to_string(),
                before: v[i],
                after: v[i + 1],
                relative_change,
                observed,
                expected,
                matches: expected.accepts(observed),
            }
        })
        .collect();
    let all_match = steps.iter().all(|s| s.matches);
    SignatureReport { steps, all_match }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Increment {
    pub r: Overlap,
    pub energy: f64,
}

/// Block energy split by the overlap ratio at which block positions first
/// appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapDecomposition {
    pub h1: usize,
    pub h2: usize,
    pub rule: String,
    /// `E(Z)` at each `R` in `0.0..=0.9`.
    pub per_r_block_energy: Vec<f64>,
    /// Energy of newly appearing positions per `R`, sorted descending.
    pub increments: Vec<Increment>,
    pub cumulative: Vec<f64>,
    pub cumulative_ratio: Vec<f64>,
}

pub const DECOMPOSITION_RULE: &str = "each block position (top-left row, col) is attributed to the smallest R at which it appears; increments are sorted descending and accumulated against their total";

/// Overlap decomposition from precomputed decimal maps (one `Vec` per image).
pub fn overlap_decomposition_from_maps(
    maps: &[Vec<Matrix>],
    h1: usize,
    h2: usize,
) -> Result<OverlapDecomposition> {
    let first = maps
        .iter()
        .flat_map(|v| v.first())
        .next()
        .ok_or_else(|| Error::precondition("images", "at least one image is required"))?;
    let (m, n) = first.shape();
    let sats: Vec<SquaredIntegral> = maps.iter().flatten().map(SquaredIntegral::new).collect();
    let energy_at = |pos: &[(usize, usize)]| -> f64 {
        sats.iter()
            .map(|s| pos.iter().map(|&(r, c)| s.block(r, c, h1, h2)).sum::<f64>())
            .sum()
    };

    let mut seen = HashSet::new();
    let mut per_r = Vec::with_capacity(10);
    let mut incs = Vec::with_capacity(10);
    for r in Overlap::GRID {
        let pos = block_positions(m, n, h1, h2, r)?;
        per_r.push(energy_at(&pos));
        let fresh: Vec<(usize, usize)> = pos.into_iter().filter(|p| seen.insert(*p)).collect();
        incs.push(Increment {
            r,
            energy: energy_at(&fresh),
        });
    }
    incs.sort_by(|a, b| b.energy.total_cmp(&a.energy).then(a.r.cmp(&b.r)));
    let mut cumulative = Vec::with_capacity(10);
    let mut acc = 0.0;
    for i in &incs {
        acc += i.energy;
        cumulative.push(acc);
    }
    let cumulative_ratio = cumulative
        .iter()
        .map(|c| if acc == 0.0 { 1.0 } else { c / acc })
        .collect();
    Ok(OverlapDecomposition {
        h1,
        h2,
        rule: DECOMPOSITION_RULE.to_string(),
        per_r_block_energy: per_r,
        increments: incs,
        cumulative,
        cumulative_ratio,
    })
}

pub fn overlap_decomposition(
    net: &TrainedNet,
    images: &[Matrix],
    h1: usize,
    h2: usize,
    exec: Exec,
) -> Result<OverlapDecomposition> {
    let (m, n) = net.image_dims;
    block_positions(m, n, h1, h2, Overlap::default())?;
    let maps = exec
        .map(images, |img| crate::pcanet::decimal_maps(net, img))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    overlap_decomposition_from_maps(&maps, h1, h2)
}

/// One row of a filter spectrum: eigenvalue `index` (1-based) and the
/// cumulative share of the covariance trace up to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub index: usize,
    pub eigenvalue: f64,
    pub cumulative_ratio: f64,
}

pub fn filter_spectrum(bank: &FilterBank) -> Vec<SpectrumRow> {
    (0..bank.len())
        .map(|i| SpectrumRow {
            index: i + 1,
            eigenvalue: bank.eigenvalues[i],
            cumulative_ratio: bank.eigenvalue_ratio(i + 1),
        })
        .collect()
}
