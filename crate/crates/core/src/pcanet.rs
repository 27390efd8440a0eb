//! Two-stage PCANet: PCA filter learning and block-histogram features.
//!
//! Training (Steps 1-6 of the network):
//!
//! 1. every training image is unrolled into zero-padded `k1 x k2` patches,
//! 2. each image's mean patch is subtracted from its patches,
//! 3. the top `L1` eigenvectors of the pooled patch covariance become the
//!    first-stage filters,
//! 4. each image is filtered by each first-stage filter and the `N * L1`
//!    outputs are unrolled into patches again,
//! 5. per-output mean removal is applied (optional, see
//!    [`NetConfig::skip_second_mean_removal`]),
//! 6. the top `L2` eigenvectors of that covariance become the second-stage
//!    filters.
//!
//! Feature extraction (Steps 7-10) binarises the `L1 * L2` second-stage maps,
//! packs each group of `L2` bits into an integer map per first-stage channel,
//! slides `h1 x h2` blocks with overlap ratio `R` over those maps and
//! concatenates per-block histograms with `2^L2` bins.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numcore::{correlate_same, eigh_symmetric, extract_patches, remove_patch_mean, Matrix};

/// Block overlap ratio, restricted to the grid `{0.0, 0.1, ..., 0.9}`.
///
/// Stored as tenths so stride arithmetic stays exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Overlap(u8);

impl Overlap {
    pub const GRID: [Overlap; 10] = [
        Overlap(0),
        Overlap(1),
        Overlap(2),
        Overlap(3),
        Overlap(4),
        Overlap(5),
        Overlap(6),
        Overlap(7),
        Overlap(8),
        Overlap(9),
    ];

    pub fn from_tenths(t: u8) -> Result<Self> {
        if t > 9 {
            return Err(Error::precondition("R", format!("{t}/10 is outside 0.0..=0.9")));
        }
        Ok(Overlap(t))
    }

    pub fn from_ratio(r: f64) -> Result<Self> {
        let t = (r * 10.0).round();
        if !r.is_finite() || (r * 10.0 - t).abs() > 1e-9 || !(0.0..=9.0).contains(&t) {
            return Err(Error::precondition(
                "R",
                format!("{r} is not one of 0.0, 0.1, ..., 0.9"),
            ));
        }
        Ok(Overlap(t as u8))
    }

    pub fn tenths(self) -> u8 {
        self.0
    }

    pub fn ratio(self) -> f64 {
        f64::from(self.0) / 10.0
    }

    /// `max(1, round((1 - R) * h))`, halves rounded up.
    pub fn stride(self, h: usize) -> usize {
        (((10 - self.0 as usize) * h + 5) / 10).max(1)
    }
}

impl std::fmt::Display for Overlap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "0.{}", self.0)
    }
}

impl Serialize for Overlap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.ratio())
    }
}

impl<'de> Deserialize<'de> for Overlap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = f64::deserialize(d)?;
        Overlap::from_ratio(r).map_err(serde::de::Error::custom)
    }
}

/// Network hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetConfig {
    pub k1: usize,
    pub k2: usize,
    pub l1: usize,
    pub l2: usize,
    pub h1: usize,
    pub h2: usize,
    #[serde(rename = "r")]
    pub overlap: Overlap,
    /// Bypass the second mean-removal step (ablation).
    #[serde(default)]
    pub skip_second_mean_removal: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            k1: 3,
            k2: 3,
            l1: 8,
            l2: 8,
            h1: 8,
            h2: 8,
            overlap: Overlap(5),
            skip_second_mean_removal: false,
        }
    }
}

impl NetConfig {
    /// Checks the image-independent bounds: odd patch sizes, `1 <= L <= k1*k2`,
    /// non-zero block sizes.
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("k1", self.k1), ("k2", self.k2)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::precondition(name, format!("patch size {k} must be odd and >= 1")));
            }
        }
        let kk = self.k1 * self.k2;
        for (name, l) in [("L1", self.l1), ("L2", self.l2)] {
            if l < 1 || l > kk {
                return Err(Error::precondition(
                    name,
                    format!("{l} violates 1 <= {name} <= k1*k2 = {kk}"),
                ));
            }
        }
        for (name, h) in [("h1", self.h1), ("h2", self.h2)] {
            if h == 0 {
                return Err(Error::precondition(name, "block size must be >= 1"));
            }
        }
        Ok(())
    }

    /// Checks the bounds that involve the image size `m x n`.
    pub fn validate_for_image(&self, m: usize, n: usize) -> Result<()> {
        self.validate()?;
        if self.k1 > m || self.k2 > n {
            return Err(Error::precondition(
                "k",
                format!("patch {}x{} exceeds image {m}x{n}", self.k1, self.k2),
            ));
        }
        Ok(())
    }

    pub fn with_block(mut self, h1: usize, h2: usize, overlap: Overlap) -> Self {
        self.h1 = h1;
        self.h2 = h2;
        self.overlap = overlap;
        self
    }
}

/// Learned filters for one stage plus the spectrum they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub filters: Vec<Matrix>,
    /// One eigenvalue per filter, descending.
    pub eigenvalues: Vec<f64>,
    /// Trace of the full covariance (sum of all `k1*k2` eigenvalues).
    pub eigenvalue_total: f64,
}

impl FilterBank {
    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Cumulative eigenvalue share after the first `n` filters.
    pub fn eigenvalue_ratio(&self, n: usize) -> f64 {
        if self.eigenvalue_total == 0.0 {
            return 0.0;
        }
        self.eigenvalues.iter().take(n).sum::<f64>() / self.eigenvalue_total
    }

    /// Keeps the first `n` filters.
    pub fn truncated(&self, n: usize) -> FilterBank {
        FilterBank {
            filters: self.filters[..n.min(self.len())].to_vec(),
            eigenvalues: self.eigenvalues[..n.min(self.len())].to_vec(),
            eigenvalue_total: self.eigenvalue_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNet {
    pub config: NetConfig,
    /// Training image size `(m, n)`.
    pub image_dims: (usize, usize),
    pub stage1: FilterBank,
    pub stage2: FilterBank,
}

/// Non-fatal conditions noticed while training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TrainWarning {
    /// The stage's patch covariance is zero; filters are an arbitrary basis.
    DegenerateCovariance { stage: u8 },
}

impl std::fmt::Display for TrainWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainWarning::DegenerateCovariance { stage } => write!(
                f,
                "stage-{stage} patch covariance is zero; filters come from an arbitrary eigenbasis"
            ),
        }
    }
}

fn check_images(images: &[Matrix]) -> Result<(usize, usize)> {
    let first = images
        .first()
        .ok_or_else(|| Error::precondition("images", "at least one image is required"))?;
    let dims = first.shape();
    if let Some(i) = images.iter().position(|im| im.shape() != dims) {
        return Err(Error::precondition(
            "images",
            format!(
                "image {i} is {}x{}, expected {}x{}",
                images[i].rows(),
                images[i].cols(),
                dims.0,
                dims.1
            ),
        ));
    }
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::precondition("images", "images must be non-empty"));
    }
    Ok(dims)
}

/// Sum of `P P^T` over per-image patch matrices, reduced in input order.
fn sum_grams(grams: Vec<Matrix>, dim: usize) -> Matrix {
    let mut acc = Matrix::zeros(dim, dim);
    for g in &grams {
        acc.add_assign(g);
    }
    acc
}

fn pca_bank(cov: &Matrix, k1: usize, k2: usize, count: usize) -> Result<FilterBank> {
    let eig = eigh_symmetric(cov)?;
    let filters = (0..count)
        .map(|i| Matrix::from_column_major(k1, k2, &eig.eigenvectors.column(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterBank {
        filters,
        eigenvalues: eig.eigenvalues[..count].to_vec(),
        eigenvalue_total: cov.trace(),
    })
}

fn degenerate(cov: &Matrix, raw_scale: f64) -> bool {
    cov.trace() <= 1e-12 * raw_scale.max(f64::MIN_POSITIVE)
}

/// Stage-1 covariance `C1 = X̄ X̄^T / (N m n)` and mean raw patch energy.
pub fn stage1_covariance(images: &[Matrix], k1: usize, k2: usize, exec: Exec) -> Result<(Matrix, f64)> {
    let (m, n) = check_images(images)?;
    let parts = exec.map(images, |img| -> Result<(Matrix, f64)> {
        let patches = extract_patches(img, k1, k2)?;
        let raw = patches.as_slice().iter().map(|v| v * v).sum::<f64>();
        Ok((remove_patch_mean(&patches)?.gram(), raw))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let raw: f64 = parts.iter().map(|p| p.1).sum();
    let grams = parts.into_iter().map(|p| p.0).collect();
    let denom = (images.len() * m * n) as f64;
    Ok((sum_grams(grams, k1 * k2).scale(1.0 / denom), raw / denom))
}

/// Stage-2 covariance over all `N * L1` first-stage outputs.
///
/// Normalised by `1 / (N * L1 * m * n)`, the number of patch columns; the
/// scale does not affect the eigenvectors.
pub fn stage2_covariance(
    images: &[Matrix],
    stage1: &FilterBank,
    config: &NetConfig,
    exec: Exec,
) -> Result<(Matrix, f64)> {
    let (m, n) = check_images(images)?;
    let (k1, k2) = (config.k1, config.k2);
    let skip = config.skip_second_mean_removal;
    let parts = exec.map(images, |img| -> Result<(Matrix, f64)> {
        let mut gram = Matrix::zeros(k1 * k2, k1 * k2);
        let mut raw = 0.0;
        for w in &stage1.filters {
            let out = correlate_same(img, w)?;
            let mut patches = extract_patches(&out, k1, k2)?;
            raw += patches.as_slice().iter().map(|v| v * v).sum::<f64>();
            if !skip {
                patches = remove_patch_mean(&patches)?;
            }
            gram.add_assign(&patches.gram());
        }
        Ok((gram, raw))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let raw: f64 = parts.iter().map(|p| p.1).sum();
    let grams = parts.into_iter().map(|p| p.0).collect();
    let denom = (images.len() * stage1.len() * m * n) as f64;
    Ok((sum_grams(grams, k1 * k2).scale(1.0 / denom), raw / denom))
}

/// Learns both filter banks. Logs any [`TrainWarning`].
pub fn train(images: &[Matrix], config: &NetConfig) -> Result<TrainedNet> {
    let (net, warnings) = train_with_report(images, config, Exec::default())?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(net)
}

pub fn train_with_report(
    images: &[Matrix],
    config: &NetConfig,
    exec: Exec,
) -> Result<(TrainedNet, Vec<TrainWarning>)> {
    let (m, n) = check_images(images)?;
    config.validate_for_image(m, n)?;
    let mut warnings = Vec::new();

    let (c1, raw1) = stage1_covariance(images, config.k1, config.k2, exec)?;
    if degenerate(&c1, raw1) {
        warnings.push(TrainWarning::DegenerateCovariance { stage: 1 });
    }
    let stage1 = pca_bank(&c1, config.k1, config.k2, config.l1)?;

    let (c2, raw2) = stage2_covariance(images, &stage1, config, exec)?;
    if degenerate(&c2, raw2) {
        warnings.push(TrainWarning::DegenerateCovariance { stage: 2 });
    }
    let stage2 = pca_bank(&c2, config.k1, config.k2, config.l2)?;

    Ok((
        TrainedNet {
            config: *config,
            image_dims: (m, n),
            stage1,
            stage2,
        },
        warnings,
    ))
}

/// Filtered maps of one image: `L1` first-stage and `L1 * L2` second-stage
/// outputs, the latter indexed `l * L2 + j`.
#[derive(Debug, Clone)]
pub struct StageOutputs {
    pub stage1: Vec<Matrix>,
    pub stage2: Vec<Matrix>,
}

impl TrainedNet {
    fn check_image(&self, image: &Matrix) -> Result<()> {
        if image.shape() != self.image_dims {
            return Err(Error::precondition(
                "image",
                format!(
                    "size {}x{} does not match the training size {}x{}",
                    image.rows(),
                    image.cols(),
                    self.image_dims.0,
                    self.image_dims.1
                ),
            ));
        }
        Ok(())
    }

    /// Same net with block parameters replaced; filters are untouched.
    pub fn with_block(&self, h1: usize, h2: usize, overlap: Overlap) -> TrainedNet {
        let mut net = self.clone();
        net.config = net.config.with_block(h1, h2, overlap);
        net
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedNet> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        TrainedNet::from_bytes(&buf)
    }

    /// Binary model layout (all little-endian):
    ///
    /// ```text
    /// "PCN1"
    /// u32 k1, k2, L1, L2, m, n
    /// stage 1: L1 filters as k1*k2 f64 row-major, L1 f64 eigenvalues, f64 trace
    /// stage 2: same with L2
    /// u32 h1, h2; u8 overlap tenths; u8 skip-second-mean-removal flag
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [c.k1, c.k2, c.l1, c.l2, self.image_dims.0, self.image_dims.1] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for bank in [&self.stage1, &self.stage2] {
            for f in &bank.filters {
                for v in f.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            for v in &bank.eigenvalues {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&bank.eigenvalue_total.to_le_bytes());
        }
        out.extend_from_slice(&(c.h1 as u32).to_le_bytes());
        out.extend_from_slice(&(c.h2 as u32).to_le_bytes());
        out.push(c.overlap.tenths());
        out.push(u8::from(c.skip_second_mean_removal));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrainedNet> {
        let mut rd = ByteReader { bytes, pos: 0 };
        let magic = rd.take(4)?;
        if magic != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                reason: format!("bad magic {magic:?}, expected \"PCN1\""),
            });
        }
        let mut dims = [0usize; 6];
        for d in dims.iter_mut() {
            *d = rd.u32()? as usize;
        }
        let [k1, k2, l1, l2, m, n] = dims;
        if k1 * k2 == 0 || k1 * k2 > 1 << 16 {
            return Err(Error::Parse {
                offset: 4,
                reason: format!("implausible patch size {k1}x{k2}"),
            });
        }
        let mut bank = |count: usize| -> Result<FilterBank> {
            let filters = (0..count)
                .map(|_| {
                    let vals = (0..k1 * k2).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
                    Matrix::from_vec(k1, k2, vals)
                })
                .collect::<Result<Vec<_>>>()?;
            let eigenvalues = (0..count).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
            let eigenvalue_total = rd.f64()?;
            Ok(FilterBank {
                filters,
                eigenvalues,
                eigenvalue_total,
            })
        };
        let stage1 = bank(l1)?;
        let stage2 = bank(l2)?;
        let h1 = rd.u32()? as usize;
        let h2 = rd.u32()? as usize;
        let tenths_at = rd.pos as u64;
        let overlap = Overlap::from_tenths(rd.u8()?).map_err(|e| Error::Parse {
            offset: tenths_at,
            reason: e.to_string(),
        })?;
        let skip = rd.u8()? != 0;
        if rd.pos != bytes.len() {
            return Err(Error::Parse {
                offset: rd.pos as u64,
                reason: format!("{} trailing bytes", bytes.len() - rd.pos),
            });
        }
        let config = NetConfig {
            k1,
            k2,
            l1,
            l2,
            h1,
            h2,
            overlap,
            skip_second_mean_removal: skip,
        };
        config.validate().map_err(|e| Error::Parse {
            offset: 4,
            reason: e.to_string(),
        })?;
        Ok(TrainedNet {
            config,
            image_dims: (m, n),
            stage1,
            stage2,
        })
    }
}

const MAGIC: &[u8; 4] = b"PCN1";

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                reason: format!(
                    "truncated model: need {n} more bytes, {} available",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Runs both filter stages on one image.
pub fn forward_stage_outputs(net: &TrainedNet, image: &Matrix) -> Result<StageOutputs> {
    net.check_image(image)?;
    let stage1 = net
        .stage1
        .filters
        .iter()
        .map(|w| correlate_same(image, w))
        .collect::<Result<Vec<_>>>()?;
    let mut stage2 = Vec::with_capacity(stage1.len() * net.stage2.len());
    for out in &stage1 {
        for w in &net.stage2.filters {
            stage2.push(correlate_same(out, w)?);
        }
    }
    Ok(StageOutputs { stage1, stage2 })
}

/// Heaviside step with `H(0) = 0`.
pub fn binarize(stage2_output: &Matrix) -> Matrix {
    let data = stage2_output
        .as_slice()
        .iter()
        .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
        .collect();
    Matrix::from_vec(stage2_output.rows(), stage2_output.cols(), data).expect("same shape")
}

/// Packs `L2` binary maps into one integer map: `T = sum_j 2^j * P_j`.
pub fn weight_and_sum(binary_maps: &[Matrix]) -> Result<Matrix> {
    let first = binary_maps
        .first()
        .ok_or_else(|| Error::precondition("binary_maps", "need at least one map (L2 >= 1)"))?;
    if binary_maps.len() > 31 {
        return Err(Error::precondition("binary_maps", "at most 31 maps fit an integer code"));
    }
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for (j, p) in binary_maps.iter().enumerate() {
        if p.shape() != first.shape() {
            return Err(Error::precondition(
                "binary_maps",
                format!("map {j} is {}x{}, expected {}x{}", p.rows(), p.cols(), first.rows(), first.cols()),
            ));
        }
        let w = f64::from(1u32 << j);
        for (o, v) in out.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Top-left corners of the blocks slid over an `m x n` map, row-major.
pub fn block_positions(
    m: usize,
    n: usize,
    h1: usize,
    h2: usize,
    overlap: Overlap,
) -> Result<Vec<(usize, usize)>> {
    if h1 == 0 || h2 == 0 || h1 > m || h2 > n {
        return Err(Error::Infeasible(format!(
            "block {h1}x{h2} does not fit a {m}x{n} map"
        )));
    }
    let (s1, s2) = (overlap.stride(h1), overlap.stride(h2));
    let rows: Vec<usize> = (0..=m - h1).step_by(s1).collect();
    let cols: Vec<usize> = (0..=n - h2).step_by(s2).collect();
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

/// Number of blocks `B` for the given geometry.
pub fn block_count(m: usize, n: usize, h1: usize, h2: usize, overlap: Overlap) -> Result<usize> {
    if h1 == 0 || h2 == 0 || h1 > m || h2 > n {
        return Err(Error::Infeasible(format!(
            "block {h1}x{h2} does not fit a {m}x{n} map"
        )));
    }
    Ok(((m - h1) / overlap.stride(h1) + 1) * ((n - h2) / overlap.stride(h2) + 1))
}

/// Unrolls each block (column-major inside the block) into a column.
pub fn block_slide(map: &Matrix, h1: usize, h2: usize, overlap: Overlap) -> Result<Matrix> {
    let pos = block_positions(map.rows(), map.cols(), h1, h2, overlap)?;
    let mut out = Matrix::zeros(h1 * h2, pos.len());
    for (b, &(r0, c0)) in pos.iter().enumerate() {
        for dc in 0..h2 {
            for dr in 0..h1 {
                out[(dc * h1 + dr, b)] = map[(r0 + dr, c0 + dc)];
            }
        }
    }
    Ok(out)
}

/// Block-histogram feature of one image, stored sparsely.
///
/// Logical layout is channel-major, then block, then bin:
/// index `(l * B + b) * 2^L2 + v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    len: usize,
    channels: usize,
    block_count: usize,
    bins: usize,
    indices: Vec<u32>,
    counts: Vec<u32>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(index, count)` for every non-zero entry, ascending.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.counts.iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&(index as u32)) {
            Ok(k) => f64::from(self.counts[k]),
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        for (i, c) in self.nonzeros() {
            v[i] = f64::from(c);
        }
        v
    }

    /// Histogram of block `block` in channel `channel`.
    pub fn block_histogram(&self, channel: usize, block: usize) -> Vec<u32> {
        let start = (channel * self.block_count + block) * self.bins;
        let lo = self.indices.partition_point(|&i| (i as usize) < start);
        let hi = self.indices.partition_point(|&i| (i as usize) < start + self.bins);
        let mut h = vec![0; self.bins];
        for k in lo..hi {
            h[self.indices[k] as usize - start] = self.counts[k];
        }
        h
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc: u64 = 0;
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += u64::from(self.counts[i]) * u64::from(other.counts[j]);
                    i += 1;
                    j += 1;
                }
            }
        }
        acc as f64
    }

    pub fn squared_norm(&self) -> f64 {
        self.counts.iter().map(|&c| u64::from(c) * u64::from(c)).sum::<u64>() as f64
    }

    /// Energy of the block-unrolled decimal maps this feature was built
    /// from: every block pixel with code `v` contributes `v^2`.
    pub fn block_energy(&self) -> f64 {
        self.nonzeros()
            .map(|(i, c)| {
                let v = (i % self.bins) as f64;
                f64::from(c) * v * v
            })
            .sum()
    }
}

/// The `L1` integer maps `T_l` of one image (Steps 7-8).
pub fn decimal_maps(net: &TrainedNet, image: &Matrix) -> Result<Vec<Matrix>> {
    let outs = forward_stage_outputs(net, image)?;
    let l2 = net.stage2.len();
    outs.stage2
        .chunks(l2)
        .map(|group| {
            let bits: Vec<Matrix> = group.iter().map(binarize).collect();
            weight_and_sum(&bits)
        })
        .collect()
}

/// Block histograms over precomputed decimal maps (Steps 9-10).
pub fn feature_from_maps(
    maps: &[Matrix],
    l2: usize,
    h1: usize,
    h2: usize,
    overlap: Overlap,
) -> Result<FeatureVector> {
    let first = maps
        .first()
        .ok_or_else(|| Error::precondition("maps", "need at least one decimal map"))?;
    let (m, n) = first.shape();
    let pos = block_positions(m, n, h1, h2, overlap)?;
    let bins = 1usize << l2;
    let b = pos.len();
    let len = bins * maps.len() * b;
    if len > u32::MAX as usize {
        return Err(Error::Infeasible(format!("feature length {len} exceeds u32 indexing")));
    }
    let mut indices = Vec::new();
    let mut counts = Vec::new();
    let mut hist = vec![0u32; bins];
    for (l, map) in maps.iter().enumerate() {
        if map.shape() != (m, n) {
            return Err(Error::precondition("maps", format!("map {l} has a different size")));
        }
        for (bi, &(r0, c0)) in pos.iter().enumerate() {
            hist.iter_mut().for_each(|h| *h = 0);
            for r in r0..r0 + h1 {
                for &v in &map.row(r)[c0..c0 + h2] {
                    let code = v as usize;
                    if v < 0.0 || code >= bins || code as f64 != v {
                        return Err(Error::precondition(
                            "maps",
                            format!("value {v} is not an integer code below {bins}"),
                        ));
                    }
                    hist[code] += 1;
                }
            }
            let base = (l * b + bi) * bins;
            for (v, &c) in hist.iter().enumerate() {
                if c > 0 {
                    indices.push((base + v) as u32);
                    counts.push(c);
                }
            }
        }
    }
    Ok(FeatureVector {
        len,
        channels: maps.len(),
        block_count: b,
        bins,
        indices,
        counts,
    })
}

/// Full Steps 7-10 feature of one image using the net's block parameters.
pub fn extract_feature(net: &TrainedNet, image: &Matrix) -> Result<FeatureVector> {
    let maps = decimal_maps(net, image)?;
    let c = &net.config;
    feature_from_maps(&maps, net.stage2.len(), c.h1, c.h2, c.overlap)
}

pub fn extract_features(net: &TrainedNet, images: &[Matrix], exec: Exec) -> Result<Vec<FeatureVector>> {
    exec.map(images, |img| extract_feature(net, img))
        .into_iter()
        .collect()
}
