//! Datasets: file container, CSV fallback, seeded splits and a synthetic
//! generator.
//!
//! Container layout:
//!
//! ```text
//! {"name":"yale","m":32,"n":32,"count":165,"dtype":"u8"}\n
//! count * m * n pixels, image-major then row-major (u8 or f64 LE)
//! count labels (u32 LE)
//! ```
//!
//! The CSV fallback has one row per image: the label followed by `m * n`
//! pixel values in row-major order. Pixels are never rescaled.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    U8,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub m: usize,
    pub n: usize,
    pub images: Vec<Matrix>,
    pub labels: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    name: String,
    m: usize,
    n: usize,
    count: usize,
    dtype: Dtype,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<Matrix>, labels: Vec<u32>) -> Result<Dataset> {
        if images.len() != labels.len() {
            return Err(Error::precondition(
                "labels",
                format!("{} labels for {} images", labels.len(), images.len()),
            ));
        }
        let (m, n) = images.first().map(Matrix::shape).unwrap_or((0, 0));
        if let Some(i) = images.iter().position(|im| im.shape() != (m, n)) {
            return Err(Error::precondition(
                "images",
                format!("image {i} is {}x{}, expected {m}x{n}", images[i].rows(), images[i].cols()),
            ));
        }
        Ok(Dataset {
            name: name.into(),
            m,
            n,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Distinct labels, ascending.
    pub fn classes(&self) -> Vec<u32> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            m: self.m,
            n: self.n,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// SHA-256 over dimensions, f64 pixels and labels, as lowercase hex.
    /// Independent of the name and of the on-disk dtype.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.m, self.n, self.len()] {
            h.update((v as u64).to_le_bytes());
        }
        for im in &self.images {
            for v in im.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        for l in &self.labels {
            h.update(l.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Smallest dtype that stores every pixel exactly.
    pub fn natural_dtype(&self) -> Dtype {
        let all_u8 = self
            .images
            .iter()
            .flat_map(|im| im.as_slice())
            .all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0);
        if all_u8 {
            Dtype::U8
        } else {
            Dtype::F64
        }
    }

    pub fn to_bytes(&self, dtype: Dtype) -> Result<Vec<u8>> {
        let header = Header {
            name: self.name.clone(),
            m: self.m,
            n: self.n,
            count: self.len(),
            dtype,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(self.len() * self.m * self.n * dtype.size() + 4 * self.len());
        for (i, im) in self.images.iter().enumerate() {
            for &v in im.as_slice() {
                match dtype {
                    Dtype::U8 => {
                        if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                            return Err(Error::precondition(
                                "dtype",
                                format!("image {i} has pixel {v}, which u8 cannot store exactly"),
                            ));
                        }
                        out.push(v as u8);
                    }
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        for &l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Parse {
            offset: bytes.len() as u64,
            reason: "header line is not terminated by a newline".into(),
        })?;
        let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Parse {
            offset: e.column().saturating_sub(1) as u64,
            reason: format!("malformed header: {e}"),
        })?;
        let body = nl + 1;
        let npix = header
            .count
            .checked_mul(header.m)
            .and_then(|v| v.checked_mul(header.n))
            .ok_or_else(|| Error::Parse {
                offset: 0,
                reason: "header dimensions overflow".into(),
            })?;
        let pix_bytes = npix * header.dtype.size();
        let expected = pix_bytes + 4 * header.count;
        let actual = bytes.len() - body;
        if actual < expected {
            let what = if actual < pix_bytes { "pixel data" } else { "labels" };
            return Err(Error::Parse {
                offset: bytes.len() as u64,
                reason: format!(
                    "truncated payload in {what}: expected {expected} bytes after the header, found {actual}"
                ),
            });
        }
        if actual > expected {
            return Err(Error::Parse {
                offset: (body + expected) as u64,
                reason: format!(
                    "{} trailing bytes: header declares {} images, payload holds more",
                    actual - expected,
                    header.count
                ),
            });
        }
        let pix = &bytes[body..body + pix_bytes];
        let plane = header.m * header.n;
        let images = (0..header.count)
            .map(|i| {
                let data: Vec<f64> = match header.dtype {
                    Dtype::U8 => pix[i * plane..(i + 1) * plane].iter().map(|&b| f64::from(b)).collect(),
                    Dtype::F64 => pix[i * plane * 8..(i + 1) * plane * 8]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                };
                Matrix::from_vec(header.m, header.n, data)
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = bytes[body + pix_bytes..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Dataset {
            name: header.name,
            m: header.m,
            n: header.n,
            images,
            labels,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
        let bytes = self.to_bytes(dtype)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for (im, l) in self.images.iter().zip(&self.labels) {
            let mut row = vec![l.to_string()];
            row.extend(im.as_slice().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a container file, or a CSV file when the content does not start
/// with a JSON header. CSV images are assumed square.
pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    load_with_dims(path, None)
}

pub fn load_with_dims(path: impl AsRef<Path>, dims: Option<(usize, usize)>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    if bytes.first() == Some(&b'{') {
        Dataset::from_bytes(&bytes)
    } else {
        parse_csv(&bytes, &name, dims)
    }
}

pub fn parse_csv(bytes: &[u8], name: &str, dims: Option<(usize, usize)>) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut shape = dims;
    for rec in rd.records() {
        let rec = rec?;
        let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
        let perr = |reason: String| Error::Parse { offset, reason };
        if rec.is_empty() || (rec.len() == 1 && rec[0].is_empty()) {
            continue;
        }
        let label: u32 = rec[0]
            .parse()
            .map_err(|e| perr(format!("label {:?}: {e}", &rec[0])))?;
        let npix = rec.len() - 1;
        let (m, n) = match shape {
            Some(s) => s,
            None => {
                let side = (npix as f64).sqrt().round() as usize;
                if side * side != npix || side == 0 {
                    return Err(perr(format!(
                        "{npix} pixels is not a square image; pass the dimensions explicitly"
                    )));
                }
                shape = Some((side, side));
                (side, side)
            }
        };
        if npix != m * n {
            return Err(perr(format!("expected {} pixel fields, found {npix}", m * n)));
        }
        let data = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|e| perr(format!("pixel {f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        images.push(Matrix::from_vec(m, n, data)?);
        labels.push(label);
    }
    let (m, n) = shape.unwrap_or((0, 0));
    Ok(Dataset {
        name: name.to_string(),
        m,
        n,
        images,
        labels,
    })
}

/// Train/test split request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
    #[serde(default = "default_stratified")]
    pub stratified: bool,
}

fn default_stratified() -> bool {
    true
}

/// Distributes `total` over buckets proportionally to `weights` without
/// exceeding `caps`, using largest remainders (ties to the lower index).
fn apportion(total: usize, weights: &[usize], caps: &[usize]) -> Vec<usize> {
    let wsum: usize = weights.iter().sum();
    let mut out: Vec<usize> = weights
        .iter()
        .zip(caps)
        .map(|(&w, &c)| (total * w).checked_div(wsum).unwrap_or(0).min(c))
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // remainder of total*w/wsum, compared exactly as integers
    order.sort_by_key(|&i| {
        let rem = if wsum == 0 { 0 } else { total * weights[i] % wsum };
        (std::cmp::Reverse(rem), i)
    });
    let mut left = total - out.iter().sum::<usize>();
    while left > 0 {
        let before = left;
        for &i in &order {
            if left == 0 {
                break;
            }
            if out[i] < caps[i] {
                out[i] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    out
}

/// Seeded split into disjoint train and test sets.
///
/// The whole index set is shuffled once with ChaCha8 seeded by `spec.seed`.
/// Unstratified splits take the first `train_count` shuffled indices for
/// training and the next `test_count` for testing. Stratified splits give
/// each class a share proportional to its size (largest remainder) and take
/// that many of its indices in shuffled order. Both outputs keep the
/// shuffled order.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (ix_train, ix_test) = split_indices(&dataset.labels, spec)?;
    Ok((dataset.subset(&ix_train), dataset.subset(&ix_test)))
}

pub fn split_indices(labels: &[u32], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let total = labels.len();
    if spec.train_count + spec.test_count > total {
        return Err(Error::precondition(
            "split",
            format!(
                "{}:{} needs {} images, dataset has {total}",
                spec.train_count,
                spec.test_count,
                spec.train_count + spec.test_count
            ),
        ));
    }
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    if !spec.stratified {
        let train = perm[..spec.train_count].to_vec();
        let test = perm[spec.train_count..spec.train_count + spec.test_count].to_vec();
        return Ok((train, test));
    }

    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in &perm {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let train_q = apportion(spec.train_count, &sizes, &sizes);
    let rest: Vec<usize> = sizes.iter().zip(&train_q).map(|(s, t)| s - t).collect();
    let test_q = apportion(spec.test_count, &sizes, &rest);

    let mut in_train = vec![false; total];
    let mut in_test = vec![false; total];
    for ((members, &tr), &te) in by_class.values().zip(&train_q).zip(&test_q) {
        members[..tr].iter().for_each(|&i| in_train[i] = true);
        members[tr..tr + te].iter().for_each(|&i| in_test[i] = true);
    }
    let train: Vec<usize> = perm.iter().copied().filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = perm.iter().copied().filter(|&i| in_test[i]).collect();
    if train.len() != spec.train_count || test.len() != spec.test_count {
        return Err(Error::precondition(
            "split",
            format!(
                "stratified split could only place {}:{}",
                train.len(),
                test.len()
            ),
        ));
    }
    Ok((train, test))
}

const GRATINGS: usize = 4;

/// Knobs for [`synth_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Template-to-noise power ratio in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Each image is translated by up to this many pixels per axis; zero
    /// also fixes the grating phases.
    pub max_shift: usize,
    /// Random Gaussian bumps per class template.
    pub blobs: usize,
    /// Peak template amplitude.
    pub amplitude: f64,
    /// Weight of the class-specific template against a template shared by
    /// all classes; lower values make classes harder to tell apart.
    pub separation: f64,
    /// Amplitude of a class-specific oriented texture whose phase is random
    /// per image (fixed when `max_shift` is 0).
    pub texture: f64,
    /// Relative per-image jitter of texture frequency and orientation.
    pub jitter: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            snr_db: 5.0,
            max_shift: 2,
            blobs: 6,
            amplitude: 60.0,
            separation: 0.2,
            texture: 20.0,
            jitter: 0.15,
        }
    }
}

impl SynthOptions {
    pub fn noiseless() -> Self {
        SynthOptions {
            snr_db: f64::INFINITY,
            max_shift: 0,
            jitter: 0.0,
            ..SynthOptions::default()
        }
    }
}

/// Class-separable synthetic images with default [`SynthOptions`].
pub fn synth(classes: usize, per_class: usize, m: usize, n: usize, seed: u64) -> Result<Dataset> {
    synth_with(classes, per_class, m, n, seed, &SynthOptions::default())
}

/// Each class template is a zero-mean smooth field (a shared field plus a
/// class-specific one weighted by `separation`) and a set of oriented
/// gratings. Each image translates the field by a random offset, draws
/// random grating phases with slightly jittered frequencies, and adds white
/// Gaussian noise at the requested SNR. Labels run `0..classes`, images are
/// grouped by class.
pub fn synth_with(
    classes: usize,
    per_class: usize,
    m: usize,
    n: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<Dataset> {
    for (name, v) in [("classes", classes), ("per_class", per_class), ("m", m), ("n", n)] {
        if v == 0 {
            return Err(Error::precondition(name, "must be >= 1"));
        }
    }
    if opts.snr_db.is_nan() {
        return Err(Error::precondition("snr_db", "must not be NaN"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pad = opts.max_shift;
    let (tm, tn) = (m + 2 * pad, n + 2 * pad);
    let scale = (m.min(n) as f64).max(2.0);

    let bumps = |rng: &mut ChaCha8Rng| {
        let mut t = Matrix::zeros(tm, tn);
        for b in 0..opts.blobs.max(1) {
            let cr = rng.random_range(0.0..tm as f64);
            let cc = rng.random_range(0.0..tn as f64);
            let sigma = rng.random_range(0.08..0.2) * scale;
            let sign = if b % 2 == 0 { 1.0 } else { -1.0 };
            let amp = sign * rng.random_range(0.5..1.0) * opts.amplitude;
            for r in 0..tm {
                for c in 0..tn {
                    let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                    t[(r, c)] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        let mean = t.as_slice().iter().sum::<f64>() / (tm * tn) as f64;
        t.as_mut_slice().iter_mut().for_each(|v| *v -= mean);
        t
    };
    let shared = bumps(&mut rng);
    let templates: Vec<Matrix> = (0..classes)
        .map(|_| {
            let mut t = bumps(&mut rng).scale(opts.separation);
            t.add_assign(&shared);
            t
        })
        .collect();

    // (frequency row, frequency col) per grating
    let gratings: Vec<[(f64, f64); GRATINGS]> = (0..classes)
        .map(|_| {
            std::array::from_fn(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let wavelength = rng.random_range(3.0..8.0);
                let k = std::f64::consts::TAU / wavelength;
                (k * theta.sin(), k * theta.cos())
            })
        })
        .collect();

    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (label, t) in templates.iter().enumerate() {
        let power = t.as_slice().iter().map(|v| v * v).sum::<f64>() / (tm * tn) as f64
            + opts.texture * opts.texture * GRATINGS as f64 / 2.0;
        let sigma = (power / 10f64.powf(opts.snr_db / 10.0)).sqrt();
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::precondition("snr_db", e.to_string()))?;
        for _ in 0..per_class {
            let dr = rng.random_range(0..=2 * pad);
            let dc = rng.random_range(0..=2 * pad);
            let phases: [f64; GRATINGS] = if pad > 0 {
                std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU))
            } else {
                [0.0; GRATINGS]
            };
            let waves: [(f64, f64); GRATINGS] = std::array::from_fn(|g| {
                let (kr, kc) = gratings[label][g];
                if opts.jitter > 0.0 {
                    let s = 1.0 + rng.random_range(-opts.jitter..opts.jitter);
                    let a = rng.random_range(-opts.jitter..opts.jitter);
                    (s * (kr * a.cos() + kc * a.sin()), s * (kc * a.cos() - kr * a.sin()))
                } else {
                    (kr, kc)
                }
            });
            let mut im = Matrix::zeros(m, n);
            for r in 0..m {
                for c in 0..n {
                    let eps = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    let tex: f64 = waves
                        .iter()
                        .zip(&phases)
                        .map(|(&(kr, kc), ph)| (kr * r as f64 + kc * c as f64 + ph).sin())
                        .sum();
                    im[(r, c)] = t[(r + dr, c + dc)] + opts.texture * tex + eps;
                }
            }
            images.push(im);
            labels.push(label as u32);
        }
    }
    Dataset::new(format!("synth-{classes}x{per_class}-{m}x{n}-s{seed}"), images, labels)
}
