//! Cubic fit of error rate against block energy:
//! `e = p1 g^3 + p2 g^2 + p3 g + p4` with `g = 1 / log E(Z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{least_squares, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    E,
    #[serde(rename = "10")]
    Ten,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::E => x.ln(),
            LogBase::Ten => x.log10(),
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e" | "ln" => Ok(LogBase::E),
            "10" => Ok(LogBase::Ten),
            _ => Err(Error::precondition("log-base", format!("{s:?} is not one of e, 10"))),
        }
    }
}

impl std::fmt::Display for LogBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LogBase::E => "e",
            LogBase::Ten => "10",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitStatus {
    Ok,
    /// The observed errors have zero variance, so R² is undefined.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub sse: f64,
    pub ssr: f64,
    pub sst: f64,
    pub r_square: Option<f64>,
    /// `sqrt(SSE / N)`.
    pub rmse: f64,
    pub mean_e: f64,
    pub n_points: usize,
    pub log_base: LogBase,
    pub status: FitStatus,
}

pub fn g_of(block_energy: f64, base: LogBase) -> f64 {
    1.0 / base.log(block_energy)
}

fn check_energy(index: usize, block_energy: f64) -> Result<()> {
    if !(block_energy > 1.0) || !block_energy.is_finite() {
        return Err(Error::Domain(format!(
            "point {index}: block energy {block_energy} must be finite and > 1 for 1/log(E) to be defined"
        )));
    }
    Ok(())
}

fn poly(p: [f64; 4], g: f64) -> f64 {
    ((p[0] * g + p[1]) * g + p[2]) * g + p[3]
}

/// Least-squares cubic in `g` over `(block_energy, e)` pairs.
pub fn fit_poly3(points: &[(f64, f64)], base: LogBase) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::Singular(format!(
            "a cubic needs at least 4 points, got {}",
            points.len()
        )));
    }
    let mut gs = Vec::with_capacity(points.len());
    for (i, &(be, e)) in points.iter().enumerate() {
        check_energy(i, be)?;
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::precondition("e", format!("point {i}: error rate {e} is outside [0, 1]")));
        }
        gs.push(g_of(be, base));
    }
    // Canonical order makes the result independent of input order.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| gs[a].total_cmp(&gs[b]).then(points[a].1.total_cmp(&points[b].1)));
    let gs: Vec<f64> = order.iter().map(|&i| gs[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| points[i].1).collect();
    if gs.iter().all(|&g| g == gs[0]) {
        return Err(Error::Singular("every point has the same g; the cubic is undetermined".into()));
    }
    let design = Matrix::from_vec(
        points.len(),
        4,
        gs.iter().flat_map(|&g| [g * g * g, g * g, g, 1.0]).collect(),
    )?;
    let n = points.len() as f64;
    let mean_e = ys.iter().sum::<f64>() / n;
    let constant = ys.iter().all(|&y| y == ys[0]);
    let p = if constant {
        // Exact solution; avoids round-off from a badly conditioned system.
        [0.0, 0.0, 0.0, ys[0]]
    } else {
        let c = least_squares(&design, &ys)?;
        [c[0], c[1], c[2], c[3]]
    };
    let (mut sse, mut ssr, mut sst) = (0.0, 0.0, 0.0);
    for (&g, &y) in gs.iter().zip(&ys) {
        let yhat = poly(p, g);
        sse += (y - yhat).powi(2);
        ssr += (yhat - mean_e).powi(2);
        sst += (y - mean_e).powi(2);
    }
    let degenerate = constant;
    Ok(FitResult {
        p1: p[0],
        p2: p[1],
        p3: p[2],
        p4: p[3],
        sse,
        ssr,
        sst,
        r_square: (!degenerate).then(|| 1.0 - sse / sst),
        rmse: (sse / n).sqrt(),
        mean_e,
        n_points: points.len(),
        log_base: base,
        status: if degenerate { FitStatus::Degenerate } else { FitStatus::Ok },
    })
}

impl FitResult {
    pub fn coefficients(&self) -> [f64; 4] {
        [self.p1, self.p2, self.p3, self.p4]
    }

    /// A model with given coefficients and no fit statistics.
    pub fn from_coefficients(p: [f64; 4], base: LogBase) -> FitResult {
        FitResult {
            p1: p[0],
            p2: p[1],
            p3: p[2],
            p4: p[3],
            sse: 0.0,
            ssr: 0.0,
            sst: 0.0,
            r_square: None,
            rmse: 0.0,
            mean_e: 0.0,
            n_points: 0,
            log_base: base,
            status: FitStatus::Degenerate,
        }
    }

    /// Aligned text table: model, coefficients and goodness-of-fit rows.
    pub fn table(&self, name: &str) -> String {
        let r2 = self
            .r_square
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "undefined".into());
        let rows = [
            ("Database".to_string(), name.to_string()),
            ("Model".into(), "Poly3: e = p1*g^3 + p2*g^2 + p3*g + p4".into()),
            ("g".into(), format!("1/log_{}(E(Z))", self.log_base)),
            ("p1".into(), format!("{:.4}", self.p1)),
            ("p2".into(), format!("{:.4}", self.p2)),
            ("p3".into(), format!("{:.4}", self.p3)),
            ("p4".into(), format!("{:.4}", self.p4)),
            ("SSE".into(), format!("{:.4}", self.sse)),
            ("SSR".into(), format!("{:.4}", self.ssr)),
            ("SST".into(), format!("{:.4}", self.sst)),
            ("R-square".into(), r2),
            ("RMSE".into(), format!("{:.5}", self.rmse)),
            ("mean e".into(), format!("{:.4}", self.mean_e)),
            ("N".into(), self.n_points.to_string()),
        ];
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<w$}  {v}\n"))
            .collect()
    }
}

/// Model prediction at `block_energy`.
pub fn evaluate(fit: &FitResult, block_energy: f64) -> Result<f64> {
    check_energy(0, block_energy)?;
    Ok(poly(fit.coefficients(), g_of(block_energy, fit.log_base)))
}
