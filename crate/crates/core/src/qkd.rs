//! Simplified symmetric DO-QKD key rates.
//!
//! The security analysis here is a model: an error proxy derived from the
//! CAR feeds a pluggable yield curve, and the secure key rate is the sifted
//! rate times the best yield over the allowed encoding dimensions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{timeshare_rates, Schedule, UserAllocation, UserPair};
use crate::stats::LinkStats;

pub const DEFAULT_DIMENSIONS: [u32; 4] = [2, 4, 8, 16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QkdParams {
    pub basis_match_prob: f64,
    /// Fraction of coincidences used for key generation.
    pub key_fraction: f64,
    /// Allowed encoding dimensions (powers of two, at least 2).
    pub dimensions: Vec<u32>,
    pub penalty_slope: f64,
}

impl Default for QkdParams {
    fn default() -> Self {
        QkdParams {
            basis_match_prob: 0.5,
            key_fraction: 0.7,
            dimensions: DEFAULT_DIMENSIONS.to_vec(),
            penalty_slope: 1.0,
        }
    }
}

impl QkdParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("basis_match_prob", self.basis_match_prob), ("key_fraction", self.key_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidModel(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.dimensions.is_empty() {
            return Err(Error::InvalidModel("no encoding dimensions allowed".into()));
        }
        if let Some(d) = self.dimensions.iter().find(|d| **d < 2 || !d.is_power_of_two()) {
            return Err(Error::InvalidModel(format!("dimension {d} is not a power of two ≥ 2")));
        }
        if !(self.penalty_slope.is_finite() && self.penalty_slope >= 0.0) {
            return Err(Error::InvalidModel(format!("penalty slope {} is negative", self.penalty_slope)));
        }
        Ok(())
    }

    pub fn linear_penalty(&self) -> LinearPenalty {
        LinearPenalty { slope: self.penalty_slope }
    }
}

/// Secure bits per sifted coincidence at dimension `d` and error proxy `e`.
/// Implementations should not increase with `e`.
pub trait YieldModel: Sync {
    fn yield_bits(&self, d: u32, e: f64) -> f64;
}

/// `log2(d) - 2 * log2(d) * e * slope`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPenalty {
    pub slope: f64,
}

impl YieldModel for LinearPenalty {
    fn yield_bits(&self, d: u32, e: f64) -> f64 {
        let bits = (d as f64).log2();
        bits - 2.0 * bits * e * self.slope
    }
}

/// Qudit yield `log2(d) - 2 * (h(e) + e * log2(d - 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuditEntropy;

fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

impl YieldModel for QuditEntropy {
    fn yield_bits(&self, d: u32, e: f64) -> f64 {
        let d = d as f64;
        d.log2() - 2.0 * (h2(e) + e * (d - 1.0).log2())
    }
}

pub fn sifted_rate(stats: &LinkStats, params: &QkdParams) -> f64 {
    stats.coincidence_rate * params.basis_match_prob * params.key_fraction
}

/// Error proxy `1 / (1 + CAR)` in `[0, 0.5]`.
pub fn error_proxy(car: f64) -> f64 {
    if car.is_infinite() {
        return 0.0;
    }
    (1.0 / (1.0 + car)).clamp(0.0, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkrEstimate {
    pub skr: f64,
    pub dimension: u32,
    pub error: f64,
    pub sifted: f64,
}

/// Best secure key rate over the allowed dimensions. Ties and the all-zero
/// case go to the smallest dimension.
pub fn skr_estimate(stats: &LinkStats, params: &QkdParams, model: &dyn YieldModel) -> SkrEstimate {
    let sifted = sifted_rate(stats, params);
    let error = error_proxy(stats.car);
    let mut dims = params.dimensions.clone();
    dims.sort_unstable();
    let (mut best_y, mut best_d) = (0.0, dims[0]);
    for d in dims {
        let y = model.yield_bits(d, error).max(0.0);
        if y > best_y {
            best_y = y;
            best_d = d;
        }
    }
    SkrEstimate {
        skr: sifted * best_y,
        dimension: best_d,
        error,
        sifted,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSkr {
    pub config: String,
    pub skr: f64,
    pub dimension: u32,
    #[serde(serialize_with = "crate::stats::ser_car", deserialize_with = "crate::stats::de_car")]
    pub car: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSkr {
    pub users: (String, String),
    /// Duty-weighted mean over the configurations serving the link, so that
    /// `overall = temporary * served_share`.
    pub temporary_skr: f64,
    pub overall_skr: f64,
    /// Dimension of the configuration contributing the most key.
    pub dimension_used: u32,
    pub served_share: f64,
    pub per_config: Vec<ConfigSkr>,
    /// Set when no configuration serves the link.
    pub unserved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkrSummary {
    pub links: usize,
    pub mean_overall_skr: f64,
    pub min_overall_skr: f64,
    pub min_link: Option<(String, String)>,
    pub positive_links: usize,
    pub unserved: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkrReport {
    pub users: Vec<String>,
    pub links: Vec<LinkSkr>,
    pub summary: SkrSummary,
}

/// Key rates of every user pair under a time-shared schedule.
/// `per_config[k]` holds the link statistics of the pairs active in
/// schedule entry `k`.
pub fn network_skr(
    schedule: &Schedule,
    alloc: &UserAllocation,
    per_config: &[BTreeMap<UserPair, LinkStats>],
    params: &QkdParams,
    model: &dyn YieldModel,
) -> Result<SkrReport> {
    params.validate()?;
    if per_config.len() != schedule.len() {
        return Err(Error::InvalidSchedule(format!(
            "{} stats tables for {} schedule entries",
            per_config.len(),
            schedule.len()
        )));
    }
    let estimates: Vec<BTreeMap<UserPair, SkrEstimate>> = per_config
        .iter()
        .map(|m| m.iter().map(|(&p, s)| (p, skr_estimate(s, params, model))).collect())
        .collect();
    let rates: Vec<BTreeMap<UserPair, f64>> = estimates
        .iter()
        .map(|m| m.iter().map(|(&p, e)| (p, e.skr)).collect())
        .collect();
    let overall = timeshare_rates(schedule, &rates)?;
    let duty = schedule.duty_factors();

    let users = alloc.users();
    let n = users.len();
    let mut links = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let pair = UserPair(i, j);
            let mut per = Vec::new();
            let mut share = 0.0;
            let mut best: Option<(f64, u32)> = None;
            for (k, entry) in schedule.entries().iter().enumerate() {
                if let Some(e) = estimates[k].get(&pair) {
                    share += duty[k];
                    per.push(ConfigSkr {
                        config: entry.config.label.clone(),
                        skr: e.skr,
                        dimension: e.dimension,
                        car: per_config[k][&pair].car,
                    });
                    let contribution = e.skr * duty[k];
                    if best.is_none_or(|(c, _)| contribution > c) {
                        best = Some((contribution, e.dimension));
                    }
                }
            }
            let overall_skr = overall.get(&pair).copied().unwrap_or(0.0);
            links.push(LinkSkr {
                users: (users[i].clone(), users[j].clone()),
                temporary_skr: if share > 0.0 { overall_skr / share } else { 0.0 },
                overall_skr,
                dimension_used: best.map_or(0, |b| b.1),
                served_share: share,
                per_config: per,
                unserved: share == 0.0,
            });
        }
    }

    let min = links
        .iter()
        .min_by(|a, b| a.overall_skr.total_cmp(&b.overall_skr));
    let summary = SkrSummary {
        links: links.len(),
        mean_overall_skr: if links.is_empty() {
            0.0
        } else {
            links.iter().map(|l| l.overall_skr).sum::<f64>() / links.len() as f64
        },
        min_overall_skr: min.map_or(0.0, |l| l.overall_skr),
        min_link: min.map(|l| l.users.clone()),
        positive_links: links.iter().filter(|l| l.overall_skr > 0.0).count(),
        unserved: links.iter().filter(|l| l.unserved).map(|l| l.users.clone()).collect(),
    };
    Ok(SkrReport {
        users: users.to_vec(),
        links,
        summary,
    })
}

impl SkrReport {
    /// Overall SKR matrix, upper triangle only.
    pub fn to_csv(&self) -> String {
        let n = self.users.len();
        let mut s = String::from("user");
        for u in &self.users {
            let _ = write!(s, ",{u}");
        }
        s.push('\n');
        let mut k = 0;
        let mut rows = vec![vec![String::new(); n]; n];
        for (i, row) in rows.iter_mut().enumerate() {
            for cell in row.iter_mut().skip(i + 1) {
                *cell = format!("{}", self.links[k].overall_skr);
                k += 1;
            }
        }
        for (u, row) in self.users.iter().zip(rows) {
            s.push_str(u);
            for cell in row {
                let _ = write!(s, ",{cell}");
            }
            s.push('\n');
        }
        s
    }
}
