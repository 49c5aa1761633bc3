use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::market::{Problem, RoundRecord};

use super::stats::two_sided_p;
use super::MetricsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<Coefficient>,
    pub n: usize,
    pub residual_df: usize,
    pub sigma2: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    /// Number of clusters when standard errors are cluster-robust.
    pub clusters: Option<usize>,
}

impl OlsFit {
    pub fn coef(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Relative tolerance below which a column counts as linearly dependent.
const RANK_TOL: f64 = 1e-10;

struct Qr {
    /// Column-major n x k, Householder vectors below the diagonal.
    r: Vec<Vec<f64>>,
    qty: Vec<f64>,
}

/// Householder QR of `cols` applied to `y`. Fails naming every column that is
/// a linear combination of the columns before it.
fn householder(mut cols: Vec<Vec<f64>>, mut y: Vec<f64>, names: &[&str]) -> Result<Qr, MetricsError> {
    let n = y.len();
    let k = cols.len();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut dependent = Vec::new();
    // Next row to eliminate; only advances on independent columns.
    let mut p = 0;
    for j in 0..k {
        let tail: f64 = cols[j][p..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norms[j] == 0.0 || tail <= RANK_TOL * norms[j] {
            dependent.push(names[j].to_string());
            continue;
        }
        let alpha = if cols[j][p] > 0.0 { -tail } else { tail };
        let mut v: Vec<f64> = cols[j][p..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |target: &mut [f64]| {
            let dot: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
            let s = 2.0 * dot / vnorm2;
            for (t, vi) in target.iter_mut().zip(&v) {
                *t -= s * vi;
            }
        };
        for c in cols.iter_mut().skip(j) {
            reflect(&mut c[p..n]);
        }
        reflect(&mut y[p..n]);
        p += 1;
    }
    if !dependent.is_empty() {
        return Err(MetricsError::SingularDesign { columns: dependent });
    }
    Ok(Qr { r: cols, qty: y })
}

/// Inverse of the upper-triangular k x k block of `r`.
fn r_inverse(r: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    // inv[i][j], row-major.
    let mut inv = vec![vec![0.0; k]; k];
    for j in 0..k {
        inv[j][j] = 1.0 / r[j][j];
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|m| r[m][i] * inv[m][j]).sum();
            inv[i][j] = -s / r[i][i];
        }
    }
    inv
}

/// Ordinary least squares on row-major `x` with conventional standard
/// errors, or cluster-robust (CR1) ones when `clusters` is given.
pub fn ols(x: &[Vec<f64>], y: &[f64], names: &[&str], clusters: Option<&[u64]>) -> Result<OlsFit, MetricsError> {
    let n = y.len();
    let k = names.len();
    if x.len() != n || x.iter().any(|row| row.len() != k) {
        return Err(MetricsError::Degenerate("design matrix shape does not match".into()));
    }
    if n <= k {
        return Err(MetricsError::Degenerate(format!("{n} observations cannot identify {k} coefficients")));
    }
    let cols: Vec<Vec<f64>> = (0..k).map(|j| x.iter().map(|row| row[j]).collect()).collect();
    let qr = householder(cols, y.to_vec(), names)?;
    let rinv = r_inverse(&qr.r, k);
    let beta: Vec<f64> = (0..k).map(|i| (i..k).map(|j| rinv[i][j] * qr.qty[j]).sum()).collect();

    let residuals: Vec<f64> =
        x.iter().zip(y).map(|(row, yi)| yi - row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let residual_df = n - k;
    let sigma2 = rss / residual_df as f64;
    // (X'X)^-1 = R^-1 R^-T
    let xtx_inv: Vec<Vec<f64>> =
        (0..k).map(|i| (0..k).map(|j| (0..k).map(|m| rinv[i][m] * rinv[j][m]).sum()).collect()).collect();

    let (variances, df, n_clusters): (Vec<f64>, f64, Option<usize>) = match clusters {
        None => ((0..k).map(|i| sigma2 * xtx_inv[i][i]).collect(), residual_df as f64, None),
        Some(ids) => {
            if ids.len() != n {
                return Err(MetricsError::Degenerate("cluster ids do not match observations".into()));
            }
            let mut scores: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for ((row, e), id) in x.iter().zip(&residuals).zip(ids) {
                let s = scores.entry(*id).or_insert_with(|| vec![0.0; k]);
                for (sj, xj) in s.iter_mut().zip(row) {
                    *sj += xj * e;
                }
            }
            let g = scores.len();
            if g < 2 {
                return Err(MetricsError::Degenerate("clustered errors need at least 2 clusters".into()));
            }
            let mut meat = vec![vec![0.0; k]; k];
            for s in scores.values() {
                for a in 0..k {
                    for b in 0..k {
                        meat[a][b] += s[a] * s[b];
                    }
                }
            }
            let scale = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / residual_df as f64);
            let var = (0..k)
                .map(|i| {
                    let mut v = 0.0;
                    for a in 0..k {
                        for b in 0..k {
                            v += xtx_inv[i][a] * meat[a][b] * xtx_inv[b][i];
                        }
                    }
                    scale * v
                })
                .collect();
            (var, (g - 1) as f64, Some(g))
        }
    };

    let coefficients = names
        .iter()
        .zip(&beta)
        .zip(&variances)
        .map(|((name, &b), &v)| {
            let se = v.max(0.0).sqrt();
            let (t, p) = if se > 0.0 {
                let t = b / se;
                (t, two_sided_p(t, df))
            } else if b == 0.0 {
                (f64::NAN, 1.0)
            } else {
                (f64::INFINITY.copysign(b), 0.0)
            };
            Coefficient { name: name.to_string(), estimate: b, se, t, p, stars: stars(p).to_string() }
        })
        .collect();

    Ok(OlsFit {
        coefficients,
        n,
        residual_df,
        sigma2,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN },
        residuals,
        clusters: n_clusters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub expert_id: usize,
    pub simulation_id: u64,
    pub round: u32,
    /// 1 = no reputation.
    pub treat: u8,
    pub round_c: f64,
    pub outcome: f64,
}

/// Intended-fraud outcome for the expert panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Share of big-problem plan cells with LCT.
    UnderTreatment,
    /// Share of small-problem plan cells with HCT.
    OverTreatment,
    /// Share of all plan cells that overcharge.
    Overcharging,
}

impl std::str::FromStr for Outcome {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "under_treatment" | "undertreatment" => Ok(Outcome::UnderTreatment),
            "over_treatment" | "overtreatment" => Ok(Outcome::OverTreatment),
            "overcharging" | "over_charging" => Ok(Outcome::Overcharging),
            other => Err(format!("unknown outcome `{other}`")),
        }
    }
}

/// Midpoint-centred round index.
pub fn centered_round(round: u32, rounds: u32) -> f64 {
    round as f64 - (rounds as f64 + 1.0) / 2.0
}

/// One row per expert and round with a non-empty denominator. Simulation
/// ids combine the run id with the treatment so two cells never collide.
pub fn panel_rows(records: &[RoundRecord], outcome: Outcome) -> Vec<PanelRow> {
    let mut rows = Vec::new();
    for r in records {
        let treat = u8::from(!r.condition.reputation);
        for (expert, cells) in r.fraud_intended.iter().enumerate() {
            let (mut hit, mut den) = (0usize, 0usize);
            for (flags, problem) in cells.iter().zip(&r.problems) {
                let (counts, flagged) = match outcome {
                    Outcome::UnderTreatment => (*problem == Problem::Big, flags.under_treatment),
                    Outcome::OverTreatment => (*problem == Problem::Small, flags.over_treatment),
                    Outcome::Overcharging => (true, flags.over_charging),
                };
                if counts {
                    den += 1;
                    hit += flagged as usize;
                }
            }
            if den == 0 {
                continue;
            }
            rows.push(PanelRow {
                expert_id: expert,
                simulation_id: (u64::from(treat) << 32) | u64::from(r.run),
                round: r.round,
                treat,
                round_c: centered_round(r.round, r.condition.rounds),
                outcome: hit as f64 / den as f64,
            });
        }
    }
    rows
}

pub const INTERACTION_TERMS: [&str; 4] = ["const", "treat", "round_c", "treat_x_round_c"];

/// y = α + β1·treat + β2·round_c + β3·treat·round_c + ε. Clustered errors
/// group by (simulation, expert).
pub fn ols_interaction(panel: &[PanelRow], clustered: bool) -> Result<OlsFit, MetricsError> {
    let x: Vec<Vec<f64>> = panel
        .iter()
        .map(|r| {
            let t = f64::from(r.treat);
            vec![1.0, t, r.round_c, t * r.round_c]
        })
        .collect();
    let y: Vec<f64> = panel.iter().map(|r| r.outcome).collect();
    let ids: Vec<u64> = panel.iter().map(|r| r.simulation_id.wrapping_mul(64) + r.expert_id as u64).collect();
    ols(&x, &y, &INTERACTION_TERMS, clustered.then_some(ids.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(coef: [f64; 4], noise: impl Fn(usize) -> f64) -> Vec<PanelRow> {
        let mut rows = Vec::new();
        for i in 0..1920 {
            let treat = (i / 960) as u8;
            let round = (i % 16) as u32 + 1;
            let rc = centered_round(round, 16);
            let t = f64::from(treat);
            rows.push(PanelRow {
                expert_id: (i / 16) % 4,
                simulation_id: (i / 64) as u64,
                round,
                treat,
                round_c: rc,
                outcome: coef[0] + coef[1] * t + coef[2] * rc + coef[3] * t * rc + noise(i),
            });
        }
        rows
    }

    #[test]
    fn zero_noise_exact_recovery() {
        let fit = ols_interaction(&panel([0.5, 0.1, 0.01, -0.02], |_| 0.0), false).unwrap();
        for (c, want) in fit.coefficients.iter().zip([0.5, 0.1, 0.01, -0.02]) {
            assert!((c.estimate - want).abs() < 1e-12, "{c:?}");
            assert!(c.se < 1e-7);
        }
    }

    #[test]
    fn constant_treatment_is_singular() {
        let rows: Vec<_> = panel([0.5, 0.0, 0.01, 0.0], |i| (i % 7) as f64 * 0.01)
            .into_iter()
            .map(|r| PanelRow { treat: 0, ..r })
            .collect();
        match ols_interaction(&rows, false) {
            Err(MetricsError::SingularDesign { columns }) => assert_eq!(columns, vec!["treat", "treat_x_round_c"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn clustered_errors_are_reported() {
        let fit = ols_interaction(&panel([0.5, 0.1, 0.01, -0.02], |i| ((i * 37) % 11) as f64 * 0.01), true).unwrap();
        assert_eq!(fit.clusters, Some(120));
        assert!(fit.coefficients.iter().all(|c| c.se > 0.0));
    }

    #[test]
    fn textbook_line() {
        // slope = Sxy / Sxx = 19.8 / 10; slope se = sqrt(s2 / Sxx).
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64]).collect();
        let y = [1.1, 2.9, 5.1, 6.9, 9.0];
        let fit = ols(&x, &y, &["const", "x"], None).unwrap();
        assert!((fit.coefficients[1].estimate - 1.98).abs() < 1e-12);
        let s2 = fit.residuals.iter().map(|e| e * e).sum::<f64>() / 3.0;
        assert!((fit.coefficients[1].se - (s2 / 10.0).sqrt()).abs() < 1e-12);
    }
}
