//! Error-plane sweeps, quarter summaries and one-sided Mann–Whitney tests.

use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compliance::ComplianceParams;
use crate::env::{run_episode, sample_episode, EnvConfig, EpisodeLimits, ErrorRanges, Observation};
use crate::error::{invalid, Error, Result};
use crate::ppo::PolicyNet;

/// Anything that chooses compliance from an observation.
pub trait CompliancePolicy: Sync {
    fn params(&self, obs: &Observation) -> Result<ComplianceParams>;
}

impl CompliancePolicy for PolicyNet {
    fn params(&self, obs: &Observation) -> Result<ComplianceParams> {
        self.act(obs)
    }
}

impl CompliancePolicy for ComplianceParams {
    fn params(&self, _obs: &Observation) -> Result<ComplianceParams> {
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub linear_mm: Vec<f64>,
    pub angular_deg: Vec<f64>,
    pub n_test: usize,
}

fn strictly_increasing(v: &[f64]) -> bool {
    !v.is_empty() && v.windows(2).all(|w| w[0] < w[1])
}

impl SweepGrid {
    pub fn new(linear_mm: Vec<f64>, angular_deg: Vec<f64>, n_test: usize) -> Result<Self> {
        let g = Self {
            linear_mm,
            angular_deg,
            n_test,
        };
        g.validate()?;
        Ok(g)
    }

    /// `n_lin × n_ang` cells evenly spaced up to the given maxima, starting
    /// at zero.
    pub fn uniform(max_linear_mm: f64, n_lin: usize, max_angular_deg: f64, n_ang: usize, n_test: usize) -> Result<Self> {
        let axis = |max: f64, n: usize| -> Vec<f64> {
            if n == 1 {
                vec![0.0]
            } else {
                (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect()
            }
        };
        Self::new(axis(max_linear_mm, n_lin), axis(max_angular_deg, n_ang), n_test)
    }

    pub fn validate(&self) -> Result<()> {
        if !strictly_increasing(&self.linear_mm) || !strictly_increasing(&self.angular_deg) {
            return Err(invalid("grid", "axes must be non-empty and strictly increasing"));
        }
        if self.n_test == 0 {
            return Err(invalid("n_test", "must be at least 1"));
        }
        for &l in &self.linear_mm {
            for &a in &self.angular_deg {
                ErrorRanges::new(l, a)?;
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.linear_mm.len() * self.angular_deg.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub linear_mm: f64,
    pub angular_deg: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean completion time over successful trials.
    pub mean_time_s: Option<f64>,
    pub mean_reward: f64,
}

impl CellStats {
    pub fn from_outcomes(linear_mm: f64, angular_deg: f64, outcomes: &[(bool, Option<f64>, f64)]) -> Self {
        let trials = outcomes.len();
        let successes = outcomes.iter().filter(|o| o.0).count();
        let times: Vec<f64> = outcomes.iter().filter(|o| o.0).filter_map(|o| o.1).collect();
        Self {
            linear_mm,
            angular_deg,
            trials,
            successes,
            success_rate: if trials > 0 { successes as f64 / trials as f64 } else { 0.0 },
            mean_time_s: if times.is_empty() {
                None
            } else {
                Some(times.iter().sum::<f64>() / times.len() as f64)
            },
            mean_reward: outcomes.iter().map(|o| o.2).sum::<f64>() / trials.max(1) as f64,
        }
    }
}

/// Cells indexed `[linear][angular]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub cells: Vec<Vec<CellStats>>,
}

/// Runs `n_test` episodes in every cell. Cell `k` (row-major) draws its
/// episodes from its own stream of a generator seeded with `seed`.
pub fn sweep(
    policy: &dyn CompliancePolicy,
    env: &EnvConfig,
    grid: &SweepGrid,
    limits: &EpisodeLimits,
    seed: u64,
) -> Result<SweepResult> {
    grid.validate()?;
    let mut jobs = Vec::with_capacity(grid.cell_count() * grid.n_test);
    for (i, &lin) in grid.linear_mm.iter().enumerate() {
        for (j, &ang) in grid.angular_deg.iter().enumerate() {
            let cell_env = env.with_ranges(ErrorRanges::new(lin, ang)?);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((i * grid.angular_deg.len() + j) as u64);
            for _ in 0..grid.n_test {
                let spec = sample_episode(&cell_env, &mut rng)?;
                let params = policy.params(&spec.observation())?;
                jobs.push((i, j, spec, params));
            }
        }
    }
    let outcomes: Vec<(bool, Option<f64>, f64)> = jobs
        .par_iter()
        .map(|(_, _, spec, params)| match run_episode(env, spec, params, limits) {
            Ok(r) => (r.success, r.time_to_complete_s, r.reward),
            Err(_) => (false, None, 0.0),
        })
        .collect();
    let per_cell = grid.n_test;
    let cells = grid
        .linear_mm
        .iter()
        .enumerate()
        .map(|(i, &lin)| {
            grid.angular_deg
                .iter()
                .enumerate()
                .map(|(j, &ang)| {
                    let k = (i * grid.angular_deg.len() + j) * per_cell;
                    CellStats::from_outcomes(lin, ang, &outcomes[k..k + per_cell])
                })
                .collect()
        })
        .collect();
    Ok(SweepResult {
        grid: grid.clone(),
        cells,
    })
}

pub fn write_cells_csv<W: Write>(result: &SweepResult, mut out: W) -> Result<()> {
    writeln!(out, "linear_mm,angular_deg,trials,successes,success_rate,mean_time_s,mean_reward")?;
    for row in &result.cells {
        for c in row {
            let time = c.mean_time_s.map(|t| format!("{t:.4}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{:.4},{},{:.1}",
                c.linear_mm, c.angular_deg, c.trials, c.successes, c.success_rate, time, c.mean_reward
            )?;
        }
    }
    Ok(())
}

/// Quarter of the error plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quarter {
    /// Low linear, low angular.
    Q1,
    /// Low linear, high angular.
    Q2,
    /// High linear, low angular.
    Q3,
    /// High linear, high angular.
    Q4,
}

impl Quarter {
    pub const ALL: [Quarter; 4] = [Quarter::Q1, Quarter::Q2, Quarter::Q3, Quarter::Q4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Quarter::Q1 => "Q1-bottom left",
            Quarter::Q2 => "Q2-upper left",
            Quarter::Q3 => "Q3-bottom right",
            Quarter::Q4 => "Q4-upper right",
        }
    }
}

/// Whether each axis value lies in the upper half; values exactly at the
/// midpoint of the axis count as lower.
fn upper_half(axis: &[f64]) -> Vec<bool> {
    let mid = 0.5 * (axis[0] + axis[axis.len() - 1]);
    axis.iter().map(|&v| v > mid).collect()
}

/// Splits the cells at the axis midpoints; returns `[linear, angular]`
/// indices per quarter.
pub fn quarter(result: &SweepResult) -> [Vec<(usize, usize)>; 4] {
    let hi_lin = upper_half(&result.grid.linear_mm);
    let hi_ang = upper_half(&result.grid.angular_deg);
    let mut out: [Vec<(usize, usize)>; 4] = Default::default();
    for (i, &hl) in hi_lin.iter().enumerate() {
        for (j, &ha) in hi_ang.iter().enumerate() {
            let q = match (hl, ha) {
                (false, false) => Quarter::Q1,
                (false, true) => Quarter::Q2,
                (true, false) => Quarter::Q3,
                (true, true) => Quarter::Q4,
            };
            out[q.index()].push((i, j));
        }
    }
    out
}

/// Result of a one-sided Mann–Whitney test of "a exceeds b".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub u_a: f64,
    pub u_b: f64,
    pub p_value: f64,
    pub reject: bool,
    pub exact: bool,
}

/// Midranks of the pooled sample, in input order, and the tie group sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// `U_a = Σ ranks(a) − n_a(n_a+1)/2` with midranks.
pub fn u_statistic(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, _) = midranks(&pooled);
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let ra: f64 = ranks[..a.len()].iter().sum();
    let u_a = ra - na * (na + 1.0) / 2.0;
    (u_a, na * nb - u_a)
}

/// Largest `n²·n_a²` for which the exact null distribution is computed.
pub const EXACT_WORK_LIMIT: f64 = 2e8;

/// Exact `P(U_a ≥ u)` over all equally likely splits of the pooled sample,
/// counting subsets by doubled midrank sum.
fn exact_upper_tail(ranks: &[f64], na: usize, u_a: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = {
        let mut d = doubled.clone();
        d.sort_unstable_by(|x, y| y.cmp(x));
        d[..na].iter().sum()
    };
    let mut ways = vec![vec![0.0f64; max_sum + 1]; na + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=na).rev() {
            let (lo, hi) = ways.split_at_mut(k);
            let prev = &lo[k - 1];
            let cur = &mut hi[0];
            for s in (r..=max_sum).rev() {
                if prev[s - r] != 0.0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    let nf = na as f64;
    let threshold = 2.0 * (u_a + nf * (nf + 1.0) / 2.0);
    let total: f64 = ways[na].iter().sum();
    let tail: f64 = ways[na]
        .iter()
        .enumerate()
        .filter(|(s, _)| *s as f64 >= threshold - 1e-9)
        .map(|(_, w)| w)
        .sum();
    tail / total
}

/// Normal approximation of `P(U_a ≥ u)` with tie-corrected variance and a
/// continuity correction.
fn normal_upper_tail(na: usize, nb: usize, ties: &[usize], u_a: f64) -> f64 {
    let (naf, nbf) = (na as f64, nb as f64);
    let n = naf + nbf;
    let tie_sum: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let var = naf * nbf / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    if var <= 0.0 {
        return 0.5;
    }
    let z = (u_a - naf * nbf / 2.0 - 0.5) / var.sqrt();
    standard_normal_sf(z)
}

/// Upper tail of the standard normal.
pub fn standard_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Complementary error function, relative accuracy about 1e-7.
fn erfc(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.5 * x.abs());
    let poly = -x * x - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98 + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// One-sided test of the alternative that `a` is stochastically larger
/// than `b`.
pub fn mann_whitney_one_sided(a: &[f64], b: &[f64], alpha: f64) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("sample", "both samples must be non-empty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Mann–Whitney sample"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let (u_a, u_b) = u_statistic(a, b);
    let (na, nb) = (a.len(), b.len());
    assert!(
        (u_a + u_b - (na * nb) as f64).abs() < 1e-9,
        "U statistics must sum to n_a·n_b"
    );
    if ties.len() == 1 {
        return Ok(MannWhitney {
            u_a,
            u_b,
            p_value: 0.5,
            reject: false,
            exact: false,
        });
    }
    let n = (na + nb) as f64;
    let exact = n * n * (na * na) as f64 <= EXACT_WORK_LIMIT;
    let p_value = if exact {
        exact_upper_tail(&ranks, na, u_a)
    } else {
        normal_upper_tail(na, nb, &ties, u_a)
    }
    .clamp(0.0, 1.0);
    Ok(MannWhitney {
        u_a,
        u_b,
        p_value,
        reject: p_value < alpha,
        exact,
    })
}

/// Normal-approximation variant, exposed for comparison with the exact
/// test.
pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("sample", "both samples must be non-empty"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (_, ties) = midranks(&pooled);
    let (u_a, _) = u_statistic(a, b);
    Ok(normal_upper_tail(a.len(), b.len(), &ties, u_a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterStats {
    pub quarter: Quarter,
    pub cells: usize,
    /// Success rates in percent.
    pub success: Option<Spread>,
    pub time_s: Option<Spread>,
    pub success_values: Vec<f64>,
    pub time_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    /// The quarter hypothesised to be better.
    pub better: Quarter,
    pub worse: Quarter,
    pub result: Option<MannWhitney>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterSummary {
    pub quarters: Vec<QuarterStats>,
    /// `better` has higher success rates.
    pub success_tests: Vec<PairTest>,
    /// `better` has shorter completion times.
    pub time_tests: Vec<PairTest>,
    pub alpha: f64,
}

impl QuarterSummary {
    pub fn stats(&self, q: Quarter) -> &QuarterStats {
        &self.quarters[q.index()]
    }

    fn means(&self, pick: impl Fn(&QuarterStats) -> Option<Spread>) -> Vec<Option<f64>> {
        self.quarters.iter().map(|q| pick(q).map(|s| s.mean)).collect()
    }

    /// Mean success is non-increasing from Q1 to Q4.
    pub fn success_ordered(&self) -> bool {
        let m = self.means(|q| q.success);
        m.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if a >= b))
    }

    /// Mean completion time is non-decreasing from Q1 to Q4.
    pub fn time_ordered(&self) -> bool {
        let m = self.means(|q| q.time_s);
        m.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if a <= b))
    }

    pub fn success_test(&self, better: Quarter, worse: Quarter) -> Option<&MannWhitney> {
        self.success_tests
            .iter()
            .find(|t| t.better == better && t.worse == worse)
            .and_then(|t| t.result.as_ref())
    }

    /// Orderings hold and Q1 beats Q4 significantly in success rate.
    pub fn hypotheses_confirmed(&self) -> bool {
        self.success_ordered()
            && self.time_ordered()
            && self.success_test(Quarter::Q1, Quarter::Q4).is_some_and(|t| t.reject)
    }

    /// Plain-text tables of success and time per quarter with test
    /// verdicts.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let fmt = |v: Option<Spread>, prec: usize| match v {
            Some(sp) => format!("{:>8.*} {:>8.*} {:>8.*}", prec, sp.mean, prec, sp.min, prec, sp.max),
            None => format!("{:>8} {:>8} {:>8}", "-", "-", "-"),
        };
        let _ = writeln!(s, "Success rate [%]");
        let _ = writeln!(s, "{:<16} {:>5} {:>8} {:>8} {:>8}", "quarter", "cells", "mean", "min", "max");
        for q in &self.quarters {
            let _ = writeln!(s, "{:<16} {:>5} {}", q.quarter.label(), q.cells, fmt(q.success, 2));
        }
        let _ = writeln!(s, "\nMean time to complete [s]");
        let _ = writeln!(s, "{:<16} {:>5} {:>8} {:>8} {:>8}", "quarter", "cells", "mean", "min", "max");
        for q in &self.quarters {
            let _ = writeln!(s, "{:<16} {:>5} {}", q.quarter.label(), q.cells, fmt(q.time_s, 2));
        }
        let mut tests = |title: &str, rel: &str, list: &[PairTest]| {
            let _ = writeln!(s, "\n{title} (one-sided Mann–Whitney, alpha = {})", self.alpha);
            for t in list {
                match &t.result {
                    Some(r) => {
                        let _ = writeln!(
                            s,
                            "{:?} {rel} {:?}: U = {:.1}, p = {:.4} {}",
                            t.better,
                            t.worse,
                            r.u_a,
                            r.p_value,
                            if r.reject { "significant" } else { "not significant" }
                        );
                    }
                    None => {
                        let _ = writeln!(s, "{:?} {rel} {:?}: insufficient data", t.better, t.worse);
                    }
                }
            }
        };
        tests("Success", ">", &self.success_tests);
        tests("Time", "<", &self.time_tests);
        s
    }
}

/// Per-quarter statistics and all pairwise one-sided tests in the order
/// Q1 > Q2 > Q3 > Q4 for success and Q1 < … < Q4 for time.
pub fn summarize(result: &SweepResult, quarters: &[Vec<(usize, usize)>; 4], alpha: f64) -> Result<QuarterSummary> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", "must lie in (0, 1)"));
    }
    let stats: Vec<QuarterStats> = Quarter::ALL
        .iter()
        .map(|&q| {
            let idx = &quarters[q.index()];
            let success_values: Vec<f64> = idx.iter().map(|&(i, j)| 100.0 * result.cells[i][j].success_rate).collect();
            let time_values: Vec<f64> = idx.iter().filter_map(|&(i, j)| result.cells[i][j].mean_time_s).collect();
            QuarterStats {
                quarter: q,
                cells: idx.len(),
                success: Spread::of(&success_values),
                time_s: Spread::of(&time_values),
                success_values,
                time_values,
            }
        })
        .collect();
    let mut success_tests = Vec::new();
    let mut time_tests = Vec::new();
    for a in 0..4 {
        for b in a + 1..4 {
            let (qa, qb) = (&stats[a], &stats[b]);
            let test = |x: &[f64], y: &[f64]| {
                if x.is_empty() || y.is_empty() {
                    Ok(None)
                } else {
                    mann_whitney_one_sided(x, y, alpha).map(Some)
                }
            };
            success_tests.push(PairTest {
                better: qa.quarter,
                worse: qb.quarter,
                result: test(&qa.success_values, &qb.success_values)?,
            });
            time_tests.push(PairTest {
                better: qa.quarter,
                worse: qb.quarter,
                result: test(&qb.time_values, &qa.time_values)?,
            });
        }
    }
    Ok(QuarterSummary {
        quarters: stats,
        success_tests,
        time_tests,
        alpha,
    })
}
