//! Group-level tests on per-scan CMB counts: paired Wilcoxon signed-rank,
//! Fisher's exact test on a count criterion, and the size-filter sweep.

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_factorial;

use crate::detect::{filter_by_size, DetectedCMB, DEFAULT_MIN_VOLUME_MM3};
use crate::error::{Error, Result};

/// Largest effective sample size evaluated with the exact null distribution.
pub const EXACT_WILCOXON_MAX_N: usize = 20;
pub const DEFAULT_ILLNESS_THRESHOLD: usize = 5;
/// Relative slack when comparing table probabilities in the two-sided Fisher test.
const FISHER_REL_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    Greater,
    Less,
}

impl std::str::FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_sided" | "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            other => Err(Error::invalid(format!("unknown alternative {other:?}"))),
        }
    }
}

/// Treatment of zero paired differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMethod {
    /// Discard zeros before ranking.
    #[default]
    Wilcox,
    /// Rank zeros with the rest, then discard them.
    Pratt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: WilcoxonMethod,
}

/// Paired counts, one pair per matched scan pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedCounts {
    pub pairs: Vec<(u64, u64)>,
}

impl PairedCounts {
    pub fn differences(&self) -> Vec<f64> {
        self.pairs.iter().map(|&(a, b)| a as f64 - b as f64).collect()
    }
}

/// Average ranks (1-based) of the values, ties sharing their mean rank.
/// Returned as doubled ranks so that tied averages stay integral.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share the average (start+1+end)/2
        let doubled = (start + 1 + end) as u64;
        for &idx in &order[start..end] {
            ranks[idx] = doubled;
        }
        start = end;
    }
    ranks
}

/// Wilcoxon signed-rank test on paired differences.
pub fn wilcoxon_signed_rank_differences(
    diffs: &[f64],
    alternative: Alternative,
    zero_method: ZeroMethod,
) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("differences must be finite"));
    }
    let (abs, signs): (Vec<f64>, Vec<f64>) = match zero_method {
        ZeroMethod::Wilcox => diffs
            .iter()
            .filter(|&&d| d != 0.0)
            .map(|&d| (d.abs(), d.signum()))
            .unzip(),
        ZeroMethod::Pratt => diffs
            .iter()
            .map(|&d| (d.abs(), if d == 0.0 { 0.0 } else { d.signum() }))
            .unzip(),
    };
    let ranks = doubled_ranks(&abs);
    let kept: Vec<(u64, f64)> = ranks.into_iter().zip(signs).filter(|&(_, s)| s != 0.0).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateTest("all paired differences are zero".to_string()));
    }
    let n = kept.len();
    let w_doubled: u64 = kept.iter().filter(|&&(_, s)| s > 0.0).map(|&(r, _)| r).sum();
    let statistic = w_doubled as f64 / 2.0;
    let rank_list: Vec<u64> = kept.iter().map(|&(r, _)| r).collect();

    if n <= EXACT_WILCOXON_MAX_N {
        let (ge, le) = exact_tails(&rank_list, w_doubled);
        let p = match alternative {
            Alternative::Greater => ge,
            Alternative::Less => le,
            Alternative::TwoSided => (2.0 * ge.min(le)).min(1.0),
        };
        return Ok(WilcoxonResult {
            statistic,
            p_value: p,
            n_effective: n,
            method: WilcoxonMethod::Exact,
        });
    }

    // normal approximation; the variance sum of squared ranks carries the tie correction
    let mean = rank_list.iter().map(|&r| r as f64 / 2.0).sum::<f64>() / 2.0;
    let var = rank_list.iter().map(|&r| (r as f64 / 2.0).powi(2)).sum::<f64>() / 4.0;
    let sd = var.sqrt();
    let normal = Normal::standard();
    let dev = statistic - mean;
    let p = match alternative {
        Alternative::Greater => 1.0 - normal.cdf((dev - 0.5) / sd),
        Alternative::Less => normal.cdf((dev + 0.5) / sd),
        Alternative::TwoSided => {
            let z = (dev.abs() - 0.5).max(0.0) / sd;
            (2.0 * (1.0 - normal.cdf(z))).min(1.0)
        }
    };
    Ok(WilcoxonResult {
        statistic,
        p_value: p,
        n_effective: n,
        method: WilcoxonMethod::Normal,
    })
}

/// Exact upper and lower tail probabilities of the positive-rank sum, from the
/// distribution of sums over all 2ⁿ sign assignments.
fn exact_tails(doubled_ranks: &[u64], observed: u64) -> (f64, f64) {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let denom = 2f64.powi(doubled_ranks.len() as i32);
    let obs = observed as usize;
    let ge: f64 = counts[obs..].iter().sum();
    let le: f64 = counts[..=obs].iter().sum();
    (ge / denom, le / denom)
}

pub fn wilcoxon_signed_rank(pairs: &PairedCounts, alternative: Alternative) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_differences(&pairs.differences(), alternative, ZeroMethod::Wilcox)
}

/// 2×2 table; rows are groups, columns are (meets criterion, does not).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl Contingency2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn has_zero_margin(&self) -> bool {
        self.a + self.b == 0 || self.c + self.d == 0 || self.a + self.c == 0 || self.b + self.d == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    pub p_value: f64,
    /// A margin was zero; the table carries no information and p is 1.
    pub degenerate: bool,
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Fisher's exact test from the hypergeometric distribution of the top-left cell.
pub fn fisher_exact_2x2(t: &Contingency2x2, alternative: Alternative) -> FisherResult {
    if t.has_zero_margin() {
        return FisherResult {
            p_value: 1.0,
            degenerate: true,
        };
    }
    let row1 = t.a + t.b;
    let row2 = t.c + t.d;
    let col1 = t.a + t.c;
    let n = row1 + row2;
    let lo = col1.saturating_sub(row2);
    let hi = row1.min(col1);
    let ln_total = ln_choose(n, col1);
    let pmf = |x: u64| (ln_choose(row1, x) + ln_choose(row2, col1 - x) - ln_total).exp();
    let p = match alternative {
        Alternative::Greater => (t.a..=hi).map(pmf).sum::<f64>(),
        Alternative::Less => (lo..=t.a).map(pmf).sum::<f64>(),
        Alternative::TwoSided => {
            let observed = pmf(t.a) * (1.0 + FISHER_REL_TOL);
            (lo..=hi).map(pmf).filter(|&p| p <= observed).sum::<f64>()
        }
    };
    FisherResult {
        p_value: p.min(1.0),
        degenerate: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupConfig {
    pub size_filter_mm3: f64,
    /// A scan meets the illness criterion with at least this many CMBs.
    pub illness_threshold: usize,
    pub wilcoxon_alternative: Alternative,
    pub fisher_alternative: Alternative,
    pub zero_method: ZeroMethod,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self {
            size_filter_mm3: DEFAULT_MIN_VOLUME_MM3,
            illness_threshold: DEFAULT_ILLNESS_THRESHOLD,
            wilcoxon_alternative: Alternative::TwoSided,
            fisher_alternative: Alternative::TwoSided,
            zero_method: ZeroMethod::Wilcox,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WilcoxonOutcome {
    Computed(WilcoxonResult),
    Skipped { reason: String },
}

impl WilcoxonOutcome {
    pub fn result(&self) -> Option<&WilcoxonResult> {
        match self {
            WilcoxonOutcome::Computed(r) => Some(r),
            WilcoxonOutcome::Skipped { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub size_filter_mm3: f64,
    pub illness_threshold: usize,
    pub counts_a: Vec<usize>,
    pub counts_b: Vec<usize>,
    pub mean_a: f64,
    pub mean_b: f64,
    pub wilcoxon: WilcoxonOutcome,
    pub contingency: Contingency2x2,
    pub fisher: FisherResult,
}

fn counts(scans: &[Vec<DetectedCMB>], min_volume_mm3: f64) -> Vec<usize> {
    scans
        .iter()
        .map(|dets| filter_by_size(dets, min_volume_mm3).len())
        .collect()
}

fn mean(v: &[usize]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<usize>() as f64 / v.len() as f64
    }
}

fn illness_table(a: &[usize], b: &[usize], threshold: usize) -> Contingency2x2 {
    let ill = |v: &[usize]| v.iter().filter(|&&c| c >= threshold).count() as u64;
    let (ia, ib) = (ill(a), ill(b));
    Contingency2x2::new(ia, a.len() as u64 - ia, ib, b.len() as u64 - ib)
}

/// Size-filtered CMB counts per scan, their paired comparison and the 2×2
/// illness-criterion test. Scans are paired by position.
pub fn compare_groups(
    group_a: &[Vec<DetectedCMB>],
    group_b: &[Vec<DetectedCMB>],
    cfg: &GroupConfig,
) -> GroupComparison {
    let counts_a = counts(group_a, cfg.size_filter_mm3);
    let counts_b = counts(group_b, cfg.size_filter_mm3);
    let wilcoxon = if counts_a.len() != counts_b.len() {
        let reason = format!(
            "groups have {} and {} scans; the paired test needs matched pairs",
            counts_a.len(),
            counts_b.len()
        );
        warn!("skipping Wilcoxon signed-rank test: {reason}");
        WilcoxonOutcome::Skipped { reason }
    } else {
        let diffs: Vec<f64> = counts_a
            .iter()
            .zip(&counts_b)
            .map(|(&a, &b)| a as f64 - b as f64)
            .collect();
        match wilcoxon_signed_rank_differences(&diffs, cfg.wilcoxon_alternative, cfg.zero_method) {
            Ok(r) => WilcoxonOutcome::Computed(r),
            Err(e) => {
                warn!("Wilcoxon signed-rank test not computed: {e}");
                WilcoxonOutcome::Skipped { reason: e.to_string() }
            }
        }
    };
    let contingency = illness_table(&counts_a, &counts_b, cfg.illness_threshold);
    let fisher = fisher_exact_2x2(&contingency, cfg.fisher_alternative);
    GroupComparison {
        size_filter_mm3: cfg.size_filter_mm3,
        illness_threshold: cfg.illness_threshold,
        mean_a: mean(&counts_a),
        mean_b: mean(&counts_b),
        counts_a,
        counts_b,
        wilcoxon,
        contingency,
        fisher,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold_mm3: f64,
    pub total_a: usize,
    pub total_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub contingency: Contingency2x2,
    pub fisher_p: f64,
    pub degenerate: bool,
}

/// Re-counts both groups at each size threshold and tests the illness criterion.
pub fn size_sweep(
    group_a: &[Vec<DetectedCMB>],
    group_b: &[Vec<DetectedCMB>],
    thresholds: &[f64],
    illness_threshold: usize,
    alternative: Alternative,
) -> Result<Vec<SweepRow>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("sweep thresholds must be sorted ascending"));
    }
    if thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::invalid("sweep thresholds must be non-negative numbers"));
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let ca = counts(group_a, t);
            let cb = counts(group_b, t);
            let contingency = illness_table(&ca, &cb, illness_threshold);
            let fisher = fisher_exact_2x2(&contingency, alternative);
            SweepRow {
                threshold_mm3: t,
                total_a: ca.iter().sum(),
                total_b: cb.iter().sum(),
                mean_a: mean(&ca),
                mean_b: mean(&cb),
                contingency,
                fisher_p: fisher.p_value,
                degenerate: fisher.degenerate,
            }
        })
        .collect())
}

/// Whitespace-separated table, one line per threshold, for external plotting.
pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("# threshold_mm3 mean_a mean_b total_a total_b ill_a ill_b fisher_p\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.3} {:.4} {:.4} {} {} {} {} {:.6e}",
            r.threshold_mm3, r.mean_a, r.mean_b, r.total_a, r.total_b, r.contingency.a, r.contingency.c, r.fisher_p
        );
    }
    out
}
