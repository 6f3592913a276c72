//! One- and two-way ANOVA, F survival function, permutation post-hoc tests
//! and the two-sample Kolmogorov–Smirnov statistic.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::seed;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} groups, got {got}")]
    TooFewGroups { need: usize, got: usize },
    #[error("group {0} has fewer than two values")]
    SmallGroup(usize),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("unbalanced design ({0}); run one_way_anova per factor instead")]
    Unbalanced(String),
    #[error("interaction model needs at least two replicates per cell")]
    NoReplicates,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("n_perm = {0} is too small for a meaningful p-value (need >= 100)")]
    Precision(usize),
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
///
/// The iteration budget grows with the parameters; a fixed small cap loses
/// accuracy once the degrees of freedom reach the thousands.
pub fn inc_beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - inc_beta_reg(b, a, 1.0 - x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p();
    const TINY: f64 = 1e-300;
    let max_iter = 200 + (20.0 * a.max(b).sqrt()) as usize;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=max_iter {
        let m = m as f64;
        let m2 = 2.0 * m;
        for num in [
            m * (b - m) * x / ((a + m2 - 1.0) * (a + m2)),
            -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0)),
        ] {
            d = 1.0 + num * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + num / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
        }
        if (d * c - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (ln_front.exp() * h / a).clamp(0.0, 1.0)
}

/// `P(X > f)` for `X ~ F(df1, df2)`.
pub fn f_sf(f: f64, df1: f64, df2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    // argument written so the upper tail is computed directly, without
    // the cancellation of 1 - cdf
    let x = df2 / (df2 + df1 * f);
    inc_beta_reg(df2 / 2.0, df1 / 2.0, x)
}

/// p-values below this print as `< 1e-12`.
pub const P_FLOOR: f64 = 1e-12;

pub fn format_p(p: f64) -> String {
    if p < P_FLOOR {
        "p < 1e-12".to_string()
    } else if p < 1e-3 {
        format!("p = {p:.3e}")
    } else {
        format!("p = {p:.4}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaRow {
    pub source: String,
    pub ss: f64,
    pub df: usize,
    pub ms: f64,
    /// `None` when undefined (0/0 or zero degrees of freedom).
    pub f: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaTable {
    pub effects: Vec<AnovaRow>,
    pub residual: AnovaRow,
    pub total_ss: f64,
    pub total_df: usize,
    pub grand_mean: f64,
}

fn effect_row(source: &str, ss: f64, df: usize, ms_res: f64, df_res: usize) -> AnovaRow {
    let ms = if df > 0 { ss / df as f64 } else { f64::NAN };
    let f = if df == 0 || (ss <= 0.0 && ms_res <= 0.0) {
        None
    } else if ms_res <= 0.0 {
        Some(f64::INFINITY)
    } else {
        Some(ms / ms_res)
    };
    let p = f.map(|f| f_sf(f, df as f64, df_res as f64));
    AnovaRow {
        source: source.to_string(),
        ss,
        df,
        ms,
        f,
        p,
    }
}

impl AnovaTable {
    pub fn effect(&self, source: &str) -> Option<&AnovaRow> {
        self.effects.iter().find(|r| r.source == source)
    }

    /// Sum of effect and residual SS.
    pub fn explained_plus_residual(&self) -> f64 {
        self.effects.iter().map(|r| r.ss).sum::<f64>() + self.residual.ss
    }

    /// `F(df1,df2) = value, p ...` for one effect.
    pub fn report(&self, source: &str) -> Option<String> {
        let r = self.effect(source)?;
        Some(match (r.f, r.p) {
            (Some(f), Some(p)) => format!(
                "{}: F({},{}) = {}, {}",
                r.source,
                r.df,
                self.residual.df,
                if f.is_infinite() {
                    "inf".to_string()
                } else {
                    format!("{f:.2}")
                },
                format_p(p)
            ),
            _ => format!("{}: F({},{}) undefined", r.source, r.df, self.residual.df),
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["source", "SS", "df", "MS", "F", "p"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in self.effects.iter().chain(std::iter::once(&self.residual)) {
            w.write_record([
                r.source.clone(),
                format!("{:e}", r.ss),
                r.df.to_string(),
                if r.ms.is_nan() {
                    String::new()
                } else {
                    format!("{:e}", r.ms)
                },
                opt(r.f),
                opt(r.p),
            ])?;
        }
        w.write_record([
            "total".to_string(),
            format!("{:e}", self.total_ss),
            self.total_df.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for AnovaTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14} {:>14} {:>6} {:>14} {:>10} {:>12}",
            "source", "SS", "df", "MS", "F", "p"
        )?;
        for r in self.effects.iter().chain(std::iter::once(&self.residual)) {
            let fs = r.f.map(|x| format!("{x:.3}")).unwrap_or_default();
            let ps =
                r.p.map(|p| {
                    if p < P_FLOOR {
                        "< 1e-12".into()
                    } else {
                        format!("{p:.4e}")
                    }
                })
                .unwrap_or_default();
            let ms = if r.ms.is_nan() {
                String::new()
            } else {
                format!("{:.6e}", r.ms)
            };
            writeln!(
                f,
                "{:<14} {:>14.6e} {:>6} {:>14} {:>10} {:>12}",
                r.source, r.ss, r.df, ms, fs, ps
            )?;
        }
        writeln!(
            f,
            "{:<14} {:>14.6e} {:>6}",
            "total", self.total_ss, self.total_df
        )?;
        for r in &self.effects {
            if let Some(line) = self.report(&r.source) {
                writeln!(f, "{line}")?;
            }
        }
        Ok(())
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn check_finite<'a>(mut values: impl Iterator<Item = &'a f64>) -> Result<(), StatsError> {
    if values.any(|v| !v.is_finite()) {
        Err(StatsError::NonFinite)
    } else {
        Ok(())
    }
}

pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaTable, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups {
            need: 2,
            got: groups.len(),
        });
    }
    if let Some(i) = groups.iter().position(|g| g.len() < 2) {
        return Err(StatsError::SmallGroup(i));
    }
    check_finite(groups.iter().flatten())?;
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let total_ss: f64 = groups.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    let between: f64 = groups
        .iter()
        .map(|g| g.len() as f64 * (mean(g) - grand).powi(2))
        .sum();
    let within: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        })
        .sum();
    if total_ss == 0.0 {
        return Err(StatsError::Degenerate(
            "all values identical; F is 0/0".into(),
        ));
    }
    let df_b = groups.len() - 1;
    let df_w = n - groups.len();
    let ms_w = within / df_w as f64;
    Ok(AnovaTable {
        effects: vec![effect_row("group", between, df_b, ms_w, df_w)],
        residual: AnovaRow {
            source: "residual".into(),
            ss: within,
            df: df_w,
            ms: ms_w,
            f: None,
            p: None,
        },
        total_ss,
        total_df: n - 1,
        grand_mean: grand,
    })
}

/// Balanced two-factor layout; `cells[a][b]` holds the replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorialTable {
    pub factor_a: String,
    pub factor_b: String,
    pub a_levels: Vec<String>,
    pub b_levels: Vec<String>,
    pub cells: Vec<Vec<Vec<f64>>>,
}

impl FactorialTable {
    /// Build from `(a, b, value)` records, keeping first-seen level order.
    pub fn from_records<'a>(
        factor_a: &str,
        factor_b: &str,
        records: impl IntoIterator<Item = (&'a str, &'a str, f64)>,
    ) -> Self {
        let mut t = FactorialTable {
            factor_a: factor_a.into(),
            factor_b: factor_b.into(),
            a_levels: Vec::new(),
            b_levels: Vec::new(),
            cells: Vec::new(),
        };
        for (a, b, v) in records {
            let ai = match t.a_levels.iter().position(|l| l == a) {
                Some(i) => i,
                None => {
                    t.a_levels.push(a.into());
                    t.cells.push(vec![Vec::new(); t.b_levels.len()]);
                    t.a_levels.len() - 1
                }
            };
            let bi = match t.b_levels.iter().position(|l| l == b) {
                Some(i) => i,
                None => {
                    t.b_levels.push(b.into());
                    for row in &mut t.cells {
                        row.push(Vec::new());
                    }
                    t.b_levels.len() - 1
                }
            };
            t.cells[ai][bi].push(v);
        }
        t
    }

    /// Replicates per cell, if balanced.
    pub fn replicates(&self) -> Result<usize, StatsError> {
        let a = self.cells.len();
        if a == 0 || self.cells[0].is_empty() {
            return Err(StatsError::Unbalanced("empty table".into()));
        }
        let n = self.cells[0][0].len();
        for (i, row) in self.cells.iter().enumerate() {
            if row.len() != self.b_levels.len().max(self.cells[0].len()) {
                return Err(StatsError::Unbalanced(format!("row {i} has missing cells")));
            }
            for (j, c) in row.iter().enumerate() {
                if c.len() != n || n == 0 {
                    return Err(StatsError::Unbalanced(format!(
                        "cell ({i},{j}) has {} values, expected {n}",
                        c.len()
                    )));
                }
            }
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum TwoWayModel {
    /// Main effects only, interaction pooled into the residual.
    #[default]
    Additive,
    WithInteraction,
}

pub fn two_way_anova(table: &FactorialTable, model: TwoWayModel) -> Result<AnovaTable, StatsError> {
    let n = table.replicates()?;
    let a = table.cells.len();
    let b = table.cells[0].len();
    check_finite(table.cells.iter().flatten().flatten())?;
    if model == TwoWayModel::WithInteraction && n < 2 {
        return Err(StatsError::NoReplicates);
    }
    let total_n = a * b * n;
    let grand = table.cells.iter().flatten().flatten().sum::<f64>() / total_n as f64;
    let cell_mean: Vec<Vec<f64>> = table
        .cells
        .iter()
        .map(|row| row.iter().map(|c| mean(c)).collect())
        .collect();
    let a_mean: Vec<f64> = cell_mean.iter().map(|r| mean(r)).collect();
    let b_mean: Vec<f64> = (0..b)
        .map(|j| cell_mean.iter().map(|r| r[j]).sum::<f64>() / a as f64)
        .collect();

    let total_ss: f64 = table
        .cells
        .iter()
        .flatten()
        .flatten()
        .map(|x| (x - grand).powi(2))
        .sum();
    if total_ss == 0.0 {
        return Err(StatsError::Degenerate(
            "all values identical; F is 0/0".into(),
        ));
    }
    let ss_a = (b * n) as f64 * a_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = (a * n) as f64 * b_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    let mut ss_w = 0.0;
    for i in 0..a {
        for j in 0..b {
            let m = cell_mean[i][j];
            ss_ab += n as f64 * (m - a_mean[i] - b_mean[j] + grand).powi(2);
            ss_w += table.cells[i][j]
                .iter()
                .map(|x| (x - m).powi(2))
                .sum::<f64>();
        }
    }
    let (df_a, df_b, df_ab) = (a - 1, b - 1, (a - 1) * (b - 1));
    let df_w = a * b * (n - 1);
    let (res_ss, res_df) = match model {
        TwoWayModel::Additive => (ss_ab + ss_w, df_ab + df_w),
        TwoWayModel::WithInteraction => (ss_w, df_w),
    };
    if res_df == 0 {
        return Err(StatsError::Degenerate(
            "no residual degrees of freedom".into(),
        ));
    }
    let ms_res = res_ss / res_df as f64;
    let mut effects = vec![
        effect_row(&table.factor_a, ss_a, df_a, ms_res, res_df),
        effect_row(&table.factor_b, ss_b, df_b, ms_res, res_df),
    ];
    if model == TwoWayModel::WithInteraction {
        let name = format!("{}:{}", table.factor_a, table.factor_b);
        effects.push(effect_row(&name, ss_ab, df_ab, ms_res, res_df));
    }
    Ok(AnovaTable {
        effects,
        residual: AnovaRow {
            source: "residual".into(),
            ss: res_ss,
            df: res_df,
            ms: ms_res,
            f: None,
            p: None,
        },
        total_ss,
        total_df: total_n - 1,
        grand_mean: grand,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTest {
    pub i: usize,
    pub j: usize,
    pub mean_diff: f64,
    pub p_raw: f64,
    /// Bonferroni over all pairs.
    pub p_adj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pairwise {
    pub n_groups: usize,
    pub n_perm: usize,
    pub pairs: Vec<PairTest>,
}

impl Pairwise {
    /// Symmetric matrix of adjusted p-values, 1 on the diagonal.
    pub fn adjusted_matrix(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![1.0; self.n_groups]; self.n_groups];
        for p in &self.pairs {
            m[p.i][p.j] = p.p_adj;
            m[p.j][p.i] = p.p_adj;
        }
        m
    }
}

/// Two-sided permutation test on the difference of means for every pair,
/// `p = (count + 1) / (n_perm + 1)`.
pub fn permutation_pairwise(
    groups: &[Vec<f64>],
    n_perm: usize,
    seed: u64,
) -> Result<Pairwise, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups {
            need: 2,
            got: groups.len(),
        });
    }
    if n_perm < 100 {
        return Err(StatsError::Precision(n_perm));
    }
    if let Some(i) = groups.iter().position(|g| g.is_empty()) {
        return Err(StatsError::SmallGroup(i));
    }
    check_finite(groups.iter().flatten())?;
    let m = groups.len() * (groups.len() - 1) / 2;
    let mut pairs = Vec::with_capacity(m);
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (x, y) = (&groups[i], &groups[j]);
            let observed = mean(x) - mean(y);
            let mut pooled: Vec<f64> = x.iter().chain(y).copied().collect();
            let total: f64 = pooled.iter().sum();
            let nx = x.len();
            let ny = y.len() as f64;
            let tol = 1e-12 * observed.abs().max(1.0);
            let mut rng = seed::rng(seed, &[seed::tag("perm"), i as u64, j as u64]);
            let mut count = 0usize;
            for _ in 0..n_perm {
                pooled.shuffle(&mut rng);
                let sx: f64 = pooled[..nx].iter().sum();
                let d = sx / nx as f64 - (total - sx) / ny;
                if d.abs() >= observed.abs() - tol {
                    count += 1;
                }
            }
            let p_raw = (count + 1) as f64 / (n_perm + 1) as f64;
            pairs.push(PairTest {
                i,
                j,
                mean_diff: observed,
                p_raw,
                p_adj: (p_raw * m as f64).min(1.0),
            });
        }
    }
    Ok(Pairwise {
        n_groups: groups.len(),
        n_perm,
        pairs,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}
