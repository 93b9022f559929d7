//! OLS with classical standard errors, the interaction-model design matrices
//! built from account summaries, and the core/periphery slope sweep.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{core_members, FollowerGraph};
use crate::slantstats::{incoming_moments, AccountSummary, SlantMoments};
use crate::AccountId;

/// Relative tolerance on the orthogonal residual of each design column.
pub const RANK_TOL: f64 = 1e-10;

/// Covariates available to the interaction models. Every covariate other
/// than incoming slant is centered and scaled to unit variance before use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Covariate {
    /// `ln(in_count)`
    LnInCount,
    /// `ln(out_count)`
    LnOutCount,
    InQuality,
    InSd,
    /// `ln(followers + 2)`
    LnFollowers,
    /// `ln(followers + 2) / ln(followees + 2)`
    FollowerRatio,
    Clustering,
}

impl Covariate {
    pub fn name(self) -> &'static str {
        match self {
            Covariate::LnInCount => "ln_in_count",
            Covariate::LnOutCount => "ln_out_count",
            Covariate::InQuality => "in_quality",
            Covariate::InSd => "in_sd",
            Covariate::LnFollowers => "ln_followers_p2",
            Covariate::FollowerRatio => "ln_followers_p2_over_ln_followees_p2",
            Covariate::Clustering => "clustering",
        }
    }

    /// Transformed value; `None` or non-finite means the row is dropped.
    pub fn value(self, r: &AccountSummary) -> Option<f64> {
        let v = match self {
            Covariate::LnInCount => (r.in_count as f64).ln(),
            Covariate::LnOutCount => (r.out_count as f64).ln(),
            Covariate::InQuality => r.in_quality_mean?,
            Covariate::InSd => r.in_sd,
            Covariate::LnFollowers => (r.outdegree as f64 + 2.0).ln(),
            Covariate::FollowerRatio => {
                (r.outdegree as f64 + 2.0).ln() / (r.indegree as f64 + 2.0).ln()
            }
            Covariate::Clustering => r.clustering_coefficient,
        };
        v.is_finite().then_some(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModelKind {
    I,
    II,
    III,
    IV,
    A1,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "I" | "1" => ModelKind::I,
            "II" | "2" => ModelKind::II,
            "III" | "3" => ModelKind::III,
            "IV" | "4" => ModelKind::IV,
            "A1" => ModelKind::A1,
            other => return Err(Error::InvalidParameter(format!("unknown model {other:?}"))),
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Outgoing mean slant regressed on incoming mean slant, main-effect
/// covariates and their interactions with incoming slant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub name: String,
    pub covariates: Vec<Covariate>,
    /// Each listed covariate also enters as `in_mean x covariate`.
    pub interactions: Vec<Covariate>,
}

impl ModelSpec {
    pub fn incoming_only() -> Self {
        Self {
            name: "I".into(),
            covariates: vec![],
            interactions: vec![],
        }
    }

    pub fn of(kind: ModelKind) -> Self {
        use Covariate::*;
        let covs = match kind {
            ModelKind::I => vec![],
            ModelKind::II => vec![LnInCount, LnOutCount, InQuality, InSd],
            ModelKind::III => vec![
                LnInCount,
                LnOutCount,
                InQuality,
                InSd,
                LnFollowers,
                FollowerRatio,
            ],
            ModelKind::IV => vec![
                LnInCount,
                LnOutCount,
                InQuality,
                InSd,
                LnFollowers,
                FollowerRatio,
                Clustering,
            ],
            ModelKind::A1 => vec![LnOutCount, LnFollowers, FollowerRatio],
        };
        Self {
            name: kind.to_string(),
            interactions: covs.clone(),
            covariates: covs,
        }
    }

    /// Column names in design order: intercept, incoming slant, covariates,
    /// then interactions.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["intercept".to_string(), "in_mean".to_string()];
        cols.extend(self.covariates.iter().map(|c| c.name().to_string()));
        cols.extend(
            self.interactions
                .iter()
                .map(|c| format!("in_mean:{}", c.name())),
        );
        cols
    }
}

#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub row_ids: Vec<AccountId>,
    pub columns: Vec<String>,
}

/// Build `(X, y)` over accounts that both sent and received news links and
/// have every covariate defined.
pub fn design_matrix(rows: &[AccountSummary], spec: &ModelSpec) -> Result<Design> {
    let mut needed: Vec<Covariate> = spec.covariates.clone();
    for c in &spec.interactions {
        if !needed.contains(c) {
            needed.push(*c);
        }
    }
    let mut ids = Vec::new();
    let mut ys = Vec::new();
    let mut xin = Vec::new();
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); needed.len()];
    'rows: for r in rows.iter().filter(|r| r.has_both()) {
        let (Some(y), Some(x)) = (r.out_mean, r.in_mean) else {
            continue;
        };
        let mut vals = Vec::with_capacity(needed.len());
        for c in &needed {
            match c.value(r) {
                Some(v) => vals.push(v),
                None => continue 'rows,
            }
        }
        ids.push(r.account_id);
        ys.push(y);
        xin.push(x);
        for (col, v) in raw.iter_mut().zip(vals) {
            col.push(v);
        }
    }
    let n = ids.len();
    let mut scaled: Vec<Vec<f64>> = Vec::with_capacity(needed.len());
    for (c, col) in needed.iter().zip(&raw) {
        let (mean, sd) = mean_sd(col);
        if !sd.is_finite() || sd <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::ZeroVariance(c.name().to_string()));
        }
        scaled.push(col.iter().map(|v| (v - mean) / sd).collect());
    }
    let column_of = |c: &Covariate| needed.iter().position(|d| d == c).unwrap();
    let columns = spec.columns();
    let p = columns.len();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = xin[i];
        let mut k = 2;
        for c in &spec.covariates {
            x[(i, k)] = scaled[column_of(c)][i];
            k += 1;
        }
        for c in &spec.interactions {
            x[(i, k)] = xin[i] * scaled[column_of(c)][i];
            k += 1;
        }
    }
    Ok(Design {
        x,
        y: DVector::from_vec(ys),
        row_ids: ids,
        columns,
    })
}

/// Sample mean and standard deviation (n - 1 denominator).
fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.len() < 2 {
        return (v.first().copied().unwrap_or(0.0), 0.0);
    }
    let mean = v.iter().sum::<f64>() / n;
    let ss = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    pub columns: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub n: usize,
    pub r2: f64,
    pub adj_r2: f64,
    /// `RSS / (n - p)`.
    pub sigma2: f64,
}

impl RegressionFit {
    pub fn coef_of(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some((self.coef[i], self.se[i]))
    }
}

/// Householder-QR least squares. `x` is expected to carry an intercept column
/// (R-squared is computed about the mean of `y`).
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>, columns: &[String]) -> Result<RegressionFit> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(Error::TooFewObservations { n, p });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let collinear: Vec<String> = (0..p)
        .filter(|&k| {
            let norm = x.column(k).norm();
            norm == 0.0 || r[(k, k)].abs() <= RANK_TOL * norm
        })
        .map(|k| columns.get(k).cloned().unwrap_or_else(|| format!("x{k}")))
        .collect();
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear));
    }
    let qty = q.transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(vec![]))?;
    let resid = y - x * &beta;
    let rss = resid.norm_squared();
    let sigma2 = rss / (n - p) as f64;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient(vec![]))?;
    let se: Vec<f64> = (0..p)
        .map(|i| (sigma2 * rinv.row(i).norm_squared()).sqrt())
        .collect();
    let ybar = y.mean();
    let tss = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN };
    let adj_r2 = 1.0 - (1.0 - r2) * (n - 1) as f64 / (n - p) as f64;
    Ok(RegressionFit {
        columns: columns.to_vec(),
        coef: beta.iter().copied().collect(),
        se,
        n,
        r2,
        adj_r2,
        sigma2,
    })
}

/// `y ~ 1 + x`.
pub fn simple_ols(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    let n = x.len();
    let mut m = DMatrix::zeros(n, 2);
    for i in 0..n {
        m[(i, 0)] = 1.0;
        m[(i, 1)] = x[i];
    }
    ols_fit(
        &m,
        &DVector::from_column_slice(y),
        &["intercept".to_string(), "in_mean".to_string()],
    )
}

pub fn fit_model(rows: &[AccountSummary], spec: &ModelSpec) -> Result<RegressionFit> {
    let d = design_matrix(rows, spec)?;
    ols_fit(&d.x, &d.y, &d.columns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Members' incoming slant recomputed from core followees only.
    WithinCore,
    /// Members' incoming slant from every followee.
    AllTweets,
    /// Complement of the core, with core accounts and their tweets removed.
    WithinPeriphery,
}

impl FromStr for SweepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "within" | "within_core" => Ok(SweepMode::WithinCore),
            "all" | "all_tweets" => Ok(SweepMode::AllTweets),
            "periphery" | "within_periphery" => Ok(SweepMode::WithinPeriphery),
            other => Err(Error::InvalidParameter(format!(
                "unknown sweep mode {other:?}"
            ))),
        }
    }
}

/// Fewer observations than this and a sweep cell is reported as insufficient.
pub const MIN_SWEEP_OBS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub s: f64,
    pub t: f64,
    pub members: usize,
    pub n: usize,
    pub slope: Option<f64>,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    /// The 95% interval excludes 1.0.
    pub excludes_one: bool,
    pub insufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGrid {
    pub mode: SweepMode,
    pub s_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// Row-major over `s_grid` x `t_grid`.
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, si: usize, ti: usize) -> &SweepCell {
        &self.cells[si * self.t_grid.len() + ti]
    }
}

/// Regress outgoing on incoming mean slant inside each `(s, t)` core (or its
/// complement).
pub fn core_sweep(
    g: &FollowerGraph,
    outgoing: &[SlantMoments],
    s_grid: &[f64],
    t_grid: &[f64],
    mode: SweepMode,
) -> Result<SweepGrid> {
    if outgoing.len() != g.node_count() {
        return Err(Error::InvalidParameter(
            "outgoing moments do not match graph".into(),
        ));
    }
    let newscounts: Vec<u64> = outgoing.iter().map(|m| m.count).collect();
    let full_incoming = (mode == SweepMode::AllTweets).then(|| incoming_moments(g, outgoing, None));
    let pairs: Vec<(f64, f64)> = s_grid
        .iter()
        .flat_map(|&s| t_grid.iter().map(move |&t| (s, t)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(s, t)| {
            let spec = core_members(g, &newscounts, s, t)?;
            let mut in_core = vec![false; g.node_count()];
            for &v in &spec.members {
                in_core[v] = true;
            }
            let set: Vec<bool> = match mode {
                SweepMode::WithinPeriphery => in_core.iter().map(|b| !b).collect(),
                _ => in_core,
            };
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut members = 0;
            for v in 0..g.node_count() {
                if !set[v] {
                    continue;
                }
                members += 1;
                let inc = match &full_incoming {
                    Some(full) => full[v],
                    None => {
                        let mut m = SlantMoments::default();
                        for &u in g.in_neighbors(v) {
                            if set[u] {
                                m.merge(&outgoing[u]);
                            }
                        }
                        m
                    }
                };
                if let (Some(x), Some(y)) = (inc.mean(), outgoing[v].mean()) {
                    xs.push(x);
                    ys.push(y);
                }
            }
            Ok(sweep_cell(s, t, members, &xs, &ys))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepGrid {
        mode,
        s_grid: s_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        cells,
    })
}

fn sweep_cell(s: f64, t: f64, members: usize, xs: &[f64], ys: &[f64]) -> SweepCell {
    let mut cell = SweepCell {
        s,
        t,
        members,
        n: xs.len(),
        slope: None,
        se: None,
        ci_lo: None,
        ci_hi: None,
        excludes_one: false,
        insufficient: true,
    };
    if xs.len() < MIN_SWEEP_OBS {
        return cell;
    }
    if let Ok(fit) = simple_ols(xs, ys) {
        let (b, se) = (fit.coef[1], fit.se[1]);
        let (lo, hi) = (b - 1.96 * se, b + 1.96 * se);
        cell.slope = Some(b);
        cell.se = Some(se);
        cell.ci_lo = Some(lo);
        cell.ci_hi = Some(hi);
        cell.excludes_one = hi < 1.0 || lo > 1.0;
        cell.insufficient = false;
    }
    cell
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let f = simple_ols(&x, &y).unwrap();
        assert!((f.coef[1] - 2.0).abs() < 1e-12);
        assert!(f.coef[0].abs() < 1e-12);
        assert!(f.se[1] < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_is_mean() {
        let y = DVector::from_vec(vec![1.0, 4.0, 7.0]);
        let x = DMatrix::from_element(3, 1, 1.0);
        let f = ols_fit(&x, &y, &names(1)).unwrap();
        assert!((f.coef[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let x = DMatrix::from_row_slice(4, 3, &[1., 1., 2., 1., 2., 4., 1., 3., 6., 1., 4., 8.]);
        let y = DVector::from_vec(vec![1., 2., 3., 5.]);
        match ols_fit(&x, &y, &names(3)) {
            Err(Error::RankDeficient(c)) => assert_eq!(c, vec!["c2".to_string()]),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ols_fit(
                &DMatrix::from_element(2, 2, 1.0),
                &DVector::zeros(2),
                &names(2)
            ),
            Err(Error::TooFewObservations { n: 2, p: 2 })
        ));
    }

    fn row(id: u64, inm: f64, outm: f64, followers: usize, followees: usize) -> AccountSummary {
        AccountSummary {
            account_id: id,
            out_mean: Some(outm),
            out_sd: 0.1 * id as f64,
            out_count: id + 1,
            out_quality_mean: Some(0.0),
            in_mean: Some(inm),
            in_sd: 0.2 * (id % 3) as f64,
            in_count: 2 * id + 1,
            in_quality_mean: Some((id % 4) as f64),
            outdegree: followers,
            indegree: followees,
            clustering_coefficient: (id % 5) as f64 / 5.0,
            retweet_count: 0,
        }
    }

    #[test]
    fn incoming_only_design_is_raw() {
        let rows = vec![
            row(1, 0.5, 0.2, 3, 4),
            row(2, -0.5, 0.1, 0, 0),
            row(3, 1.5, 0.9, 1, 1),
        ];
        let d = design_matrix(&rows, &ModelSpec::of(ModelKind::I)).unwrap();
        assert_eq!(d.columns, vec!["intercept", "in_mean"]);
        assert_eq!(
            d.x.column(1).iter().copied().collect::<Vec<_>>(),
            vec![0.5, -0.5, 1.5]
        );
        assert_eq!(d.row_ids, vec![1, 2, 3]);
    }

    #[test]
    fn follower_ratio_with_no_followees_is_finite() {
        let r = row(1, 0.0, 0.0, 10, 0);
        let v = Covariate::FollowerRatio.value(&r).unwrap();
        assert!((v - (12f64).ln() / 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn model_iv_has_fifteen_terms() {
        let spec = ModelSpec::of(ModelKind::IV);
        let cols = spec.columns();
        assert_eq!(cols.len() - 1, 15);
        let rows: Vec<_> = (1..60u64)
            .map(|i| {
                row(
                    i,
                    (i as f64 * 0.37).sin(),
                    (i as f64 * 0.11).cos(),
                    (i * 7 % 13) as usize,
                    (i * 5 % 11) as usize,
                )
            })
            .collect();
        let d = design_matrix(&rows, &spec).unwrap();
        assert_eq!(d.x.ncols(), 16);
        // standardized covariates have mean 0 and unit sample variance
        for k in 2..9 {
            let c: Vec<f64> = d.x.column(k).iter().copied().collect();
            let (m, s) = mean_sd(&c);
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12, "column {k}");
        }
    }

    #[test]
    fn zero_variance_column_is_named() {
        let rows: Vec<_> = (1..6u64).map(|i| row(i, i as f64, 0.0, 5, 5)).collect();
        match design_matrix(&rows, &ModelSpec::of(ModelKind::III)) {
            Err(Error::ZeroVariance(c)) => assert_eq!(c, "ln_followers_p2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn affine_reparameterization_keeps_fitted_values() {
        let x1: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
        let x2: Vec<f64> = (0..30)
            .map(|i| (i as f64 * 1.3).cos() * 4.0 + 9.0)
            .collect();
        let y: Vec<f64> = (0..30)
            .map(|i| x1[i] * 0.5 + x2[i] * 0.1 + (i as f64).sqrt() * 0.05)
            .collect();
        let build = |a: f64, b: f64| {
            let mut m = DMatrix::zeros(30, 3);
            for i in 0..30 {
                m[(i, 0)] = 1.0;
                m[(i, 1)] = x1[i];
                m[(i, 2)] = (x2[i] - a) / b;
            }
            m
        };
        let yv = DVector::from_vec(y);
        let (m1, m2) = (build(0.0, 1.0), build(9.0, 4.0));
        let f1 = ols_fit(&m1, &yv, &names(3)).unwrap();
        let f2 = ols_fit(&m2, &yv, &names(3)).unwrap();
        let yh1 = &m1 * DVector::from_vec(f1.coef.clone());
        let yh2 = &m2 * DVector::from_vec(f2.coef.clone());
        assert!((yh1 - yh2).amax() < 1e-10);
        assert!((f2.coef[2] - 4.0 * f1.coef[2]).abs() < 1e-10);
        assert!((f2.se[2] - 4.0 * f1.se[2]).abs() < 1e-10);
    }

    #[test]
    fn sweep_marks_small_cells_insufficient() {
        let g = FollowerGraph::from_index_pairs(3, [(0, 1), (1, 2)]);
        let mut out = vec![SlantMoments::default(); 3];
        for (i, m) in out.iter_mut().enumerate() {
            m.push(i as f64, 0.0);
        }
        let grid = core_sweep(&g, &out, &[0.0], &[0.0], SweepMode::AllTweets).unwrap();
        assert!(grid.cells[0].insufficient);
        assert_eq!(grid.cells[0].members, 3);
        assert_eq!(grid.cells[0].n, 2);
    }
}
