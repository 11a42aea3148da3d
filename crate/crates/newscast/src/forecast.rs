//! Day-ahead design matrix and the randomized tree-ensemble regressor.
//!
//! Rows are forecast issue days: on day `d` the model sees demand from days
//! `d-1`, `d-2`, `d-7`, textual features from `d-1`, and the calendar and
//! forecast temperature of the target day `d+1`; it predicts all 48
//! half-hourly demand values of `d+1`.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FamilyKey, FeatureBlock};
use crate::ingest::{AlignedDataset, Calendar, SLOTS_PER_DAY};
use crate::stats::derive_seed;

/// Demand lags included in the design, in days before the issue day.
pub const DEMAND_LAGS: [i64; 3] = [1, 2, 7];

/// Which column groups a model sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSetSpec {
    pub demand_lags: bool,
    pub calendar: bool,
    pub temperature: bool,
    /// Textual families appended after the fixed groups, in this order.
    pub families: Vec<FamilyKey>,
}

impl FeatureSetSpec {
    pub fn benchmark(demand_lags: bool, calendar: bool, temperature: bool) -> Self {
        FeatureSetSpec { demand_lags, calendar, temperature, families: Vec::new() }
    }

    pub fn with_families(families: Vec<FamilyKey>) -> Self {
        FeatureSetSpec { demand_lags: true, calendar: true, temperature: true, families }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.demand_lags && !self.calendar && !self.temperature && self.families.is_empty() {
            return Err(Error::Config("feature set selects no columns".into()));
        }
        Ok(())
    }

    /// Display label such as `D+C+T+WF_T`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.demand_lags {
            parts.push("D".to_string());
        }
        if self.calendar {
            parts.push("C".to_string());
        }
        if self.temperature {
            parts.push("T".to_string());
        }
        for fam in &self.families {
            parts.push(fam.id().to_uppercase());
        }
        parts.join("+")
    }
}

/// Named design matrix with per-row issue and target dates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub feature_names: Vec<String>,
    pub issue_dates: Vec<NaiveDate>,
    pub target_dates: Vec<NaiveDate>,
    pub x: DMatrix<f64>,
    /// One 48-vector of target-day demand per row.
    pub y: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.issue_dates.len()
    }

    /// Splits rows at the first issue date >= `boundary`; left part trains,
    /// right part tests.
    pub fn split_at_date(&self, boundary: NaiveDate) -> (DesignMatrix, DesignMatrix) {
        let cut = self.issue_dates.partition_point(|d| *d < boundary);
        let take = |lo: usize, hi: usize| DesignMatrix {
            feature_names: self.feature_names.clone(),
            issue_dates: self.issue_dates[lo..hi].to_vec(),
            target_dates: self.target_dates[lo..hi].to_vec(),
            x: self.x.rows(lo, hi - lo).into_owned(),
            y: self.y.rows(lo, hi - lo).into_owned(),
        };
        (take(0, cut), take(cut, self.n_rows()))
    }
}

pub fn calendar_feature_names() -> Vec<String> {
    ["dow_sin", "dow_cos", "doy_sin", "doy_cos", "is_weekend", "is_holiday"]
        .iter()
        .map(|n| format!("cal.{n}"))
        .collect()
}

fn calendar_features(calendar: &Calendar, target: NaiveDate) -> [f64; 6] {
    let dow = Calendar::day_of_week(target) as f64;
    let doy = Calendar::day_of_year(target) as f64;
    let tau = std::f64::consts::TAU;
    [
        (tau * dow / 7.0).sin(),
        (tau * dow / 7.0).cos(),
        (tau * doy / 365.25).sin(),
        (tau * doy / 365.25).cos(),
        if Calendar::is_weekend(target) { 1.0 } else { 0.0 },
        if calendar.is_holiday(target) { 1.0 } else { 0.0 },
    ]
}

/// Builds the day-ahead design matrix. Textual blocks are looked up per
/// family in `blocks`; `selected` (qualified names) restricts their columns
/// when given. Rows whose lag days, textual day, or target day are absent
/// from the dataset are dropped.
pub fn build_design(
    aligned: &AlignedDataset,
    blocks: &[FeatureBlock],
    spec: &FeatureSetSpec,
    selected: Option<&BTreeSet<String>>,
) -> Result<DesignMatrix> {
    spec.validate()?;
    let index = aligned.date_index();

    // Resolve each requested family to (block, kept column indices).
    let mut textual: Vec<(&FeatureBlock, Vec<usize>, BTreeMap<NaiveDate, usize>)> = Vec::new();
    for fam in &spec.families {
        let block = blocks
            .iter()
            .find(|b| b.key == *fam)
            .ok_or_else(|| Error::MissingArtifact(format!("feature block {fam} not provided")))?;
        block.check()?;
        let qualified = block.qualified_names();
        let cols: Vec<usize> = qualified
            .iter()
            .enumerate()
            .filter(|(_, q)| selected.map_or(true, |s| s.contains(*q)))
            .map(|(j, _)| j)
            .collect();
        let rows: BTreeMap<NaiveDate, usize> =
            block.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        textual.push((block, cols, rows));
    }

    let mut feature_names = Vec::new();
    if spec.demand_lags {
        for lag in DEMAND_LAGS {
            for slot in 0..SLOTS_PER_DAY {
                feature_names.push(format!("lag.d{lag}.s{slot:02}"));
            }
        }
    }
    if spec.calendar {
        feature_names.extend(calendar_feature_names());
    }
    if spec.temperature {
        feature_names.push("temp.target".to_string());
    }
    for (block, cols, _) in &textual {
        let qualified = block.qualified_names();
        feature_names.extend(cols.iter().map(|&j| qualified[j].clone()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<&[f64]> = Vec::new();
    let mut issue_dates = Vec::new();
    let mut target_dates = Vec::new();

    for day in &aligned.days {
        let d = day.date;
        let target_date = match d.succ_opt().and_then(|t| index.get(&t).copied().map(|i| (t, i))) {
            Some(pair) => pair,
            None => continue,
        };
        let lag_day = |offset: i64| {
            d.checked_sub_signed(chrono::Duration::days(offset))
                .and_then(|ld| index.get(&ld).copied())
        };
        let mut row = Vec::with_capacity(feature_names.len());
        let mut complete = true;
        if spec.demand_lags {
            for lag in DEMAND_LAGS {
                match lag_day(lag) {
                    Some(i) => row.extend_from_slice(&aligned.days[i].demand),
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
        }
        if complete && spec.calendar {
            row.extend_from_slice(&calendar_features(&aligned.calendar, target_date.0));
        }
        if complete && spec.temperature {
            row.push(aligned.days[target_date.1].temperature_c);
        }
        if complete && !textual.is_empty() {
            let text_day = d.pred_opt().expect("date underflow");
            for (block, cols, block_rows) in &textual {
                match block_rows.get(&text_day) {
                    Some(&r) => row.extend(cols.iter().map(|&j| block.values[r][j])),
                    None => {
                        complete = false;
                        break;
                    }
                }
                let _ = block;
            }
        }
        if !complete {
            continue;
        }
        rows.push(row);
        targets.push(&aligned.days[target_date.1].demand);
        issue_dates.push(d);
        target_dates.push(target_date.0);
    }

    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "design matrix empty after dropping rows with incomplete lags".into(),
        ));
    }

    let n = rows.len();
    let p = feature_names.len();
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let y = DMatrix::from_fn(n, SLOTS_PER_DAY, |i, j| targets[i][j]);
    for (j, name) in feature_names.iter().enumerate() {
        for i in 0..n {
            if !x[(i, j)].is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite value in design column {} on {}",
                    name, issue_dates[i]
                )));
            }
        }
    }
    Ok(DesignMatrix { feature_names, issue_dates, target_dates, x, y })
}

// ---------------------------------------------------------------------------
// Tree ensemble
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraTreesConfig {
    /// Number of trees.
    pub n_trees: usize,
    /// Candidate features per split.
    pub k: usize,
    /// Smallest node size still eligible for splitting.
    pub min_split: usize,
    pub seed: u64,
}

impl ExtraTreesConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("tree count must be at least 1".into()));
        }
        if self.k == 0 || self.k > n_features {
            return Err(Error::Config(format!(
                "candidate count {} outside 1..={n_features}",
                self.k
            )));
        }
        if self.min_split < 2 {
            return Err(Error::Config("min_split must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { mean: Vec<f64>, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<TreeNode>,
    root: usize,
}

impl Tree {
    fn predict<'a>(&'a self, row: &[f64]) -> &'a [f64] {
        let mut at = self.root;
        loop {
            match &self.nodes[at] {
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { mean, .. } => return mean,
            }
        }
    }
}

const MODEL_VERSION: u32 = 1;

/// Ensemble of extremely randomized trees with multi-output leaf means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraTreesModel {
    pub version: u32,
    pub config: ExtraTreesConfig,
    pub feature_names: Vec<String>,
    pub n_outputs: usize,
    trees: Vec<Tree>,
}

struct TreeBuilder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DMatrix<f64>,
    k: usize,
    min_split: usize,
}

impl<'a> TreeBuilder<'a> {
    /// Per-dimension mean and total sum of squared deviations over `idx`.
    fn moments(&self, idx: &[usize]) -> (Vec<f64>, f64) {
        let q = self.y.ncols();
        let n = idx.len() as f64;
        let mut mean = vec![0.0; q];
        for &i in idx {
            for d in 0..q {
                mean[d] += self.y[(i, d)];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut sse = 0.0;
        for &i in idx {
            for d in 0..q {
                let e = self.y[(i, d)] - mean[d];
                sse += e * e;
            }
        }
        (mean, sse)
    }

    fn build(&self, idx: &[usize], rng: &mut ChaCha8Rng, nodes: &mut Vec<TreeNode>) -> usize {
        let (mean, sse) = self.moments(idx);
        let make_leaf = |nodes: &mut Vec<TreeNode>| {
            nodes.push(TreeNode::Leaf { mean: mean.clone(), count: idx.len() });
            nodes.len() - 1
        };
        if idx.len() < self.min_split || sse == 0.0 {
            return make_leaf(nodes);
        }

        // Candidate pool: features that vary within this node.
        let p = self.x.ncols();
        let mut ranges = Vec::with_capacity(p);
        let mut pool = Vec::new();
        for j in 0..p {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in idx {
                let v = self.x[(i, j)];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi > lo {
                pool.push(j);
            }
            ranges.push((lo, hi));
        }
        if pool.is_empty() {
            return make_leaf(nodes);
        }
        let k_eff = self.k.min(pool.len());
        for i in 0..k_eff {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }

        let mut best: Option<(f64, usize, f64)> = None;
        for &feature in &pool[..k_eff] {
            let (lo, hi) = ranges[feature];
            let threshold = rng.gen_range(lo..hi);
            let (left, right): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
            let (_, sse_l) = self.moments(&left);
            let (_, sse_r) = self.moments(&right);
            let reduction = sse - sse_l - sse_r;
            if best.map_or(true, |(b, _, _)| reduction > b) {
                best = Some((reduction, feature, threshold));
            }
        }
        let (_, feature, threshold) = best.expect("non-empty candidate set");
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
        let left = self.build(&left_idx, rng, nodes);
        let right = self.build(&right_idx, rng, nodes);
        nodes.push(TreeNode::Split { feature, threshold, left, right });
        nodes.len() - 1
    }
}

/// Fits the ensemble. Every tree sees the full training set; randomness is
/// confined to candidate-feature draws and uniform thresholds. Trees train
/// in parallel with per-tree seeds derived from `config.seed`, so thread
/// scheduling never changes the result.
pub fn fit_extratrees(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    feature_names: &[String],
    config: &ExtraTreesConfig,
) -> Result<ExtraTreesModel> {
    config.validate(x.ncols())?;
    if feature_names.len() != x.ncols() {
        return Err(Error::InvalidInput(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            x.ncols()
        )));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows vs {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("cannot fit on zero rows".into()));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in training data".into()));
    }

    let builder = TreeBuilder { x, y, k: config.k, min_split: config.min_split };
    let all_rows: Vec<usize> = (0..x.nrows()).collect();
    let trees: Vec<Tree> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, t as u64));
            let mut nodes = Vec::new();
            let root = builder.build(&all_rows, &mut rng, &mut nodes);
            Tree { nodes, root }
        })
        .collect();

    Ok(ExtraTreesModel {
        version: MODEL_VERSION,
        config: *config,
        feature_names: feature_names.to_vec(),
        n_outputs: y.ncols(),
        trees,
    })
}

impl ExtraTreesModel {
    /// Errors when `names` does not carry every model feature, naming the
    /// first one missing.
    pub fn check_manifest(&self, names: &[String]) -> Result<()> {
        let have: BTreeSet<&String> = names.iter().collect();
        if let Some(missing) = self.feature_names.iter().find(|n| !have.contains(n)) {
            return Err(Error::InvalidInput(format!(
                "prediction input is missing feature {missing}"
            )));
        }
        if names != self.feature_names.as_slice() {
            return Err(Error::InvalidInput(
                "prediction input features are ordered differently from the model manifest".into(),
            ));
        }
        Ok(())
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.feature_names.len() {
            return Err(Error::InvalidInput(format!(
                "prediction row has {} values, model expects {}",
                row.len(),
                self.feature_names.len()
            )));
        }
        let mut out = vec![0.0; self.n_outputs];
        for tree in &self.trees {
            for (o, v) in out.iter_mut().zip(tree.predict(row)) {
                *o += v;
            }
        }
        let m = self.trees.len() as f64;
        for o in &mut out {
            *o /= m;
        }
        Ok(out)
    }

    /// Per-tree leaf vectors for one row, in tree order.
    pub fn tree_predictions(&self, row: &[f64]) -> Vec<Vec<f64>> {
        self.trees.iter().map(|t| t.predict(row).to_vec()).collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| self.predict_row(&x.row(i).iter().copied().collect::<Vec<f64>>()))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(x.nrows(), self.n_outputs, |i, j| rows[i][j]))
    }

    /// Prediction from named values; errors name any absent feature.
    pub fn predict_named(&self, values: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.feature_names.len());
        for name in &self.feature_names {
            match values.get(name) {
                Some(v) => row.push(*v),
                None => {
                    return Err(Error::InvalidInput(format!(
                        "prediction input is missing feature {name}"
                    )))
                }
            }
        }
        self.predict_row(&row)
    }

    pub fn save(&self, path: &str) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Numerical(format!("serialize model: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ExtraTreesModel =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        if model.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "model version {} unsupported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// Cross-validated grid search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_trees: Vec<usize>,
    pub k: Vec<usize>,
    pub min_split: Vec<usize>,
}

impl GridSpec {
    /// Default grid for `p` features: M in {100, 300}, K in {sqrt p, p/3},
    /// min_split in {2, 5}.
    pub fn default_for(p: usize) -> GridSpec {
        let mut k = vec![
            ((p as f64).sqrt().round() as usize).max(1),
            (p / 3).max(1),
        ];
        k.sort_unstable();
        k.dedup();
        GridSpec { n_trees: vec![100, 300], k, min_split: vec![2, 5] }
    }

    fn points(&self, seed: u64) -> Vec<ExtraTreesConfig> {
        let mut out = Vec::new();
        for &n_trees in &self.n_trees {
            for &k in &self.k {
                for &min_split in &self.min_split {
                    out.push(ExtraTreesConfig { n_trees, k, min_split, seed });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n_trees: usize,
    pub k: usize,
    pub min_split: usize,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: ExtraTreesConfig,
    pub table: Vec<GridPoint>,
}

/// Contiguous fold boundaries: fold `f` covers `[b[f], b[f+1])`.
pub fn fold_boundaries(n_rows: usize, folds: usize) -> Vec<usize> {
    (0..=folds).map(|f| f * n_rows / folds).collect()
}

fn row_rmse(err_row: &[f64]) -> f64 {
    (err_row.iter().map(|e| e * e).sum::<f64>() / err_row.len() as f64).sqrt()
}

/// Expanding-window cross-validation on time-ordered rows: fold `f` (for
/// f >= 1) is scored by a model trained on all rows before it. Score is the
/// mean over folds of the mean per-row RMSE; ties prefer fewer trees, then
/// smaller K, then smaller min_split.
pub fn grid_search_cv(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    feature_names: &[String],
    grid: &GridSpec,
    folds: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    if grid.n_trees.is_empty() || grid.k.is_empty() || grid.min_split.is_empty() {
        return Err(Error::Config("empty hyper-parameter grid".into()));
    }
    if folds < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    if x.nrows() < folds {
        return Err(Error::InvalidInput(format!(
            "{} rows cannot form {} folds",
            x.nrows(),
            folds
        )));
    }
    let points = grid.points(seed);
    for p in &points {
        p.validate(x.ncols())?;
    }
    let bounds = fold_boundaries(x.nrows(), folds);

    let table: Vec<GridPoint> = points
        .par_iter()
        .enumerate()
        .map(|(pi, point)| {
            let mut fold_scores = Vec::with_capacity(folds - 1);
            for f in 1..folds {
                let train_end = bounds[f];
                let (lo, hi) = (bounds[f], bounds[f + 1]);
                let config = ExtraTreesConfig {
                    seed: derive_seed(seed, (pi * folds + f) as u64),
                    ..*point
                };
                let model = fit_extratrees(
                    &x.rows(0, train_end).into_owned(),
                    &y.rows(0, train_end).into_owned(),
                    feature_names,
                    &config,
                )?;
                let mut rmse_sum = 0.0;
                for i in lo..hi {
                    let row: Vec<f64> = x.row(i).iter().copied().collect();
                    let pred = model.predict_row(&row)?;
                    let err: Vec<f64> =
                        pred.iter().zip(y.row(i).iter()).map(|(p, t)| p - t).collect();
                    rmse_sum += row_rmse(&err);
                }
                fold_scores.push(rmse_sum / (hi - lo) as f64);
            }
            Ok(GridPoint {
                n_trees: point.n_trees,
                k: point.k,
                min_split: point.min_split,
                mean_rmse: fold_scores.iter().sum::<f64>() / fold_scores.len() as f64,
            })
        })
        .collect::<Result<_>>()?;

    let best_point = table
        .iter()
        .min_by(|a, b| {
            a.mean_rmse
                .partial_cmp(&b.mean_rmse)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.n_trees.cmp(&b.n_trees))
                .then(a.k.cmp(&b.k))
                .then(a.min_split.cmp(&b.min_split))
        })
        .expect("non-empty table");
    Ok(GridSearchResult {
        best: ExtraTreesConfig {
            n_trees: best_point.n_trees,
            k: best_point.k,
            min_split: best_point.min_split,
            seed,
        },
        table,
    })
}

/// Same-half-hour persistence: the forecast for `target_date` is the demand
/// observed one week earlier. None when that day is absent.
pub fn persistence_forecast(aligned: &AlignedDataset, target_date: NaiveDate) -> Option<Vec<f64>> {
    let source = target_date.checked_sub_signed(chrono::Duration::days(7))?;
    aligned
        .days
        .iter()
        .find(|d| d.date == source)
        .map(|d| d.demand.clone())
}
