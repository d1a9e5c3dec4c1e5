//! Regressors that predict a preference scale from pair features, used to stand in
//! for a fraction of the human labels.

mod ols;
mod svr;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

pub use ols::{fit_ols, fit_ols_ridge, OlsModel, OLS_RIDGE};
pub use svr::{fit_svr, SvrConfig, SvrModel};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamId};
use crate::oracle::PreferenceRecord;
use crate::trajectory::{featurize_pair, PairFeatures};

pub const MIN_SPLIT_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRow {
    pub features: PairFeatures,
    pub z: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimatorDataset {
    rows: Vec<EstimatorRow>,
    augmented: bool,
}

impl EstimatorDataset {
    pub fn new(rows: Vec<EstimatorRow>) -> Result<Self> {
        if let Some(first) = rows.first() {
            let d = first.features.len();
            for r in &rows {
                if r.features.len() != d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: r.features.len(),
                    });
                }
                if r.features.0.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("estimator features".into()));
                }
                if !(0.0..=1.0).contains(&r.z) {
                    return Err(Error::Estimator(format!("label {} outside [0, 1]", r.z)));
                }
            }
        }
        Ok(Self { rows, augmented: false })
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PreferenceRecord>) -> Result<Self> {
        Self::new(
            records
                .into_iter()
                .map(|r| EstimatorRow {
                    features: featurize_pair(&r.left, &r.right),
                    z: r.z.value(),
                })
                .collect(),
        )
    }

    pub fn rows(&self) -> &[EstimatorRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.features.len())
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Appends, for every row, the reversed pair labelled `1 − ẑ`.
    pub fn augmented(&self) -> Self {
        if self.augmented {
            return self.clone();
        }
        let mut rows = Vec::with_capacity(2 * self.rows.len());
        for r in &self.rows {
            rows.push(r.clone());
            rows.push(EstimatorRow {
                features: r.features.swapped(),
                z: 1.0 - r.z,
            });
        }
        Self { rows, augmented: true }
    }
}

/// Shuffled partition into `⌊f·n⌋` training rows and the remainder.
pub fn split_dataset(data: &EstimatorDataset, train_fraction: f64, rng: &mut RngStream) -> Result<(EstimatorDataset, EstimatorDataset)> {
    if data.len() < MIN_SPLIT_ROWS {
        return Err(Error::Estimator(format!(
            "need at least {MIN_SPLIT_ROWS} rows to split, have {}",
            data.len()
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let n_train = (train_fraction * n as f64).floor() as usize;
    let pick = |idx: &[usize]| EstimatorDataset {
        rows: idx.iter().map(|&i| data.rows[i].clone()).collect(),
        augmented: false,
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ols,
    Svr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Svr => "svr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ols" => Ok(Method::Ols),
            "svr" => Ok(Method::Svr),
            other => Err(Error::Config(format!("unknown estimator method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorModel {
    Ols(OlsModel),
    Svr(SvrModel),
}

impl EstimatorModel {
    pub fn method(&self) -> Method {
        match self {
            EstimatorModel::Ols(_) => Method::Ols,
            EstimatorModel::Svr(_) => Method::Svr,
        }
    }

    pub fn raw_predict(&self, x: &PairFeatures) -> f64 {
        match self {
            EstimatorModel::Ols(m) => m.raw_predict(x.as_slice()),
            EstimatorModel::Svr(m) => m.raw_predict(x.as_slice()),
        }
    }

    /// Regression output clamped to `[0, 1]`.
    pub fn predict(&self, x: &PairFeatures) -> f64 {
        self.raw_predict(x).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseSummary {
    pub mean: f64,
    /// Population standard deviation of the squared errors.
    pub std: f64,
}

pub fn evaluate_mse(model: &EstimatorModel, test: &EstimatorDataset) -> Result<MseSummary> {
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let errs: Vec<f64> = test
        .rows()
        .iter()
        .map(|r| (model.predict(&r.features) - r.z).powi(2))
        .collect();
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(MseSummary { mean, std: var.sqrt() })
}

/// Smaller mean MSE wins; ties go to the SVR.
pub fn choose_method(ols_mse: f64, svr_mse: f64) -> Method {
    if ols_mse < svr_mse {
        Method::Ols
    } else {
        Method::Svr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub model: EstimatorModel,
    pub ols: MseSummary,
    pub svr: MseSummary,
}

pub fn select_best(ols: OlsModel, svr: SvrModel, test: &EstimatorDataset) -> Result<Selection> {
    let ols_model = EstimatorModel::Ols(ols);
    let svr_model = EstimatorModel::Svr(svr);
    let ols_mse = evaluate_mse(&ols_model, test)?;
    let svr_mse = evaluate_mse(&svr_model, test)?;
    let model = match choose_method(ols_mse.mean, svr_mse.mean) {
        Method::Ols => ols_model,
        Method::Svr => svr_model,
    };
    Ok(Selection {
        model,
        ols: ols_mse,
        svr: svr_mse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub train_fraction: f64,
    pub augment: bool,
    pub svr: SvrConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            augment: true,
            svr: SvrConfig::default(),
        }
    }
}

/// Split, fit both regressors on the (optionally augmented) training part and keep
/// whichever scores lower on the held-out part.
pub fn fit_and_select(data: &EstimatorDataset, config: &EstimatorConfig, rng: &mut RngStream) -> Result<Selection> {
    let (train, test) = split_dataset(data, config.train_fraction, rng)?;
    let train = if config.augment { train.augmented() } else { train };
    let ols = fit_ols(&train)?;
    let svr = fit_svr(&train, &config.svr)?;
    select_best(ols, svr, &test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub method: Method,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub chosen: bool,
}

/// Repeats [`fit_and_select`] over `seeds` splits and averages the held-out MSE
/// per method. The `mse_std` column is the spread of the per-seed means when
/// `seeds > 1`, otherwise the spread of squared errors within the single split.
pub fn benchmark(
    scenario: &str,
    data: &EstimatorDataset,
    config: &EstimatorConfig,
    seeds: &[u64],
) -> Result<Vec<ReportRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("estimator benchmark needs at least one seed".into()));
    }
    let mut ols = Vec::new();
    let mut svr = Vec::new();
    for &seed in seeds {
        let mut rng = RngStream::new(seed, StreamId::EstimatorSplit);
        let sel = fit_and_select(data, config, &mut rng)?;
        ols.push(sel.ols);
        svr.push(sel.svr);
    }
    let summarize = |v: &[MseSummary]| {
        let n = v.len() as f64;
        let mean = v.iter().map(|s| s.mean).sum::<f64>() / n;
        let std = if v.len() == 1 {
            v[0].std
        } else {
            (v.iter().map(|s| (s.mean - mean).powi(2)).sum::<f64>() / n).sqrt()
        };
        (mean, std)
    };
    let (om, os) = summarize(&ols);
    let (sm, ss) = summarize(&svr);
    let best = choose_method(om, sm);
    Ok(vec![
        ReportRow {
            scenario: scenario.to_string(),
            method: Method::Ols,
            mse_mean: om,
            mse_std: os,
            chosen: best == Method::Ols,
        },
        ReportRow {
            scenario: scenario.to_string(),
            method: Method::Svr,
            mse_mean: sm,
            mse_std: ss,
            chosen: best == Method::Svr,
        },
    ])
}

pub const REPORT_HEADER: &str = "scenario,method,mse_mean,mse_std,chosen";

pub fn write_report(out: &mut impl Write, rows: &[ReportRow]) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.scenario, r.method, r.mse_mean, r.mse_std, r.chosen)?;
    }
    Ok(())
}
