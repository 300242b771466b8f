//! Per-image metric tables and the arms built from them.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::{aggregate_scores, AggregateKind};
use crate::trainer::ArmSpec;
use crate::usability::select_top_m;

/// Metric or arm name. Every score is oriented so that higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "SSIM")]
    Ssim,
    #[serde(rename = "PSNR")]
    Psnr,
    #[serde(rename = "IS")]
    Is,
    #[serde(rename = "FID")]
    Fid,
    #[serde(rename = "DPS")]
    Dps,
    #[serde(rename = "FCS")]
    Fcs,
    #[serde(rename = "MEAN_DPS_FCS")]
    MeanDpsFcs,
    #[serde(rename = "ME")]
    Me,
    #[serde(rename = "MD")]
    Md,
    #[serde(rename = "MX")]
    Mx,
    #[serde(rename = "MN")]
    Mn,
}

impl Metric {
    pub const ALL: [Metric; 11] = [
        Metric::Ssim,
        Metric::Psnr,
        Metric::Is,
        Metric::Fid,
        Metric::Dps,
        Metric::Fcs,
        Metric::MeanDpsFcs,
        Metric::Me,
        Metric::Md,
        Metric::Mx,
        Metric::Mn,
    ];

    /// Metrics scored directly per image; the rest are derived from these.
    pub const PRIMITIVE: [Metric; 6] = [
        Metric::Ssim,
        Metric::Psnr,
        Metric::Is,
        Metric::Fid,
        Metric::Dps,
        Metric::Fcs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ssim => "SSIM",
            Metric::Psnr => "PSNR",
            Metric::Is => "IS",
            Metric::Fid => "FID",
            Metric::Dps => "DPS",
            Metric::Fcs => "FCS",
            Metric::MeanDpsFcs => "MEAN_DPS_FCS",
            Metric::Me => "ME",
            Metric::Md => "MD",
            Metric::Mx => "MX",
            Metric::Mn => "MN",
        }
    }

    pub fn is_primitive(self) -> bool {
        Self::PRIMITIVE.contains(&self)
    }

    fn aggregate(self) -> Option<AggregateKind> {
        match self {
            Metric::Me => Some(AggregateKind::Mean),
            Metric::Md => Some(AggregateKind::Median),
            Metric::Mx => Some(AggregateKind::Max),
            Metric::Mn => Some(AggregateKind::Min),
            _ => None,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        Self::ALL
            .into_iter()
            .find(|m| m.name() == upper)
            .ok_or_else(|| Error::Validation(format!("unknown metric {s}")))
    }
}

/// Primitive metric scores over one ordered image set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    image_ids: Vec<String>,
    columns: BTreeMap<Metric, Vec<f64>>,
}

impl ScoreTable {
    pub fn new(image_ids: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = image_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Validation(format!("duplicate image id {dup}")));
        }
        Ok(Self {
            image_ids,
            columns: BTreeMap::new(),
        })
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn metrics(&self) -> impl Iterator<Item = Metric> + '_ {
        self.columns.keys().copied()
    }

    pub fn column(&self, metric: Metric) -> Option<&[f64]> {
        self.columns.get(&metric).map(Vec::as_slice)
    }

    pub fn insert(&mut self, metric: Metric, scores: Vec<f64>) -> Result<()> {
        if !metric.is_primitive() {
            return Err(Error::Validation(format!("{metric} is derived, not scored")));
        }
        if scores.len() != self.image_ids.len() {
            return Err(Error::Dimension(format!(
                "{metric} has {} scores for {} images",
                scores.len(),
                self.image_ids.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Validation(format!(
                "{metric} score for {} is {}",
                self.image_ids[i], scores[i]
            )));
        }
        self.columns.insert(metric, scores);
        Ok(())
    }

    /// Builds a table from long-format `(image_id, metric, score)` rows.
    /// Image order is first appearance; every metric must cover every image.
    pub fn from_rows(rows: impl IntoIterator<Item = (String, Metric, f64)>) -> Result<Self> {
        let mut order: Vec<String> = vec![];
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut cells: BTreeMap<Metric, BTreeMap<usize, f64>> = BTreeMap::new();
        for (id, metric, score) in rows {
            let i = *index.entry(id.clone()).or_insert_with(|| {
                order.push(id.clone());
                order.len() - 1
            });
            if cells.entry(metric).or_default().insert(i, score).is_some() {
                return Err(Error::Validation(format!("{metric} scored twice for {id}")));
            }
        }
        let mut table = Self::new(order)?;
        for (metric, by_image) in cells {
            if by_image.len() != table.image_ids.len() {
                return Err(Error::Validation(format!(
                    "{metric} covers {} of {} images",
                    by_image.len(),
                    table.image_ids.len()
                )));
            }
            table.insert(metric, by_image.into_values().collect())?;
        }
        Ok(table)
    }

    /// Long-format rows, image-major, metrics in declaration order.
    pub fn rows(&self) -> Vec<(String, Metric, f64)> {
        let mut out = Vec::with_capacity(self.image_ids.len() * self.columns.len());
        for (i, id) in self.image_ids.iter().enumerate() {
            for (m, col) in &self.columns {
                out.push((id.clone(), *m, col[i]));
            }
        }
        out
    }

    fn require(&self, metric: Metric) -> Result<&Vec<f64>> {
        self.columns
            .get(&metric)
            .ok_or_else(|| Error::Validation(format!("metric {metric} was not scored")))
    }

    /// Ranking scores for an arm. `MEAN_DPS_FCS` averages normalized DPS and
    /// FCS; `ME`/`MD`/`MX`/`MN` aggregate every scored primitive metric.
    pub fn arm_scores(&self, arm: Metric) -> Result<Vec<f64>> {
        if arm.is_primitive() {
            return self.require(arm).cloned();
        }
        let (inputs, kind) = match arm {
            Metric::MeanDpsFcs => {
                let mut m = BTreeMap::new();
                m.insert(Metric::Dps.to_string(), self.require(Metric::Dps)?.clone());
                m.insert(Metric::Fcs.to_string(), self.require(Metric::Fcs)?.clone());
                (m, AggregateKind::Mean)
            }
            _ => {
                let m: BTreeMap<String, Vec<f64>> = self
                    .columns
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.clone()))
                    .collect();
                (m, arm.aggregate().expect("aggregate arm"))
            }
        };
        aggregate_scores(&inputs, kind)
    }
}

/// One arm per name, each serving the top `m` images under its ranking.
pub fn build_arms(table: &ScoreTable, arms: &[Metric], m: usize) -> Result<Vec<ArmSpec>> {
    if arms.is_empty() {
        return Err(Error::Validation("no arms requested".into()));
    }
    arms.iter()
        .map(|&arm| {
            let scores: Vec<(String, f64)> = table
                .image_ids
                .iter()
                .cloned()
                .zip(table.arm_scores(arm)?)
                .collect();
            ArmSpec::new(arm.name(), select_top_m(&scores, m)?)
        })
        .collect()
}
