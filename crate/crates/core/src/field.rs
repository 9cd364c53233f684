//! Farms, gateways, and response-class frequency tables.
//!
//! Each farm has one gateway (transaction node) with `K` nano-sensors. A
//! sweep draws one concentration per sensor around the farm mean, turns it
//! into a response factor and a class, and counts classes per gateway. The
//! resulting 5 x N table is row-normalized into `P(gateway | class)`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinetics::{self, KineticsError, ResponseClass, SensorParams};
use crate::rng::stream_rng;

pub const N_CLASSES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid farm configuration: {0}")]
    InvalidFarm(String),
    #[error("no farms given")]
    NoFarms,
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error("tables disagree on farm layout")]
    LayoutMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmConfig {
    pub farm_id: u32,
    /// Mean analyte concentration over the farm, molar.
    pub mean_conc: f64,
    /// Standard deviation of per-sensor concentration, molar.
    pub intra_sigma: f64,
    /// Nano-sensors per gateway (K).
    pub sensors_per_gateway: u32,
    /// Half-width of the uniform offset applied to the mean at each chemical
    /// application (mining round). Zero means a stationary farm.
    #[serde(default)]
    pub application_spread: f64,
}

impl FarmConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.mean_conc.is_finite() && self.mean_conc >= 0.0) {
            return Err(FieldError::InvalidFarm(format!(
                "farm {}: mean_conc {}",
                self.farm_id, self.mean_conc
            )));
        }
        if !(self.intra_sigma.is_finite() && self.intra_sigma >= 0.0) {
            return Err(FieldError::InvalidFarm(format!(
                "farm {}: intra_sigma {}",
                self.farm_id, self.intra_sigma
            )));
        }
        if self.sensors_per_gateway == 0 {
            return Err(FieldError::InvalidFarm(format!(
                "farm {}: no sensors",
                self.farm_id
            )));
        }
        if !(self.application_spread.is_finite() && self.application_spread >= 0.0) {
            return Err(FieldError::InvalidFarm(format!(
                "farm {}: application_spread {}",
                self.farm_id, self.application_spread
            )));
        }
        Ok(())
    }

    /// Class of the farm mean at equilibrium; the reference label for scoring.
    pub fn true_class(&self, k_dissociation: f64) -> ResponseClass {
        kinetics::classify(kinetics::equilibrium_rf(self.mean_conc, k_dissociation))
            .expect("equilibrium RF of a non-negative concentration is in [0, 1)")
    }
}

/// Draws `n_farms` farm means uniformly from `inter_range`.
pub fn generate_farm_concentrations(
    seed: u64,
    n_farms: usize,
    inter_range: (f64, f64),
    intra_sigma: f64,
    sensors_per_gateway: u32,
) -> Result<Vec<FarmConfig>, FieldError> {
    let (lo, hi) = inter_range;
    if n_farms == 0 {
        return Err(FieldError::NoFarms);
    }
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
        return Err(FieldError::InvalidFarm(format!("inter-farm range [{lo}, {hi}]")));
    }
    (0..n_farms)
        .map(|i| {
            let mean_conc = if lo == hi {
                lo
            } else {
                stream_rng(seed, "farm-mean", &[i as u64]).random_range(lo..=hi)
            };
            let farm = FarmConfig {
                farm_id: i as u32,
                mean_conc,
                intra_sigma,
                sensors_per_gateway,
                application_spread: 0.0,
            };
            farm.validate()?;
            Ok(farm)
        })
        .collect()
}

/// Farm configs as seen during one chemical application: each mean is shifted
/// by a uniform draw in `[-spread, spread]` (clamped at zero).
pub fn applied_farms(farms: &[FarmConfig], seed: u64, round: u64) -> Vec<FarmConfig> {
    farms
        .iter()
        .map(|farm| {
            let mut applied = farm.clone();
            if farm.application_spread > 0.0 {
                let spread = farm.application_spread;
                let offset = stream_rng(seed, "application", &[round, u64::from(farm.farm_id)])
                    .random_range(-spread..=spread);
                applied.mean_conc = (farm.mean_conc + offset).max(0.0);
            }
            applied
        })
        .collect()
}

/// One K-sensor sweep of a single farm.
pub fn sample_farm_column<R: Rng + ?Sized>(
    farm: &FarmConfig,
    params: &SensorParams,
    rng: &mut R,
) -> Result<[u32; N_CLASSES], FieldError> {
    let mut column = [0u32; N_CLASSES];
    let noise = if farm.intra_sigma > 0.0 {
        Some(Normal::new(farm.mean_conc, farm.intra_sigma).expect("sigma validated"))
    } else {
        None
    };
    for _ in 0..farm.sensors_per_gateway {
        let conc = match &noise {
            Some(dist) => dist.sample(rng).max(0.0),
            None => farm.mean_conc,
        };
        let rf = kinetics::settled_response_factor(params, conc)?;
        // RF is at most 1 by construction; the clamp only absorbs rounding.
        let class = kinetics::classify(rf.min(1.0))?;
        column[class.index()] += 1;
    }
    Ok(column)
}

/// Class counts per gateway: rows A..E, one column per farm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub farm_ids: Vec<u32>,
    pub columns: Vec<[u32; N_CLASSES]>,
    /// Number of K-sensor sweeps aggregated into each column.
    pub window: u32,
}

impl FrequencyTable {
    pub fn from_columns(farm_ids: Vec<u32>, columns: Vec<[u32; N_CLASSES]>, window: u32) -> Self {
        assert_eq!(farm_ids.len(), columns.len());
        Self {
            farm_ids,
            columns,
            window,
        }
    }

    pub fn n_farms(&self) -> usize {
        self.columns.len()
    }

    pub fn count(&self, class: ResponseClass, farm: usize) -> u32 {
        self.columns[farm][class.index()]
    }

    pub fn row_total(&self, class: ResponseClass) -> u64 {
        self.columns
            .iter()
            .map(|c| u64::from(c[class.index()]))
            .sum()
    }

    pub fn column_total(&self, farm: usize) -> u64 {
        self.columns[farm].iter().map(|&c| u64::from(c)).sum()
    }

    /// Element-wise sum of several windows over the same farms.
    pub fn aggregate(tables: &[FrequencyTable]) -> Result<Self, FieldError> {
        let first = tables.first().ok_or(FieldError::NoFarms)?;
        let mut out = first.clone();
        for table in &tables[1..] {
            if table.farm_ids != out.farm_ids {
                return Err(FieldError::LayoutMismatch);
            }
            for (acc, col) in out.columns.iter_mut().zip(&table.columns) {
                for (a, c) in acc.iter_mut().zip(col) {
                    *a += c;
                }
            }
            out.window += table.window;
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_class_rows(out, &self.farm_ids, |class, farm| {
            self.columns[farm][class.index()].to_string()
        })
    }
}

/// One sweep over every farm. Each farm draws from its own stream keyed by
/// `(seed, farm_id)`, so the result does not depend on iteration order.
pub fn sample_frequency_table(
    farms: &[FarmConfig],
    params: &SensorParams,
    seed: u64,
) -> Result<FrequencyTable, FieldError> {
    if farms.is_empty() {
        return Err(FieldError::NoFarms);
    }
    let columns = farms
        .iter()
        .map(|farm| {
            farm.validate()?;
            let mut rng = stream_rng(seed, "sensors", &[u64::from(farm.farm_id)]);
            sample_farm_column(farm, params, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrequencyTable::from_columns(
        farms.iter().map(|f| f.farm_id).collect(),
        columns,
        1,
    ))
}

/// `P(gateway | class)`: each class row of a frequency table divided by its sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMatrix {
    pub farm_ids: Vec<u32>,
    pub columns: Vec<[f64; N_CLASSES]>,
}

impl ConditionalMatrix {
    pub fn n_farms(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, class: ResponseClass, farm: usize) -> f64 {
        self.columns[farm][class.index()]
    }

    pub fn row_sum(&self, class: ResponseClass) -> f64 {
        self.columns.iter().map(|c| c[class.index()]).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_class_rows(out, &self.farm_ids, |class, farm| {
            self.columns[farm][class.index()].to_string()
        })
    }
}

/// Row-normalizes a frequency table. Rows with no observations stay zero.
pub fn relative_frequency(table: &FrequencyTable) -> ConditionalMatrix {
    let totals: Vec<u64> = ResponseClass::ALL
        .iter()
        .map(|&class| table.row_total(class))
        .collect();
    let columns = table
        .columns
        .iter()
        .map(|col| {
            let mut probs = [0.0; N_CLASSES];
            for (row, p) in probs.iter_mut().enumerate() {
                if totals[row] > 0 {
                    *p = f64::from(col[row]) / totals[row] as f64;
                }
            }
            probs
        })
        .collect();
    ConditionalMatrix {
        farm_ids: table.farm_ids.clone(),
        columns,
    }
}

pub(crate) fn write_class_rows<W: Write>(
    mut out: W,
    farm_ids: &[u32],
    cell: impl Fn(ResponseClass, usize) -> String,
) -> std::io::Result<()> {
    write!(out, "class")?;
    for id in farm_ids {
        write!(out, ",farm_{id}")?;
    }
    writeln!(out)?;
    for class in ResponseClass::ALL {
        write!(out, "{class}")?;
        for farm in 0..farm_ids.len() {
            write!(out, ",{}", cell(class, farm))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
