//! Scenario: a serializable bundle of network, demand rates, fleet and
//! episode configuration, with load-time validation and repair.

use serde::{Deserialize, Serialize};

use crate::demand::RateTable;
use crate::error::{AmodError, Result};
use crate::mat::{IntMat, Mat};
use crate::network::{
    shortest_path_closure_f64, shortest_path_closure_int, TransportNetwork,
};

pub const DEFAULT_PLANNING_HORIZON: usize = 6;

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub network: TransportNetwork,
    pub rate_table: RateTable,
    pub fleet_size: i64,
    pub initial_idle: Vec<i64>,
    pub episode_length: usize,
    pub time_step_minutes: f64,
    pub planning_horizon: usize,
}

impl Scenario {
    pub fn n_stations(&self) -> usize {
        self.network.n_stations
    }

    /// Observation feature width: current idle, H projected availabilities,
    /// H+1 expected demand masses, expected margin. Identical across
    /// scenarios with the same planning horizon.
    pub fn feature_width(&self) -> usize {
        2 * self.planning_horizon + 3
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScenarioFile::from(self.clone()))?)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Validates invariants and repairs triangle-inequality violations by
/// shortest-path closure on cost and travel time. Returns the list of
/// violations found (empty = valid as given). Repaired pairs are reported
/// but do not make the scenario invalid.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub repaired_cost_pairs: Vec<(usize, usize)>,
    pub repaired_time_pairs: Vec<(usize, usize)>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_scenario(s: &mut Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = s.network.n_stations;
    let push = |msg: String, report: &mut ValidationReport| report.violations.push(msg);

    if n == 0 {
        push("network has no stations".into(), &mut report);
        return report;
    }
    for (what, shape) in [
        ("adjacency", s.network.adjacency.shape()),
        ("travel_time", s.network.travel_time.shape()),
        ("cost", s.network.cost.shape()),
    ] {
        if shape != (n, n) {
            push(format!("{what} is {shape:?}, expected ({n}, {n})"), &mut report);
        }
    }
    for p in &s.network.price {
        if p.shape() != (n, n) {
            push("price matrix shape mismatch".into(), &mut report);
        }
    }
    if !report.violations.is_empty() {
        return report;
    }

    for i in 0..n {
        if s.network.adjacency[(i, i)] != 0 {
            push(format!("adjacency diagonal nonzero at {i}"), &mut report);
        }
        if s.network.travel_time[(i, i)] != 0 {
            push(format!("travel_time diagonal nonzero at {i}"), &mut report);
        }
        for j in 0..n {
            if s.network.adjacency[(i, j)] != s.network.adjacency[(j, i)] {
                push(format!("adjacency asymmetric at ({i}, {j})"), &mut report);
            }
            if i != j && s.network.travel_time[(i, j)] < 1 {
                push(format!("travel_time below 1 at ({i}, {j})"), &mut report);
            }
            if s.network.cost[(i, j)] < 0.0 {
                push(format!("negative cost at ({i}, {j})"), &mut report);
            }
        }
    }

    report.repaired_cost_pairs = shortest_path_closure_f64(&mut s.network.cost);
    report.repaired_time_pairs = shortest_path_closure_int(&mut s.network.travel_time);

    if s.fleet_size < 1 {
        push("fleet_size must be positive".into(), &mut report);
    }
    if s.initial_idle.len() != n {
        push("initial_idle length mismatch".into(), &mut report);
    } else {
        let total: i64 = s.initial_idle.iter().sum();
        if total != s.fleet_size {
            push(
                format!(
                    "fleet conservation: initial_idle sums to {total}, fleet_size is {}",
                    s.fleet_size
                ),
                &mut report,
            );
        }
        if s.initial_idle.iter().any(|&x| x < 0) {
            push("initial_idle has negative entries".into(), &mut report);
        }
    }
    if s.episode_length < 1 {
        push("episode_length must be >= 1".into(), &mut report);
    }
    if let Err(e) = s.rate_table.validate() {
        push(format!("rate table: {e}"), &mut report);
    } else {
        if s.rate_table.n_stations() != n {
            push("rate table dimension mismatch".into(), &mut report);
        }
        if s.rate_table.coverage_steps() < s.episode_length {
            push(
                format!(
                    "rate table covers {} steps, episode needs {}",
                    s.rate_table.coverage_steps(),
                    s.episode_length
                ),
                &mut report,
            );
        }
    }
    if !(s.time_step_minutes > 0.0) {
        push("time_step_minutes must be positive".into(), &mut report);
    }
    report
}

/// On-disk scenario schema. All keys required; `price` is a single matrix
/// for time-flat prices or one matrix per time bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    pub n_stations: usize,
    pub adjacency: IntMat,
    pub travel_time: IntMat,
    pub cost: Mat,
    pub price: PriceField,
    pub rates: Vec<Mat>,
    pub bin_length_steps: usize,
    pub fleet_size: i64,
    pub initial_idle: Vec<i64>,
    pub episode_length: usize,
    pub time_step_minutes: f64,
    pub planning_horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriceField {
    Flat(Mat),
    PerBin(Vec<Mat>),
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        let price = if s.network.price.len() == 1 {
            PriceField::Flat(s.network.price[0].clone())
        } else {
            PriceField::PerBin(s.network.price.clone())
        };
        ScenarioFile {
            name: s.name,
            n_stations: s.network.n_stations,
            adjacency: s.network.adjacency,
            travel_time: s.network.travel_time,
            cost: s.network.cost,
            price,
            rates: s.rate_table.rates,
            bin_length_steps: s.rate_table.bin_length,
            fleet_size: s.fleet_size,
            initial_idle: s.initial_idle,
            episode_length: s.episode_length,
            time_step_minutes: s.time_step_minutes,
            planning_horizon: s.planning_horizon,
        }
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = AmodError;
    fn try_from(f: ScenarioFile) -> Result<Scenario> {
        let price = match f.price {
            PriceField::Flat(m) => vec![m],
            PriceField::PerBin(v) => {
                if v.is_empty() {
                    return Err(AmodError::InvalidArgument("empty per-bin price list".into()));
                }
                v
            }
        };
        if f.adjacency.rows() != f.n_stations {
            return Err(AmodError::InvalidArgument(
                "n_stations does not match adjacency".into(),
            ));
        }
        Ok(Scenario {
            name: f.name,
            network: TransportNetwork {
                n_stations: f.n_stations,
                adjacency: f.adjacency,
                travel_time: f.travel_time,
                cost: f.cost,
                price,
            },
            rate_table: RateTable {
                rates: f.rates,
                bin_length: f.bin_length_steps,
            },
            fleet_size: f.fleet_size,
            initial_idle: f.initial_idle,
            episode_length: f.episode_length,
            time_step_minutes: f.time_step_minutes,
            planning_horizon: f.planning_horizon,
        })
    }
}
