//! The rebalancing MDP: state evolution, the three-step control cycle
//! (match passengers, choose a desired idle distribution, rebalance),
//! reward, and observation construction.
//!
//! Step ordering: passengers are matched against the demand sampled for the
//! current step, rebalancing flows are dispatched, then time advances —
//! in-transit vehicles land at the start of the step they arrive in and the
//! next demand matrix is drawn.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::demand::{estimate_demand, sample_demand, DemandMatrix};
use crate::error::{AmodError, Result};
use crate::flow::{solve_matching, solve_rebalancing, FlowMatrix};
use crate::mat::{IntMat, Mat, SparseMat};
use crate::network::normalized_adjacency;
use crate::scenario::{validate_scenario, Scenario};

/// The policy's action: a probability vector over stations giving the
/// target share of idle vehicles per station.
#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceAction {
    pub distribution: Vec<f64>,
}

pub const SIMPLEX_TOL: f64 = 1e-9;

impl RebalanceAction {
    pub fn uniform(n: usize) -> Self {
        RebalanceAction {
            distribution: vec![1.0 / n as f64; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.distribution.len() != n {
            return Err(AmodError::InvalidArgument(format!(
                "action length {} does not match {n} stations",
                self.distribution.len()
            )));
        }
        if self.distribution.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(AmodError::InvalidArgument(
                "action entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = self.distribution.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(AmodError::InvalidArgument(format!(
                "action must sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

/// Desired per-station vehicle counts from an action: floor(a_i * total
/// idle). The floor keeps counts integral and never above the idle stock.
pub fn desired_counts(action: &RebalanceAction, idle: &[i64]) -> Vec<i64> {
    let total: i64 = idle.iter().sum();
    action
        .distribution
        .iter()
        .map(|&a| (a * total as f64).floor() as i64)
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct Kpis {
    pub served_demand: i64,
    pub rebalancing_cost: f64,
    pub matched_profit: f64,
}

#[derive(Debug, Clone)]
pub struct SystemState {
    pub t: usize,
    /// Idle vehicles per station, m_i.
    pub idle: Vec<i64>,
    /// arrival time -> per-station incoming vehicle counts.
    pub arrivals: BTreeMap<usize, Vec<i64>>,
    /// Cumulative episode KPIs.
    pub totals: Kpis,
}

impl SystemState {
    /// sum(idle) + in-transit; must equal the fleet size at all times.
    pub fn vehicle_total(&self) -> i64 {
        let in_transit: i64 = self.arrivals.values().flatten().sum();
        self.idle.iter().sum::<i64>() + in_transit
    }
}

/// Per-node features plus the (normalized) adjacency the policy consumes.
#[derive(Debug, Clone)]
pub struct Observation {
    pub node_features: Mat,
    pub norm_adjacency: SparseMat,
    pub horizon: usize,
}

impl Observation {
    pub fn n_stations(&self) -> usize {
        self.node_features.rows()
    }

    pub fn feature_width(&self) -> usize {
        self.node_features.cols()
    }

    /// Current idle stock at station i, in units of the mean per-station
    /// fleet share.
    pub fn idle_of(&self, i: usize) -> f64 {
        self.node_features[(i, 0)]
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub kpis: Kpis,
    pub passenger_flow: FlowMatrix,
    pub rebalance_flow: FlowMatrix,
}

pub struct Simulator {
    scenario: Scenario,
    norm_adj: SparseMat,
    state: SystemState,
    rng: ChaCha8Rng,
    current_demand: DemandMatrix,
}

impl Simulator {
    /// Validates the scenario (repairing metric violations) and resets.
    pub fn new(mut scenario: Scenario, seed: u64) -> Result<Simulator> {
        let report = validate_scenario(&mut scenario);
        if !report.is_valid() {
            return Err(AmodError::InvalidArgument(format!(
                "invalid scenario: {}",
                report.violations.join("; ")
            )));
        }
        let norm_adj = normalized_adjacency(&scenario.network.adjacency)?;
        let n = scenario.n_stations();
        let mut sim = Simulator {
            scenario,
            norm_adj,
            state: SystemState {
                t: 0,
                idle: Vec::new(),
                arrivals: BTreeMap::new(),
                totals: Kpis::default(),
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            current_demand: IntMat::zeros(n, n),
        };
        sim.reset(seed)?;
        Ok(sim)
    }

    /// Back to t = 0 with a fresh rng stream; returns the initial observation.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = SystemState {
            t: 0,
            idle: self.scenario.initial_idle.clone(),
            arrivals: BTreeMap::new(),
            totals: Kpis::default(),
        };
        self.current_demand = sample_demand(&self.scenario.rate_table, 0, &mut self.rng)?;
        Ok(self.observe())
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn current_demand(&self) -> &DemandMatrix {
        &self.current_demand
    }

    /// Driver hook: overrides the demand the next step will match against.
    pub fn set_current_demand(&mut self, demand: DemandMatrix) {
        self.current_demand = demand;
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.scenario.episode_length
    }

    fn price_now(&self) -> &Mat {
        let bin = self.scenario.rate_table.bin_of(self.state.t);
        self.scenario.network.price_at_bin(bin)
    }

    fn assert_conserved(&self) {
        assert_eq!(
            self.state.vehicle_total(),
            self.scenario.fleet_size,
            "fleet conservation violated at t = {}",
            self.state.t
        );
        assert!(
            self.state.idle.iter().all(|&m| m >= 0),
            "negative idle count at t = {}",
            self.state.t
        );
    }

    fn schedule(&mut self, station: usize, at: usize, count: i64) {
        let n = self.scenario.n_stations();
        let slot = self
            .state
            .arrivals
            .entry(at)
            .or_insert_with(|| vec![0; n]);
        slot[station] += count;
    }

    /// Dispatch idle vehicles to trip requests; mutates idle and the
    /// arrival ledger, accumulates served demand and profit.
    fn match_passengers(&mut self) -> Result<(FlowMatrix, f64)> {
        let n = self.scenario.n_stations();
        let price = self.price_now().clone();
        let cost = self.scenario.network.cost.clone();
        let flow = solve_matching(&self.current_demand, &price, &cost, &self.state.idle)?;
        let mut profit = 0.0;
        let mut served = 0i64;
        for i in 0..n {
            for j in 0..n {
                let x = flow.flows[(i, j)];
                if x == 0 {
                    continue;
                }
                profit += x as f64 * (price[(i, j)] - cost[(i, j)]);
                served += x;
                self.state.idle[i] -= x;
                let tau = self.scenario.network.travel_time[(i, j)];
                if tau == 0 {
                    // self-loop trip: the vehicle never leaves the station
                    self.state.idle[j] += x;
                } else {
                    self.schedule(j, self.state.t + tau as usize, x);
                }
            }
        }
        self.state.totals.matched_profit += profit;
        self.state.totals.served_demand += served;
        self.assert_conserved();
        Ok((flow, profit))
    }

    /// Convert the action into rebalancing trips; mutates idle and the
    /// ledger, accumulates rebalancing cost.
    fn apply_rebalance(&mut self, action: &RebalanceAction) -> Result<(FlowMatrix, f64)> {
        let n = self.scenario.n_stations();
        let desired = desired_counts(action, &self.state.idle);
        debug_assert!(desired.iter().sum::<i64>() <= self.state.idle.iter().sum::<i64>());
        let flow = solve_rebalancing(&self.state.idle, &desired, &self.scenario.network.cost)?;
        let mut cost_total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let y = flow.flows[(i, j)];
                if y == 0 {
                    continue;
                }
                cost_total += y as f64 * self.scenario.network.cost[(i, j)];
                self.state.idle[i] -= y;
                let tau = self.scenario.network.travel_time[(i, j)].max(1);
                self.schedule(j, self.state.t + tau as usize, y);
            }
        }
        self.state.totals.rebalancing_cost += cost_total;
        self.assert_conserved();
        Ok((flow, cost_total))
    }

    /// Advance the clock: land arrivals due now and sample the next demand.
    fn advance_time(&mut self) -> Result<()> {
        self.state.t += 1;
        if let Some(landing) = self.state.arrivals.remove(&self.state.t) {
            for (i, count) in landing.into_iter().enumerate() {
                self.state.idle[i] += count;
            }
        }
        let n = self.scenario.n_stations();
        self.current_demand = if self.state.t < self.scenario.episode_length {
            sample_demand(&self.scenario.rate_table, self.state.t, &mut self.rng)?
        } else {
            IntMat::zeros(n, n)
        };
        self.assert_conserved();
        Ok(())
    }

    /// One full control cycle. Reward is matched profit minus rebalancing
    /// cost, exactly.
    pub fn step(&mut self, action: &RebalanceAction) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(AmodError::InvalidArgument("episode already finished".into()));
        }
        action.validate(self.scenario.n_stations())?;
        let (passenger_flow, profit) = self.match_passengers()?;
        let (rebalance_flow, reb_cost) = self.apply_rebalance(action)?;
        let (served, _) = {
            let s: i64 = passenger_flow.flows.data().iter().sum();
            (s, ())
        };
        self.advance_time()?;
        Ok(StepOutcome {
            observation: self.observe(),
            reward: profit - reb_cost,
            done: self.is_done(),
            kpis: Kpis {
                served_demand: served,
                rebalancing_cost: reb_cost,
                matched_profit: profit,
            },
            passenger_flow,
            rebalance_flow,
        })
    }

    /// Node feature layout (H = planning horizon):
    ///   0          current idle stock, relative to the per-station mean
    ///   1 ..= H    projected availability share at t+1 .. t+H
    ///   H+1..=2H+1 expected outbound demand mass at t .. t+H
    ///   2H+2       expected outbound margin at t
    ///
    /// Every feature is divided by the mean per-station fleet share
    /// (fleet / stations), the natural capacity unit: a value of 1 means
    /// "an average station's worth". This keeps all features O(1) and
    /// scale-free in both fleet size and network size, so shared GCN
    /// weights see comparable magnitudes across scenarios — faster
    /// learning and meaningful zero-shot transfer.
    pub fn observe(&self) -> Observation {
        let n = self.scenario.n_stations();
        let h = self.scenario.planning_horizon;
        let f = 2 * h + 3;
        let t = self.state.t;
        let unit = self.scenario.fleet_size as f64 / n as f64;
        let mut x = Mat::zeros(n, f);

        for i in 0..n {
            x[(i, 0)] = self.state.idle[i] as f64 / unit;
        }
        // projected availability: idle plus ledger arrivals due by t + k
        for i in 0..n {
            let mut proj = self.state.idle[i] as f64;
            let mut k = 1;
            for (&at, counts) in &self.state.arrivals {
                while k <= h && t + k < at {
                    x[(i, k)] = proj / unit;
                    k += 1;
                }
                if k > h {
                    break;
                }
                proj += counts[i] as f64;
            }
            while k <= h {
                x[(i, k)] = proj / unit;
                k += 1;
            }
        }
        // expected demand mass per origin over t .. t+H
        let estimates = estimate_demand(&self.scenario.rate_table, t, h + 1);
        for (k, rates) in estimates.iter().enumerate() {
            for i in 0..n {
                x[(i, h + 1 + k)] = rates.row(i).iter().sum::<f64>() / unit;
            }
        }
        // expected margin per origin at t
        let price = self.price_now();
        let cost = &self.scenario.network.cost;
        let rates_now = &estimates[0];
        for i in 0..n {
            let mut margin = 0.0;
            for j in 0..n {
                margin += rates_now[(i, j)] * (price[(i, j)] - cost[(i, j)]);
            }
            x[(i, 2 * h + 2)] = margin / unit;
        }
        debug_assert!(!x.has_non_finite());
        Observation {
            node_features: x,
            norm_adjacency: self.norm_adj.clone(),
            horizon: h,
        }
    }
}
