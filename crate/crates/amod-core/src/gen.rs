//! Seeded scenario generators: uniform grids, commute-style hotspot
//! grids, rings, and irregular (non-grid) service areas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demand::RateTable;
use crate::error::{AmodError, Result};
use crate::mat::{IntMat, Mat};
use crate::network::{build_grid_network, shortest_path_closure_int, TransportNetwork};
use crate::scenario::{Scenario, DEFAULT_PLANNING_HORIZON};

pub const DEFAULT_EPISODE_LENGTH: usize = 60;
pub const DEFAULT_TIME_STEP_MINUTES: f64 = 3.0;

/// Per-hop trip cost and fare used by every generator: a 3x margin keeps
/// all demand worth serving while rebalancing stays genuinely costly.
pub const HOP_COST: f64 = 0.5;
pub const HOP_PRICE: f64 = 1.5;

fn spread_fleet(fleet: i64, n: usize) -> Vec<i64> {
    let mut idle = vec![fleet / n as i64; n];
    for slot in idle.iter_mut().take(fleet as usize % n) {
        *slot += 1;
    }
    idle
}

fn finish(
    name: String,
    network: TransportNetwork,
    rates: Vec<Mat>,
    bin_length: usize,
    fleet_size: i64,
) -> Scenario {
    let n = network.n_stations;
    Scenario {
        name,
        network,
        rate_table: RateTable {
            rates,
            bin_length,
        },
        fleet_size,
        initial_idle: spread_fleet(fleet_size, n),
        episode_length: DEFAULT_EPISODE_LENGTH,
        time_step_minutes: DEFAULT_TIME_STEP_MINUTES,
        planning_horizon: DEFAULT_PLANNING_HORIZON,
    }
}

/// Uniform-demand grid: every ordered pair gets an independent rate in
/// [0, max_rate).
pub fn gen_grid(rows: usize, cols: usize, fleet_size: i64, seed: u64) -> Result<Scenario> {
    let network = build_grid_network(rows, cols, HOP_COST, HOP_PRICE)?;
    let n = network.n_stations;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_rate = 4.0 / n as f64;
    let rates = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            rng.gen::<f64>() * max_rate
        }
    });
    Ok(finish(
        format!("grid-{rows}x{cols}-s{seed}"),
        network,
        vec![rates],
        DEFAULT_EPISODE_LENGTH,
        fleet_size,
    ))
}

/// Commute-style demand on a grid: a seeded subset of "downtown" stations
/// attracts most trips in the first half of the episode and emits them in
/// the second half, over a small uniform background.
pub fn gen_hotspot(rows: usize, cols: usize, fleet_size: i64, seed: u64) -> Result<Scenario> {
    let network = build_grid_network(rows, cols, HOP_COST, HOP_PRICE)?;
    let n = network.n_stations;
    if n < 4 {
        return Err(AmodError::InvalidArgument(
            "hotspot generator needs at least 4 stations".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_hot = (n / 4).max(1);
    let mut stations: Vec<usize> = (0..n).collect();
    // seeded Fisher-Yates prefix picks the hotspot set
    for k in 0..n_hot {
        let pick = k + rng.gen_range(0..stations.len() - k);
        stations.swap(k, pick);
    }
    let hot: Vec<usize> = stations[..n_hot].to_vec();
    let is_hot = |s: usize| hot.contains(&s);

    let background = 0.05 / n as f64;
    // total commute mass proportional to the fleet regardless of network
    // size, so scenarios of different granularity stay comparable
    let n_cold = n - n_hot;
    let commute = 0.4 * fleet_size as f64 / (n_cold as f64 * n_hot as f64);
    let morning = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else if !is_hot(i) && is_hot(j) {
            background + commute * (0.75 + 0.5 * rng.gen::<f64>())
        } else {
            background
        }
    });
    let evening = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else if is_hot(i) && !is_hot(j) {
            background + commute * (0.75 + 0.5 * rng.gen::<f64>())
        } else {
            background
        }
    });
    Ok(finish(
        format!("hotspot-{rows}x{cols}-s{seed}"),
        network,
        vec![morning, evening],
        DEFAULT_EPISODE_LENGTH / 2,
        fleet_size,
    ))
}

/// Ring of n stations; travel time is the ring distance.
pub fn gen_ring(n: usize, fleet_size: i64, seed: u64) -> Result<Scenario> {
    if n < 3 {
        return Err(AmodError::InvalidArgument(
            "ring needs at least 3 stations".into(),
        ));
    }
    let ring_dist = |i: usize, j: usize| -> i64 {
        let d = i.abs_diff(j);
        d.min(n - d) as i64
    };
    let adjacency = IntMat::from_fn(n, n, |i, j| if ring_dist(i, j) == 1 { 1 } else { 0 });
    let travel_time = IntMat::from_fn(n, n, |i, j| ring_dist(i, j));
    let cost = Mat::from_fn(n, n, |i, j| HOP_COST * ring_dist(i, j) as f64);
    let price = Mat::from_fn(n, n, |i, j| HOP_PRICE * ring_dist(i, j) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_rate = 4.0 / n as f64;
    let rates = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            rng.gen::<f64>() * max_rate
        }
    });
    Ok(finish(
        format!("ring-{n}-s{seed}"),
        TransportNetwork {
            n_stations: n,
            adjacency,
            travel_time,
            cost,
            price: vec![price],
        },
        vec![rates],
        DEFAULT_EPISODE_LENGTH,
        fleet_size,
    ))
}

/// Connected non-grid service area: a random spanning tree plus extra
/// random chords; travel times are shortest-path hop counts.
pub fn gen_irregular(n: usize, fleet_size: i64, seed: u64) -> Result<Scenario> {
    if n < 2 {
        return Err(AmodError::InvalidArgument(
            "irregular area needs at least 2 stations".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adjacency = IntMat::zeros(n, n);
    // random spanning tree: attach each new node to a uniform earlier one
    for v in 1..n {
        let u = rng.gen_range(0..v);
        adjacency[(u, v)] = 1;
        adjacency[(v, u)] = 1;
    }
    // extra chords for alternative routes
    for _ in 0..n / 2 {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            adjacency[(a, b)] = 1;
            adjacency[(b, a)] = 1;
        }
    }
    let big = n as i64; // any hop count exceeds the diameter after closure
    let mut travel_time = IntMat::from_fn(n, n, |i, j| {
        if i == j {
            0
        } else if adjacency[(i, j)] != 0 {
            1
        } else {
            big
        }
    });
    shortest_path_closure_int(&mut travel_time);
    let cost = Mat::from_fn(n, n, |i, j| HOP_COST * travel_time[(i, j)] as f64);
    let price = Mat::from_fn(n, n, |i, j| HOP_PRICE * travel_time[(i, j)] as f64);
    let max_rate = 4.0 / n as f64;
    let rates = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            rng.gen::<f64>() * max_rate
        }
    });
    Ok(finish(
        format!("irregular-{n}-s{seed}"),
        TransportNetwork {
            n_stations: n,
            adjacency,
            travel_time,
            cost,
            price: vec![price],
        },
        vec![rates],
        DEFAULT_EPISODE_LENGTH,
        fleet_size,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::validate_scenario;
    use crate::sim::Simulator;

    #[test]
    fn grid_sizes_match_formula() {
        assert_eq!(gen_grid(4, 4, 16, 0).unwrap().n_stations(), 16);
        assert_eq!(gen_grid(20, 20, 16, 0).unwrap().n_stations(), 400);
    }

    #[test]
    fn generators_are_deterministic() {
        for (a, b) in [
            (gen_grid(3, 3, 9, 7), gen_grid(3, 3, 9, 7)),
            (gen_hotspot(4, 4, 24, 7), gen_hotspot(4, 4, 24, 7)),
            (gen_ring(8, 8, 7), gen_ring(8, 8, 7)),
            (gen_irregular(16, 16, 7), gen_irregular(16, 16, 7)),
        ] {
            assert_eq!(a.unwrap().to_json().unwrap(), b.unwrap().to_json().unwrap());
        }
    }

    #[test]
    fn all_generated_scenarios_validate_cleanly() {
        for mut s in [
            gen_grid(3, 4, 10, 1).unwrap(),
            gen_hotspot(4, 4, 24, 2).unwrap(),
            gen_ring(10, 12, 3).unwrap(),
            gen_irregular(16, 20, 4).unwrap(),
        ] {
            let report = validate_scenario(&mut s);
            assert!(report.is_valid(), "{}: {:?}", s.name, report.violations);
            assert!(report.repaired_cost_pairs.is_empty(), "{}", s.name);
            assert!(report.repaired_time_pairs.is_empty(), "{}", s.name);
        }
    }

    #[test]
    fn fleet_spread_conserves_vehicles() {
        let s = gen_grid(3, 3, 10, 0).unwrap();
        assert_eq!(s.initial_idle.iter().sum::<i64>(), 10);
        assert!(s.initial_idle.iter().all(|&x| x == 1 || x == 2));
    }

    #[test]
    fn hotspot_demand_is_asymmetric_across_bins() {
        let s = gen_hotspot(4, 4, 24, 5).unwrap();
        assert_eq!(s.rate_table.rates.len(), 2);
        let total = |m: &Mat| m.data().iter().sum::<f64>();
        // both bins carry the same total commute structure, but the
        // direction flips: per-pair rates differ between bins
        let diff = s.rate_table.rates[0].max_abs_diff(&s.rate_table.rates[1]);
        assert!(diff > 0.01, "bins look identical");
        assert!(total(&s.rate_table.rates[0]) > 0.0);
    }

    #[test]
    fn irregular_is_connected_and_runs() {
        let s = gen_irregular(16, 16, 9).unwrap();
        let diameter = (0..16)
            .flat_map(|i| (0..16).map(move |j| (i, j)))
            .map(|(i, j)| s.network.travel_time[(i, j)])
            .max()
            .unwrap();
        assert!(diameter < 16, "disconnected: diameter {diameter}");
        let mut sim = Simulator::new(s, 0).unwrap();
        let action = crate::sim::RebalanceAction::uniform(16);
        for _ in 0..5 {
            sim.step(&action).unwrap();
        }
    }

    #[test]
    fn ring_travel_time_wraps() {
        let s = gen_ring(6, 6, 0).unwrap();
        assert_eq!(s.network.travel_time[(0, 5)], 1);
        assert_eq!(s.network.travel_time[(0, 3)], 3);
    }
}
