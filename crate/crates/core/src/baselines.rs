//! Classical controllers: consensus with a PD tracking layer for unicycles,
//! a Voronoi pursuer and a scripted surround-then-close pursuer.

use serde::{Deserialize, Serialize};

use crate::env::{
    wrap_angle, Action, ActionBounds, AgentState, Dynamics, EvaderState, InteractionGraph,
    TaskConfig, VoronoiGrid, WorldConfig,
};
use crate::{Error, Result};

/// Gains of the tracking controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdGains {
    pub k1: f64,
    pub k2: f64,
    pub d2: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        PdGains {
            k1: 2.0,
            k2: 4.0,
            d2: 1.0,
        }
    }
}

impl PdGains {
    /// Gains used by the consensus baseline; critically damped heading loop at `dt = 1`.
    pub const CONSENSUS: PdGains = PdGains {
        k1: 1.0,
        k2: 0.5,
        d2: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let bad: Vec<String> = [("k1", self.k1), ("k2", self.k2), ("d2", self.d2)]
            .iter()
            .filter(|(_, g)| !(*g > 0.0 && g.is_finite()))
            .map(|(n, g)| format!("gain {n} must be positive (got {g})"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// How the consensus vector becomes a reference speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusReference {
    /// `v_d = |x_d|`.
    Raw,
    /// `v_d = |x_d| / |N_i| * max(0, cos(phi_d - phi))`: distance to the neighbour
    /// centroid, zero while facing away from it.
    #[default]
    Averaged,
}

/// `-sum_j (x_i - x_j)` over the neighbours, with minimal-image displacements.
pub fn consensus_velocity(own: [f64; 2], neighbors: &[[f64; 2]], world: &WorldConfig) -> [f64; 2] {
    let mut v = [0.0, 0.0];
    for n in neighbors {
        let d = world.displacement(own, *n);
        v[0] += d[0];
        v[1] += d[1];
    }
    v
}

/// Heading error towards `desired`, wrapped to `(-pi, pi]`; zero for a zero vector.
fn heading_error(state: &AgentState, desired: [f64; 2]) -> f64 {
    if desired == [0.0, 0.0] {
        0.0
    } else {
        wrap_angle(desired[1].atan2(desired[0]) - state.phi)
    }
}

/// Acceleration commands tracking a desired velocity vector:
/// `a_v = K1 (|x_d| - v)`, `a_w = K2 (phi_d - phi) + D2 (0 - w)`.
pub fn pd_control(
    state: &AgentState,
    desired: [f64; 2],
    gains: &PdGains,
    bounds: ActionBounds,
) -> Action {
    pd_control_speed(state, desired, desired[0].hypot(desired[1]), gains, bounds)
}

fn pd_control_speed(
    state: &AgentState,
    desired: [f64; 2],
    v_d: f64,
    gains: &PdGains,
    bounds: ActionBounds,
) -> Action {
    let err = heading_error(state, desired);
    Action::new(
        gains.k1 * (v_d - state.v),
        gains.k2 * err - gains.d2 * state.omega,
    )
    .clamped(bounds)
}

/// Velocity commands for a desired velocity vector: `v = |x_d|`, `w = K2 (phi_d - phi)`.
pub fn velocity_control(
    state: &AgentState,
    desired: [f64; 2],
    gains: &PdGains,
    bounds: ActionBounds,
) -> Action {
    let v_d = desired[0].hypot(desired[1]);
    Action::new(v_d, gains.k2 * heading_error(state, desired)).clamped(bounds)
}

fn track_speed(
    state: &AgentState,
    desired: [f64; 2],
    v_d: f64,
    gains: &PdGains,
    task: &TaskConfig,
) -> Action {
    let bounds = task.action_bounds();
    match task.dynamics {
        Dynamics::Single => {
            Action::new(v_d, gains.k2 * heading_error(state, desired)).clamped(bounds)
        }
        Dynamics::Double => pd_control_speed(state, desired, v_d, gains, bounds),
    }
}

fn track(state: &AgentState, desired: [f64; 2], gains: &PdGains, task: &TaskConfig) -> Action {
    track_speed(state, desired, desired[0].hypot(desired[1]), gains, task)
}

/// Consensus protocol on the interaction graph, tracked by the unicycle controller.
pub fn consensus_pd_policy(
    i: usize,
    states: &[AgentState],
    graph: &InteractionGraph,
    gains: &PdGains,
    reference: ConsensusReference,
    task: &TaskConfig,
    world: &WorldConfig,
) -> Action {
    let neighbors: Vec<[f64; 2]> = graph
        .neighbors(i)
        .iter()
        .map(|&j| states[j].position())
        .collect();
    let desired = consensus_velocity(states[i].position(), &neighbors, world);
    let norm = desired[0].hypot(desired[1]);
    let v_d = match reference {
        ConsensusReference::Raw => norm,
        ConsensusReference::Averaged if neighbors.is_empty() => 0.0,
        ConsensusReference::Averaged => {
            norm / neighbors.len() as f64 * heading_error(&states[i], desired).cos().max(0.0)
        }
    };
    track_speed(&states[i], desired, v_d, gains, task)
}

/// Point each pursuer heads for: the midpoint of its boundary with the
/// evader's Voronoi cell, or the evader itself when the cells do not touch.
/// A lone pursuer always heads for the evader. Returned as displacements from
/// the pursuers.
pub fn voronoi_pursuit_targets(
    pursuers: &[AgentState],
    evader: &EvaderState,
    world: &WorldConfig,
    resolution: usize,
) -> Vec<[f64; 2]> {
    if pursuers.len() == 1 {
        return vec![world.displacement(pursuers[0].position(), evader.position())];
    }
    let grid = VoronoiGrid::from_states(evader.position(), pursuers, world, resolution);
    let mids = grid.shared_boundary_midpoints();
    pursuers
        .iter()
        .zip(mids)
        .map(|(p, m)| {
            let to_evader = world.displacement(p.position(), evader.position());
            match m {
                Some(m) => [to_evader[0] + m[0], to_evader[1] + m[1]],
                None => to_evader,
            }
        })
        .collect()
}

fn full_speed(d: [f64; 2], speed: f64) -> [f64; 2] {
    let n = d[0].hypot(d[1]);
    if n == 0.0 {
        [0.0, 0.0]
    } else {
        [speed * d[0] / n, speed * d[1] / n]
    }
}

/// Every pursuer moves at full speed toward its shared-boundary target.
pub fn voronoi_pursuit_actions(
    pursuers: &[AgentState],
    evader: &EvaderState,
    gains: &PdGains,
    task: &TaskConfig,
    world: &WorldConfig,
) -> Vec<Action> {
    voronoi_pursuit_targets(pursuers, evader, world, task.voronoi_resolution)
        .into_iter()
        .zip(pursuers)
        .map(|(t, p)| track(p, full_speed(t, task.v_max), gains, task))
        .collect()
}

/// Single-agent form of [`voronoi_pursuit_actions`].
pub fn voronoi_pursuit_action(
    i: usize,
    pursuers: &[AgentState],
    evader: &EvaderState,
    gains: &PdGains,
    task: &TaskConfig,
    world: &WorldConfig,
) -> Action {
    let t = voronoi_pursuit_targets(pursuers, evader, world, task.voronoi_resolution)[i];
    track(&pursuers[i], full_speed(t, task.v_max), gains, task)
}

/// Scripted encirclement: pursuers keep their angular order around the
/// evader, spread to evenly spaced slots on a ring, and shrink the ring once
/// no angular gap exceeds `1.5` times the even spacing.
pub fn surround_pursuit_actions(
    pursuers: &[AgentState],
    evader: &EvaderState,
    gains: &PdGains,
    task: &TaskConfig,
    world: &WorldConfig,
) -> Vec<Action> {
    use std::f64::consts::TAU;
    let n = pursuers.len();
    let rel: Vec<[f64; 2]> = pursuers
        .iter()
        .map(|p| world.displacement(evader.position(), p.position()))
        .collect();
    let angle: Vec<f64> = rel.iter().map(|d| d[1].atan2(d[0])).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| angle[a].total_cmp(&angle[b]));

    let spacing = TAU / n as f64;
    // circular mean of the offsets between actual angles and evenly spaced slots
    let (mut s, mut c) = (0.0, 0.0);
    for (k, &i) in order.iter().enumerate() {
        let off = angle[i] - spacing * k as f64;
        s += off.sin();
        c += off.cos();
    }
    let base = s.atan2(c);
    let max_gap = (0..n)
        .map(|k| {
            let a = angle[order[k]];
            let b = angle[order[(k + 1) % n]];
            (b - a).rem_euclid(TAU)
        })
        .fold(0.0, f64::max);
    let max_gap = if n == 1 { TAU } else { max_gap };
    let mut radii: Vec<f64> = rel.iter().map(|d| d[0].hypot(d[1])).collect();
    radii.sort_by(f64::total_cmp);
    let median = radii[n / 2];
    let formed = max_gap <= 1.5 * spacing;
    let radius = if formed {
        (median - 2.0 * task.v_max).max(0.0)
    } else {
        median.max(4.0 * task.d_t)
    };

    let mut actions = vec![Action::ZERO; n];
    for (k, &i) in order.iter().enumerate() {
        let slot = base + spacing * k as f64;
        let target = [radius * slot.cos(), radius * slot.sin()];
        let desired = [target[0] - rel[i][0], target[1] - rel[i][1]];
        let speed = desired[0].hypot(desired[1]).min(task.v_max);
        actions[i] = track(&pursuers[i], full_speed(desired, speed), gains, task);
    }
    actions
}
