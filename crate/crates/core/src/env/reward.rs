use super::{Action, AgentState, EvaderState, TaskConfig, WorldConfig};

/// Normalised negative sum of truncated pairwise distances plus an action penalty.
pub fn reward_rendezvous(
    states: &[AgentState],
    actions: &[Action],
    task: &TaskConfig,
    world: &WorldConfig,
) -> f64 {
    let n = states.len() as f64;
    let d_c = task.reward_cutoff(world);
    let alpha = -1.0 / (n * (n - 1.0) / 2.0 * d_c);
    let mut sum = 0.0;
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            sum += world
                .distance(states[i].position(), states[j].position())
                .min(d_c);
        }
    }
    let action_norm = actions
        .iter()
        .map(|a| a.linear * a.linear + a.angular * a.angular)
        .sum::<f64>()
        .sqrt();
    alpha * sum + task.action_penalty * action_norm
}

fn closest_pursuer(states: &[AgentState], evader: &EvaderState, world: &WorldConfig) -> f64 {
    states
        .iter()
        .map(|s| world.distance(s.position(), evader.position()))
        .fold(f64::INFINITY, f64::min)
}

/// `-min(d_min, d_o) / d_o` for the closest pursuer distance `d_min`.
pub fn reward_pursuit(
    states: &[AgentState],
    evader: &EvaderState,
    task: &TaskConfig,
    world: &WorldConfig,
) -> f64 {
    let d_o = task.reward_radius(world);
    -closest_pursuer(states, evader, world).min(d_o) / d_o
}

/// Number of evaders whose closest pursuer is within the capture threshold.
pub fn reward_multi_evader(
    states: &[AgentState],
    evaders: &[EvaderState],
    task: &TaskConfig,
    world: &WorldConfig,
) -> f64 {
    evaders
        .iter()
        .filter(|e| closest_pursuer(states, e, world) <= task.d_t)
        .count() as f64
}

pub fn mean_pairwise_distance(states: &[AgentState], world: &WorldConfig) -> f64 {
    let n = states.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += world.distance(states[i].position(), states[j].position());
        }
    }
    sum / (n * (n - 1) / 2) as f64
}
