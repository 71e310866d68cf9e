use super::{AgentState, Boundary, WorldConfig};

const EVADER: u32 = 0;

/// Voronoi partition of the world between one evader and a set of pursuers,
/// estimated on a regular grid of sample points (cell centres of a
/// `resolution x resolution` lattice). Toroidal worlds use minimal-image distances.
#[derive(Debug, Clone)]
pub struct VoronoiGrid {
    resolution: usize,
    world: WorldConfig,
    evader: [f64; 2],
    pursuers: usize,
    /// 0 for the evader's cell, `k + 1` for pursuer `k`.
    labels: Vec<u32>,
}

impl VoronoiGrid {
    pub fn compute(
        evader: [f64; 2],
        pursuers: &[[f64; 2]],
        world: &WorldConfig,
        resolution: usize,
    ) -> Self {
        let mut labels = Vec::with_capacity(resolution * resolution);
        for iy in 0..resolution {
            for ix in 0..resolution {
                let p = sample_point(world, resolution, ix, iy);
                let [dx, dy] = world.displacement(p, evader);
                let mut best = dx * dx + dy * dy;
                let mut label = EVADER;
                for (k, q) in pursuers.iter().enumerate() {
                    let [dx, dy] = world.displacement(p, *q);
                    let d = dx * dx + dy * dy;
                    if d < best {
                        best = d;
                        label = k as u32 + 1;
                    }
                }
                labels.push(label);
            }
        }
        VoronoiGrid {
            resolution,
            world: *world,
            evader,
            pursuers: pursuers.len(),
            labels,
        }
    }

    pub fn from_states(
        evader: [f64; 2],
        pursuers: &[AgentState],
        world: &WorldConfig,
        resolution: usize,
    ) -> Self {
        let pts: Vec<[f64; 2]> = pursuers.iter().map(|s| s.position()).collect();
        Self::compute(evader, &pts, world, resolution)
    }

    #[inline]
    fn label(&self, ix: usize, iy: usize) -> u32 {
        self.labels[iy * self.resolution + ix]
    }

    /// Number of samples in the evader's cell.
    pub fn evader_cell_samples(&self) -> usize {
        self.labels.iter().filter(|&&l| l == EVADER).count()
    }

    /// Centroid of the evader's cell as a displacement from the evader.
    pub fn evader_centroid(&self) -> Option<[f64; 2]> {
        let mut sum = [0.0, 0.0];
        let mut count = 0usize;
        for iy in 0..self.resolution {
            for ix in 0..self.resolution {
                if self.label(ix, iy) == EVADER {
                    let p = sample_point(&self.world, self.resolution, ix, iy);
                    let [dx, dy] = self.world.displacement(self.evader, p);
                    sum[0] += dx;
                    sum[1] += dy;
                    count += 1;
                }
            }
        }
        (count > 0).then(|| [sum[0] / count as f64, sum[1] / count as f64])
    }

    /// For every pursuer, the midpoint of the boundary it shares with the
    /// evader's cell (as a displacement from the evader), or `None` when the
    /// two cells are not adjacent.
    pub fn shared_boundary_midpoints(&self) -> Vec<Option<[f64; 2]>> {
        let mut sums = vec![[0.0, 0.0, 0.0]; self.pursuers];
        let wrap = self.world.boundary == Boundary::Toroidal;
        let res = self.resolution;
        let mut visit = |a: (usize, usize), b: (usize, usize)| {
            let (la, lb) = (self.label(a.0, a.1), self.label(b.0, b.1));
            let other = match (la, lb) {
                (EVADER, l) if l != EVADER => l,
                (l, EVADER) if l != EVADER => l,
                _ => return,
            };
            let pa = sample_point(&self.world, res, a.0, a.1);
            let pb = sample_point(&self.world, res, b.0, b.1);
            let da = self.world.displacement(self.evader, pa);
            let step = self.world.displacement(pa, pb);
            let s = &mut sums[other as usize - 1];
            s[0] += da[0] + 0.5 * step[0];
            s[1] += da[1] + 0.5 * step[1];
            s[2] += 1.0;
        };
        for iy in 0..res {
            for ix in 0..res {
                if ix + 1 < res {
                    visit((ix, iy), (ix + 1, iy));
                } else if wrap {
                    visit((ix, iy), (0, iy));
                }
                if iy + 1 < res {
                    visit((ix, iy), (ix, iy + 1));
                } else if wrap {
                    visit((ix, iy), (ix, 0));
                }
            }
        }
        sums.into_iter()
            .map(|s| (s[2] > 0.0).then(|| [s[0] / s[2], s[1] / s[2]]))
            .collect()
    }
}

#[inline]
fn sample_point(world: &WorldConfig, resolution: usize, ix: usize, iy: usize) -> [f64; 2] {
    [
        (ix as f64 + 0.5) * world.x_max / resolution as f64,
        (iy as f64 + 0.5) * world.y_max / resolution as f64,
    ]
}

/// Velocity of an evader that moves toward the centroid of its own Voronoi
/// cell, at most `speed` per unit time.
///
/// When the cell is smaller than the sampling grid the evader flees directly
/// away from the closest pursuer.
pub fn evader_action(
    evader: [f64; 2],
    pursuers: &[AgentState],
    world: &WorldConfig,
    speed: f64,
    resolution: usize,
) -> [f64; 2] {
    let grid = VoronoiGrid::from_states(evader, pursuers, world, resolution);
    evader_action_from_grid(&grid, evader, pursuers, world, speed)
}

pub(crate) fn evader_action_from_grid(
    grid: &VoronoiGrid,
    evader: [f64; 2],
    pursuers: &[AgentState],
    world: &WorldConfig,
    speed: f64,
) -> [f64; 2] {
    let target = match grid.evader_centroid() {
        Some(c) => c,
        None => {
            let nearest = pursuers
                .iter()
                .map(|p| world.displacement(p.position(), evader))
                .min_by(|a, b| a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1])));
            match nearest {
                Some([dx, dy]) if dx.hypot(dy) > 0.0 => {
                    let n = dx.hypot(dy);
                    return [speed * dx / n, speed * dy / n];
                }
                _ => return [0.0, 0.0],
            }
        }
    };
    let dist = target[0].hypot(target[1]);
    if dist < 1e-9 {
        return [0.0, 0.0];
    }
    let v = (dist / world.dt).min(speed);
    [v * target[0] / dist, v * target[1] / dist]
}
