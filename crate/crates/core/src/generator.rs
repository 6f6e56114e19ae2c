//! Seeded instance generator.
//!
//! Every generated network connects each source to each tank, every pair of
//! tanks in both directions and each tank to each plant. Constants are
//! drawn from ChaCha8 and rounded to multiples of 1/16, so the arithmetic
//! of the construction below is exact and the output is the same on every
//! platform.
//!
//! Supplies are then trimmed against a witness schedule: at every step the
//! best-stocked tanks feed the plants their required quantity, each source
//! ships its current stock to one of the remaining tanks, and any supply a
//! source could not ship by the end of the horizon is removed. The witness
//! respects flow bounds, storage bounds, the one-pipeline rule and the
//! empty-source condition, so the instance always admits a schedule that
//! delivers every plant its required quantity.

use crate::model::{Arc, Instance, InstanceData, Node, NodeKind};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Closed sampling interval.
pub type Range = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct Ranges {
    pub supply_quantity: Range,
    pub supply_quality: Range,
    pub demand_quantity: Range,
    pub demand_quality: Range,
    pub arc_cost: Range,
    pub shortage_cost: Range,
    pub arc_upper: Range,
    pub max_storage: Range,
}

impl Default for Ranges {
    fn default() -> Self {
        Self {
            supply_quantity: (5.0, 20.0),
            supply_quality: (1.0, 5.0),
            demand_quantity: (3.0, 10.0),
            demand_quality: (1.0, 4.0),
            arc_cost: (1.0, 5.0),
            shortage_cost: (50.0, 200.0),
            arc_upper: (10.0, 40.0),
            max_storage: (20.0, 60.0),
        }
    }
}

/// How stream qualities relate to plant requirements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Qualities drawn from `Ranges::supply_quality`.
    Mixed,
    /// Every source and initial tank quality is at least 1.2 times the
    /// largest required quality, so any delivery of the required quantity
    /// meets the requirement.
    Slack,
    /// Every stream quality times the largest pipeline capacity stays below
    /// the smallest plant requirement `RC·RQ`, so no single tank can cover
    /// any plant.
    Starved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub sources: usize,
    pub tanks: usize,
    pub plants: usize,
    pub horizon: usize,
    pub seed: u64,
    pub family: Family,
    pub ranges: Ranges,
}

impl GeneratorSpec {
    pub fn new(sources: usize, tanks: usize, plants: usize, horizon: usize, seed: u64) -> Self {
        Self {
            sources,
            tanks,
            plants,
            horizon,
            seed,
            family: Family::Mixed,
            ranges: Ranges::default(),
        }
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        if family == Family::Starved {
            self.ranges.demand_quantity = (6.0, 10.0);
            self.ranges.demand_quality = (3.0, 4.0);
            self.ranges.arc_upper = (10.0, 20.0);
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub instance: Instance,
    pub warnings: Vec<String>,
}

const GRID: f64 = 16.0;

fn round(v: f64) -> f64 {
    (v * GRID).round() / GRID
}

fn floor(v: f64) -> f64 {
    (v * GRID).floor() / GRID
}

fn ceil(v: f64) -> f64 {
    (v * GRID).ceil() / GRID
}

fn draw(rng: &mut ChaCha8Rng, r: Range) -> f64 {
    if r.1 > r.0 {
        round(rng.random_range(r.0..=r.1))
    } else {
        round(r.0)
    }
}

/// Generates an instance; structural problems (no tanks, fewer tanks than
/// plants) are reported as warnings and the instance is still produced.
pub fn generate(spec: &GeneratorSpec) -> crate::Result<Generated> {
    if spec.sources == 0 || spec.plants == 0 || spec.horizon == 0 {
        return Err(crate::PoolingError::InvalidParameter(
            "generator needs at least one source, one plant and one step".into(),
        ));
    }
    let mut warnings = Vec::new();
    if spec.tanks <= spec.plants {
        warnings.push(format!(
            "{} tanks for {} plants: sources cannot be matched to tanks while every plant is fed",
            spec.tanks, spec.plants
        ));
    }
    let r = &spec.ranges;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (ns, ni, np, h) = (spec.sources, spec.tanks, spec.plants, spec.horizon);

    let mut supply_quantity: Vec<Vec<f64>> = (0..ns)
        .map(|_| (0..h).map(|_| draw(&mut rng, r.supply_quantity)).collect())
        .collect();
    let mut demand_quantity: Vec<Vec<f64>> = (0..np)
        .map(|_| (0..h).map(|_| draw(&mut rng, r.demand_quantity)).collect())
        .collect();
    let demand_quality: Vec<Vec<f64>> = (0..np)
        .map(|_| (0..h).map(|_| draw(&mut rng, r.demand_quality)).collect())
        .collect();
    let shortage_cost: Vec<f64> = (0..np).map(|_| draw(&mut rng, r.shortage_cost)).collect();
    let max_storage: Vec<f64> = (0..ni).map(|_| draw(&mut rng, r.max_storage)).collect();
    let fill: Vec<f64> = (0..ni).map(|_| rng.random_range(0.6..=0.9)).collect();
    let mut tank_quantity: Vec<f64> = max_storage.iter().zip(&fill).map(|(m, f)| floor(m * f)).collect();

    let rq_max = demand_quality.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let quality_draw = |rng: &mut ChaCha8Rng| match spec.family {
        Family::Mixed => draw(rng, r.supply_quality),
        Family::Slack => ceil(1.2 * rq_max + rng.random_range(0.0..=2.0)),
        Family::Starved => {
            let need = demand_quantity
                .iter()
                .flatten()
                .zip(demand_quality.iter().flatten())
                .map(|(c, q)| c * q)
                .fold(f64::INFINITY, f64::min);
            let cap = 0.9 * need / r.arc_upper.1;
            floor(rng.random_range(0.25..=1.0) * cap).max(1.0 / GRID)
        }
    };
    let source_quality: Vec<f64> = (0..ns).map(|_| quality_draw(&mut rng)).collect();
    let tank_quality: Vec<f64> = (0..ni).map(|_| quality_draw(&mut rng)).collect();

    let tank = |k: usize| ns + k;
    let plant = |k: usize| ns + ni + k;
    let mut arcs = Vec::new();
    let mut arc = |from, to, rng: &mut ChaCha8Rng| {
        arcs.push(Arc {
            from,
            to,
            lower: 0.0,
            upper: draw(rng, r.arc_upper),
            cost: draw(rng, r.arc_cost),
        })
    };
    for s in 0..ns {
        for k in 0..ni {
            arc(s, tank(k), &mut rng);
        }
    }
    for j in 0..ni {
        for k in 0..ni {
            if j != k {
                arc(tank(j), tank(k), &mut rng);
            }
        }
    }
    for j in 0..ni {
        for k in 0..np {
            arc(tank(j), plant(k), &mut rng);
        }
    }
    // A plant can be fed through a single pipeline only if that pipeline
    // carries its largest requirement.
    for a in arcs.iter_mut().filter(|a| a.to >= ns + ni) {
        let need = demand_quantity[a.to - ns - ni].iter().fold(0.0f64, |m, &v| m.max(v));
        a.upper = a.upper.max(ceil(need));
    }
    let upper = |arcs: &[Arc], from: usize, to: usize| {
        arcs.iter()
            .find(|a| a.from == from && a.to == to)
            .map(|a| a.upper)
            .unwrap_or(0.0)
    };

    // Trim supplies until the witness empties every source.
    for _round in 0..(4 * h * ns + 8) {
        let mut stock = vec![0.0f64; ns];
        let mut level = tank_quantity.clone();
        let mut short: Option<(usize, usize, f64)> = None;
        for t in 0..h {
            let mut order: Vec<usize> = (0..ni).collect();
            order.sort_by(|&a, &b| level[b].total_cmp(&level[a]).then(a.cmp(&b)));
            let mut plants: Vec<usize> = (0..np).collect();
            plants.sort_by(|&a, &b| demand_quantity[b][t].total_cmp(&demand_quantity[a][t]).then(a.cmp(&b)));
            let feeders = &order[..np.min(ni)];
            for (&p, &j) in plants.iter().zip(feeders) {
                let rc = demand_quantity[p][t];
                if level[j] < rc && short.is_none() {
                    short = Some((p, t, level[j]));
                }
                level[j] -= rc.min(level[j]);
            }
            let receivers: Vec<usize> = order[np.min(ni)..].to_vec();
            let mut taken = vec![false; receivers.len()];
            for s in 0..ns {
                if receivers.is_empty() {
                    break;
                }
                // Rotate so every source meets every receiver over time.
                let start = (s + t) % receivers.len();
                let pick = (0..receivers.len())
                    .map(|k| (start + k) % receivers.len())
                    .find(|&k| !taken[k]);
                let Some(k) = pick else { break };
                taken[k] = true;
                let j = receivers[k];
                let ship = stock[s]
                    .min(upper(&arcs, s, tank(j)))
                    .min(max_storage[j] - level[j])
                    .max(0.0);
                stock[s] -= ship;
                level[j] += ship;
            }
            for s in 0..ns {
                stock[s] += supply_quantity[s][t];
            }
        }
        if let Some((p, t, avail)) = short {
            // Lift the feeder's starting level if there is room; otherwise
            // lower the requirement to what the witness can deliver.
            let deficit = demand_quantity[p][t] - avail;
            let room: Vec<usize> = (0..ni)
                .filter(|&j| tank_quantity[j] + deficit <= max_storage[j])
                .collect();
            if let Some(&j) = room.first() {
                tank_quantity[j] = ceil(tank_quantity[j] + deficit).min(max_storage[j]);
            } else {
                demand_quantity[p][t] = floor(avail).max(1.0 / GRID);
                warnings.push(format!(
                    "plant {} step {} requirement lowered to {}",
                    p + 1,
                    t + 1,
                    demand_quantity[p][t]
                ));
            }
            continue;
        }
        let mut done = true;
        for s in 0..ns {
            let mut excess = stock[s];
            for t in (0..h).rev() {
                if excess <= 0.0 {
                    break;
                }
                let cut = excess.min(supply_quantity[s][t]);
                supply_quantity[s][t] -= cut;
                excess -= cut;
                done = false;
            }
        }
        if done {
            break;
        }
    }

    let mut nodes = Vec::with_capacity(ns + ni + np);
    for &q in &source_quality {
        nodes.push(Node {
            kind: NodeKind::Source,
            initial_quantity: 0.0,
            initial_quality: q,
            min_storage: 0.0,
            max_storage: 0.0,
        });
    }
    for k in 0..ni {
        nodes.push(Node {
            kind: NodeKind::Tank,
            initial_quantity: tank_quantity[k],
            initial_quality: tank_quality[k],
            min_storage: 0.0,
            max_storage: max_storage[k],
        });
    }
    for _ in 0..np {
        nodes.push(Node {
            kind: NodeKind::Plant,
            initial_quantity: 0.0,
            initial_quality: 0.0,
            min_storage: 0.0,
            max_storage: 0.0,
        });
    }
    let instance = Instance::new(InstanceData {
        nodes,
        arcs,
        horizon: h,
        supply_quantity,
        supply_quality: source_quality.iter().map(|&q| vec![q; h]).collect(),
        demand_quantity,
        demand_quality,
        shortage_cost,
    })?;
    if spec.tanks > spec.plants && witness_flows(&instance).is_none() {
        warnings.push("supply trimming did not converge; the witness schedule is incomplete".into());
    }
    Ok(Generated { instance, warnings })
}

/// Flows of the witness schedule for a generated instance, or `None` when
/// the witness breaks a bound (which `generate` rules out).
pub fn witness_flows(inst: &Instance) -> Option<Vec<Vec<f64>>> {
    let (ns, ni, np) = (inst.num_sources(), inst.num_tanks(), inst.num_plants());
    let tanks: Vec<usize> = inst.tanks().collect();
    let mut stock: Vec<f64> = inst.sources().map(|s| inst.nodes()[s].initial_quantity).collect();
    let mut level: Vec<f64> = tanks.iter().map(|&j| inst.nodes()[j].initial_quantity).collect();
    let mut flows = Vec::with_capacity(inst.horizon());
    for t in 0..inst.horizon() {
        let mut f = vec![0.0; inst.arcs().len()];
        let mut order: Vec<usize> = (0..ni).collect();
        order.sort_by(|&a, &b| level[b].total_cmp(&level[a]).then(a.cmp(&b)));
        let mut plants: Vec<usize> = (0..np).collect();
        plants.sort_by(|&a, &b| {
            let (ra, rb) = (inst.demand(ns + ni + a, t).0, inst.demand(ns + ni + b, t).0);
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for (&p, &j) in plants.iter().zip(&order[..np.min(ni)]) {
            let rc = inst.demand(ns + ni + p, t).0;
            if level[j] < rc {
                return None;
            }
            level[j] -= rc;
            f[inst.find_arc(tanks[j], ns + ni + p)?] = rc;
        }
        let receivers: Vec<usize> = order[np.min(ni)..].to_vec();
        let mut taken = vec![false; receivers.len()];
        for s in 0..ns {
            if receivers.is_empty() {
                break;
            }
            let start = (s + t) % receivers.len();
            let Some(k) = (0..receivers.len())
                .map(|k| (start + k) % receivers.len())
                .find(|&k| !taken[k])
            else {
                break;
            };
            taken[k] = true;
            let j = receivers[k];
            let e = inst.find_arc(s, tanks[j])?;
            let node = &inst.nodes()[tanks[j]];
            let ship = stock[s]
                .min(inst.arcs()[e].upper)
                .min(node.max_storage - level[j])
                .max(0.0);
            stock[s] -= ship;
            level[j] += ship;
            f[e] = ship;
        }
        for s in 0..ns {
            stock[s] += inst.supply(s, t).0;
        }
        flows.push(f);
    }
    stock.iter().all(|&v| v == 0.0).then_some(flows)
}
