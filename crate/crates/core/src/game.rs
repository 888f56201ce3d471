//! The coupled run: density transport, agent decisions and forward-Euler agent motion.

use crate::grid::{integrate_weighted, Grid2D, ScalarField};
use crate::pde::{advance_interval, TransportOptions};
use crate::scenarios::Scenario;
pub use crate::strategy::Weight;
use crate::strategy::{decide, Snapshot, StrategySpec};
use crate::velocity::{LinearPath, VelocityModel};
use crate::{Error, Result, Vec2};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub position: Vec2,
    pub strategy: StrategySpec,
    pub weight: Weight,
    pub target: Option<Vec2>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensitySnapshot {
    pub t: f64,
    pub field: ScalarField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameTrace {
    /// `t_0 = 0, t_1, …, t_n = T`.
    pub times: Vec<f64>,
    /// Agent positions at every entry of `times`.
    pub positions: Vec<Vec<Vec2>>,
    /// Control chosen on `[t_ℓ, t_{ℓ+1}]`, one entry per epoch.
    pub controls: Vec<Vec<Vec2>>,
    /// `∫ ρ(t) ψ_i` at every entry of `times` (diagnostic).
    pub running_costs: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    pub snapshots: Vec<DensitySnapshot>,
    /// `J_i = ∫ ρ(T) ψ_i`.
    pub final_costs: Vec<f64>,
    pub final_density: ScalarField,
    pub total_substeps: usize,
    pub max_courant: f64,
    pub min_density: f64,
}

impl AgentState {
    pub fn translated(&self, shift: Vec2) -> Self {
        Self {
            position: self.position + shift,
            weight: self.weight.translated(shift),
            target: self.target.map(|t| t + shift),
            ..self.clone()
        }
    }
}

impl GameTrace {
    /// Moves every position and field by `shift`; costs and controls are unaffected.
    pub fn translate(&mut self, shift: Vec2) {
        for p in self.positions.iter_mut().flatten() {
            *p += shift;
        }
        for s in &mut self.snapshots {
            s.field = s.field.translated(shift);
        }
        self.final_density = self.final_density.translated(shift);
    }

    pub fn epochs(&self) -> usize {
        self.controls.len()
    }

    pub fn trajectory(&self, agent: usize) -> impl Iterator<Item = Vec2> + '_ {
        self.positions.iter().map(move |p| p[agent])
    }
}

/// `J_i = ∫ ρ(T, x) ψ_i(x) dx`.
pub fn terminal_cost(rho: &ScalarField, psi: &Weight) -> Result<f64> {
    integrate_weighted(rho, |x| psi.eval(x))
}

fn costs(rho: &ScalarField, agents: &[AgentState]) -> Result<Vec<f64>> {
    agents
        .iter()
        .map(|a| terminal_cost(rho, &a.weight))
        .collect()
}

/// Runs the full game described by `scenario`.
///
/// The run happens in coordinates centred on the domain, which keeps
/// mirror-symmetric set-ups bitwise symmetric; everything in the returned
/// trace is in the scenario's own coordinates.
pub fn run_game(scenario: &Scenario) -> Result<GameTrace> {
    let d = &scenario.domain;
    let center = Vec2::new(0.5 * (d.x0 + d.x1), 0.5 * (d.y0 + d.y1));
    let grid = Grid2D::centered(d.x1 - d.x0, d.y1 - d.y0, scenario.grid.nx, scenario.grid.ny)?;
    let model = scenario.velocity_model();
    let agents = scenario
        .agent_states()
        .into_iter()
        .map(|a| a.translated(-center))
        .collect();
    let opts = TransportOptions {
        cfl: scenario.grid.cfl,
        ..TransportOptions::default()
    };
    let rho0 = scenario.initial_density_shifted(&grid, -center);
    let mut trace = run_game_with(
        &rho0,
        &model,
        agents,
        scenario.time.dt_strategy,
        scenario.epochs(),
        &scenario.output.snapshot_times,
        &opts,
    )?;
    trace.translate(center);
    Ok(trace)
}

/// Lower-level entry point: explicit initial field, model and agents.
pub fn run_game_with(
    rho0: &ScalarField,
    model: &VelocityModel,
    agents: Vec<AgentState>,
    dt: f64,
    epochs: usize,
    snapshot_times: &[f64],
    opts: &TransportOptions,
) -> Result<GameTrace> {
    let grid = *rho0.grid();
    let bounds = grid.bounds();
    let escape = bounds.inflate(bounds.width().max(bounds.height()));
    let mut rho = rho0.clone();
    let mut positions: Vec<Vec2> = agents.iter().map(|a| a.position).collect();

    let mut trace = GameTrace {
        times: vec![0.0],
        positions: vec![positions.clone()],
        controls: Vec::with_capacity(epochs),
        running_costs: vec![costs(&rho, &agents)?],
        mass: vec![rho.total()],
        snapshots: Vec::new(),
        final_costs: Vec::new(),
        final_density: ScalarField::zeros(grid),
        total_substeps: 0,
        max_courant: 0.0,
        min_density: rho.min_value(),
    };
    let mut pending: Vec<f64> = snapshot_times.to_vec();
    pending.sort_by(f64::total_cmp);
    let mut take_snapshots = |t: f64, rho: &ScalarField, out: &mut Vec<DensitySnapshot>| {
        while let Some(&ts) = pending.first() {
            if ts <= t + 0.5 * dt {
                out.push(DensitySnapshot {
                    t,
                    field: rho.clone(),
                });
                pending.remove(0);
            } else {
                break;
            }
        }
    };
    take_snapshots(0.0, &rho, &mut trace.snapshots);

    for epoch in 0..epochs {
        let t = epoch as f64 * dt;
        let snap = Snapshot {
            rho: &rho,
            positions: &positions,
            t,
        };
        // simultaneous moves: every agent reads the same snapshot
        let controls = agents
            .iter()
            .enumerate()
            .map(|(i, a)| decide(&a.strategy, &snap, i, model, &a.weight, dt, opts))
            .collect::<Result<Vec<Vec2>>>()?;

        let path = LinearPath::new(t, positions.clone(), controls.clone());
        let (next, stats) = advance_interval(&rho, model, &path, t, dt, opts)?;
        rho = next;
        trace.total_substeps += stats.substeps;
        trace.max_courant = trace.max_courant.max(stats.max_courant);
        trace.min_density = trace.min_density.min(stats.min_density);

        for (i, (p, w)) in positions.iter_mut().zip(&controls).enumerate() {
            *p += dt * w;
            if !escape.contains_point(*p) {
                return Err(Error::AgentEscaped {
                    agent: i,
                    x: p.x,
                    y: p.y,
                });
            }
        }
        let t_next = (epoch + 1) as f64 * dt;
        trace.times.push(t_next);
        trace.positions.push(positions.clone());
        trace.controls.push(controls);
        trace.running_costs.push(costs(&rho, &agents)?);
        trace.mass.push(rho.total());
        take_snapshots(t_next, &rho, &mut trace.snapshots);
    }
    trace.final_costs = costs(&rho, &agents)?;
    trace.final_density = rho;
    Ok(trace)
}
