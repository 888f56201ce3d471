//! Scenario schema, validation, named presets and file output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::game::{AgentState, GameTrace, Weight};
use crate::grid::{BBox, Grid2D, ScalarField};
use crate::strategy::{StrategySpec, StrategyVariant};
use crate::velocity::{KernelForm, Polarity, RadialKernel, VelocityModel};
use crate::{Error, Result, Vec2};

pub const DEFAULT_CFL: f64 = 0.45;
pub const DEFAULT_MOLLIFY_CELLS: f64 = 2.0;
pub const DEFAULT_GRID: usize = 400;

pub const PRESET_NAMES: [&str; 6] = [
    "single-agent",
    "two-attractive",
    "two-attractive-both-greedy",
    "six-repulsive",
    "attr-rep-coop",
    "attr-rep-steal",
];

fn default_cfl() -> f64 {
    DEFAULT_CFL
}

fn default_one() -> f64 {
    1.0
}

fn default_mollify() -> f64 {
    DEFAULT_MOLLIFY_CELLS
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl DomainSpec {
    pub fn square(side: f64) -> Self {
        Self {
            x0: 0.0,
            x1: side,
            y0: 0.0,
            y1: side,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x0, self.x1, self.y0, self.y1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(rename = "T")]
    pub final_time: f64,
    pub dt_strategy: f64,
}

/// Indicator of a box, optionally with C¹ ramps `mollify_cells` cells wide
/// centred on its edges (which keeps the mass equal to `amplitude · area`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    #[serde(rename = "box")]
    pub support: [f64; 4],
    #[serde(default = "default_one")]
    pub amplitude: f64,
    #[serde(default = "default_mollify")]
    pub mollify_cells: f64,
}

impl DensitySpec {
    pub fn indicator(support: [f64; 4]) -> Self {
        Self {
            support,
            amplitude: 1.0,
            mollify_cells: 0.0,
        }
    }

    pub fn bbox(&self) -> BBox {
        let [ax, bx, ay, by] = self.support;
        BBox::new(ax, bx, ay, by)
    }

    /// Ramp widths in space units on `grid`.
    pub fn ramp_widths(&self, grid: &Grid2D) -> (f64, f64) {
        (self.mollify_cells * grid.dx, self.mollify_cells * grid.dy)
    }
}

/// `S(z) = 3z² − 2z³` clamped to `[0, 1]`.
fn smoothstep(z: f64) -> f64 {
    let z = z.clamp(0.0, 1.0);
    z * z * (3.0 - 2.0 * z)
}

fn ramp_1d(x: f64, a: f64, b: f64, w: f64) -> f64 {
    if w <= 0.0 {
        return if x >= a && x <= b { 1.0 } else { 0.0 };
    }
    smoothstep((x - a) / w + 0.5) * smoothstep((b - x) / w + 0.5)
}

/// `amplitude · s_x(x) s_y(y)` with ramps of width `wx`, `wy` (zero gives the plain indicator).
pub fn box_profile(
    support: BBox,
    amplitude: f64,
    wx: f64,
    wy: f64,
) -> impl Fn(Vec2) -> f64 + Sync + Copy {
    move |p: Vec2| {
        amplitude
            * ramp_1d(p.x, support.xmin, support.xmax, wx)
            * ramp_1d(p.y, support.ymin, support.ymax, wy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// `+1` attractive, `-1` repulsive, `0` inactive.
    pub sign: i64,
    pub decay_length: f64,
    pub form: KernelForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl KernelSpec {
    pub fn unit(sign: i64, decay_length: f64) -> Self {
        Self {
            sign,
            decay_length,
            form: KernelForm::UnitDirection,
            epsilon: Some(1e-3 * decay_length),
        }
    }

    pub fn linear(sign: i64, decay_length: f64) -> Self {
        Self {
            sign,
            decay_length,
            form: KernelForm::Linear,
            epsilon: Some(1e-3 * decay_length),
        }
    }

    pub fn to_kernel(&self) -> RadialKernel {
        let polarity = Polarity::from_sign(self.sign).unwrap_or(Polarity::Inactive);
        RadialKernel {
            polarity,
            decay_length: self.decay_length,
            form: self.form,
            epsilon: self.epsilon.unwrap_or(1e-3 * self.decay_length),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSeed {
    pub position: Vec2,
    pub kernel: KernelSpec,
    pub speed_cap: f64,
    pub strategy: StrategyVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec2>,
    #[serde(default = "default_one")]
    pub psi_sign: f64,
}

impl AgentSeed {
    pub fn weight(&self) -> Weight {
        match self.target {
            Some(target) => Weight::TargetDistance {
                target,
                sign: self.psi_sign,
            },
            None => Weight::Zero,
        }
    }

    pub fn state(&self) -> AgentState {
        AgentState {
            position: self.position,
            strategy: StrategySpec {
                variant: self.strategy.clone(),
                speed_cap: self.speed_cap,
            },
            weight: self.weight(),
            target: self.target,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub domain: DomainSpec,
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub density: DensitySpec,
    pub agents: Vec<AgentSeed>,
    #[serde(default)]
    pub output: OutputSpec,
}

impl Scenario {
    pub fn grid(&self) -> Result<Grid2D> {
        let d = &self.domain;
        Grid2D::over_box(d.x0, d.x1, d.y0, d.y1, self.grid.nx, self.grid.ny)
    }

    pub fn with_grid(mut self, nx: usize, ny: usize) -> Self {
        self.grid.nx = nx;
        self.grid.ny = ny;
        self
    }

    pub fn epochs(&self) -> usize {
        (self.time.final_time / self.time.dt_strategy).round() as usize
    }

    pub fn velocity_model(&self) -> VelocityModel {
        VelocityModel::new(self.agents.iter().map(|a| a.kernel.to_kernel()).collect())
    }

    pub fn agent_states(&self) -> Vec<AgentState> {
        self.agents.iter().map(AgentSeed::state).collect()
    }

    pub fn initial_density(&self, grid: &Grid2D) -> ScalarField {
        self.initial_density_shifted(grid, Vec2::zeros())
    }

    /// Initial density with its box moved by `shift`.
    pub fn initial_density_shifted(&self, grid: &Grid2D, shift: Vec2) -> ScalarField {
        let (wx, wy) = self.density.ramp_widths(grid);
        let b = self.density.bbox();
        let b = BBox::new(
            b.xmin + shift.x,
            b.xmax + shift.x,
            b.ymin + shift.y,
            b.ymax + shift.y,
        );
        ScalarField::from_fn(*grid, box_profile(b, self.density.amplitude, wx, wy))
    }

    /// Fills in defaults that depend on other fields.
    fn resolve_defaults(&mut self) {
        for a in &mut self.agents {
            if a.kernel.epsilon.is_none() {
                a.kernel.epsilon = Some(1e-3 * a.kernel.decay_length);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        let finite = [d.x0, d.x1, d.y0, d.y1].iter().all(|v| v.is_finite());
        if !finite || d.x1 <= d.x0 || d.y1 <= d.y0 {
            return Err(Error::config("domain", "empty or non-finite domain"));
        }
        if self.grid.nx == 0 || self.grid.ny == 0 {
            return Err(Error::config("grid", "nx and ny must be positive"));
        }
        if !(self.grid.cfl > 0.0 && self.grid.cfl <= 1.0) {
            return Err(Error::config("grid.cfl", "must lie in (0, 1]"));
        }
        let t = &self.time;
        if !(t.final_time > 0.0 && t.final_time.is_finite()) {
            return Err(Error::config("time.T", "must be positive"));
        }
        if !(t.dt_strategy > 0.0 && t.dt_strategy.is_finite()) {
            return Err(Error::config("time.dt_strategy", "must be positive"));
        }
        let ratio = t.final_time / t.dt_strategy;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::config(
                "time.dt_strategy",
                "T is not an integer multiple of dt_strategy",
            ));
        }

        let grid = self.grid()?;
        let rho = &self.density;
        let b = rho.bbox();
        if !rho.support.iter().all(|v| v.is_finite()) || b.width() <= 0.0 || b.height() <= 0.0 {
            return Err(Error::config("density.box", "empty or non-finite box"));
        }
        if !(rho.amplitude >= 0.0 && rho.amplitude.is_finite()) {
            return Err(Error::config(
                "density.amplitude",
                "must be finite and nonnegative",
            ));
        }
        if !(rho.mollify_cells >= 0.0 && rho.mollify_cells.is_finite()) {
            return Err(Error::config(
                "density.mollify_cells",
                "must be finite and nonnegative",
            ));
        }
        let (wx, wy) = rho.ramp_widths(&grid);
        if wx > b.width() || wy > b.height() {
            return Err(Error::config(
                "density.mollify_cells",
                "ramp wider than the box",
            ));
        }
        let outer = BBox::new(
            b.xmin - 0.5 * wx,
            b.xmax + 0.5 * wx,
            b.ymin - 0.5 * wy,
            b.ymax + 0.5 * wy,
        );
        if !(outer.xmin > d.x0 && outer.xmax < d.x1 && outer.ymin > d.y0 && outer.ymax < d.y1) {
            return Err(Error::config("density.box", "initial support not interior"));
        }

        if self.agents.is_empty() {
            return Err(Error::config("agents", "at least one agent is required"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            let key = |k: &str| format!("agents[{i}].{k}");
            if !(a.position.x.is_finite() && a.position.y.is_finite()) {
                return Err(Error::config(key("position"), "not finite"));
            }
            if Polarity::from_sign(a.kernel.sign).is_none() {
                return Err(Error::config(key("kernel.sign"), "must be -1, 0 or 1"));
            }
            if !(a.kernel.decay_length > 0.0 && a.kernel.decay_length.is_finite()) {
                return Err(Error::config(
                    key("kernel.decay_length"),
                    "must be positive",
                ));
            }
            if let Some(eps) = a.kernel.epsilon {
                if !(eps >= 0.0 && eps.is_finite()) {
                    return Err(Error::config(
                        key("kernel.epsilon"),
                        "must be finite and nonnegative",
                    ));
                }
            }
            if !(a.speed_cap > 0.0 && a.speed_cap.is_finite()) {
                return Err(Error::config(key("speed_cap"), "must be positive"));
            }
            if a.psi_sign != 1.0 && a.psi_sign != -1.0 {
                return Err(Error::config(key("psi_sign"), "must be +1 or -1"));
            }
            if let Some(tg) = a.target {
                if !(tg.x.is_finite() && tg.y.is_finite()) {
                    return Err(Error::config(key("target"), "not finite"));
                }
            }
            let too_fast = |u: &Vec2| u.norm() > a.speed_cap * (1.0 + 1e-12);
            match &a.strategy {
                StrategyVariant::Greedy {
                    denom_tol: Some(tol),
                } if tol.is_nan() || *tol < 0.0 => {
                    return Err(Error::config(
                        key("strategy.denom_tol"),
                        "must be nonnegative",
                    ));
                }
                StrategyVariant::Constant { u } if too_fast(u) => {
                    return Err(Error::config(key("strategy.u"), "exceeds speed_cap"));
                }
                StrategyVariant::Scripted { table } => {
                    if table.iter().any(|(_, u)| too_fast(u)) {
                        return Err(Error::config(key("strategy.table"), "exceeds speed_cap"));
                    }
                    if table.windows(2).any(|w| w[1].0 <= w[0].0) {
                        return Err(Error::config(key("strategy.table"), "times must increase"));
                    }
                }
                StrategyVariant::BruteForce { n_directions } if *n_directions < 4 => {
                    return Err(Error::config(
                        key("strategy.n_directions"),
                        "must be at least 4",
                    ));
                }
                _ => {}
            }
        }
        if self
            .output
            .snapshot_times
            .iter()
            .any(|&s| !(s >= 0.0 && s <= t.final_time * (1.0 + 1e-12)))
        {
            return Err(Error::config("output.snapshot_times", "outside [0, T]"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::FieldFormat(e.to_string()))
    }
}

/// Parses and validates a scenario from TOML text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<toml>", e.to_string()))?;
    let mut scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(key, e.into_inner().message().to_string())
    })?;
    scenario.resolve_defaults();
    scenario.validate()?;
    Ok(scenario)
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text)
}

fn greedy() -> StrategyVariant {
    StrategyVariant::Greedy { denom_tol: None }
}

fn seed(
    position: [f64; 2],
    kernel: KernelSpec,
    speed_cap: f64,
    strategy: StrategyVariant,
    target: [f64; 2],
    psi_sign: f64,
) -> AgentSeed {
    AgentSeed {
        position: Vec2::from(position),
        kernel,
        speed_cap,
        strategy,
        target: Some(Vec2::from(target)),
        psi_sign,
    }
}

fn base(name: &str, final_time: f64, density: [f64; 4], agents: Vec<AgentSeed>) -> Scenario {
    Scenario {
        name: Some(name.to_string()),
        domain: DomainSpec::square(10.0),
        grid: GridSpec {
            nx: DEFAULT_GRID,
            ny: DEFAULT_GRID,
            cfl: DEFAULT_CFL,
        },
        time: TimeSpec {
            final_time,
            dt_strategy: 0.01,
        },
        density: DensitySpec::indicator(density),
        agents,
        output: OutputSpec::default(),
    }
}

fn two_attractive(name: &str, first: StrategyVariant) -> Scenario {
    let k = KernelSpec::unit(1, 5.0);
    base(
        name,
        10.0,
        [7.0, 9.0, 3.0, 7.0],
        vec![
            seed([8.0, 5.0], k, 1.5, first, [1.0, 9.0], 1.0),
            seed([8.0, 5.0], k, 1.5, greedy(), [1.0, 1.0], 1.0),
        ],
    )
}

fn attr_rep(name: &str, outer_psi: f64) -> Scenario {
    let rep = KernelSpec::unit(-1, 5.0);
    let att = KernelSpec::unit(1, 5.0);
    let target = [9.0, 5.0];
    base(
        name,
        5.0,
        [1.0, 2.0, 3.0, 7.0],
        vec![
            seed([1.0, 1.0], rep, 1.0, greedy(), target, outer_psi),
            seed([1.0, 5.0], att, 1.0, greedy(), target, 1.0),
            seed([1.0, 9.0], rep, 1.0, greedy(), target, outer_psi),
        ],
    )
}

/// One-line description of a preset.
pub fn preset_description(name: &str) -> Option<&'static str> {
    Some(match name {
        "single-agent" => "one attractive greedy agent pulls the crowd towards (1, 8); T=10, k=1",
        "two-attractive" => "scripted agent (-0.7, 0.4) against a greedy agent, targets (1, 9) and (1, 1); T=10, k=2",
        "two-attractive-both-greedy" => "mirror-symmetric greedy pair, targets (1, 9) and (1, 1); T=10, k=2",
        "six-repulsive" => "six repulsive greedy agents herd the crowd towards (5, 5); T=5, k=6",
        "attr-rep-coop" => "repulsive-attractive-repulsive trio sharing the target (9, 5); T=5, k=3",
        "attr-rep-steal" => "as attr-rep-coop but the outer agents push the crowd away from (9, 5); T=5, k=3",
        _ => return None,
    })
}

/// Named scenario with the desk-scale default grid.
pub fn preset(name: &str) -> Result<Scenario> {
    let scenario = match name {
        "single-agent" => base(
            name,
            10.0,
            [6.0, 8.0, 2.0, 8.0],
            vec![seed(
                [3.0, 2.0],
                KernelSpec::unit(1, 10.0),
                1.5,
                greedy(),
                [1.0, 8.0],
                1.0,
            )],
        ),
        "two-attractive" => two_attractive(
            name,
            StrategyVariant::Constant {
                u: Vec2::new(-0.7, 0.4),
            },
        ),
        "two-attractive-both-greedy" => two_attractive(name, greedy()),
        "six-repulsive" => {
            let k = KernelSpec::unit(-1, 5.0);
            let positions = [
                [1.0, 2.0],
                [1.0, 4.0],
                [1.0, 6.0],
                [1.0, 8.0],
                [9.0, 4.0],
                [9.0, 6.0],
            ];
            base(
                name,
                5.0,
                [6.0, 8.0, 3.0, 7.0],
                positions
                    .iter()
                    .map(|&p| seed(p, k, 1.0, greedy(), [5.0, 5.0], 1.0))
                    .collect(),
            )
        }
        "attr-rep-coop" => attr_rep(name, 1.0),
        "attr-rep-steal" => attr_rep(name, -1.0),
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    Ok(scenario)
}

#[derive(Serialize)]
struct Summary<'a> {
    name: Option<&'a str>,
    epochs: usize,
    costs: &'a [f64],
    times: &'a [f64],
    positions: &'a [Vec<Vec2>],
    controls: &'a [Vec<Vec2>],
    mass: &'a [f64],
    total_substeps: usize,
    max_courant: f64,
    min_density: f64,
}

fn time_label(t: f64) -> String {
    let s = format!("{t:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn write_file(path: PathBuf, contents: &str, manifest: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    manifest.push(path);
    Ok(())
}

/// Writes `summary.json`, `trajectory.csv` and one CSV + PGM per snapshot into `out_dir`.
pub fn write_outputs(
    trace: &GameTrace,
    name: Option<&str>,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Vec::new();

    let summary = Summary {
        name,
        epochs: trace.epochs(),
        costs: &trace.final_costs,
        times: &trace.times,
        positions: &trace.positions,
        controls: &trace.controls,
        mass: &trace.mass,
        total_substeps: trace.total_substeps,
        max_courant: trace.max_courant,
        min_density: trace.min_density,
    };
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::FieldFormat(e.to_string()))?;
    write_file(dir.join("summary.json"), &(json + "\n"), &mut manifest)?;

    let k = trace.positions.first().map_or(0, Vec::len);
    let mut csv = String::from("t");
    for i in 1..=k {
        csv.push_str(&format!(",P{i}x,P{i}y"));
    }
    csv.push('\n');
    for (t, ps) in trace.times.iter().zip(&trace.positions) {
        csv.push_str(&t.to_string());
        for p in ps {
            csv.push_str(&format!(",{},{}", p.x, p.y));
        }
        csv.push('\n');
    }
    write_file(dir.join("trajectory.csv"), &csv, &mut manifest)?;

    for snap in &trace.snapshots {
        let stem = format!("rho_t{}", time_label(snap.t));
        write_file(
            dir.join(format!("{stem}.csv")),
            &snap.field.to_csv(),
            &mut manifest,
        )?;
        write_file(
            dir.join(format!("{stem}.pgm")),
            &snap.field.to_pgm(),
            &mut manifest,
        )?;
    }
    Ok(manifest)
}
