//! Exact transport along characteristics.
//!
//! For `∂t ρ + div(ρ V) = 0` the solution is
//! `ρ(t, x) = ρ̄(X(0; t, x)) · exp(-∫_0^t div V(τ, X(τ; t, x)) dτ)`,
//! with `X(·; t, x)` the characteristic through `x` at time `t`. Characteristics
//! are traced with classic fixed-step RK4; the divergence integral is carried
//! as an extra state component so it is quadratured on the same stage nodes.
//!
//! The same machinery solves the variational equation for the derivative of
//! the flow with respect to a trial agent speed `w`.

use nalgebra::SVector;
use rayon::prelude::*;

use crate::grid::{Grid2D, ScalarField};
use crate::velocity::{AgentPath, Positions, VelocityModel};
use crate::{Error, Mat2, Result, Vec2};

/// A time-dependent planar velocity field.
pub trait FlowField: Sync {
    fn velocity(&self, t: f64, x: Vec2) -> Result<Vec2>;
    fn divergence(&self, t: f64, x: Vec2) -> Result<f64>;
}

/// `V(t, x) = v(x, P(t))` for a kernel model and an agent path.
pub struct KernelFlow<'a> {
    pub model: &'a VelocityModel,
    pub path: &'a dyn AgentPath,
}

impl<'a> KernelFlow<'a> {
    pub fn new(model: &'a VelocityModel, path: &'a dyn AgentPath) -> Self {
        Self { model, path }
    }
}

impl FlowField for KernelFlow<'_> {
    #[inline]
    fn velocity(&self, t: f64, x: Vec2) -> Result<Vec2> {
        self.model.velocity(x, &self.path.positions_at(t))
    }

    #[inline]
    fn divergence(&self, t: f64, x: Vec2) -> Result<f64> {
        self.model.divergence(x, &self.path.positions_at(t))
    }
}

/// End point of a characteristic together with `∫ div V dτ` along it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowPoint {
    pub position: Vec2,
    /// Oriented integral from the start time to the end time; negative of the
    /// forward-time integral when tracing backwards.
    pub divergence_integral: f64,
}

/// Default RK4 step for characteristic tracing.
pub const DEFAULT_ODE_STEP: f64 = 5e-4;

pub(crate) fn rk4<const N: usize>(
    rhs: impl Fn(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
    t0: f64,
    t1: f64,
    y0: SVector<f64, N>,
    steps: usize,
    mut visit: impl FnMut(f64, &SVector<f64, N>),
) -> Result<SVector<f64, N>> {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    visit(t0, &y);
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let k1 = rhs(t, &y)?;
        let k2 = rhs(t + 0.5 * h, &(y + 0.5 * h * k1))?;
        let k3 = rhs(t + 0.5 * h, &(y + 0.5 * h * k2))?;
        let k4 = rhs(t + h, &(y + h * k3))?;
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t_next = if s + 1 == steps { t1 } else { t + h };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::CharacteristicBlowUp { t: t_next });
        }
        visit(t_next, &y);
    }
    Ok(y)
}

fn step_count(span: f64, h: f64) -> usize {
    ((span.abs() / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Traces the characteristic through `x` at `t_from` to `t_to` (either direction).
pub fn backtrack(
    flow: &dyn FlowField,
    t_from: f64,
    t_to: f64,
    x: Vec2,
    h_ode: f64,
) -> Result<FlowPoint> {
    if t_from == t_to {
        return Ok(FlowPoint {
            position: x,
            divergence_integral: 0.0,
        });
    }
    let y0 = SVector::<f64, 3>::new(x.x, x.y, 0.0);
    let y = rk4(
        |t, y| {
            let p = Vec2::new(y[0], y[1]);
            let v = flow.velocity(t, p)?;
            Ok(SVector::<f64, 3>::new(v.x, v.y, flow.divergence(t, p)?))
        },
        t_from,
        t_to,
        y0,
        step_count(t_to - t_from, h_ode),
        |_, _| {},
    )?;
    Ok(FlowPoint {
        position: Vec2::new(y[0], y[1]),
        divergence_integral: y[2],
    })
}

/// `ρ(t, x)` from the initial datum `rho0` given at time `t0`.
pub fn exact_density_from(
    rho0: &(dyn Fn(Vec2) -> f64 + Sync),
    flow: &dyn FlowField,
    t0: f64,
    t: f64,
    x: Vec2,
    h_ode: f64,
) -> Result<f64> {
    if t == t0 {
        return Ok(rho0(x));
    }
    let fp = backtrack(flow, t, t0, x, h_ode)?;
    // tracing backwards, divergence_integral = -∫_{t0}^{t} div
    Ok(rho0(fp.position) * fp.divergence_integral.exp())
}

/// `ρ(t, x)` for initial datum `rho0` at time 0.
pub fn exact_density(
    rho0: &(dyn Fn(Vec2) -> f64 + Sync),
    flow: &dyn FlowField,
    t: f64,
    x: Vec2,
    h_ode: f64,
) -> Result<f64> {
    exact_density_from(rho0, flow, 0.0, t, x, h_ode)
}

/// [`exact_density`] sampled at every cell centre.
pub fn exact_density_field(
    grid: &Grid2D,
    rho0: &(dyn Fn(Vec2) -> f64 + Sync),
    flow: &dyn FlowField,
    t: f64,
    h_ode: f64,
) -> Result<ScalarField> {
    let mut values = vec![0.0; grid.len()];
    values
        .par_chunks_mut(grid.nx)
        .enumerate()
        .try_for_each(|(j, row)| -> Result<()> {
            for (i, v) in row.iter_mut().enumerate() {
                *v = exact_density(rho0, flow, t, grid.cell_center(i, j), h_ode)?;
            }
            Ok(())
        })?;
    ScalarField::from_values(*grid, values)
}

/// Which end of `[t, t + Δt]` the characteristic is pinned to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anchor {
    /// `ξ(t) = x`, `Y(t) = 0`.
    Initial,
    /// `ξ(t + Δt) = x`, `Y(t + Δt) = 0`.
    Terminal,
}

/// The trial problem on `[t, t + Δt]`: agent `agent` moves as `P_i(t) + (τ - t) w`,
/// every other agent stays at its position at time `t`.
#[derive(Clone, Debug)]
pub struct TrialMotion<'a> {
    pub model: &'a VelocityModel,
    pub positions: &'a [Vec2],
    pub agent: usize,
    pub t: f64,
    pub w: Vec2,
}

impl TrialMotion<'_> {
    #[inline]
    pub fn positions_at(&self, tau: f64) -> Positions {
        let mut p: Positions = self.positions.iter().copied().collect();
        p[self.agent] += (tau - self.t) * self.w;
        p
    }
}

impl AgentPath for TrialMotion<'_> {
    fn agent_count(&self) -> usize {
        self.positions.len()
    }

    fn positions_at(&self, t: f64) -> Positions {
        TrialMotion::positions_at(self, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariationalSample {
    pub tau: f64,
    pub position: Vec2,
    /// `D_w ξ(τ)`.
    pub y: Mat2,
}

/// Solves `Y' = D_x v(ξ, P(τ)) Y + (τ - t) D_{P_i} v(ξ, P(τ))` together with
/// `ξ' = v(ξ, P(τ))` on `[t, t + Δt]`, with both conditions placed at `anchor`.
/// Samples are returned in integration order.
pub fn variational_dwx(
    trial: &TrialMotion<'_>,
    dt: f64,
    x: Vec2,
    anchor: Anchor,
    steps: usize,
) -> Result<Vec<VariationalSample>> {
    let (t0, t1) = match anchor {
        Anchor::Initial => (trial.t, trial.t + dt),
        Anchor::Terminal => (trial.t + dt, trial.t),
    };
    let model = trial.model;
    let agent = trial.agent;
    let mut y0 = SVector::<f64, 6>::zeros();
    y0[0] = x.x;
    y0[1] = x.y;
    let mut out = Vec::with_capacity(steps + 1);
    let unpack = |y: &SVector<f64, 6>| (Vec2::new(y[0], y[1]), Mat2::new(y[2], y[3], y[4], y[5]));
    rk4(
        |tau, y| {
            let (xi, ym) = unpack(y);
            let p = trial.positions_at(tau);
            let v = model.velocity(xi, &p)?;
            let dx = model.jacobian_dx(xi, &p)?;
            let dp = model.jacobian_dp(xi, &p, agent)?;
            let dy = dx * ym + (tau - trial.t) * dp;
            Ok(SVector::<f64, 6>::from_column_slice(&[
                v.x,
                v.y,
                dy[(0, 0)],
                dy[(0, 1)],
                dy[(1, 0)],
                dy[(1, 1)],
            ]))
        },
        t0,
        t1,
        y0,
        steps.max(1),
        |tau, y| {
            let (position, ym) = unpack(y);
            out.push(VariationalSample {
                tau,
                position,
                y: ym,
            });
        },
    )?;
    Ok(out)
}

/// End point of the trial characteristic pinned at `anchor`.
pub fn trial_flow(
    trial: &TrialMotion<'_>,
    dt: f64,
    x: Vec2,
    anchor: Anchor,
    steps: usize,
) -> Result<Vec2> {
    let flow = KernelFlow::new(trial.model, trial);
    let (from, to) = match anchor {
        Anchor::Initial => (trial.t, trial.t + dt),
        Anchor::Terminal => (trial.t + dt, trial.t),
    };
    Ok(backtrack(&flow, from, to, x, dt.abs() / steps.max(1) as f64)?.position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::{LinearPath, Polarity, RadialKernel};

    struct Still;
    impl FlowField for Still {
        fn velocity(&self, _: f64, _: Vec2) -> Result<Vec2> {
            Ok(Vec2::zeros())
        }
        fn divergence(&self, _: f64, _: Vec2) -> Result<f64> {
            Ok(0.0)
        }
    }

    /// Rigid rotation about `c`: divergence free, flow map known in closed form.
    struct Rotation {
        c: Vec2,
        omega: f64,
    }
    impl FlowField for Rotation {
        fn velocity(&self, _: f64, x: Vec2) -> Result<Vec2> {
            let d = x - self.c;
            Ok(self.omega * Vec2::new(-d.y, d.x))
        }
        fn divergence(&self, _: f64, _: Vec2) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn zero_velocity_leaves_points_in_place() {
        let fp = backtrack(&Still, 1.0, 0.0, Vec2::new(0.3, 0.4), 0.01).unwrap();
        assert_eq!(fp.position, Vec2::new(0.3, 0.4));
        assert_eq!(fp.divergence_integral, 0.0);
    }

    /// Scalar reference: `r' = -r e^{-r/L}`, RK4 with a step 100× smaller.
    fn radial_reference(r0: f64, l: f64, t: f64) -> f64 {
        let n = 200_000;
        let h = t / n as f64;
        let f = |r: f64| -r * (-r / l).exp();
        let mut r = r0;
        for _ in 0..n {
            let k1 = f(r);
            let k2 = f(r + 0.5 * h * k1);
            let k3 = f(r + 0.5 * h * k2);
            let k4 = f(r + h * k3);
            r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        r
    }

    #[test]
    fn radial_attraction_matches_scalar_reference() {
        let model = VelocityModel::new(vec![RadialKernel::linear(Polarity::Attractive, 10.0)]);
        let path = LinearPath::fixed(vec![Vec2::zeros()]);
        let flow = KernelFlow::new(&model, &path);
        let x = Vec2::new(3.0, 4.0);
        let fp = backtrack(&flow, 0.0, 1.0, x, 0.01).unwrap();
        let r = radial_reference(5.0, 10.0, 1.0);
        assert!(
            (fp.position - x * (r / 5.0)).norm() < 1e-8,
            "{} vs {r}",
            fp.position.norm()
        );
    }

    #[test]
    fn forward_then_backward_returns_home() {
        let model = VelocityModel::new(vec![
            RadialKernel::unit(Polarity::Attractive, 5.0),
            RadialKernel::unit(Polarity::Repulsive, 5.0),
        ]);
        let path = LinearPath::new(
            0.0,
            vec![Vec2::new(1.0, 1.0), Vec2::new(4.0, 2.0)],
            vec![Vec2::new(0.5, 0.0), Vec2::new(0.0, -0.3)],
        );
        let flow = KernelFlow::new(&model, &path);
        let x = Vec2::new(2.5, 3.0);
        let fwd = backtrack(&flow, 0.0, 1.0, x, 1e-3).unwrap();
        let back = backtrack(&flow, 1.0, 0.0, fwd.position, 1e-3).unwrap();
        assert!((back.position - x).norm() < 1e-8);
        assert!((fwd.divergence_integral + back.divergence_integral).abs() < 1e-8);
    }

    #[test]
    fn flow_has_group_property() {
        let model = VelocityModel::new(vec![RadialKernel::linear(Polarity::Attractive, 10.0)]);
        let path = LinearPath::new(0.0, vec![Vec2::new(3.0, 2.0)], vec![Vec2::new(1.0, 0.5)]);
        let flow = KernelFlow::new(&model, &path);
        let x = Vec2::new(7.0, 5.0);
        let direct = backtrack(&flow, 0.0, 1.2, x, 1e-3).unwrap().position;
        let mid = backtrack(&flow, 0.0, 0.5, x, 1e-3).unwrap().position;
        let composed = backtrack(&flow, 0.5, 1.2, mid, 1e-3).unwrap().position;
        assert!((direct - composed).norm() < 1e-8);
    }

    #[test]
    fn exact_density_at_time_zero_is_the_datum() {
        let rho0 = |p: Vec2| (-p.norm_squared()).exp();
        let x = Vec2::new(0.2, -0.1);
        assert_eq!(exact_density(&rho0, &Still, 0.0, x, 0.01).unwrap(), rho0(x));
    }

    #[test]
    fn divergence_free_flow_is_pure_composition() {
        let rho0 = |p: Vec2| (-(p - Vec2::new(1.0, 0.0)).norm_squared()).exp();
        let rot = Rotation {
            c: Vec2::zeros(),
            omega: 1.0,
        };
        let x = Vec2::new(0.0, 1.0);
        let t = std::f64::consts::FRAC_PI_2;
        // rotating back by π/2 lands at (1, 0)
        let v = exact_density(&rho0, &rot, t, x, 1e-3).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn inert_kernel_gives_zero_variation() {
        let model = VelocityModel::new(vec![RadialKernel::unit(Polarity::Inactive, 5.0)]);
        let pos = [Vec2::new(1.0, 1.0)];
        let trial = TrialMotion {
            model: &model,
            positions: &pos,
            agent: 0,
            t: 0.0,
            w: Vec2::new(1.0, 0.0),
        };
        let ys = variational_dwx(&trial, 0.1, Vec2::new(2.0, 2.0), Anchor::Initial, 20).unwrap();
        assert!(ys.iter().all(|s| s.y == Mat2::zeros()));
    }

    #[test]
    fn variational_solution_matches_flow_differences() {
        let model = VelocityModel::new(vec![
            RadialKernel::unit(Polarity::Attractive, 5.0),
            RadialKernel::linear(Polarity::Repulsive, 3.0),
        ]);
        let pos = [Vec2::new(3.0, 2.0), Vec2::new(5.0, 6.0)];
        let x = Vec2::new(6.0, 4.0);
        let dt = 0.2;
        let steps = 200;
        for anchor in [Anchor::Initial, Anchor::Terminal] {
            let base = TrialMotion {
                model: &model,
                positions: &pos,
                agent: 0,
                t: 0.3,
                w: Vec2::new(0.4, -0.7),
            };
            let y = variational_dwx(&base, dt, x, anchor, steps)
                .unwrap()
                .last()
                .unwrap()
                .y;
            let h = 1e-5;
            let mut fd = Mat2::zeros();
            for c in 0..2 {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus.w[c] += h;
                minus.w[c] -= h;
                let col = (trial_flow(&plus, dt, x, anchor, steps).unwrap()
                    - trial_flow(&minus, dt, x, anchor, steps).unwrap())
                    / (2.0 * h);
                fd.set_column(c, &col);
            }
            assert!((y - fd).abs().max() < 1e-6, "{anchor:?}: {y} vs {fd}");
        }
    }
}
