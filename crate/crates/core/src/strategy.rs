//! Control synthesis for a single agent.
//!
//! On each strategy interval `[t, t + Δt]` an agent picks a speed `w` with
//! `|w| ≤ U`. The local cost of a trial speed is
//! `J(w) = ∫ ρ_w(t + Δt, x) ψ(x) dx`, where `ρ_w` is transported with the agent
//! moving as `P(t) + (τ - t) w` and every other agent held where it is.
//!
//! For small `Δt` the gradient of `J` is, to leading order,
//!
//! ```text
//! ∇_w J = -(Δt² / 2) ∫ [ D_P vᵀ ∇ρ + ρ ∇_P div v ] ψ dx
//! ```
//!
//! independent of `w`, so the greedy rule moves at full speed against it.
//! The integral is the transport sensitivity `-∫ div(ρ D_P v) ψ` split by the
//! product rule. After an integration by parts it equals `-∫ ρ D_P vᵀ ∇ψ dx`,
//! which is the form [`leading_term`] evaluates: it needs no derivative of `ρ`
//! and stays accurate when the crowd piles up on an agent, where the
//! singular `∇_P div v` and the grid-scale `∇ρ` make the split form unreliable.

use serde::{Deserialize, Serialize};

use crate::characteristics::TrialMotion;
use crate::grid::{gradient_field, grid_sum, integrate_weighted, ScalarField};
use crate::pde::{advance_interval, TransportOptions};
use crate::velocity::VelocityModel;
use crate::{Error, Result, Vec2};

/// Cost weight `ψ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Weight {
    /// `sign · |x - target|`.
    TargetDistance {
        target: Vec2,
        sign: f64,
    },
    Zero,
}

impl Weight {
    #[inline]
    pub fn eval(&self, x: Vec2) -> f64 {
        match self {
            Weight::TargetDistance { target, sign } => sign * (x - target).norm(),
            Weight::Zero => 0.0,
        }
    }

    pub fn translated(&self, shift: Vec2) -> Self {
        match self {
            Weight::TargetDistance { target, sign } => Weight::TargetDistance {
                target: target + shift,
                sign: *sign,
            },
            Weight::Zero => Weight::Zero,
        }
    }

    /// `∇ψ`, taken as zero at the kink of the distance function.
    #[inline]
    pub fn gradient(&self, x: Vec2) -> Vec2 {
        match self {
            Weight::TargetDistance { target, sign } => {
                let d = x - target;
                let r = d.norm();
                if r > 0.0 {
                    d * (sign / r)
                } else {
                    Vec2::zeros()
                }
            }
            Weight::Zero => Vec2::zeros(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategyVariant {
    /// Full speed against the leading-order gradient of the local cost.
    Greedy {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        denom_tol: Option<f64>,
    },
    /// The same speed for all time.
    Constant { u: Vec2 },
    /// Piecewise-constant speeds: entry `(t_k, u_k)` applies from `t_k` until the next entry.
    Scripted { table: Vec<(f64, Vec2)> },
    /// Best of `w = 0` and `n_directions` points on the circle `|w| = U`, by direct evaluation.
    BruteForce { n_directions: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub variant: StrategyVariant,
    pub speed_cap: f64,
}

impl StrategySpec {
    pub fn greedy(speed_cap: f64) -> Self {
        Self {
            variant: StrategyVariant::Greedy { denom_tol: None },
            speed_cap,
        }
    }

    pub fn constant(u: Vec2, speed_cap: f64) -> Self {
        Self {
            variant: StrategyVariant::Constant { u },
            speed_cap,
        }
    }

    /// Whether the control depends on the current density.
    pub fn is_feedback(&self) -> bool {
        matches!(
            self.variant,
            StrategyVariant::Greedy { .. } | StrategyVariant::BruteForce { .. }
        )
    }

    /// Open-loop control value at time `t`, for the variants that have one.
    pub fn scheduled(&self, t: f64) -> Option<Vec2> {
        match &self.variant {
            StrategyVariant::Constant { u } => Some(*u),
            StrategyVariant::Scripted { table } => Some(
                table
                    .iter()
                    .take_while(|(tk, _)| *tk <= t)
                    .last()
                    .map(|(_, u)| *u)
                    .unwrap_or_else(Vec2::zeros),
            ),
            _ => None,
        }
    }
}

/// Everything an agent may look at when it decides: the density now and where
/// all the agents are now.
#[derive(Clone, Copy)]
pub struct Snapshot<'a> {
    pub rho: &'a ScalarField,
    pub positions: &'a [Vec2],
    pub t: f64,
}

/// `-∫ ρ D_{P_i} vᵀ ∇ψ dx` over the grid; `∇_w J ≈ -(Δt² / 2)` times this vector.
pub fn leading_term(
    rho: &ScalarField,
    positions: &[Vec2],
    agent: usize,
    model: &VelocityModel,
    psi: &Weight,
) -> Result<Vec2> {
    let g = *rho.grid();
    let values = rho.values();
    let total = grid_sum(&g, Vec2::zeros(), |i, j| {
        let r = values[g.index(i, j)];
        if r == 0.0 {
            return Ok(Vec2::zeros());
        }
        let x = g.cell_center(i, j);
        let term = -(model.jacobian_dp(x, positions, agent)?.transpose() * psi.gradient(x)) * r;
        if !(term.x.is_finite() && term.y.is_finite()) {
            return Err(Error::StrategyIntegrandNotFinite { agent });
        }
        Ok(term)
    })?;
    Ok(total * g.cell_area())
}

/// The same vector evaluated in split form,
/// `∫ [ D_{P_i} vᵀ ∇ρ + ρ ∇_{P_i} div v ] ψ dx`, with central differences for `∇ρ`.
/// Agrees with [`leading_term`] for smooth densities away from the agents.
pub fn leading_term_split(
    rho: &ScalarField,
    positions: &[Vec2],
    agent: usize,
    model: &VelocityModel,
    psi: &Weight,
) -> Result<Vec2> {
    let g = *rho.grid();
    let grad = gradient_field(rho);
    let values = rho.values();
    let total = grid_sum(&g, Vec2::zeros(), |i, j| {
        let r = values[g.index(i, j)];
        let gr = grad.get(i, j);
        if r == 0.0 && gr.x == 0.0 && gr.y == 0.0 {
            return Ok(Vec2::zeros());
        }
        let x = g.cell_center(i, j);
        let w = psi.eval(x);
        let dp = model.jacobian_dp(x, positions, agent)?;
        let gp = model.grad_p_div(x, positions, agent)?;
        let term = (dp.transpose() * gr + r * gp) * w;
        if !(term.x.is_finite() && term.y.is_finite()) {
            return Err(Error::StrategyIntegrandNotFinite { agent });
        }
        Ok(term)
    })?;
    Ok(total * g.cell_area())
}

/// Default threshold under which the greedy rule stands still.
pub fn default_denom_tol(rho: &ScalarField) -> f64 {
    1e-12 * (1.0 + rho.l1_norm())
}

/// Leading-order gradient of the local cost for an interval of length `dt`.
pub fn leading_gradient(
    snap: &Snapshot<'_>,
    agent: usize,
    model: &VelocityModel,
    psi: &Weight,
    dt: f64,
) -> Result<Vec2> {
    Ok(-0.5 * dt * dt * leading_term(snap.rho, snap.positions, agent, model, psi)?)
}

/// `U` times the unit vector opposite the local-cost gradient, or zero when
/// the gradient is below `denom_tol`.
pub fn greedy_direction(
    snap: &Snapshot<'_>,
    agent: usize,
    model: &VelocityModel,
    psi: &Weight,
    speed_cap: f64,
    denom_tol: Option<f64>,
) -> Result<Vec2> {
    let term = leading_term(snap.rho, snap.positions, agent, model, psi)?;
    let tol = denom_tol.unwrap_or_else(|| default_denom_tol(snap.rho));
    let norm = term.norm();
    if norm > tol {
        // -∇J points along +term
        Ok(term * (speed_cap / norm))
    } else {
        Ok(Vec2::zeros())
    }
}

/// `J_{t,Δt}(w)`: transport over one interval with agent `agent` moving at
/// `w` and the others frozen, then integrate against `ψ`.
pub fn local_cost(
    snap: &Snapshot<'_>,
    agent: usize,
    model: &VelocityModel,
    psi: &Weight,
    w: Vec2,
    dt: f64,
    opts: &TransportOptions,
) -> Result<f64> {
    let trial = TrialMotion {
        model,
        positions: snap.positions,
        agent,
        t: snap.t,
        w,
    };
    let (rho, _) = advance_interval(snap.rho, model, &trial, snap.t, dt, opts)?;
    integrate_weighted(&rho, |x| psi.eval(x))
}

/// Minimises [`local_cost`] over `w = 0` and `n_directions` equally spaced
/// points on `|w| = U` (angle `2πk/n`). Ties go to the earlier candidate.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_direction(
    snap: &Snapshot<'_>,
    agent: usize,
    model: &VelocityModel,
    psi: &Weight,
    speed_cap: f64,
    dt: f64,
    n_directions: usize,
    opts: &TransportOptions,
) -> Result<Vec2> {
    assert!(n_directions >= 4, "need at least four directions");
    let mut best = Vec2::zeros();
    let mut best_cost = local_cost(snap, agent, model, psi, best, dt, opts)?;
    for k in 0..n_directions {
        let theta = std::f64::consts::TAU * k as f64 / n_directions as f64;
        let w = speed_cap * Vec2::new(theta.cos(), theta.sin());
        let c = local_cost(snap, agent, model, psi, w, dt, opts)?;
        if c < best_cost {
            best_cost = c;
            best = w;
        }
    }
    Ok(best)
}

/// Control of agent `agent` for the interval starting at `snap.t`.
pub fn decide(
    spec: &StrategySpec,
    snap: &Snapshot<'_>,
    agent: usize,
    model: &VelocityModel,
    psi: &Weight,
    dt: f64,
    opts: &TransportOptions,
) -> Result<Vec2> {
    match &spec.variant {
        StrategyVariant::Greedy { denom_tol } => {
            greedy_direction(snap, agent, model, psi, spec.speed_cap, *denom_tol)
        }
        StrategyVariant::BruteForce { n_directions } => brute_force_direction(
            snap,
            agent,
            model,
            psi,
            spec.speed_cap,
            dt,
            *n_directions,
            opts,
        ),
        _ => Ok(spec.scheduled(snap.t).expect("open-loop variant")),
    }
}
