//! Interaction velocity `v(x, P) = Σ_i a_i(|x - P_i|) (P_i - x)` and its derivatives.
//!
//! With `d = P_i - x` and `r = |d|` every per-agent term is radial, so all the
//! derivatives reduce to the scalar profile `a` and its first two derivatives:
//!
//! ```text
//! div_x v          = Σ_i  -2 a_i - a_i' r
//! D_x v            = Σ_i -(a_i I + a_i' d dᵀ / r)
//! D_{P_i} v        =        a_i I + a_i' d dᵀ / r
//! ∇_{P_i} div_x v  =      -(3 a_i' + a_i'' r) d / r
//! ```
//!
//! The model is autonomous in time.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::{Error, Mat2, Result, Vec2};

/// Agent positions at one instant. Scenarios have at most a handful of agents.
pub type Positions = SmallVec<[Vec2; 8]>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Attractive,
    Repulsive,
    /// Zero-strength kernel; stands in for an absent player.
    Inactive,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Attractive => 1.0,
            Polarity::Repulsive => -1.0,
            Polarity::Inactive => 0.0,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Polarity::Attractive),
            -1 => Some(Polarity::Repulsive),
            0 => Some(Polarity::Inactive),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelForm {
    #[serde(rename = "unit")]
    /// `a(r) = e^{-r/L} / sqrt(r² + ε²)`: unit-strength pull that decays with distance.
    UnitDirection,
    /// `a(r) = e^{-r/L}`: speed grows linearly near the agent.
    #[serde(rename = "linear")]
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialKernel {
    pub polarity: Polarity,
    pub decay_length: f64,
    pub form: KernelForm,
    pub epsilon: f64,
}

impl RadialKernel {
    /// Default regularisation length relative to the decay length.
    pub const DEFAULT_EPSILON_RATIO: f64 = 1e-3;

    pub fn unit(polarity: Polarity, decay_length: f64) -> Self {
        Self {
            polarity,
            decay_length,
            form: KernelForm::UnitDirection,
            epsilon: Self::DEFAULT_EPSILON_RATIO * decay_length,
        }
    }

    pub fn linear(polarity: Polarity, decay_length: f64) -> Self {
        Self {
            polarity,
            decay_length,
            form: KernelForm::Linear,
            epsilon: Self::DEFAULT_EPSILON_RATIO * decay_length,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn is_active(&self) -> bool {
        self.polarity != Polarity::Inactive
    }

    #[inline]
    fn singular_at(&self, r: f64) -> bool {
        self.is_active()
            && self.form == KernelForm::UnitDirection
            && self.epsilon == 0.0
            && r == 0.0
    }

    /// `a(r)`.
    #[inline]
    pub fn profile(&self, r: f64) -> f64 {
        let s = self.polarity.sign();
        if s == 0.0 {
            return 0.0;
        }
        let e = (-r / self.decay_length).exp();
        match self.form {
            KernelForm::Linear => s * e,
            KernelForm::UnitDirection => s * e / (r * r + self.epsilon * self.epsilon).sqrt(),
        }
    }

    /// `(a, a', a'')` at `r`.
    #[inline]
    pub fn profile_derivatives(&self, r: f64) -> [f64; 3] {
        let s = self.polarity.sign();
        if s == 0.0 {
            return [0.0; 3];
        }
        let l = self.decay_length;
        let e = (-r / l).exp();
        match self.form {
            KernelForm::Linear => [s * e, -s * e / l, s * e / (l * l)],
            KernelForm::UnitDirection => {
                let q = 1.0 / (r * r + self.epsilon * self.epsilon).sqrt();
                let q3 = q * q * q;
                let dq = -r * q3;
                let ddq = -q3 + 3.0 * r * r * q3 * q * q;
                [
                    s * e * q,
                    s * e * (dq - q / l),
                    s * e * (ddq - 2.0 * dq / l + q / (l * l)),
                ]
            }
        }
    }

    /// `sup_r |a(r)| r`, an upper bound on the speed this kernel can induce.
    pub fn speed_bound(&self) -> f64 {
        if !self.is_active() {
            return 0.0;
        }
        match self.form {
            KernelForm::Linear => self.decay_length / std::f64::consts::E,
            KernelForm::UnitDirection => 1.0,
        }
    }
}

/// One kernel per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityModel {
    pub kernels: Vec<RadialKernel>,
}

impl VelocityModel {
    pub fn new(kernels: Vec<RadialKernel>) -> Self {
        Self { kernels }
    }

    pub fn agent_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_inert(&self) -> bool {
        self.kernels.iter().all(|k| !k.is_active())
    }

    pub fn speed_bound(&self) -> f64 {
        self.kernels.iter().map(RadialKernel::speed_bound).sum()
    }

    #[inline]
    fn check(&self, agent: usize, r: f64) -> Result<()> {
        if self.kernels[agent].singular_at(r) {
            Err(Error::KernelSingular { agent })
        } else {
            Ok(())
        }
    }

    #[inline]
    pub fn velocity(&self, x: Vec2, p: &[Vec2]) -> Result<Vec2> {
        debug_assert_eq!(p.len(), self.kernels.len());
        let mut v = Vec2::zeros();
        for (i, (k, pi)) in self.kernels.iter().zip(p).enumerate() {
            if !k.is_active() {
                continue;
            }
            let d = pi - x;
            let r = d.norm();
            self.check(i, r)?;
            v += k.profile(r) * d;
        }
        Ok(v)
    }

    pub fn divergence(&self, x: Vec2, p: &[Vec2]) -> Result<f64> {
        let mut div = 0.0;
        for (i, (k, pi)) in self.kernels.iter().zip(p).enumerate() {
            if !k.is_active() {
                continue;
            }
            let r = (pi - x).norm();
            self.check(i, r)?;
            let [a, da, _] = k.profile_derivatives(r);
            div += -2.0 * a - da * r;
        }
        Ok(div)
    }

    /// `D_x v`.
    pub fn jacobian_dx(&self, x: Vec2, p: &[Vec2]) -> Result<Mat2> {
        let mut m = Mat2::zeros();
        for i in 0..self.kernels.len() {
            m -= self.jacobian_dp(x, p, i)?;
        }
        Ok(m)
    }

    /// `D_{P_i} v`; the blocks of the other agents vanish.
    pub fn jacobian_dp(&self, x: Vec2, p: &[Vec2], agent: usize) -> Result<Mat2> {
        let k = &self.kernels[agent];
        if !k.is_active() {
            return Ok(Mat2::zeros());
        }
        let d = p[agent] - x;
        let r = d.norm();
        self.check(agent, r)?;
        let [a, da, _] = k.profile_derivatives(r);
        let mut m = Mat2::identity() * a;
        if r > 0.0 {
            m += (da / r) * d * d.transpose();
        }
        Ok(m)
    }

    /// `∇_{P_i} div_x v`.
    pub fn grad_p_div(&self, x: Vec2, p: &[Vec2], agent: usize) -> Result<Vec2> {
        let k = &self.kernels[agent];
        if !k.is_active() {
            return Ok(Vec2::zeros());
        }
        let d = p[agent] - x;
        let r = d.norm();
        self.check(agent, r)?;
        if r == 0.0 {
            return Ok(Vec2::zeros());
        }
        let [_, da, dda] = k.profile_derivatives(r);
        Ok(-(3.0 * da + dda * r) / r * d)
    }

    /// `∇_x div_x v`.
    pub fn grad_x_div(&self, x: Vec2, p: &[Vec2]) -> Result<Vec2> {
        let mut g = Vec2::zeros();
        for i in 0..self.kernels.len() {
            g -= self.grad_p_div(x, p, i)?;
        }
        Ok(g)
    }
}

/// Agent positions as a function of time.
pub trait AgentPath: Sync {
    fn agent_count(&self) -> usize;
    fn positions_at(&self, t: f64) -> Positions;
}

/// `P_i(τ) = P_i(t0) + (τ - t0) w_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPath {
    pub t0: f64,
    pub start: Vec<Vec2>,
    pub speed: Vec<Vec2>,
}

impl LinearPath {
    pub fn new(t0: f64, start: Vec<Vec2>, speed: Vec<Vec2>) -> Self {
        assert_eq!(start.len(), speed.len());
        Self { t0, start, speed }
    }

    /// Every agent at rest.
    pub fn fixed(start: Vec<Vec2>) -> Self {
        let n = start.len();
        Self::new(0.0, start, vec![Vec2::zeros(); n])
    }
}

impl AgentPath for LinearPath {
    fn agent_count(&self) -> usize {
        self.start.len()
    }

    #[inline]
    fn positions_at(&self, t: f64) -> Positions {
        let dt = t - self.t0;
        self.start
            .iter()
            .zip(&self.speed)
            .map(|(p, w)| p + dt * w)
            .collect()
    }
}
