//! Finite-volume transport of the crowd density.
//!
//! Each substep applies two one-dimensional Lax–Friedrichs sweeps (X then Y,
//! or Y then X on odd substeps). Along a line of cells with spacing `h`,
//! normal velocity `u_c` sampled at the cell centres and `λ = dt / h`,
//!
//! ```text
//! F_{c+1/2} = ½ (u_c ρ_c + u_{c+1} ρ_{c+1}) - (h / 2dt) (ρ_{c+1} - ρ_c)
//! ρ_c^new   = ρ_c - λ (F_{c+1/2} - F_{c-1/2})
//!           = ½ (1 - λ u_{c+1}) ρ_{c+1} + ½ (1 + λ u_{c-1}) ρ_{c-1}
//! ```
//!
//! The update is evaluated in the second form: both weights are non-negative
//! whenever the Courant number `|u| λ` is at most one, so a non-negative
//! density stays non-negative in floating point as well. Ghost cells copy the
//! boundary cell (density and velocity), which lets mass leave the domain.

use rayon::prelude::*;

use crate::grid::{Grid2D, ScalarField};
use crate::velocity::{AgentPath, VelocityModel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportOptions {
    /// Target Courant number per sweep.
    pub cfl: f64,
    /// Step used when the velocity vanishes identically.
    pub max_dt: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            cfl: 0.45,
            max_dt: f64::INFINITY,
        }
    }
}

/// Largest stable substep `cfl · min(dx, dy) / vmax`, capped at `max_dt`.
pub fn cfl_dt(grid: &Grid2D, vmax: f64, cfl: f64, max_dt: f64) -> f64 {
    if vmax <= 0.0 {
        return max_dt;
    }
    (cfl * grid.dx.min(grid.dy) / vmax).min(max_dt)
}

/// Velocity sampled at the cell centres.
#[derive(Clone, Debug)]
pub struct CellVelocity {
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl CellVelocity {
    pub fn sample(
        grid: &Grid2D,
        model: &VelocityModel,
        path: &dyn AgentPath,
        t: f64,
    ) -> Result<Self> {
        let p = path.positions_at(t);
        let n = grid.len();
        let mut vx = vec![0.0; n];
        let mut vy = vec![0.0; n];
        vx.par_chunks_mut(grid.nx)
            .zip(vy.par_chunks_mut(grid.nx))
            .enumerate()
            .try_for_each(|(j, (rx, ry))| -> Result<()> {
                for i in 0..grid.nx {
                    let v = model.velocity(grid.cell_center(i, j), &p)?;
                    rx[i] = v.x;
                    ry[i] = v.y;
                }
                Ok(())
            })?;
        Ok(Self { vx, vy })
    }

    /// Largest single velocity component, the quantity the sweeps see.
    pub fn max_component(&self) -> f64 {
        self.vx
            .iter()
            .chain(&self.vy)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn along(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.vx,
            Axis::Y => &self.vy,
        }
    }
}

/// Largest `|u| dt / h` along `axis`.
pub fn courant_number(grid: &Grid2D, axis: Axis, normal_velocity: &[f64], dt: f64) -> f64 {
    let h = match axis {
        Axis::X => grid.dx,
        Axis::Y => grid.dy,
    };
    normal_velocity.iter().fold(0.0_f64, |m, u| m.max(u.abs())) * dt / h
}

/// Lax–Friedrichs update of cell `c` on a line of `n` cells, written as the
/// convex combination `½(1 − λu_{c+1})ρ_{c+1} + ½(1 + λu_{c−1})ρ_{c−1}`.
///
/// Ghost cells copy the edge cell where the edge velocity points outward or
/// is tangential, and are empty where it points into the domain, so mass can
/// leave but never enter.
#[inline]
fn lxf_cell(
    c: usize,
    n: usize,
    lambda: f64,
    rho: impl Fn(usize) -> f64,
    u: impl Fn(usize) -> f64,
) -> f64 {
    let from_above = if c + 1 < n {
        0.5 * (1.0 - lambda * u(c + 1)) * rho(c + 1)
    } else if u(c) < 0.0 {
        0.0
    } else {
        0.5 * (1.0 - lambda * u(c)) * rho(c)
    };
    let from_below = if c > 0 {
        0.5 * (1.0 + lambda * u(c - 1)) * rho(c - 1)
    } else if u(c) > 0.0 {
        0.0
    } else {
        0.5 * (1.0 + lambda * u(c)) * rho(c)
    };
    from_above + from_below
}

/// One conservative Lax–Friedrichs update along `axis`.
pub fn lxf_sweep(
    f: &ScalarField,
    axis: Axis,
    normal_velocity: &[f64],
    dt: f64,
) -> Result<ScalarField> {
    let g = *f.grid();
    assert_eq!(
        normal_velocity.len(),
        g.len(),
        "velocity sample does not match grid"
    );
    let courant = courant_number(&g, axis, normal_velocity, dt);
    if courant.is_nan() || courant > 1.0 {
        return Err(Error::CflViolated { courant });
    }
    let (nx, ny) = (g.nx, g.ny);
    let rho = f.values();
    let u = normal_velocity;
    let mut out = ScalarField::zeros(g);
    match axis {
        Axis::X => {
            let lambda = dt / g.dx;
            out.values_mut()
                .par_chunks_mut(nx)
                .enumerate()
                .for_each(|(j, row)| {
                    let r = &rho[j * nx..(j + 1) * nx];
                    let ur = &u[j * nx..(j + 1) * nx];
                    for (c, out) in row.iter_mut().enumerate() {
                        *out = lxf_cell(c, nx, lambda, |k| r[k], |k| ur[k]);
                    }
                });
        }
        Axis::Y => {
            let lambda = dt / g.dy;
            out.values_mut()
                .par_chunks_mut(nx)
                .enumerate()
                .for_each(|(j, row)| {
                    for (c, out) in row.iter_mut().enumerate() {
                        *out = lxf_cell(j, ny, lambda, |k| rho[k * nx + c], |k| u[k * nx + c]);
                    }
                });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TransportStats {
    pub substeps: usize,
    pub dt: f64,
    /// Largest per-sweep Courant number encountered.
    pub max_courant: f64,
    /// Smallest density value seen after any substep.
    pub min_density: f64,
}

/// Advances `f` from `t` to `t + interval` with agents following `path`.
///
/// The interval is cut into equal substeps sized from the largest velocity
/// component at both ends of the interval; the velocity for each substep is
/// sampled with the agents at the substep midpoint.
pub fn advance_interval(
    f: &ScalarField,
    model: &VelocityModel,
    path: &dyn AgentPath,
    t: f64,
    interval: f64,
    opts: &TransportOptions,
) -> Result<(ScalarField, TransportStats)> {
    assert!(interval > 0.0, "interval must be positive");
    let g = *f.grid();
    let mut stats = TransportStats {
        min_density: f.min_value(),
        ..Default::default()
    };
    if model.is_inert() {
        return Ok((f.clone(), stats));
    }
    let vmax = CellVelocity::sample(&g, model, path, t)?
        .max_component()
        .max(CellVelocity::sample(&g, model, path, t + interval)?.max_component());
    if vmax == 0.0 {
        return Ok((f.clone(), stats));
    }
    let dt_max = cfl_dt(&g, vmax, opts.cfl, opts.max_dt);
    let n = ((interval / dt_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = interval / n as f64;
    stats.substeps = n;
    stats.dt = dt;

    let mut rho = f.clone();
    for k in 0..n {
        let mid = t + (k as f64 + 0.5) * dt;
        let vel = CellVelocity::sample(&g, model, path, mid)?;
        let order = if k % 2 == 0 {
            [Axis::X, Axis::Y]
        } else {
            [Axis::Y, Axis::X]
        };
        for axis in order {
            stats.max_courant =
                stats
                    .max_courant
                    .max(courant_number(&g, axis, vel.along(axis), dt));
            rho = lxf_sweep(&rho, axis, vel.along(axis), dt)?;
        }
        let min = rho.min_value();
        debug_assert!(min >= 0.0 || f.min_value() < 0.0, "density turned negative");
        stats.min_density = stats.min_density.min(min);
    }
    Ok((rho, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::{LinearPath, Polarity, RadialKernel};
    use crate::Vec2;

    fn grid(n: usize) -> Grid2D {
        Grid2D::over_box(0.0, 10.0, 0.0, 10.0, n, n).unwrap()
    }

    #[test]
    fn cfl_dt_arithmetic() {
        let g = Grid2D::new(0.0, 0.0, 10, 10, 0.05, 0.05).unwrap();
        assert!((cfl_dt(&g, 1.5, 0.45, f64::INFINITY) - 0.015).abs() < 1e-15);
        assert!((cfl_dt(&g, 3.0, 0.45, f64::INFINITY) - 0.0075).abs() < 1e-15);
        assert_eq!(cfl_dt(&g, 0.0, 0.45, 0.25), 0.25);
    }

    #[test]
    fn sweep_rejects_cfl_violation() {
        let g = grid(10);
        let f = ScalarField::from_fn(g, |_| 1.0);
        let u = vec![2.0; g.len()];
        let err = lxf_sweep(&f, Axis::X, &u, 1.0).unwrap_err();
        assert!(err.to_string().contains("CFL violated"));
    }

    #[test]
    fn constant_field_is_preserved_without_velocity() {
        let g = grid(12);
        let f = ScalarField::from_fn(g, |_| 0.7);
        let u = vec![0.0; g.len()];
        for axis in [Axis::X, Axis::Y] {
            assert_eq!(lxf_sweep(&f, axis, &u, 0.3).unwrap(), f);
        }
    }

    #[test]
    fn sweep_conserves_mass_away_from_boundary() {
        let g = grid(40);
        let f = ScalarField::from_fn(g, |p| {
            let r2 = (p - Vec2::new(5.0, 5.0)).norm_squared();
            if r2 < 9.0 {
                (9.0 - r2) * (1.0 + p.x)
            } else {
                0.0
            }
        });
        let u: Vec<f64> = (0..g.len()).map(|k| ((k % 7) as f64 - 3.0) * 0.3).collect();
        for axis in [Axis::X, Axis::Y] {
            let out = lxf_sweep(&f, axis, &u, 0.2).unwrap();
            assert!((out.total() - f.total()).abs() <= 1e-14 * f.total());
        }
    }

    #[test]
    fn sweep_keeps_positivity_at_courant_one() {
        let g = grid(20);
        let f = ScalarField::from_fn(g, |p| if p.x > 4.0 && p.x < 4.6 { 1.0 } else { 0.0 });
        let u: Vec<f64> = (0..g.len())
            .map(|k| if k % 3 == 0 { 1.0 } else { -1.0 })
            .collect();
        let out = lxf_sweep(&f, Axis::X, &u, g.dx).unwrap();
        assert!(out.min_value() >= 0.0);
    }

    #[test]
    fn inert_model_returns_input_bitwise() {
        let g = grid(16);
        let f = ScalarField::from_fn(g, |p| (p.x * 0.3).sin().abs());
        let model = VelocityModel::new(vec![RadialKernel::linear(Polarity::Inactive, 10.0)]);
        let path = LinearPath::fixed(vec![Vec2::new(3.0, 3.0)]);
        let (out, stats) =
            advance_interval(&f, &model, &path, 0.0, 0.5, &TransportOptions::default()).unwrap();
        assert_eq!(out, f);
        assert_eq!(stats.substeps, 0);
    }

    #[test]
    fn substeps_respect_the_cfl_target() {
        let g = grid(100);
        let f = ScalarField::from_fn(g, |p| {
            ((6.0..8.0).contains(&p.x) && (2.0..8.0).contains(&p.y)) as u8 as f64
        });
        let model = VelocityModel::new(vec![RadialKernel::linear(Polarity::Attractive, 10.0)]);
        let path = LinearPath::new(0.0, vec![Vec2::new(3.0, 2.0)], vec![Vec2::new(1.0, 0.5)]);
        let opts = TransportOptions::default();
        let (out, stats) = advance_interval(&f, &model, &path, 0.0, 0.2, &opts).unwrap();
        assert!(stats.substeps >= 1);
        assert!(
            stats.max_courant <= opts.cfl * (1.0 + 1e-3),
            "{}",
            stats.max_courant
        );
        assert!(out.min_value() >= 0.0);
    }

    #[test]
    fn fixed_agent_at_centre_keeps_mirror_symmetry() {
        let g = grid(60);
        let c = Vec2::new(5.0, 5.0);
        let f = ScalarField::from_fn(g, |p| {
            let d = p - c;
            (-(d.x * d.x / 4.0 + d.y * d.y)).exp()
                * ((d.x.abs() < 3.0) && (d.y.abs() < 2.0)) as u8 as f64
        });
        let model = VelocityModel::new(vec![RadialKernel::unit(Polarity::Attractive, 5.0)]);
        let path = LinearPath::fixed(vec![c]);
        let (out, _) =
            advance_interval(&f, &model, &path, 0.0, 0.5, &TransportOptions::default()).unwrap();
        let n = g.nx;
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let v = out.get(i, j);
                worst = worst.max((v - out.get(n - 1 - i, j)).abs());
                worst = worst.max((v - out.get(i, n - 1 - j)).abs());
            }
        }
        assert!(worst <= 1e-12, "asymmetry {worst}");
    }

    #[test]
    fn boundary_lets_mass_out_but_never_in() {
        let g = grid(20);
        let f = ScalarField::from_fn(g, |_| 1.0);
        let before = f.total();
        for (axis, sign) in [
            (Axis::X, 1.0),
            (Axis::X, -1.0),
            (Axis::Y, 1.0),
            (Axis::Y, -1.0),
        ] {
            // inward on the low side, outward on the high side, and the reverse
            let u = vec![sign * 1.0; g.len()];
            let out = lxf_sweep(&f, axis, &u, 0.2).unwrap();
            assert!(out.total() <= before * (1.0 + 1e-15));
            let converging: Vec<f64> = (0..g.len())
                .map(|k| {
                    let (i, j) = (k % g.nx, k / g.nx);
                    let x = match axis {
                        Axis::X => g.x_center(i),
                        Axis::Y => g.y_center(j),
                    };
                    sign * (5.0 - x) / 5.0
                })
                .collect();
            let out = lxf_sweep(&f, axis, &converging, 0.2).unwrap();
            assert!(out.total() <= before * (1.0 + 1e-15), "{axis:?} {sign}");
        }
    }
}
