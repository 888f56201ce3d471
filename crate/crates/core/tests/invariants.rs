use consensus_core::characteristics::{exact_density_field, KernelFlow};
use consensus_core::game::run_game;
use consensus_core::grid::{Grid2D, ScalarField};
use consensus_core::pde::{lxf_sweep, Axis};
use consensus_core::scenarios::{parse_scenario, preset, write_outputs};
use consensus_core::strategy::{greedy_direction, Snapshot, Weight};
use consensus_core::velocity::{LinearPath, Polarity, RadialKernel, VelocityModel};
use consensus_core::verify::{check_stability_estimates, Setup};
use consensus_core::Vec2;
use proptest::prelude::*;

fn field(n: usize, values: &[f64]) -> ScalarField {
    let g = Grid2D::over_box(0.0, 1.0, 0.0, 1.0, n, n).unwrap();
    ScalarField::from_values(g, values.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sweeps_keep_density_nonnegative_and_never_gain_mass(
        values in prop::collection::vec(0.0..5.0f64, 64),
        vel in prop::collection::vec(-1.0..1.0f64, 64),
        courant in 0.0..1.0f64,
        along_y in any::<bool>(),
    ) {
        let f = field(8, &values);
        let dt = courant * f.grid().dx;
        let axis = if along_y { Axis::Y } else { Axis::X };
        let out = lxf_sweep(&f, axis, &vel, dt).unwrap();
        prop_assert!(out.min_value() >= 0.0);
        prop_assert!(out.total() <= f.total() * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn greedy_moves_at_full_speed_or_not_at_all(
        ax in 0.5..9.5f64, ay in 0.5..9.5f64,
        tx in 0.5..9.5f64, ty in 0.5..9.5f64,
        attractive in any::<bool>(),
        cap in 0.1..3.0f64,
    ) {
        let g = Grid2D::over_box(0.0, 10.0, 0.0, 10.0, 24, 24).unwrap();
        let rho = ScalarField::from_fn(g, |p| if (p - Vec2::new(6.0, 5.0)).norm() < 1.5 { 1.0 } else { 0.0 });
        let polarity = if attractive { Polarity::Attractive } else { Polarity::Repulsive };
        let model = VelocityModel::new(vec![RadialKernel::unit(polarity, 5.0)]);
        let positions = [Vec2::new(ax, ay)];
        let snap = Snapshot { rho: &rho, positions: &positions, t: 0.0 };
        let psi = Weight::TargetDistance { target: Vec2::new(tx, ty), sign: 1.0 };
        let w = greedy_direction(&snap, 0, &model, &psi, cap, None).unwrap();
        prop_assert!(w.norm() == 0.0 || (w.norm() - cap).abs() <= 1e-12 * cap);
    }
}

#[test]
fn characteristics_conserve_mass_for_interior_data() {
    let setup = Setup::single_agent(120);
    let grid = setup.grid().unwrap();
    let path = LinearPath::fixed(setup.positions.clone());
    let flow = KernelFlow::new(&setup.model, &path);
    let m0 = setup.density.mass();
    let rho = exact_density_field(&grid, &setup.density.profile(), &flow, 0.5, 1e-2).unwrap();
    // midpoint quadrature of a C¹ profile: O(h²) away from m0
    assert!(
        (rho.total() - m0).abs() < 1e-2 * m0,
        "{} vs {m0}",
        rho.total()
    );
}

#[test]
fn stability_lhs_grows_with_the_control_gap_at_most_linearly() {
    let setup = Setup::single_agent(40);
    let u = Vec2::new(-0.7, 0.4);
    let small = check_stability_estimates(&setup, u, u + Vec2::new(0.05, 0.0), 0.5, 0.1).unwrap();
    let large = check_stability_estimates(&setup, u, u + Vec2::new(0.1, 0.0), 0.5, 0.1).unwrap();
    for (s, l) in small.iter().zip(&large) {
        let gap = |r: &consensus_core::verify::CheckReport| {
            r.params
                .get("control_gap")
                .or(r.params.get("speed_gap"))
                .and_then(|v| v.as_f64())
                .unwrap()
        };
        let (gap_s, gap_l) = (gap(s), gap(l));
        assert!((gap_l / gap_s - 2.0).abs() < 1e-9);
        // the bound is linear in the gap; the measured ratio must not grow faster
        assert!(l.lhs / gap_l <= 2.0 * s.lhs / gap_s, "{}", s.check);
        assert!((l.rhs / s.rhs - 2.0).abs() < 1e-9, "{}", s.check);
        assert!(s.pass && l.pass);
    }
}

#[test]
fn outputs_without_snapshots_are_summary_and_trajectory() {
    let mut s = preset("single-agent").unwrap().with_grid(16, 16);
    s.time.final_time = 0.05;
    let trace = run_game(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(&trace, s.name.as_deref(), dir.path()).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["summary.json", "trajectory.csv"]);
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + trace.epochs() + 1);
}

#[test]
fn scenario_file_runs_end_to_end() {
    let text = r#"
[domain]
x0 = 0.0
x1 = 4.0
y0 = 0.0
y1 = 4.0

[grid]
nx = 24
ny = 24

[time]
T = 0.1
dt_strategy = 0.05

[density]
box = [2.0, 3.0, 1.0, 3.0]

[[agents]]
position = [1.0, 1.0]
kernel = { sign = 1, decay_length = 2.0, form = "linear" }
speed_cap = 1.0
strategy = { variant = "constant", u = [0.5, 0.0] }
target = [0.5, 3.5]
"#;
    let s = parse_scenario(text).unwrap();
    let trace = run_game(&s).unwrap();
    assert_eq!(trace.epochs(), 2);
    let end = trace.positions.last().unwrap()[0];
    assert!((end - Vec2::new(1.05, 1.0)).norm() < 1e-12);
}

#[test]
fn leading_term_matches_finite_differences_for_every_agent() {
    use consensus_core::pde::TransportOptions;
    use consensus_core::strategy::{leading_term, local_cost};
    let mut s = preset("six-repulsive").unwrap().with_grid(120, 120);
    s.density.mollify_cells = 2.0;
    let grid = s.grid().unwrap();
    let rho = s.initial_density(&grid);
    let model = s.velocity_model();
    let positions: Vec<Vec2> = s.agents.iter().map(|a| Vec2::from(a.position)).collect();
    let snap = Snapshot {
        rho: &rho,
        positions: &positions,
        t: 0.0,
    };
    let opts = TransportOptions::default();
    let dt = 2.5e-3;
    let h = 1e-4;
    for (i, a) in s.agents.iter().enumerate() {
        let psi = a.weight();
        let analytic = -0.5 * dt * dt * leading_term(&rho, &positions, i, &model, &psi).unwrap();
        let mut fd = Vec2::zeros();
        for k in 0..2 {
            let mut e = Vec2::zeros();
            e[k] = h;
            let c = |w| local_cost(&snap, i, &model, &psi, w, dt, &opts).unwrap();
            fd[k] = (c(e) - c(-e)) / (2.0 * h);
        }
        assert!(
            (fd - analytic).norm() <= 0.05 * analytic.norm(),
            "agent {i}: fd {fd:?} vs {analytic:?}"
        );
    }
}
