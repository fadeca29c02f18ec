#![allow(dead_code)]

use std::io::Write;

use atlas_core::codec::{CompressedFeature, Normalization, PcaBasis};
use atlas_core::motion::{LatticeConfig, RobotState, Trajectory};
use atlas_core::GaussianPoint;
use nalgebra::{DMatrix, DVector, Point3};
use rand::Rng;
use rand_distr::StandardNormal;

/// Writes straight to the process stdout so the line shows up even when the
/// test harness captures `println!`.
pub fn report(name: &str, pass: bool, detail: impl std::fmt::Display) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{tag}] {name}: {detail}");
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `n × k` matrix with orthonormal columns.
pub fn random_orthonormal(rng: &mut impl Rng, n: usize, k: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// A fitted codec with a random orthonormal basis, built without IPCA.
pub fn random_codec(rng: &mut impl Rng, n_f: usize, n_c: usize) -> PcaBasis {
    let q = random_orthonormal(rng, n_f, n_c);
    PcaBasis::from_parts(
        gaussian_vec(rng, n_f) * 0.1,
        q.transpose(),
        DVector::from_element(n_c, 1.0),
        1,
        Normalization::None,
    )
    .unwrap()
}

pub fn point(mu: Point3<f64>, sigma: f64, feature: Vec<f64>) -> GaussianPoint {
    GaussianPoint {
        mu,
        sigma,
        color: [0.5, 0.5, 0.5],
        opacity: 0.9,
        feature: CompressedFeature::new(feature).unwrap(),
    }
}

/// Unicycle arc written through the complex exponential rather than the
/// library's trigonometric form.
pub fn reference_arc(x0: &RobotState, v: f64, omega: f64, t: f64) -> (f64, f64, f64) {
    let (c0, s0) = (x0.theta.cos(), x0.theta.sin());
    if omega.abs() < 1e-12 {
        return (x0.x + v * t * c0, x0.y + v * t * s0, x0.theta);
    }
    // (e^{iωt} − 1) / (iω) = (sin ωt + i(1 − cos ωt)) / ω
    let (re, im) = ((omega * t).sin() / omega, (1.0 - (omega * t).cos()) / omega);
    let dx = v * (c0 * re - s0 * im);
    let dy = v * (s0 * re + c0 * im);
    (x0.x + dx, x0.y + dy, x0.theta + omega * t)
}

pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Checks control bounds, continuity between primitives, and that every
/// sample lies on the arc of its control to 1e-9.
pub fn check_feasible(traj: &Trajectory, start: &RobotState, lattice: &LatticeConfig) -> Result<(), String> {
    let mut prev = *start;
    for (i, p) in traj.primitives.iter().enumerate() {
        let u = p.control;
        if u.v.abs() > lattice.v_max + 1e-12 || u.omega.abs() > lattice.omega_max + 1e-12 {
            return Err(format!("primitive {i}: control {u:?} out of bounds"));
        }
        let gap = (p.start.x - prev.x).hypot(p.start.y - prev.y) + angle_diff(p.start.theta, prev.theta);
        if gap > 1e-9 {
            return Err(format!("primitive {i}: starts {gap:e} away from previous end"));
        }
        let n = p.samples.len();
        for (k, s) in p.samples.iter().enumerate() {
            let t = p.duration * (k + 1) as f64 / n as f64;
            let (x, y, th) = reference_arc(&p.start, u.v, u.omega, t);
            let err = (s.x - x).abs().max((s.y - y).abs()).max(angle_diff(s.theta, th));
            if err > 1e-9 {
                return Err(format!("primitive {i} sample {k}: off the arc by {err:e}"));
            }
        }
        prev = p.end_state;
    }
    Ok(())
}
