//! Chance-constrained collision probabilities between an uncertain robot and
//! isotropic Gaussian obstacles.
//!
//! With robot `R ~ N(μ_rob, σ_rob² I)` and obstacle `G ~ N(μ, σ² I)`, the
//! difference is `N(μ_rob − μ, (σ_rob² + σ²) I)`, so the probability that
//! `‖R − G‖ ≤ r_coll` reduces to the mass a standard 3D normal places on a
//! ball of radius `b = r_coll/s` centered at distance `a = ‖μ_rob − μ‖/s`,
//! with `s = √(σ_rob² + σ²)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::splat::GaussianPoint;

/// Below this center offset the closed form switches to its series limit.
pub const SMALL_A: f64 = 1e-6;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `Φ(hi) − Φ(lo)` for the standard normal CDF, evaluated on the tail that
/// avoids cancellation.
pub fn normal_cdf_diff(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        0.5 * (erfc(lo * FRAC_1_SQRT_2) - erfc(hi * FRAC_1_SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi * FRAC_1_SQRT_2) - erfc(-lo * FRAC_1_SQRT_2))
    } else {
        0.5 * (erf(hi * FRAC_1_SQRT_2) - erf(lo * FRAC_1_SQRT_2))
    }
}

/// `P(Z ∈ B(e₁·a; b))` for `Z ~ N(0, I₃)`.
///
/// Slicing the ball along `e₁` and using the 2D fact `P(‖Z₂‖ > r) = e^{−r²/2}`
/// gives
///
/// `Φ(a+b) − Φ(a−b) − (e^{−(a−b)²/2} − e^{−(a+b)²/2}) / (√(2π)·a)`.
///
/// The second term is evaluated as `e^{−(a−b)²/2}·(−expm1(−2ab))/a`, which
/// stays finite for large `ab`; for `a < 1e-6` it uses the series
/// `2b(1 − ab + ⅔(ab)²)`, whose `a → 0` limit is the χ₃ CDF at `b`.
pub fn normal_ball_prob(a: f64, b: f64) -> f64 {
    debug_assert!(a >= 0.0 && b > 0.0);
    let a = a.abs();
    let slab = normal_cdf_diff(a - b, a + b);
    let ab = a * b;
    let ratio = if a < SMALL_A {
        2.0 * b * (1.0 - ab + 2.0 / 3.0 * ab * ab)
    } else {
        -(-2.0 * ab).exp_m1() / a
    };
    let cap = (-0.5 * (a - b) * (a - b)).exp() * ratio * INV_SQRT_2PI;
    (slab - cap).clamp(0.0, 1.0)
}

/// Probability that the robot at `mu_rob` comes within `r_coll` of `g`.
pub fn pairwise_collision_prob(mu_rob: &Point3<f64>, sigma_rob: f64, g: &GaussianPoint, r_coll: f64) -> f64 {
    let s = (sigma_rob * sigma_rob + g.sigma * g.sigma).sqrt();
    normal_ball_prob((mu_rob - g.mu).norm() / s, r_coll / s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionConfig {
    pub r_coll: f64,
    pub sigma_rob: f64,
    /// Per-state collision tolerance.
    pub eta: f64,
    /// Probability mass allowed to be ignored outside the locality radius.
    pub p_tol: f64,
    /// Characteristic Gaussian size used by the locality bound.
    pub sigma_avg: f64,
    /// Gaussians per cubic meter.
    pub rho: f64,
    /// Number of Gaussians in the global map.
    pub n_global: f64,
    /// Height of the robot center for 3D checks.
    pub z_rob: f64,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            r_coll: 0.3,
            sigma_rob: 0.1,
            eta: 0.05,
            p_tol: 1e-3,
            sigma_avg: 0.03,
            rho: 100.0,
            n_global: 10_000.0,
            z_rob: 0.3,
        }
    }
}

impl CollisionConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("r_coll", self.r_coll),
            ("sigma_rob", self.sigma_rob),
            ("sigma_avg", self.sigma_avg),
            ("rho", self.rho),
            ("n_global", self.n_global),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("eta", self.eta), ("p_tol", self.p_tol)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        Ok(())
    }

    /// A state is free iff its union-bound probability is at most this.
    pub fn free_threshold(&self) -> f64 {
        self.eta - self.p_tol
    }
}

/// Upper estimate of the collision probability contributed by Gaussians
/// whose means lie at least `r_loc` away, under uniform density:
/// `max(0, N − (4/3)π r³ ρ) · P(Z ∈ B(e₁ r; r_coll) / s)`.
pub fn tail_bound(cfg: &CollisionConfig, r_loc: f64) -> f64 {
    let s = (cfg.sigma_rob * cfg.sigma_rob + cfg.sigma_avg * cfg.sigma_avg).sqrt();
    let population = (cfg.n_global - 4.0 / 3.0 * PI * r_loc.powi(3) * cfg.rho).max(0.0);
    if population == 0.0 {
        return 0.0;
    }
    population * normal_ball_prob(r_loc / s, cfg.r_coll / s)
}

/// Smallest radius on the 1 mm grid whose tail bound is at most `p_tol`.
///
/// The bound is non-increasing in the radius, so a binary search over grid
/// indices finds the same value a full scan would.
pub fn compute_r_loc(cfg: &CollisionConfig) -> f64 {
    const STEP: f64 = 1e-3;
    let ok = |k: u64| tail_bound(cfg, k as f64 * STEP) <= cfg.p_tol;
    if ok(0) {
        return 0.0;
    }
    // The population factor vanishes past this radius.
    let r_empty = (3.0 * cfg.n_global / (4.0 * PI * cfg.rho)).cbrt();
    let mut hi = (r_empty / STEP).ceil() as u64 + 1;
    while !ok(hi) {
        hi *= 2;
    }
    let mut lo = 0u64; // !ok(lo)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi as f64 * STEP
}

/// Union bound over the given Gaussians, clamped to 1.
pub fn state_collision_prob(mu_rob: &Point3<f64>, local: &[GaussianPoint], cfg: &CollisionConfig) -> f64 {
    local
        .iter()
        .map(|g| pairwise_collision_prob(mu_rob, cfg.sigma_rob, g, cfg.r_coll))
        .sum::<f64>()
        .min(1.0)
}

/// Uniform hash grid over Gaussian means for radius queries.
#[derive(Debug, Clone)]
struct SpatialGrid {
    cell: f64,
    /// Key of the lowest occupied cell.
    origin: [i64; 3],
    dims: [i64; 3],
    /// CSR layout: indices of cell `c` are `ids[offsets[c]..offsets[c + 1]]`.
    offsets: Vec<u32>,
    ids: Vec<u32>,
}

impl SpatialGrid {
    /// Dense grid over the occupied bounding box. The cell size doubles
    /// until the box holds a bounded number of cells.
    fn new(points: &[GaussianPoint], cell: f64) -> Self {
        let mut cell = cell;
        if points.is_empty() {
            return Self {
                cell,
                origin: [0; 3],
                dims: [0; 3],
                offsets: vec![0],
                ids: Vec::new(),
            };
        }
        let limit = (8 * points.len()).max(1 << 16) as i64;
        let (origin, dims) = loop {
            let mut lo = [i64::MAX; 3];
            let mut hi = [i64::MIN; 3];
            for p in points {
                let k = Self::key(&p.mu, cell);
                for a in 0..3 {
                    lo[a] = lo[a].min(k[a]);
                    hi[a] = hi[a].max(k[a]);
                }
            }
            let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
            if dims.iter().try_fold(1i64, |acc, &d| acc.checked_mul(d)).is_some_and(|n| n <= limit) {
                break (lo, dims);
            }
            cell *= 2.0;
        };
        let n_cells = (dims[0] * dims[1] * dims[2]) as usize;
        let flat = |k: [i64; 3]| {
            (((k[0] - origin[0]) * dims[1] + (k[1] - origin[1])) * dims[2] + (k[2] - origin[2])) as usize
        };
        let mut offsets = vec![0u32; n_cells + 1];
        for p in points {
            offsets[flat(Self::key(&p.mu, cell)) + 1] += 1;
        }
        for c in 0..n_cells {
            offsets[c + 1] += offsets[c];
        }
        let mut fill = offsets.clone();
        let mut ids = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = flat(Self::key(&p.mu, cell));
            ids[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Self {
            cell,
            origin,
            dims,
            offsets,
            ids,
        }
    }

    fn key(p: &Point3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Candidate indices in cells overlapping the query cube, in a fixed order.
    fn visit(&self, center: &Point3<f64>, radius: f64, mut f: impl FnMut(u32) -> bool) {
        if self.ids.is_empty() {
            return;
        }
        let lo = Self::key(&(center - nalgebra::Vector3::repeat(radius)), self.cell);
        let hi = Self::key(&(center + nalgebra::Vector3::repeat(radius)), self.cell);
        let mut range = [(0i64, 0i64); 3];
        for a in 0..3 {
            let from = (lo[a] - self.origin[a]).max(0);
            let to = (hi[a] - self.origin[a]).min(self.dims[a] - 1);
            if from > to {
                return;
            }
            range[a] = (from, to);
        }
        for x in range[0].0..=range[0].1 {
            for y in range[1].0..=range[1].1 {
                let row = ((x * self.dims[1] + y) * self.dims[2]) as usize;
                let first = self.offsets[row + range[2].0 as usize] as usize;
                let last = self.offsets[row + range[2].1 as usize + 1] as usize;
                for &i in &self.ids[first..last] {
                    if !f(i) {
                        return;
                    }
                }
            }
        }
    }
}

/// Collision queries against an immutable snapshot of the local map, summing
/// only over Gaussians within `r_loc` of the robot.
#[derive(Debug, Clone)]
pub struct CollisionChecker {
    points: Vec<GaussianPoint>,
    grid: SpatialGrid,
    cfg: CollisionConfig,
    r_loc: f64,
}

impl CollisionChecker {
    pub fn new(points: Vec<GaussianPoint>, cfg: CollisionConfig, r_loc: f64) -> Self {
        let cell = (r_loc / 2.0).max(0.25);
        let grid = SpatialGrid::new(&points, cell);
        Self {
            points,
            grid,
            cfg,
            r_loc,
        }
    }

    pub fn config(&self) -> &CollisionConfig {
        &self.cfg
    }

    pub fn r_loc(&self) -> f64 {
        self.r_loc
    }

    pub fn points(&self) -> &[GaussianPoint] {
        &self.points
    }

    /// Gaussians whose means lie within `r_loc` of `p`.
    pub fn local_set(&self, p: &Point3<f64>) -> Vec<GaussianPoint> {
        let mut out = Vec::new();
        self.grid.visit(p, self.r_loc, |i| {
            let g = &self.points[i as usize];
            if (g.mu - p).norm() <= self.r_loc {
                out.push(g.clone());
            }
            true
        });
        out
    }

    /// Union-bound collision probability at robot position `p`.
    pub fn probability(&self, p: &Point3<f64>) -> f64 {
        let mut sum = 0.0;
        self.grid.visit(p, self.r_loc, |i| {
            let g = &self.points[i as usize];
            if (g.mu - p).norm() <= self.r_loc {
                sum += pairwise_collision_prob(p, self.cfg.sigma_rob, g, self.cfg.r_coll);
            }
            sum <= 1.0
        });
        sum.min(1.0)
    }

    /// `probability(p) ≤ η − p_tol`, stopping early once the sum exceeds it.
    pub fn is_free(&self, p: &Point3<f64>) -> bool {
        let threshold = self.cfg.free_threshold();
        let mut sum = 0.0;
        self.grid.visit(p, self.r_loc, |i| {
            let g = &self.points[i as usize];
            if (g.mu - p).norm() <= self.r_loc {
                sum += pairwise_collision_prob(p, self.cfg.sigma_rob, g, self.cfg.r_coll);
            }
            sum <= threshold
        });
        sum <= threshold
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CompressedFeature;

    fn g(x: f64, y: f64, z: f64, sigma: f64) -> GaussianPoint {
        GaussianPoint {
            mu: Point3::new(x, y, z),
            sigma,
            color: [0.0; 3],
            opacity: 1.0,
            feature: CompressedFeature::zeros(1),
        }
    }

    #[test]
    fn chi3_limit_at_origin() {
        // χ₃ CDF at 1: erf(1/√2) − √(2/π)·e^{−1/2}.
        let chi3 = erf(FRAC_1_SQRT_2) - (2.0 / PI).sqrt() * (-0.5f64).exp();
        assert!((normal_ball_prob(0.0, 1.0) - chi3).abs() < 1e-15);
        assert!((normal_ball_prob(0.0, 1.0) - 0.19875).abs() < 1e-5);
        // Continuity across the series switch.
        let below = normal_ball_prob(0.999e-6, 1.3);
        let above = normal_ball_prob(1.001e-6, 1.3);
        assert!((below - above).abs() < 1e-12);
    }

    #[test]
    fn far_tail_is_negligible() {
        assert!(normal_ball_prob(10.0, 1.0) < 1e-15);
        assert!(normal_ball_prob(10.0, 1.0) > 0.0);
    }

    #[test]
    fn decreasing_in_offset() {
        for &b in &[0.1, 0.7, 2.0, 3.0] {
            let mut prev = f64::INFINITY;
            for k in 0..200 {
                let p = normal_ball_prob(k as f64 * 0.05, b);
                assert!(p < prev, "b={b} k={k}");
                prev = p;
            }
        }
    }

    #[test]
    fn pairwise_examples() {
        let rob = Point3::new(0.0, 0.0, 0.0);
        let p = pairwise_collision_prob(&rob, 0.01, &g(0.0, 0.0, 0.0, 0.01), 1.0);
        assert!(p > 1.0 - 1e-12);

        let s = (0.1f64 * 0.1 + 0.1 * 0.1).sqrt();
        let p = pairwise_collision_prob(&rob, 0.1, &g(10.0 * s, 0.0, 0.0, 0.1), s);
        assert!(p < 1e-10);

        let base = pairwise_collision_prob(&rob, 0.2, &g(0.3, 0.1, -0.2, 0.05), 0.25);
        let scaled = pairwise_collision_prob(&rob, 0.2 * 7.0, &g(2.1, 0.7, -1.4, 0.35), 1.75);
        assert!((base - scaled).abs() < 1e-14);
    }

    #[test]
    fn union_bound_examples() {
        let cfg = CollisionConfig::default();
        let rob = Point3::new(0.0, 0.0, 0.3);
        assert_eq!(state_collision_prob(&rob, &[], &cfg), 0.0);
        let one = g(0.8, 0.0, 0.3, 0.05);
        let p = pairwise_collision_prob(&rob, cfg.sigma_rob, &one, cfg.r_coll);
        assert_eq!(state_collision_prob(&rob, &[one], &cfg), p);
    }

    #[test]
    fn r_loc_edge_cases() {
        let mut cfg = CollisionConfig {
            p_tol: 0.5,
            n_global: 0.4,
            ..CollisionConfig::default()
        };
        assert_eq!(compute_r_loc(&cfg), 0.0);
        cfg.p_tol = 1e-3;
        cfg.n_global = 1e4;
        let r1 = compute_r_loc(&cfg);
        cfg.n_global = 2e4;
        let r2 = compute_r_loc(&cfg);
        assert!(r2 >= r1);
        assert!(r1 > 0.0);
    }

    #[test]
    fn checker_matches_direct_sum() {
        let cfg = CollisionConfig::default();
        let pts: Vec<GaussianPoint> = (0..50)
            .map(|i| g(i as f64 * 0.1, (i % 5) as f64 * 0.2, 0.3, 0.03))
            .collect();
        let checker = CollisionChecker::new(pts.clone(), cfg, 1.0);
        let p = Point3::new(2.0, 0.5, 0.3);
        let local: Vec<GaussianPoint> =
            pts.iter().filter(|q| (q.mu - p).norm() <= 1.0).cloned().collect();
        let direct = state_collision_prob(&p, &local, &cfg);
        assert!((checker.probability(&p) - direct).abs() < 1e-12);
        assert_eq!(checker.is_free(&p), direct <= cfg.free_threshold());
        assert_eq!(checker.local_set(&p).len(), local.len());
    }
}
