//! Isotropic language-embedded Gaussians: back-projection from RGB-D-feature
//! frames and front-to-back alpha-composited rendering.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CompressedFeature;
use crate::geometry::Pose;

/// Opacity given to freshly back-projected Gaussians.
pub const INITIAL_OPACITY: f64 = 0.9;

/// Splats are evaluated only within this many projected standard deviations.
pub const TRUNCATION_SIGMAS: f64 = 3.0;

/// Gaussians closer than this to the image plane are not rendered.
const NEAR_PLANE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("image buffer has {got} entries, expected {expected}")]
    ImageSize { expected: usize, got: usize },
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid gaussian: {0}")]
    Gaussian(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPoint {
    pub mu: Point3<f64>,
    pub sigma: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub feature: CompressedFeature,
}

impl GaussianPoint {
    pub fn validate(&self) -> Result<(), SplatError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(SplatError::Gaussian(format!("sigma {} not > 0", self.sigma)));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(SplatError::Gaussian(format!(
                "opacity {} outside (0, 1]",
                self.opacity
            )));
        }
        if !self.mu.coords.iter().all(|v| v.is_finite()) {
            return Err(SplatError::Gaussian("non-finite mean".into()));
        }
        Ok(())
    }

    /// Copy of the point with its mean mapped through `pose`. Isotropy makes
    /// the covariance rotation-invariant.
    pub fn transformed(&self, pose: &Pose) -> GaussianPoint {
        GaussianPoint {
            mu: pose * self.mu,
            ..self.clone()
        }
    }
}

/// Pinhole camera with a depth cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub max_depth: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), SplatError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SplatError::Camera("focal lengths must be positive".into()));
        }
        if !(self.max_depth > 0.0) {
            return Err(SplatError::Camera("max_depth must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SplatError::Camera("empty image".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame ray through pixel `(u, v)` with unit z component.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Same camera rescaled to a different resolution.
    pub fn scaled(&self, factor: f64) -> CameraModel {
        CameraModel {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            width: (self.width as f64 * factor).round() as usize,
            height: (self.height as f64 * factor).round() as usize,
            max_depth: self.max_depth,
        }
    }
}

/// One RGB-D-feature observation. Images are row-major, `v * width + u`.
#[derive(Debug, Clone)]
pub struct Frame {
    pub pose: Pose,
    pub color: Vec<[f64; 3]>,
    /// Meters; `0` marks an invalid pixel.
    pub depth: Vec<f64>,
    /// `width · height · n_c` compressed features.
    pub features: Vec<f64>,
    pub n_c: usize,
}

impl Frame {
    pub fn validate(&self, cam: &CameraModel) -> Result<(), SplatError> {
        let n = cam.pixel_count();
        for (len, expected) in [
            (self.color.len(), n),
            (self.depth.len(), n),
            (self.features.len(), n * self.n_c),
        ] {
            if len != expected {
                return Err(SplatError::ImageSize { expected, got: len });
            }
        }
        Ok(())
    }

    pub fn feature_at(&self, pixel: usize) -> &[f64] {
        &self.features[pixel * self.n_c..(pixel + 1) * self.n_c]
    }
}

/// Output of [`render`]; all images row-major.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub features: Vec<f64>,
    pub alpha: Vec<f64>,
    pub n_c: usize,
    pub width: usize,
    pub height: usize,
}

impl RenderOutput {
    pub fn feature_at(&self, pixel: usize) -> &[f64] {
        &self.features[pixel * self.n_c..(pixel + 1) * self.n_c]
    }
}

fn depth_is_valid(d: f64, cam: &CameraModel) -> bool {
    d.is_finite() && d > 0.0 && d <= cam.max_depth
}

/// One Gaussian per sampled pixel with valid depth, placed at the
/// back-projected world point. `sigma = z / fx` (pixel footprint at range).
pub fn backproject_init(
    frame: &Frame,
    cam: &CameraModel,
    stride: usize,
) -> Result<Vec<GaussianPoint>, SplatError> {
    cam.validate()?;
    frame.validate(cam)?;
    let stride = stride.max(1);
    let mut out = Vec::new();
    for v in (0..cam.height).step_by(stride) {
        for u in (0..cam.width).step_by(stride) {
            let idx = v * cam.width + u;
            let z = frame.depth[idx];
            if !depth_is_valid(z, cam) {
                continue;
            }
            let local = Point3::from(cam.ray(u as f64, v as f64) * z);
            out.push(GaussianPoint {
                mu: frame.pose * local,
                sigma: z / cam.fx,
                color: frame.color[idx],
                opacity: INITIAL_OPACITY,
                feature: CompressedFeature::from_vector(nalgebra::DVector::from_column_slice(
                    frame.feature_at(idx),
                )),
            });
        }
    }
    Ok(out)
}

struct Splat {
    u: f64,
    v: f64,
    z: f64,
    inv_var_u: f64,
    inv_var_v: f64,
    radius_u: f64,
    radius_v: f64,
    index: usize,
}

/// Renders color, depth, feature and accumulated-alpha images.
///
/// Each Gaussian projects to a 2D isotropic splat with standard deviation
/// `σ·f/z` and contributes `α = o·exp(−½ d²/σ₂ᴅ²)` at pixel distance `d`.
/// Splats are composited front-to-back in order of camera depth (ties broken
/// by input index), so `C = Σ cᵢ αᵢ Πⱼ<ᵢ (1 − αⱼ)`; depth composites the splat
/// depths the same way. Rows are rendered in parallel.
pub fn render(points: &[GaussianPoint], cam: &CameraModel, pose: &Pose) -> RenderOutput {
    let n_c = points.first().map(|p| p.feature.len()).unwrap_or(0);
    let w = cam.width;
    let h = cam.height;
    let world_to_cam = pose.inverse();

    let mut splats: Vec<Splat> = points
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let pc = world_to_cam * g.mu;
            if pc.z <= NEAR_PLANE {
                return None;
            }
            let su = g.sigma * cam.fx / pc.z;
            let sv = g.sigma * cam.fy / pc.z;
            let u = cam.fx * pc.x / pc.z + cam.cx;
            let v = cam.fy * pc.y / pc.z + cam.cy;
            let radius_u = TRUNCATION_SIGMAS * su;
            let radius_v = TRUNCATION_SIGMAS * sv;
            if u + radius_u < 0.0
                || v + radius_v < 0.0
                || u - radius_u > (w - 1) as f64
                || v - radius_v > (h - 1) as f64
            {
                return None;
            }
            Some(Splat {
                u,
                v,
                z: pc.z,
                inv_var_u: 1.0 / (su * su),
                inv_var_v: 1.0 / (sv * sv),
                radius_u,
                radius_v,
                index,
            })
        })
        .collect();
    splats.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.index.cmp(&b.index)));

    let mut color = vec![[0.0; 3]; w * h];
    let mut depth = vec![0.0; w * h];
    let mut features = vec![0.0; w * h * n_c];
    let mut transmittance = vec![1.0; w * h];

    color
        .par_chunks_mut(w)
        .zip(depth.par_chunks_mut(w))
        .zip(features.par_chunks_mut((w * n_c).max(1)))
        .zip(transmittance.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, (((color, depth), features), trans))| {
            let vf = row as f64;
            for s in &splats {
                if (vf - s.v).abs() > s.radius_v {
                    continue;
                }
                let g = &points[s.index];
                let dv2 = (vf - s.v) * (vf - s.v) * s.inv_var_v;
                let u0 = (s.u - s.radius_u).ceil().max(0.0) as usize;
                let u1 = ((s.u + s.radius_u).floor() as isize).min(w as isize - 1);
                if u1 < u0 as isize {
                    continue;
                }
                for u in u0..=u1 as usize {
                    let du = u as f64 - s.u;
                    let e = du * du * s.inv_var_u + dv2;
                    if e > TRUNCATION_SIGMAS * TRUNCATION_SIGMAS {
                        continue;
                    }
                    let alpha = g.opacity * (-0.5 * e).exp();
                    let t = trans[u];
                    let weight = alpha * t;
                    for c in 0..3 {
                        color[u][c] += g.color[c] * weight;
                    }
                    depth[u] += s.z * weight;
                    if n_c > 0 {
                        let f = &mut features[u * n_c..(u + 1) * n_c];
                        for (dst, src) in f.iter_mut().zip(g.feature.as_slice()) {
                            *dst += src * weight;
                        }
                    }
                    trans[u] = t * (1.0 - alpha);
                }
            }
        });

    RenderOutput {
        color,
        depth,
        features,
        alpha: transmittance.into_iter().map(|t| 1.0 - t).collect(),
        n_c,
        width: w,
        height: h,
    }
}

/// Collapses Gaussians sharing a voxel into one.
///
/// Position, color and feature are opacity-weighted means; the merged
/// opacity is the union coverage `1 − Π(1 − oᵢ)` and sigma is moment-matched
/// (weighted member variance plus spread of member means). Output order
/// follows the first occurrence of each voxel.
pub fn prune_merge(points: &[GaussianPoint], voxel: f64) -> Vec<GaussianPoint> {
    assert!(voxel > 0.0, "voxel size must be positive");
    let mut cells: HashMap<[i64; 3], usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let key = voxel_key(&p.mu, voxel);
        let g = *cells.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
        .iter()
        .map(|members| {
            if members.len() == 1 {
                return points[members[0]].clone();
            }
            merge_group(members.iter().map(|&i| &points[i]))
        })
        .collect()
}

pub(crate) fn voxel_key(p: &Point3<f64>, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

fn merge_group<'a>(members: impl Iterator<Item = &'a GaussianPoint> + Clone) -> GaussianPoint {
    let first = members.clone().next().expect("non-empty group");
    let n_c = first.feature.len();
    let mut wsum = 0.0;
    let mut mu = Vector3::zeros();
    let mut color = [0.0; 3];
    let mut feature = nalgebra::DVector::zeros(n_c);
    let mut transparency = 1.0;
    for g in members.clone() {
        let w = g.opacity;
        wsum += w;
        mu += g.mu.coords * w;
        for c in 0..3 {
            color[c] += g.color[c] * w;
        }
        feature += g.feature.vector() * w;
        transparency *= 1.0 - g.opacity;
    }
    mu /= wsum;
    for c in &mut color {
        *c /= wsum;
    }
    feature /= wsum;
    let mut var = 0.0;
    for g in members {
        let spread = (g.mu.coords - mu).norm_squared() / 3.0;
        var += g.opacity * (g.sigma * g.sigma + spread);
    }
    var /= wsum;
    GaussianPoint {
        mu: Point3::from(mu),
        sigma: var.sqrt(),
        color,
        opacity: (1.0 - transparency).clamp(f64::MIN_POSITIVE, 1.0),
        feature: CompressedFeature::from_vector(feature),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera_pose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn cam(w: usize, h: usize) -> CameraModel {
        CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: (w / 2) as f64,
            cy: (h / 2) as f64,
            width: w,
            height: h,
            max_depth: 5.0,
        }
    }

    fn point(mu: [f64; 3], sigma: f64, color: [f64; 3], opacity: f64) -> GaussianPoint {
        GaussianPoint {
            mu: Point3::new(mu[0], mu[1], mu[2]),
            sigma,
            color,
            opacity,
            feature: CompressedFeature::new(vec![1.0, 0.0]).unwrap(),
        }
    }

    fn flat_frame(cam: &CameraModel, pose: Pose, depth: f64) -> Frame {
        let n = cam.pixel_count();
        Frame {
            pose,
            color: (0..n)
                .map(|i| {
                    let (u, v) = ((i % cam.width) as f64, (i / cam.width) as f64);
                    [u / cam.width as f64, v / cam.height as f64, 0.25]
                })
                .collect(),
            depth: vec![depth; n],
            features: (0..n).flat_map(|i| [i as f64, 1.0]).collect(),
            n_c: 2,
        }
    }

    #[test]
    fn principal_pixel_backprojects_onto_axis() {
        let c = cam(9, 7);
        let pose = camera_pose(1.0, 2.0, 0.5, 0.3);
        let mut frame = flat_frame(&c, pose, 0.0);
        let center = 3 * 9 + 4;
        frame.depth[center] = 2.0;
        let pts = backproject_init(&frame, &c, 1).unwrap();
        assert_eq!(pts.len(), 1);
        let expected = pose * Point3::new(0.0, 0.0, 2.0);
        assert!((pts[0].mu - expected).norm() < 1e-12);
        assert!(close(pts[0].sigma, 2.0 / 100.0, 1e-15));
        assert_eq!(pts[0].opacity, INITIAL_OPACITY);
        assert_eq!(pts[0].feature.as_slice(), &[center as f64, 1.0]);
    }

    #[test]
    fn invalid_depth_yields_no_gaussians() {
        let c = cam(8, 6);
        let mut frame = flat_frame(&c, Pose::identity(), 0.0);
        frame.depth[3] = 9.0; // beyond max_depth
        frame.depth[4] = f64::NAN;
        assert!(backproject_init(&frame, &c, 1).unwrap().is_empty());
    }

    #[test]
    fn full_frame_count() {
        let c = CameraModel {
            fx: 277.0,
            fy: 277.0,
            cx: 160.0,
            cy: 120.0,
            width: 320,
            height: 240,
            max_depth: 5.0,
        };
        let frame = flat_frame(&c, Pose::identity(), 1.0);
        assert_eq!(backproject_init(&frame, &c, 1).unwrap().len(), 76_800);
        assert_eq!(backproject_init(&frame, &c, 2).unwrap().len(), 160 * 120);
    }

    #[test]
    fn empty_map_renders_background() {
        let c = cam(6, 4);
        let out = render(&[], &c, &Pose::identity());
        assert!(out.alpha.iter().all(|&a| a == 0.0));
        assert!(out.depth.iter().all(|&d| d == 0.0));
        assert!(out.color.iter().all(|px| *px == [0.0; 3]));
    }

    #[test]
    fn single_opaque_gaussian_on_axis() {
        let c = cam(21, 21);
        let g = point([0.0, 0.0, 3.0], 0.5, [0.2, 0.4, 0.8], 1.0);
        let out = render(&[g], &c, &Pose::identity());
        let center = 10 * 21 + 10;
        assert!(close(out.depth[center], 3.0, 1e-12));
        assert!(close(out.alpha[center], 1.0, 1e-12));
        for (got, want) in out.color[center].iter().zip([0.2, 0.4, 0.8]) {
            assert!(close(*got, want, 1e-12));
        }
        assert_eq!(out.feature_at(center), &[1.0, 0.0]);
    }

    #[test]
    fn two_term_compositing_matches_hand_sum() {
        let c = cam(11, 11);
        let front = point([0.0, 0.0, 1.0], 0.2, [1.0, 0.0, 0.0], 0.6);
        let back = point([0.0, 0.0, 2.0], 0.4, [0.0, 1.0, 0.0], 0.8);
        // Input order reversed on purpose; the renderer sorts by depth.
        let out = render(&[back.clone(), front.clone()], &c, &Pose::identity());
        let center = 5 * 11 + 5;
        let (a1, a2) = (0.6, 0.8);
        let expect_color = [a1 * 1.0, (1.0 - a1) * a2 * 1.0, 0.0];
        for (g, w) in out.color[center].iter().zip(expect_color) {
            assert!(close(*g, w, 1e-12), "{g} vs {w}");
        }
        let expect_depth = a1 * 1.0 + (1.0 - a1) * a2 * 2.0;
        assert!(close(out.depth[center], expect_depth, 1e-12));
        assert!(close(out.alpha[center], 1.0 - (1.0 - a1) * (1.0 - a2), 1e-12));

        // Off-center pixel: evaluate the Gaussian falloff by hand.
        let px = 5 * 11 + 7;
        let d2: f64 = 4.0;
        let s1 = 0.2 * 100.0 / 1.0;
        let s2 = 0.4 * 100.0 / 2.0;
        let al1 = 0.6 * (-0.5 * d2 / (s1 * s1)).exp();
        let al2 = 0.8 * (-0.5 * d2 / (s2 * s2)).exp();
        assert!(close(out.color[px][0], al1, 1e-12));
        assert!(close(out.color[px][1], (1.0 - al1) * al2, 1e-12));
    }

    #[test]
    fn render_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = cam(24, 18);
        let mut pts: Vec<GaussianPoint> = (0..60)
            .map(|_| {
                point(
                    [
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.4..0.4),
                        rng.random_range(1.0..3.0),
                    ],
                    rng.random_range(0.02..0.1),
                    [rng.random(), rng.random(), rng.random()],
                    rng.random_range(0.1..1.0),
                )
            })
            .collect();
        let a = render(&pts, &c, &Pose::identity());
        // Reverse keeps distinct depths ordered identically after sorting.
        pts.reverse();
        let b = render(&pts, &c, &Pose::identity());
        for i in 0..c.pixel_count() {
            assert!(close(a.depth[i], b.depth[i], 1e-12));
            assert!(close(a.alpha[i], b.alpha[i], 1e-12));
        }
    }

    #[test]
    fn compositing_weights_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = cam(16, 16);
        let pts: Vec<GaussianPoint> = (0..200)
            .map(|_| {
                point(
                    [
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.3..0.3),
                        rng.random_range(0.5..2.0),
                    ],
                    0.05,
                    [1.0, 1.0, 1.0],
                    rng.random_range(0.5..1.0),
                )
            })
            .collect();
        let out = render(&pts, &c, &Pose::identity());
        for i in 0..c.pixel_count() {
            // White Gaussians: composited color equals the weight sum.
            let wsum = out.color[i][0];
            assert!((-1e-12..=1.0 + 1e-12).contains(&wsum));
            assert!(close(wsum, out.alpha[i], 1e-9));
        }
    }

    #[test]
    fn backproject_then_render_reproduces_color() {
        let c = cam(32, 24);
        let pose = camera_pose(0.0, 0.0, 0.5, 0.0);
        let frame = flat_frame(&c, pose, 2.0);
        let pts = backproject_init(&frame, &c, 1).unwrap();
        let out = render(&pts, &c, &pose);
        let mut checked = 0;
        for i in 0..c.pixel_count() {
            if out.alpha[i] > 0.99 {
                checked += 1;
                for ch in 0..3 {
                    assert!((out.color[i][ch] - frame.color[i][ch]).abs() < 0.15);
                }
            }
        }
        assert!(checked > c.pixel_count() / 2);
    }

    #[test]
    fn merge_identical_points() {
        let p = point([0.05, 0.05, 0.05], 0.02, [0.3, 0.3, 0.3], 0.5);
        let merged = prune_merge(&[p.clone(), p.clone()], 0.1);
        assert_eq!(merged.len(), 1);
        assert!((merged[0].mu - p.mu).norm() < 1e-15);
        assert!(close(merged[0].sigma, p.sigma, 1e-15));
        assert!(close(merged[0].opacity, 0.75, 1e-15));
    }

    #[test]
    fn distant_points_unchanged() {
        let a = point([0.05, 0.05, 0.05], 0.02, [0.3, 0.3, 0.3], 0.5);
        let b = point([0.55, 0.05, 0.05], 0.02, [0.9, 0.3, 0.3], 0.7);
        let merged = prune_merge(&[a.clone(), b.clone()], 0.1);
        assert_eq!(merged, vec![a, b]);
    }

    #[test]
    fn merge_bounds_count_by_occupied_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<GaussianPoint> = (0..10_000)
            .map(|_| {
                point(
                    [rng.random(), rng.random(), rng.random()],
                    0.01,
                    [0.5; 3],
                    0.9,
                )
            })
            .collect();
        let merged = prune_merge(&pts, 0.1);
        let occupied: std::collections::HashSet<_> =
            pts.iter().map(|p| voxel_key(&p.mu, 0.1)).collect();
        assert_eq!(merged.len(), occupied.len());
        assert!(merged.len() <= 1000);
    }
}
