//! Analytic synthetic scenes: axis-aligned boxes tagged with semantic labels.
//!
//! Every label carries a random unit embedding (mutually orthogonal across
//! labels). Frames are produced by casting one ray per pixel; pixels that see
//! the floor, nothing, or a surface beyond the sensor range get invalid depth.

use nalgebra::{DMatrix, DVector, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::MissionError;
use crate::codec::{CompressedFeature, FeatureVector, Normalization, PcaBasis};
use crate::geometry::{camera_pose, Pose};
use crate::splat::{CameraModel, Frame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub label: String,
}

impl BoxSpec {
    pub fn new(min: [f64; 3], max: [f64; 3], label: &str) -> Self {
        Self {
            min,
            max,
            label: label.to_string(),
        }
    }

    /// Planar distance from `(x, y)` to the box footprint.
    pub fn planar_distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.min[0] - x).max(x - self.max[0]).max(0.0);
        let dy = (self.min[1] - y).max(y - self.max[1]).max(0.0);
        dx.hypot(dy)
    }

    /// Slab intersection; entry distance along `dir` if the ray hits.
    fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if dir[k].abs() < 1e-15 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (a, b) = ((self.min[k] - origin[k]) * inv, (self.max[k] - origin[k]) * inv);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Planar map bounds `[[x_min, y_min], [x_max, y_max]]`.
    pub bounds: [[f64; 2]; 2],
    pub labels: Vec<LabelSpec>,
    pub boxes: Vec<BoxSpec>,
    pub embedding_dim: usize,
    pub n_components: usize,
    /// Codec training samples drawn around each label embedding.
    pub corpus_per_label: usize,
    pub corpus_noise: f64,
    pub camera: CameraModel,
    pub camera_height: f64,
    /// Poses `[x, y, theta]` recorded by `scene-gen`.
    pub survey: Vec<[f64; 3]>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::corridor()
    }
}

impl SceneSpec {
    /// An L-shaped corridor: 16 m east, then 10 m north, with three
    /// distractors and a `backpack` at the end of the north leg.
    pub fn corridor() -> Self {
        let h = 2.5;
        let labels = [
            ("wall", [0.75, 0.75, 0.7]),
            ("backpack", [0.8, 0.1, 0.1]),
            ("chair", [0.2, 0.3, 0.8]),
            ("plant", [0.1, 0.7, 0.2]),
            ("crate", [0.6, 0.45, 0.2]),
        ]
        .into_iter()
        .map(|(n, c)| LabelSpec {
            name: n.into(),
            color: c,
        })
        .collect();
        let boxes = vec![
            BoxSpec::new([-0.2, -0.2, 0.0], [16.2, 0.0, h], "wall"),
            BoxSpec::new([-0.2, 0.0, 0.0], [0.0, 4.2, h], "wall"),
            BoxSpec::new([0.0, 4.0, 0.0], [12.0, 4.2, h], "wall"),
            BoxSpec::new([16.0, 0.0, 0.0], [16.2, 14.2, h], "wall"),
            BoxSpec::new([11.8, 4.2, 0.0], [12.0, 14.2, h], "wall"),
            BoxSpec::new([12.0, 14.0, 0.0], [16.0, 14.2, h], "wall"),
            BoxSpec::new([4.7, 0.0, 0.0], [5.3, 0.6, 0.8], "chair"),
            BoxSpec::new([8.7, 3.3, 0.0], [9.3, 4.0, 1.2], "plant"),
            BoxSpec::new([15.4, 7.6, 0.0], [16.0, 8.4, 0.7], "crate"),
            BoxSpec::new([13.6, 12.6, 0.0], [14.4, 13.4, 1.0], "backpack"),
        ];
        let mut survey: Vec<[f64; 3]> = (0..12).map(|i| [1.5 + i as f64, 2.0, 0.0]).collect();
        survey.extend((0..8).map(|i| [14.0, 2.5 + i as f64, std::f64::consts::FRAC_PI_2]));
        Self {
            bounds: [[0.0, 0.0], [16.0, 14.0]],
            labels,
            boxes,
            embedding_dim: 512,
            n_components: 24,
            corpus_per_label: 48,
            corpus_noise: 0.05,
            camera: CameraModel {
                fx: 40.0,
                fy: 40.0,
                cx: 40.0,
                cy: 30.0,
                width: 80,
                height: 60,
                max_depth: 5.0,
            },
            camera_height: 0.5,
            survey,
        }
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: String| Err(MissionError::Config(m));
        if self.labels.is_empty() {
            return bad("scene needs at least one label".into());
        }
        if self.labels.len() > self.embedding_dim {
            return bad("more labels than embedding dimensions".into());
        }
        if self.n_components == 0 || self.n_components > self.embedding_dim {
            return bad(format!("n_components must be in 1..={}", self.embedding_dim));
        }
        for b in &self.boxes {
            if !self.labels.iter().any(|l| l.name == b.label) {
                return bad(format!("box references unknown label {:?}", b.label));
            }
            if (0..3).any(|k| !(b.min[k] < b.max[k])) {
                return bad(format!("degenerate box {:?}", b));
            }
        }
        self.camera.validate().map_err(|e| MissionError::Config(e.to_string()))?;
        Ok(())
    }
}

/// A built scene: geometry plus label embeddings and the fitted codec.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub embeddings: Vec<FeatureVector>,
    pub codec: PcaBasis,
    compressed: Vec<CompressedFeature>,
    box_label: Vec<usize>,
}

impl Scene {
    pub fn build(spec: &SceneSpec, seed: u64) -> Result<Self, MissionError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.embedding_dim;
        let k = spec.labels.len();
        let raw = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = raw.qr().q();
        let embeddings: Vec<FeatureVector> = (0..k)
            .map(|i| FeatureVector::from_vector(q.column(i).into_owned()))
            .collect();

        let mut corpus = Vec::with_capacity(k * spec.corpus_per_label);
        for _ in 0..spec.corpus_per_label {
            for e in &embeddings {
                let noise = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let noise = noise.normalize() * spec.corpus_noise;
                corpus.push(FeatureVector::from_vector(e.vector() + noise));
            }
        }
        let codec = PcaBasis::new(d, spec.n_components, Normalization::Unit)?
            .fit_batches(&corpus, 4 * spec.n_components.max(k))?;
        let compressed = embeddings
            .iter()
            .map(|e| codec.project(e))
            .collect::<Result<Vec<_>, _>>()?;
        let box_label = spec
            .boxes
            .iter()
            .map(|b| spec.labels.iter().position(|l| l.name == b.label).unwrap())
            .collect();
        Ok(Self {
            spec: spec.clone(),
            embeddings,
            codec,
            compressed,
            box_label,
        })
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.spec.labels.iter().position(|l| l.name == name)
    }

    pub fn embedding(&self, name: &str) -> Option<&FeatureVector> {
        self.label_index(name).map(|i| &self.embeddings[i])
    }

    pub fn camera(&self) -> &CameraModel {
        &self.spec.camera
    }

    /// Camera pose for a robot at `(x, y, theta)`.
    pub fn camera_pose(&self, x: f64, y: f64, theta: f64) -> Pose {
        camera_pose(x, y, self.spec.camera_height, theta)
    }

    /// Nearest box hit along a world ray, before the floor. Returns the ray
    /// parameter and the box index.
    pub fn raycast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        let floor = if dir.z < 0.0 { -origin.z / dir.z } else { f64::INFINITY };
        let mut best: Option<(f64, usize)> = None;
        for (i, b) in self.spec.boxes.iter().enumerate() {
            if let Some(t) = b.intersect(origin, dir) {
                if t < floor && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// Renders the analytic RGB-D-feature frame seen from `pose`.
    pub fn capture(&self, pose: &Pose) -> Frame {
        let cam = &self.spec.camera;
        let n_c = self.codec.n_components();
        let n = cam.pixel_count();
        let mut color = vec![[0.0; 3]; n];
        let mut depth = vec![0.0; n];
        let mut features = vec![0.0; n * n_c];
        let origin = Point3::from(pose.translation.vector);
        for v in 0..cam.height {
            for u in 0..cam.width {
                let idx = v * cam.width + u;
                // Camera rays have unit z, so the ray parameter is the depth.
                let dir = pose.rotation * cam.ray(u as f64, v as f64);
                let Some((t, b)) = self.raycast(&origin, &dir) else {
                    continue;
                };
                if t <= 0.0 || t > cam.max_depth {
                    continue;
                }
                let label = self.box_label[b];
                depth[idx] = t;
                color[idx] = self.spec.labels[label].color;
                features[idx * n_c..(idx + 1) * n_c].copy_from_slice(self.compressed[label].as_slice());
            }
        }
        Frame {
            pose: *pose,
            color,
            depth,
            features,
            n_c,
        }
    }

    /// Label index seen at each pixel of the frame from `pose`, if any.
    pub fn label_image(&self, pose: &Pose) -> Vec<Option<usize>> {
        let cam = &self.spec.camera;
        let origin = Point3::from(pose.translation.vector);
        let mut out = Vec::with_capacity(cam.pixel_count());
        for v in 0..cam.height {
            for u in 0..cam.width {
                let dir = pose.rotation * cam.ray(u as f64, v as f64);
                out.push(
                    self.raycast(&origin, &dir)
                        .filter(|&(t, _)| t > 0.0 && t <= cam.max_depth)
                        .map(|(_, b)| self.box_label[b]),
                );
            }
        }
        out
    }

    /// Whether a robot disk of `radius` at `(x, y)` overlaps any box that
    /// reaches height `z`.
    pub fn robot_collides(&self, x: f64, y: f64, z: f64, radius: f64) -> bool {
        self.spec
            .boxes
            .iter()
            .any(|b| b.min[2] <= z && b.max[2] >= z && b.planar_distance(x, y) < radius)
    }

    /// Planar distance from `(x, y)` to the nearest box carrying `label`.
    pub fn distance_to_label(&self, x: f64, y: f64, label: &str) -> Option<f64> {
        self.spec
            .boxes
            .iter()
            .filter(|b| b.label == label)
            .map(|b| b.planar_distance(x, y))
            .min_by(f64::total_cmp)
    }
}
