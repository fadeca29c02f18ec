//! On-disk RGB-D-feature sequences.
//!
//! ```text
//! dataset.toml            camera, n_c, frame count, label names
//! poses.txt               "<frame id> <12 floats, row-major 3×4>" per line
//! frames/<id:06>.atlf     feature-corpus layout, one row per pixel:
//!                         r g b depth f_1 .. f_{n_c}
//! basis.atlb              codec basis
//! tasks/<label>.atlf      one full-dimensional embedding per label
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scene::Scene;
use super::MissionError;
use crate::codec::{decode_rows, encode_rows, read_basis, write_basis, write_corpus, PcaBasis};
use crate::geometry::{pose_from_row_major, pose_to_row_major, Pose};
use crate::splat::{CameraModel, Frame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub camera: CameraModel,
    pub n_c: usize,
    pub frames: usize,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub poses: Vec<(u64, Pose)>,
    pub basis: PcaBasis,
    root: PathBuf,
}

fn frame_path(root: &Path, id: u64) -> PathBuf {
    root.join("frames").join(format!("{id:06}.atlf"))
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let n_c = frame.n_c;
    let rows: Vec<Vec<f64>> = (0..frame.depth.len())
        .map(|i| {
            let mut r = Vec::with_capacity(4 + n_c);
            r.extend_from_slice(&frame.color[i]);
            r.push(frame.depth[i]);
            r.extend_from_slice(frame.feature_at(i));
            r
        })
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    encode_rows(&refs, 4 + n_c)
}

pub fn decode_frame(bytes: &[u8], pose: Pose, cam: &CameraModel) -> Result<Frame, MissionError> {
    let (dim, rows) = decode_rows(bytes)?;
    if dim < 4 || rows.len() != cam.pixel_count() {
        return Err(MissionError::Dataset(format!(
            "frame has {} rows of width {dim}, expected {} rows of width >= 4",
            rows.len(),
            cam.pixel_count()
        )));
    }
    let n_c = dim - 4;
    let mut frame = Frame {
        pose,
        color: Vec::with_capacity(rows.len()),
        depth: Vec::with_capacity(rows.len()),
        features: Vec::with_capacity(rows.len() * n_c),
        n_c,
    };
    for r in &rows {
        frame.color.push([r[0] as f64, r[1] as f64, r[2] as f64]);
        frame.depth.push(r[3] as f64);
        frame.features.extend(r[4..].iter().map(|&x| x as f64));
    }
    Ok(frame)
}

fn format_pose(id: u64, pose: &Pose) -> String {
    let mut s = id.to_string();
    for v in pose_to_row_major(pose) {
        s.push(' ');
        s.push_str(&v.to_string());
    }
    s
}

pub fn parse_poses(text: &str) -> Result<Vec<(u64, Pose)>, MissionError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| MissionError::Dataset(format!("poses line {}: {m}", n + 1));
        let mut it = line.split_whitespace();
        let id: u64 = it.next().unwrap().parse().map_err(|_| bad("bad frame id"))?;
        let vals: Vec<f64> = it
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("bad number"))?;
        let arr: [f64; 12] = vals.try_into().map_err(|_| bad("expected 12 values"))?;
        out.push((id, pose_from_row_major(&arr)));
    }
    Ok(out)
}

/// Captures `poses` from the scene and writes a dataset directory.
pub fn write_dataset(dir: &Path, scene: &Scene, poses: &[Pose]) -> Result<DatasetMeta, MissionError> {
    fs::create_dir_all(dir.join("frames"))?;
    fs::create_dir_all(dir.join("tasks"))?;
    let meta = DatasetMeta {
        camera: scene.spec.camera,
        n_c: scene.codec.n_components(),
        frames: poses.len(),
        labels: scene.spec.labels.iter().map(|l| l.name.clone()).collect(),
    };
    let mut pose_text = String::new();
    for (i, pose) in poses.iter().enumerate() {
        let frame = scene.capture(pose);
        fs::write(frame_path(dir, i as u64), encode_frame(&frame))?;
        pose_text.push_str(&format_pose(i as u64, pose));
        pose_text.push('\n');
    }
    fs::write(dir.join("poses.txt"), pose_text)?;
    fs::write(
        dir.join("dataset.toml"),
        toml::to_string(&meta).map_err(|e| MissionError::Config(e.to_string()))?,
    )?;
    write_basis(&dir.join("basis.atlb"), &scene.codec)?;
    for (label, emb) in meta.labels.iter().zip(&scene.embeddings) {
        write_corpus(&dir.join("tasks").join(format!("{label}.atlf")), std::slice::from_ref(emb))?;
    }
    Ok(meta)
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self, MissionError> {
        let meta: DatasetMeta = toml::from_str(&fs::read_to_string(dir.join("dataset.toml"))?)
            .map_err(|e| MissionError::Dataset(format!("dataset.toml: {e}")))?;
        let poses = parse_poses(&fs::read_to_string(dir.join("poses.txt"))?)?;
        if poses.len() != meta.frames {
            return Err(MissionError::Dataset(format!(
                "{} poses for {} frames",
                poses.len(),
                meta.frames
            )));
        }
        let basis = read_basis(&dir.join("basis.atlb"))?;
        Ok(Self {
            meta,
            poses,
            basis,
            root: dir.to_path_buf(),
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn frame(&self, index: usize) -> Result<Frame, MissionError> {
        let (id, pose) = self.poses[index];
        let bytes = fs::read(frame_path(&self.root, id))?;
        decode_frame(&bytes, pose, &self.meta.camera)
    }

    pub fn task_path(&self, label: &str) -> PathBuf {
        self.root.join("tasks").join(format!("{label}.atlf"))
    }
}
