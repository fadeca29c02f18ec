use nalgebra::{IsometryMatrix3, Matrix3, Point3, Rotation3, Translation3, Vector3};

/// Rigid transform stored with an explicit rotation matrix so that the
/// row-major 3×4 serialization round-trips exactly.
pub type Pose = IsometryMatrix3<f64>;

/// Row-major 3×4 `[R | t]`.
pub fn pose_to_row_major(pose: &Pose) -> [f64; 12] {
    let r = pose.rotation.matrix();
    let t = pose.translation.vector;
    [
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        t.x,
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        t.y,
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        t.z,
    ]
}

pub fn pose_from_row_major(v: &[f64; 12]) -> Pose {
    let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    Pose::from_parts(
        Translation3::new(v[3], v[7], v[11]),
        Rotation3::from_matrix_unchecked(r),
    )
}

/// Pose of a ground robot at `(x, y, z)` with yaw `theta`.
pub fn planar_pose(x: f64, y: f64, z: f64, theta: f64) -> Pose {
    Pose::from_parts(
        Translation3::new(x, y, z),
        Rotation3::from_axis_angle(&Vector3::z_axis(), theta),
    )
}

/// Camera-to-world pose of a forward-looking camera mounted on a ground robot.
///
/// Camera axes follow the usual optical convention: `+z` forward, `+x` right,
/// `+y` down.
pub fn camera_pose(x: f64, y: f64, height: f64, theta: f64) -> Pose {
    let (s, c) = theta.sin_cos();
    let r = Matrix3::new(s, 0.0, c, -c, 0.0, s, 0.0, -1.0, 0.0);
    Pose::from_parts(
        Translation3::new(x, y, height),
        Rotation3::from_matrix_unchecked(r),
    )
}

pub fn position(pose: &Pose) -> Point3<f64> {
    Point3::from(pose.translation.vector)
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn row_major_round_trip_is_exact() {
        let p = planar_pose(1.25, -3.5, 0.3, 0.7);
        let v = pose_to_row_major(&p);
        let q = pose_from_row_major(&v);
        assert_eq!(pose_to_row_major(&q), v);
    }

    #[test]
    fn camera_looks_along_heading() {
        let pose = camera_pose(0.0, 0.0, 0.5, PI / 2.0);
        let forward = pose.rotation * Vector3::z();
        assert!((forward - Vector3::y()).norm() < 1e-12);
        let down = pose.rotation * Vector3::y();
        assert!((down + Vector3::z()).norm() < 1e-12);
        assert!((pose.rotation.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }
}
