//! Poses, limb vectors and the two per-limb quantities derived from them:
//! the limb-view angle and the 3D limb orientation.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Isometry3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::skeleton::{Limb, Skeleton};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    World,
    Camera,
}

/// Joint positions in centimetres plus the root (pelvis) they hang from.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose3D {
    pub root: Vector3<f64>,
    pub joints: Vec<Vector3<f64>>,
    pub frame: Frame,
}

/// Joint positions relative to the pelvis, in the left camera's frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPose {
    pub joints: Vec<Vector3<f64>>,
}

impl LocalPose {
    pub fn new(joints: Vec<Vector3<f64>>) -> Self {
        Self { joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Positions in the left camera frame given where the pelvis sits there.
    pub fn in_camera(&self, pelvis_cam: &Vector3<f64>) -> Vec<Vector3<f64>> {
        self.joints.iter().map(|j| j + pelvis_cam).collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| [j.x, j.y, j.z]).collect()
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() % 3 != 0 {
            return Err(Error::Dimension(format!("{} values is not a multiple of 3", v.len())));
        }
        Ok(Self::new(
            v.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
        ))
    }
}

/// Expresses `global` in the left camera frame with the pelvis at the origin.
///
/// `rig_pose` maps left-camera coordinates into the frame `global` lives in.
/// Only its rotation matters: translating pose and rig together is a no-op.
pub fn local_pose(
    global: &Pose3D,
    skeleton: &Skeleton,
    rig_pose: &Isometry3<f64>,
) -> Result<LocalPose> {
    if global.joints.len() != skeleton.n_joints() {
        return Err(Error::Dimension(format!(
            "pose has {} joints, skeleton `{}` has {}",
            global.joints.len(),
            skeleton.name,
            skeleton.n_joints()
        )));
    }
    let r_inv = rig_pose.rotation.inverse();
    Ok(LocalPose::new(
        global.joints.iter().map(|p| r_inv * (p - global.root)).collect(),
    ))
}

/// Child minus parent.
pub fn limb_relative(pose: &LocalPose, limb: Limb) -> Result<Vector3<f64>> {
    let n = pose.joints.len();
    for index in [limb.parent, limb.child] {
        if index >= n {
            return Err(Error::Index { what: "pose joints", index, len: n });
        }
    }
    Ok(pose.joints[limb.child] - pose.joints[limb.parent])
}

/// Angle between a limb and the camera's viewing (xy) plane, radians.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LimbAngle(f64);

impl LimbAngle {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta.is_finite() && theta.abs() <= FRAC_PI_2) {
            return Err(Error::Parameter(format!("limb angle {theta} outside [-pi/2, pi/2]")));
        }
        Ok(Self(theta))
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

/// Unit vector from parent to child joint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimbOrientation(Unit<Vector3<f64>>);

impl LimbOrientation {
    pub fn vector(&self) -> &Vector3<f64> {
        self.0.as_ref()
    }
}

/// `atan2(z, hypot(x, y))`: `+pi/2` for a limb pointing straight down the
/// optical axis, `0` for one lying in the view plane.
pub fn limb_view_angle(rel: &Vector3<f64>) -> Result<LimbAngle> {
    if *rel == Vector3::zeros() {
        return Err(Error::DegenerateLimb);
    }
    Ok(LimbAngle(rel.z.atan2(rel.x.hypot(rel.y))))
}

pub fn limb_orientation(rel: &Vector3<f64>) -> Result<LimbOrientation> {
    Unit::try_new(*rel, 0.0)
        .map(LimbOrientation)
        .ok_or(Error::DegenerateLimb)
}

/// Orientation and view angle for each limb in `limbs`.
pub fn limb_targets(
    pose: &LocalPose,
    limbs: &[Limb],
) -> Result<(Vec<LimbOrientation>, Vec<LimbAngle>)> {
    let mut orientations = Vec::with_capacity(limbs.len());
    let mut angles = Vec::with_capacity(limbs.len());
    for &limb in limbs {
        let rel = limb_relative(pose, limb)?;
        orientations.push(limb_orientation(&rel)?);
        angles.push(limb_view_angle(&rel)?);
    }
    Ok((orientations, angles))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_4;

    use nalgebra::{Rotation3, Translation3, UnitQuaternion};
    use proptest::prelude::*;

    use super::*;

    fn angle(x: f64, y: f64, z: f64) -> f64 {
        limb_view_angle(&Vector3::new(x, y, z)).unwrap().radians()
    }

    #[test]
    fn view_angle_examples() {
        assert_eq!(angle(0.0, 0.0, 1.0), FRAC_PI_2);
        assert_eq!(angle(1.0, 0.0, 0.0), 0.0);
        assert!((angle(1.0, 0.0, 1.0) - FRAC_PI_4).abs() < 1e-15);
        assert!((angle(3.0, 4.0, 5.0) - FRAC_PI_4).abs() < 1e-15);
        assert!(angle(1.0, 2.0, -3.0) < 0.0);
        assert!(matches!(
            limb_view_angle(&Vector3::zeros()),
            Err(Error::DegenerateLimb)
        ));
    }

    #[test]
    fn orientation_examples() {
        let o = limb_orientation(&Vector3::new(3.0, 0.0, 4.0)).unwrap();
        assert!((o.vector() - Vector3::new(0.6, 0.0, 0.8)).norm() < 1e-15);
        let o = limb_orientation(&Vector3::new(0.0, -2.0, 0.0)).unwrap();
        assert_eq!(*o.vector(), Vector3::new(0.0, -1.0, 0.0));
        assert!(limb_orientation(&Vector3::zeros()).is_err());
    }

    #[test]
    fn limb_relative_examples() {
        let pose = LocalPose::new(vec![Vector3::zeros(), Vector3::new(3.0, 0.0, 4.0)]);
        assert_eq!(
            limb_relative(&pose, Limb::new(0, 1)).unwrap(),
            Vector3::new(3.0, 0.0, 4.0)
        );
        assert_eq!(limb_relative(&pose, Limb::new(1, 1)).unwrap(), Vector3::zeros());
        assert!(matches!(
            limb_relative(&pose, Limb::new(0, 2)),
            Err(Error::Index { index: 2, .. })
        ));
    }

    fn sample_pose(n: usize, seed: u64) -> Pose3D {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v = || Vector3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0));
        Pose3D { root: v(), joints: (0..n).map(|_| v()).collect(), frame: Frame::World }
    }

    #[test]
    fn local_pose_identity_and_translation() {
        let s = Skeleton::unrealego();
        let mut g = sample_pose(16, 1);
        g.root = Vector3::zeros();
        let id = Isometry3::identity();
        let l = local_pose(&g, &s, &id).unwrap();
        assert_eq!(l.joints, g.joints);

        let shift = Vector3::new(10.0, 0.0, 0.0);
        let moved = Pose3D {
            root: g.root + shift,
            joints: g.joints.iter().map(|j| j + shift).collect(),
            frame: Frame::World,
        };
        let rig = Isometry3::from_parts(Translation3::from(shift), UnitQuaternion::identity());
        let l2 = local_pose(&moved, &s, &rig).unwrap();
        for (a, b) in l.joints.iter().zip(&l2.joints) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn local_pose_matches_matrix_oracle() {
        let s = Skeleton::unrealego();
        let g = sample_pose(16, 7);
        let rig = Isometry3::new(Vector3::new(3.0, -20.0, 5.0), Vector3::new(0.3, -1.1, 0.4));
        let l = local_pose(&g, &s, &rig).unwrap();
        // Oracle: invert the full homogeneous transform, apply per joint, subtract pelvis.
        let m = rig.to_homogeneous().try_inverse().unwrap();
        let apply = |p: &Vector3<f64>| (m * p.push(1.0)).xyz();
        let root = apply(&g.root);
        for (j, p) in g.joints.iter().enumerate() {
            assert!((l.joints[j] - (apply(p) - root)).norm() < 1e-9);
        }
    }

    #[test]
    fn local_pose_rejects_joint_count() {
        let s = Skeleton::unrealego();
        let g = sample_pose(5, 1);
        assert!(matches!(
            local_pose(&g, &s, &Isometry3::identity()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn view_angle_invariant_under_z_rotation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let rel = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(-3.2..3.2));
            let a = limb_view_angle(&rel).unwrap().radians();
            let b = limb_view_angle(&(rot * rel)).unwrap().radians();
            assert!((a - b).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn asin_of_orientation_z_is_view_angle(
            x in -100.0..100.0f64, y in -100.0..100.0f64, z in -100.0..100.0f64,
        ) {
            let rel = Vector3::new(x, y, z);
            prop_assume!(rel.norm() > 1e-6);
            let o = limb_orientation(&rel).unwrap();
            let theta = limb_view_angle(&rel).unwrap().radians();
            prop_assert!((o.vector().z.asin() - theta).abs() < 1e-9);
            prop_assert!((o.vector().norm() - 1.0).abs() < 1e-12);
            prop_assert!(o.vector().cross(&rel).norm() < 1e-9 * rel.norm());
            prop_assert_eq!(theta.signum(), if z == 0.0 { theta.signum() } else { z.signum() });
        }

        #[test]
        fn stereo_views_share_view_angle(
            x in -50.0..50.0f64, y in -50.0..50.0f64, z in 1.0..100.0f64,
            dx in -30.0..30.0f64, dy in -30.0..30.0f64, dz in -30.0..30.0f64,
            baseline in 1.0..20.0f64,
        ) {
            let a = Vector3::new(x, y, z);
            let b = a + Vector3::new(dx, dy, dz);
            prop_assume!((b - a).norm() > 1e-6);
            let shift = Vector3::new(baseline, 0.0, 0.0);
            let left = limb_view_angle(&(b - a)).unwrap();
            let right = limb_view_angle(&((b - shift) - (a - shift))).unwrap();
            prop_assert!((left.radians() - right.radians()).abs() < 1e-12);
        }

        #[test]
        fn local_pose_is_fixed_under_world_motion(
            seed in 0u64..1000,
            t in proptest::array::uniform3(-100.0..100.0f64),
            r in proptest::array::uniform3(-3.0..3.0f64),
        ) {
            let s = Skeleton::unrealego();
            let g = sample_pose(16, seed);
            let rig = Isometry3::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.2, 0.1, -0.4));
            let motion = Isometry3::new(Vector3::from(t), Vector3::from(r));
            let moved = Pose3D {
                root: (motion * nalgebra::Point3::from(g.root)).coords,
                joints: g.joints.iter().map(|p| (motion * nalgebra::Point3::from(*p)).coords).collect(),
                frame: Frame::World,
            };
            let a = local_pose(&g, &s, &rig).unwrap();
            let b = local_pose(&moved, &s, &(motion * rig)).unwrap();
            for (p, q) in a.joints.iter().zip(&b.joints) {
                prop_assert!((p - q).norm() < 1e-9);
            }
        }
    }
}
