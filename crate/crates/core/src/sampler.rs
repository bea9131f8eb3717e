//! Procedural pose sampler for the 16-joint skeleton.
//!
//! Body frame: +x toward the wearer's left, +y up, +z forward, pelvis at the
//! origin. The torso is rigid, so every limb (including the neck-shoulder
//! and neck-hip edges) keeps a fixed length. The stereo rig hangs off the
//! head and looks forward-down at the body.

use std::collections::HashMap;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{FisheyeStereoRig, View};
use crate::geometry::{local_pose, Frame, LocalPose, Pose3D};
use crate::skeleton::Skeleton;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub lo: f64,
    pub hi: f64,
}

impl AngleRange {
    pub const ZERO: AngleRange = AngleRange { lo: 0.0, hi: 0.0 };

    pub fn deg(lo: f64, hi: f64) -> Self {
        Self { lo: lo.to_radians(), hi: hi.to_radians() }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Always draw so the stream position does not depend on range widths.
        let u: f64 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }

    fn validate(&self, what: &str) -> Result<()> {
        let pi = std::f64::consts::PI;
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi && self.lo >= -pi && self.hi <= pi) {
            return Err(Error::Parameter(format!(
                "{what}: range [{}, {}] must satisfy -pi <= lo <= hi <= pi",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Segment lengths and capsule radii in centimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyModel {
    pub spine: f64,
    pub head_height: f64,
    pub shoulder_half_width: f64,
    pub shoulder_drop: f64,
    pub hip_half_width: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
    pub foot: f64,
    pub torso_radius: f64,
    pub arm_radius: f64,
    pub leg_radius: f64,
    /// Rig centre relative to the neck, in the head frame.
    pub rig_offset: [f64; 3],
}

impl Default for BodyModel {
    fn default() -> Self {
        Self {
            spine: 50.0,
            head_height: 18.0,
            shoulder_half_width: 17.0,
            shoulder_drop: 5.0,
            hip_half_width: 10.0,
            upper_arm: 28.0,
            forearm: 25.0,
            thigh: 42.0,
            shin: 40.0,
            foot: 15.0,
            torso_radius: 6.0,
            arm_radius: 4.0,
            leg_radius: 5.5,
            rig_offset: [0.0, 16.0, 11.0],
        }
    }
}

/// Joint-angle ranges for one motion category (radians).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryPreset {
    pub name: String,
    pub torso_pitch: AngleRange,
    pub torso_roll: AngleRange,
    pub torso_yaw: AngleRange,
    pub head_pitch: AngleRange,
    pub head_yaw: AngleRange,
    pub shoulder_flex: AngleRange,
    pub shoulder_abd: AngleRange,
    pub elbow_bend: AngleRange,
    pub hip_flex: AngleRange,
    pub hip_abd: AngleRange,
    pub knee_bend: AngleRange,
    pub ankle: AngleRange,
    /// Downward tilt of the rig's optical axis from the head's forward axis.
    pub camera_tilt: AngleRange,
}

impl CategoryPreset {
    fn ranges(&self) -> [(&'static str, &AngleRange); 13] {
        [
            ("torso_pitch", &self.torso_pitch),
            ("torso_roll", &self.torso_roll),
            ("torso_yaw", &self.torso_yaw),
            ("head_pitch", &self.head_pitch),
            ("head_yaw", &self.head_yaw),
            ("shoulder_flex", &self.shoulder_flex),
            ("shoulder_abd", &self.shoulder_abd),
            ("elbow_bend", &self.elbow_bend),
            ("hip_flex", &self.hip_flex),
            ("hip_abd", &self.hip_abd),
            ("knee_bend", &self.knee_bend),
            ("ankle", &self.ankle),
            ("camera_tilt", &self.camera_tilt),
        ]
    }

    /// Every angle pinned to a single value.
    pub fn fixed(name: &str, camera_tilt_deg: f64) -> Self {
        let z = AngleRange::ZERO;
        Self {
            name: name.into(),
            torso_pitch: z,
            torso_roll: z,
            torso_yaw: z,
            head_pitch: z,
            head_yaw: z,
            shoulder_flex: z,
            shoulder_abd: z,
            elbow_bend: z,
            hip_flex: z,
            hip_abd: z,
            knee_bend: z,
            ankle: z,
            camera_tilt: AngleRange::deg(camera_tilt_deg, camera_tilt_deg),
        }
    }

    fn preset(name: &str, r: [(f64, f64); 12]) -> Self {
        let d = |i: usize| AngleRange::deg(r[i].0, r[i].1);
        Self {
            name: name.into(),
            torso_pitch: d(0),
            torso_roll: d(1),
            torso_yaw: d(2),
            head_pitch: d(3),
            head_yaw: d(4),
            shoulder_flex: d(5),
            shoulder_abd: d(6),
            elbow_bend: d(7),
            hip_flex: d(8),
            hip_abd: d(9),
            knee_bend: d(10),
            ankle: d(11),
            camera_tilt: AngleRange::deg(55.0, 75.0),
        }
    }

    pub fn defaults() -> Vec<Self> {
        vec![
            Self::preset(
                "standing",
                [(-5., 10.), (-5., 5.), (-10., 10.), (0., 25.), (-25., 25.), (-20., 50.), (5., 35.), (0., 100.), (-10., 25.), (0., 15.), (0., 25.), (-10., 10.)],
            ),
            Self::preset(
                "crouching",
                [(15., 45.), (-8., 8.), (-15., 15.), (0., 20.), (-20., 20.), (0., 80.), (5., 40.), (10., 120.), (60., 110.), (5., 30.), (70., 130.), (-20., 20.)],
            ),
            Self::preset(
                "reaching",
                [(-5., 25.), (-10., 10.), (-25., 25.), (-10., 20.), (-30., 30.), (50., 140.), (0., 80.), (0., 60.), (-10., 20.), (0., 15.), (0., 20.), (-10., 10.)],
            ),
            Self::preset(
                "stepping",
                [(-10., 15.), (-15., 15.), (-20., 20.), (0., 25.), (-25., 25.), (-40., 60.), (10., 60.), (0., 90.), (-20., 80.), (0., 40.), (0., 90.), (-20., 20.)],
            ),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSampler {
    pub body: BodyModel,
    pub categories: Vec<CategoryPreset>,
    /// Draws per sample before giving up on keeping the upper body in view.
    pub max_attempts: usize,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            body: BodyModel::default(),
            categories: CategoryPreset::defaults(),
            max_attempts: 200,
        }
    }
}

/// One draw: the pose in the body frame, the rig placement, and the
/// derived local pose.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPose {
    pub global: Pose3D,
    /// Body frame <- left camera frame.
    pub rig_pose: Isometry3<f64>,
    pub local: LocalPose,
    /// Pelvis position in the left camera frame.
    pub pelvis_cam: Vector3<f64>,
    pub category: String,
}

impl SampledPose {
    /// Joints in the left camera frame.
    pub fn joints_cam(&self) -> Vec<Vector3<f64>> {
        self.local.in_camera(&self.pelvis_cam)
    }
}

const UPPER_BODY: [&str; 7] = [
    "neck", "upperarm_l", "lowerarm_l", "hand_l", "upperarm_r", "lowerarm_r", "hand_r",
];

const JOINTS: [&str; 16] = [
    "head", "neck", "upperarm_l", "lowerarm_l", "hand_l", "upperarm_r", "lowerarm_r", "hand_r",
    "thigh_l", "calf_l", "foot_l", "ball_l", "thigh_r", "calf_r", "foot_r", "ball_r",
];

fn rx(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a)
}
fn ry(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a)
}
fn rz(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a)
}

/// Unit direction hanging down, swung forward by `flex` and out to the side
/// (`side` = +1 left, -1 right) by `abd`.
fn swing(flex: f64, abd: f64, side: f64) -> Vector3<f64> {
    rz(side * abd) * rx(-flex) * Vector3::new(0.0, -1.0, 0.0)
}

impl PoseSampler {
    /// A sampler whose only output is the rest pose.
    pub fn rest() -> Self {
        Self {
            categories: vec![CategoryPreset::fixed("rest", 65.0)],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::Parameter("sampler has no categories".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Parameter("max_attempts must be >= 1".into()));
        }
        let b = &self.body;
        for (name, v) in [
            ("spine", b.spine),
            ("head_height", b.head_height),
            ("upper_arm", b.upper_arm),
            ("forearm", b.forearm),
            ("thigh", b.thigh),
            ("shin", b.shin),
            ("foot", b.foot),
            ("torso_radius", b.torso_radius),
            ("arm_radius", b.arm_radius),
            ("leg_radius", b.leg_radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("body.{name} must be > 0, got {v}")));
            }
        }
        for cat in &self.categories {
            for (name, r) in cat.ranges() {
                r.validate(&format!("{}.{name}", cat.name))?;
            }
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    /// Expected length of every limb in `skeleton.all_limbs`.
    pub fn limb_lengths(&self, skeleton: &Skeleton) -> Result<Vec<f64>> {
        check_skeleton(skeleton)?;
        let b = &self.body;
        let mut by_child: HashMap<String, f64> = HashMap::new();
        by_child.insert("head".into(), b.head_height.hypot(2.0));
        let shoulder = b.shoulder_half_width.hypot(b.shoulder_drop);
        let hip = b.hip_half_width.hypot(b.spine);
        for s in ["l", "r"] {
            by_child.insert(format!("upperarm_{s}"), shoulder);
            by_child.insert(format!("lowerarm_{s}"), b.upper_arm);
            by_child.insert(format!("hand_{s}"), b.forearm);
            by_child.insert(format!("thigh_{s}"), hip);
            by_child.insert(format!("calf_{s}"), b.thigh);
            by_child.insert(format!("foot_{s}"), b.shin);
            by_child.insert(format!("ball_{s}"), b.foot);
        }
        Ok(skeleton
            .all_limbs
            .iter()
            .map(|l| by_child[&skeleton.joint_names[l.child]])
            .collect())
    }

    /// Capsule radius for each limb in `skeleton.all_limbs`.
    pub fn limb_radius(&self, skeleton: &Skeleton, limb: crate::skeleton::Limb) -> f64 {
        let child = skeleton.joint_names[limb.child].as_str();
        let parent = skeleton.joint_names[limb.parent].as_str();
        if parent == "neck" {
            self.body.torso_radius
        } else if child.starts_with("lowerarm") || child.starts_with("hand") {
            self.body.arm_radius
        } else {
            self.body.leg_radius
        }
    }

    /// Draws a pose whose upper-body joints are visible in both views.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        skeleton: &Skeleton,
        rig: &FisheyeStereoRig,
        rng: &mut R,
    ) -> Result<SampledPose> {
        check_skeleton(skeleton)?;
        let cat_index = rng.random_range(0..self.categories.len());
        let cat = &self.categories[cat_index];
        let upper: Vec<usize> = UPPER_BODY
            .iter()
            .map(|n| skeleton.joint_index(n).expect("checked skeleton"))
            .collect();
        for _ in 0..self.max_attempts {
            let draw = self.draw(skeleton, rig, cat, rng)?;
            let cam = draw.joints_cam();
            let visible = upper.iter().all(|&j| {
                View::BOTH
                    .iter()
                    .all(|&v| rig.project(v, &cam[j]).map(|p| p.visible).unwrap_or(false))
            });
            if visible {
                return Ok(draw);
            }
        }
        Err(Error::Sampling(format!(
            "no pose of category `{}` kept the upper body in view after {} attempts",
            cat.name, self.max_attempts
        )))
    }

    fn draw<R: Rng + ?Sized>(
        &self,
        skeleton: &Skeleton,
        rig: &FisheyeStereoRig,
        cat: &CategoryPreset,
        rng: &mut R,
    ) -> Result<SampledPose> {
        let b = &self.body;
        let torso = ry(cat.torso_yaw.sample(rng)) * rx(cat.torso_pitch.sample(rng)) * rz(cat.torso_roll.sample(rng));
        let head = torso * ry(cat.head_yaw.sample(rng)) * rx(cat.head_pitch.sample(rng));
        let tilt = cat.camera_tilt.sample(rng);

        let mut p: HashMap<String, Vector3<f64>> = HashMap::new();
        let neck = torso * Vector3::new(0.0, b.spine, 0.0);
        p.insert("neck".into(), neck);
        p.insert("head".into(), neck + head * Vector3::new(0.0, b.head_height, 2.0));
        for (s, side) in [("l", 1.0), ("r", -1.0)] {
            let shoulder = neck + torso * Vector3::new(side * b.shoulder_half_width, -b.shoulder_drop, 0.0);
            let flex = cat.shoulder_flex.sample(rng);
            let abd = cat.shoulder_abd.sample(rng);
            let bend = cat.elbow_bend.sample(rng);
            let elbow = shoulder + torso * swing(flex, abd, side) * b.upper_arm;
            let wrist = elbow + torso * swing(flex + bend, abd, side) * b.forearm;

            let hip = torso * Vector3::new(side * b.hip_half_width, 0.0, 0.0);
            let hflex = cat.hip_flex.sample(rng);
            let habd = cat.hip_abd.sample(rng);
            let knee_bend = cat.knee_bend.sample(rng);
            let ankle_a = cat.ankle.sample(rng);
            let knee = hip + swing(hflex, habd, side) * b.thigh;
            let shin_flex = hflex - knee_bend;
            let ankle = knee + swing(shin_flex, habd, side) * b.shin;
            let ball = ankle + swing(shin_flex + std::f64::consts::FRAC_PI_2 + ankle_a, 0.0, side) * b.foot;

            p.insert(format!("upperarm_{s}"), shoulder);
            p.insert(format!("lowerarm_{s}"), elbow);
            p.insert(format!("hand_{s}"), wrist);
            p.insert(format!("thigh_{s}"), hip);
            p.insert(format!("calf_{s}"), knee);
            p.insert(format!("foot_{s}"), ankle);
            p.insert(format!("ball_{s}"), ball);
        }
        let joints = skeleton.joint_names.iter().map(|n| p[n]).collect();
        let global = Pose3D { root: Vector3::zeros(), joints, frame: Frame::World };

        // Camera basis: x right, y down, z forward, then tilted down.
        let basis = Rotation3::from_matrix_unchecked(Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)));
        let r_wc = head * rx(tilt) * basis;
        let centre = neck + head * Vector3::from(b.rig_offset);
                let left = centre + r_wc * Vector3::new(-rig.baseline / 2.0, 0.0, 0.0);
        let rig_pose = Isometry3::from_parts(
            Translation3::from(left),
            UnitQuaternion::from_rotation_matrix(&r_wc),
        );
        let local = local_pose(&global, skeleton, &rig_pose)?;
        let pelvis_cam = rig_pose.inverse_transform_point(&global.root.into()).coords;
        Ok(SampledPose { global, rig_pose, local, pelvis_cam, category: cat.name.clone() })
    }
}

fn check_skeleton(skeleton: &Skeleton) -> Result<()> {
    if skeleton.joint_names.len() != JOINTS.len()
        || skeleton.joint_names.iter().zip(JOINTS).any(|(a, b)| a != b)
    {
        return Err(Error::Parameter(format!(
            "the pose sampler drives the 16-joint skeleton, not `{}`",
            skeleton.name
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::camera::FisheyeCamera;
    use crate::geometry::limb_relative;

    fn rig() -> FisheyeStereoRig {
        FisheyeStereoRig::symmetric(FisheyeCamera::covering(64, PI), 12.0).unwrap()
    }

    #[test]
    fn seeded_draws_repeat() {
        let (s, r, sk) = (PoseSampler::default(), rig(), Skeleton::unrealego());
        let a = s.sample(&sk, &r, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = s.sample(&sk, &r, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_width_ranges_give_rest_pose() {
        let (s, r, sk) = (PoseSampler::rest(), rig(), Skeleton::unrealego());
        let a = s.sample(&sk, &r, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = s.sample(&sk, &r, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.local, b.local);
        // Rest pose: hands hang straight below the shoulders.
        let g = &a.global.joints;
        let (sh, hand) = (sk.joint_index("upperarm_l").unwrap(), sk.joint_index("hand_l").unwrap());
        assert!((g[sh].x - g[hand].x).abs() < 1e-12);
    }

    #[test]
    fn limb_lengths_are_exact() {
        let (s, r, sk) = (PoseSampler::default(), rig(), Skeleton::unrealego());
        let lengths = s.limb_lengths(&sk).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let d = s.sample(&sk, &r, &mut rng).unwrap();
            for (limb, len) in sk.all_limbs.iter().zip(&lengths) {
                let got = limb_relative(&d.local, *limb).unwrap().norm();
                assert!((got - len).abs() < 1e-9, "{} {got} vs {len}", sk.limb_name(*limb));
            }
        }
    }

    #[test]
    fn upper_body_always_in_view() {
        let (s, r, sk) = (PoseSampler::default(), rig(), Skeleton::unrealego());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cats = std::collections::HashSet::new();
        for _ in 0..300 {
            let d = s.sample(&sk, &r, &mut rng).unwrap();
            cats.insert(d.category.clone());
            let cam = d.joints_cam();
            for name in UPPER_BODY {
                let j = sk.joint_index(name).unwrap();
                for v in View::BOTH {
                    assert!(r.project(v, &cam[j]).unwrap().visible);
                }
            }
        }
        assert_eq!(cats.len(), 4);
    }

    #[test]
    fn exhausted_budget_is_an_error() {
        let mut s = PoseSampler::rest();
        // Looking straight up: nothing of the body is in front of the rig.
        s.categories[0].camera_tilt = AngleRange::deg(-150.0, -150.0);
        let err = s.sample(&Skeleton::unrealego(), &rig(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Sampling(_))));
    }

    #[test]
    fn rejects_other_skeletons_and_bad_ranges() {
        assert!(PoseSampler::default()
            .sample(&Skeleton::egocap(), &rig(), &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
        let mut s = PoseSampler::default();
        s.categories[0].knee_bend = AngleRange { lo: 1.0, hi: 0.5 };
        assert!(s.validate().is_err());
        assert!(PoseSampler::default().validate().is_ok());
    }
}
