//! Joint-space state and forward kinematics of a six-axis serial arm.
//!
//! Angles are carried in degrees everywhere outside of trigonometric
//! evaluation. The default geometry is the ABB IRB120 chain.

use nalgebra::{Matrix4, Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 6;

/// Working range `(inferior, superior)` of each axis, in degrees.
pub const JOINT_LIMITS_DEG: [(f64, f64); NUM_JOINTS] = [
    (-165.0, 165.0),
    (-110.0, 110.0),
    (-110.0, 70.0),
    (-160.0, 160.0),
    (-120.0, 120.0),
    (-400.0, 400.0),
];

/// Fraction by which each working-range limit is pulled toward zero when
/// sampling initial configurations.
pub const INITIAL_SHRINK: f64 = 0.15;

/// Default maximum position increment per step, in degrees.
pub const DEFAULT_MPI_DEG: f64 = 9.0;

/// Six joint angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct JointVector(pub [f64; NUM_JOINTS]);

impl JointVector {
    pub const ZERO: JointVector = JointVector([0.0; NUM_JOINTS]);

    pub fn new(q: [f64; NUM_JOINTS]) -> Self {
        JointVector(q)
    }

    pub fn as_array(&self) -> &[f64; NUM_JOINTS] {
        &self.0
    }

    pub fn within_limits(&self) -> bool {
        self.0
            .iter()
            .zip(JOINT_LIMITS_DEG.iter())
            .all(|(q, (lo, hi))| *q >= *lo && *q <= *hi)
    }
}

impl std::ops::Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Clips every axis into its working range.
pub fn clamp_joints(q: JointVector) -> JointVector {
    let mut out = q.0;
    for (v, (lo, hi)) in out.iter_mut().zip(JOINT_LIMITS_DEG.iter()) {
        *v = v.clamp(*lo, *hi);
    }
    JointVector(out)
}

/// Adds a per-axis increment and clamps the result.
///
/// Increments larger than the per-axis `mpi` are rejected: they can only come
/// from a broken action set.
pub fn apply_increment(
    q: JointVector,
    delta: JointVector,
    mpi: &[f64; NUM_JOINTS],
) -> Result<JointVector> {
    for axis in 0..NUM_JOINTS {
        let d = delta.0[axis];
        // tolerate rounding in the action-set fractions
        if !d.is_finite() || d.abs() > mpi[axis] * (1.0 + 1e-12) {
            return Err(Error::IncrementTooLarge {
                axis,
                delta: d,
                mpi: mpi[axis],
            });
        }
    }
    let mut sum = q.0;
    for (v, d) in sum.iter_mut().zip(delta.0.iter()) {
        *v += d;
    }
    Ok(clamp_joints(JointVector(sum)))
}

/// Bounds of the initial-configuration distribution for one axis; each
/// limit is pulled toward zero by `shrink`.
pub fn initial_bounds(axis: usize, shrink: f64) -> (f64, f64) {
    let (lo, hi) = JOINT_LIMITS_DEG[axis];
    (lo * (1.0 - shrink), hi * (1.0 - shrink))
}

pub fn sample_initial_joints<R: Rng + ?Sized>(rng: &mut R, shrink: f64) -> JointVector {
    let mut q = [0.0; NUM_JOINTS];
    for (axis, v) in q.iter_mut().enumerate() {
        let (lo, hi) = initial_bounds(axis, shrink);
        *v = rng.gen_range(lo..=hi);
    }
    JointVector(q)
}

/// Link dimensions of the serial chain, in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmGeometry {
    /// Height of the axis-2 center above the floor.
    pub base_height: f64,
    pub upper_arm: f64,
    pub elbow_offset: f64,
    pub forearm: f64,
    /// Wrist center to tool flange. Only drawn; the gripper point is the
    /// wrist center.
    pub flange: f64,
}

impl Default for ArmGeometry {
    fn default() -> Self {
        ArmGeometry {
            base_height: 0.290,
            upper_arm: 0.270,
            elbow_offset: 0.070,
            forearm: 0.302,
            flange: 0.072,
        }
    }
}

impl ArmGeometry {
    /// Distance between the axis-2 center and the wrist center with the arm
    /// fully stretched.
    pub fn nominal_reach(&self) -> f64 {
        self.upper_arm + self.elbow_offset.hypot(self.forearm)
    }

    pub fn shoulder(&self) -> Point3<f64> {
        Point3::new(0.0, 0.0, self.base_height)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.base_height,
            self.upper_arm,
            self.elbow_offset,
            self.forearm,
            self.flange,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(
                "arm link lengths must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Standard Denavit-Hartenberg rows `(a, alpha, d, theta_offset)`.
    fn dh_rows(&self) -> [(f64, f64, f64, f64); NUM_JOINTS] {
        use std::f64::consts::{FRAC_PI_2, PI};
        [
            (0.0, -FRAC_PI_2, self.base_height, 0.0),
            (self.upper_arm, 0.0, 0.0, -FRAC_PI_2),
            (self.elbow_offset, -FRAC_PI_2, 0.0, 0.0),
            (0.0, FRAC_PI_2, self.forearm, 0.0),
            (0.0, -FRAC_PI_2, 0.0, 0.0),
            (0.0, 0.0, self.flange, PI),
        ]
    }
}

fn dh_transform(a: f64, alpha: f64, d: f64, theta: f64) -> Matrix4<f64> {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    #[rustfmt::skip]
    let m = Matrix4::new(
        ct, -st * ca,  st * sa, a * ct,
        st,  ct * ca, -ct * sa, a * st,
        0.0,      sa,       ca,      d,
        0.0,     0.0,      0.0,    1.0,
    );
    m
}

/// World-frame points along the chain, used for drawing and shadows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmPose {
    pub base: Point3<f64>,
    pub shoulder: Point3<f64>,
    pub elbow: Point3<f64>,
    pub elbow_end: Point3<f64>,
    pub wrist: Point3<f64>,
    pub flange: Point3<f64>,
}

impl ArmPose {
    /// Drawn segments, base to tip.
    pub fn segments(&self) -> [(Point3<f64>, Point3<f64>); 5] {
        [
            (self.base, self.shoulder),
            (self.shoulder, self.elbow),
            (self.elbow, self.elbow_end),
            (self.elbow_end, self.wrist),
            (self.wrist, self.flange),
        ]
    }
}

pub fn arm_pose(q: &JointVector, geom: &ArmGeometry) -> ArmPose {
    let mut t = Matrix4::identity();
    let mut origins = [Point3::origin(); NUM_JOINTS];
    for (i, (a, alpha, d, offset)) in geom.dh_rows().into_iter().enumerate() {
        t *= dh_transform(a, alpha, d, q.0[i].to_radians() + offset);
        origins[i] = Point3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)]);
    }
    ArmPose {
        base: Point3::origin(),
        shoulder: origins[0],
        elbow: origins[1],
        elbow_end: origins[2],
        wrist: origins[3],
        flange: origins[5],
    }
}

/// Gripper reference point (wrist center) in world coordinates.
pub fn forward_kinematics(q: &JointVector, geom: &ArmGeometry) -> Point3<f64> {
    arm_pose(q, geom).wrist
}

pub fn distance(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let d: Vector3<f64> = a - b;
    d.norm()
}
