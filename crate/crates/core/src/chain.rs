//! Serial/tree kinematic chains mixing human and robot joints, with forward
//! kinematics, geometric Jacobians and the planar unicycle input map.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3x2, Unit, Vector3};

use crate::error::{Error, Result};
use crate::se3::Pose;

pub const END_EFFECTOR_FRAME: &str = "end_effector";
pub const COMPENSATION_FRAME: &str = "compensation";
/// Hand frame on the human branch; supplies the internal reaching model when
/// the robot is physically disconnected.
pub const HUMAN_HAND_FRAME: &str = "human_hand";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
    /// Generalized coordinate of the mobile base: translation along a fixed
    /// ground-plane axis.
    PlanarBaseTranslation,
    /// Generalized coordinate of the mobile base: rotation about the vertical.
    PlanarBaseRotation,
}

impl JointKind {
    fn is_rotational(self) -> bool {
        matches!(self, JointKind::Revolute | JointKind::PlanarBaseRotation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Human,
    Robot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OwnerFilter {
    Human,
    Robot,
    All,
}

impl OwnerFilter {
    fn matches(self, owner: Owner) -> bool {
        match self {
            OwnerFilter::Human => owner == Owner::Human,
            OwnerFilter::Robot => owner == Owner::Robot,
            OwnerFilter::All => true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub kind: JointKind,
    /// Motion axis in the joint's local frame; unit norm within 1e-12.
    pub axis: Unit<Vector3<f64>>,
    /// Fixed transform from the parent frame to this joint's frame.
    pub origin: Pose,
    pub owner: Owner,
    /// Parent joint index, or `None` for a joint rooted at the chain base.
    /// Must point backwards in the joint list.
    pub parent: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FrameAttachment {
    pub joint: usize,
    pub offset: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseMode {
    Fixed,
    Unicycle,
}

/// An ordered list of joints (a tree via per-joint parents; the default is the
/// previous joint) plus named frames attached to joints.
#[derive(Debug, Clone)]
pub struct KinematicChain {
    joints: Vec<Joint>,
    frames: BTreeMap<String, FrameAttachment>,
    base_mode: BaseMode,
}

const AXIS_NORM_TOL: f64 = 1e-12;

impl KinematicChain {
    pub fn new(
        joints: Vec<Joint>,
        frames: BTreeMap<String, FrameAttachment>,
        base_mode: BaseMode,
    ) -> Result<Self> {
        for (i, joint) in joints.iter().enumerate() {
            if (joint.axis.norm() - 1.0).abs() > AXIS_NORM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "joint {i}: axis must have unit norm (got {})",
                    joint.axis.norm()
                )));
            }
            if let Some(p) = joint.parent {
                if p >= i {
                    return Err(Error::InvalidConfig(format!(
                        "joint {i}: parent {p} must precede the joint"
                    )));
                }
            }
        }
        for name in [END_EFFECTOR_FRAME, COMPENSATION_FRAME] {
            if !frames.contains_key(name) {
                return Err(Error::InvalidConfig(format!(
                    "chain must define the {name:?} frame"
                )));
            }
        }
        for (name, attachment) in &frames {
            if attachment.joint >= joints.len() {
                return Err(Error::InvalidConfig(format!(
                    "frame {name:?} attaches to joint {} but the chain has {} joints",
                    attachment.joint,
                    joints.len()
                )));
            }
        }
        if base_mode == BaseMode::Unicycle {
            Self::validate_unicycle_base(&joints)?;
        }
        Ok(KinematicChain {
            joints,
            frames,
            base_mode,
        })
    }

    fn validate_unicycle_base(joints: &[Joint]) -> Result<()> {
        let expected = [
            (JointKind::PlanarBaseTranslation, Vector3::x()),
            (JointKind::PlanarBaseTranslation, Vector3::y()),
            (JointKind::PlanarBaseRotation, Vector3::z()),
        ];
        if joints.len() < 3 {
            return Err(Error::InvalidConfig(
                "unicycle base needs at least three joints".into(),
            ));
        }
        for (i, (kind, axis)) in expected.iter().enumerate() {
            let joint = &joints[i];
            if joint.kind != *kind
                || (joint.axis.into_inner() - axis).norm() > AXIS_NORM_TOL
                || joint.owner != Owner::Robot
            {
                return Err(Error::InvalidConfig(format!(
                    "unicycle base: joint {i} must be a robot {kind:?} joint along {axis:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn base_mode(&self) -> BaseMode {
        self.base_mode
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn frame_names(&self) -> impl Iterator<Item = &str> {
        self.frames.keys().map(String::as_str)
    }

    pub fn has_frame(&self, name: &str) -> bool {
        self.frames.contains_key(name)
    }

    /// Joint indices matching a filter, in joint-list order.
    pub fn joint_indices(&self, filter: OwnerFilter) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| filter.matches(j.owner))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_human(&self) -> usize {
        self.joint_indices(OwnerFilter::Human).len()
    }

    pub fn n_robot(&self) -> usize {
        self.joint_indices(OwnerFilter::Robot).len()
    }

    /// Number of robot control inputs: joint rates for a fixed base, or
    /// (v, omega) plus the arm rates for a unicycle base.
    pub fn n_inputs(&self) -> usize {
        match self.base_mode {
            BaseMode::Fixed => self.n_robot(),
            BaseMode::Unicycle => self.n_robot() - 1,
        }
    }

    /// Heading angle of the unicycle base.
    pub fn heading(&self, q: &DVector<f64>) -> f64 {
        debug_assert_eq!(self.base_mode, BaseMode::Unicycle);
        q[2]
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.joints.len() {
            return Err(Error::DimensionMismatch {
                what: "joint vector",
                expected: self.joints.len(),
                actual: q.len(),
            });
        }
        Ok(())
    }

    fn frame(&self, name: &str) -> Result<&FrameAttachment> {
        self.frames
            .get(name)
            .ok_or_else(|| Error::UnknownFrame(name.to_string()))
    }

    /// World pose of every joint frame: `(pre, post)` where `pre` is the frame
    /// after the fixed origin transform and `post` additionally applies the
    /// joint motion.
    fn joint_poses(&self, q: &DVector<f64>) -> Vec<(Pose, Pose)> {
        let mut poses: Vec<(Pose, Pose)> = Vec::with_capacity(self.joints.len());
        for (i, joint) in self.joints.iter().enumerate() {
            let parent_pose = match joint.parent {
                Some(p) => poses[p].1.clone(),
                None => Pose::identity(),
            };
            let pre = parent_pose.compose(&joint.origin);
            let motion = match joint.kind {
                JointKind::Revolute | JointKind::PlanarBaseRotation => Pose::new(
                    Vector3::zeros(),
                    nalgebra::Rotation3::from_axis_angle(&joint.axis, q[i]),
                ),
                JointKind::Prismatic | JointKind::PlanarBaseTranslation => {
                    Pose::new(joint.axis.into_inner() * q[i], nalgebra::Rotation3::identity())
                }
            };
            let post = pre.compose(&motion);
            poses.push((pre, post));
        }
        poses
    }

    /// Whether `joint` is on the ancestor path of `frame_joint` (inclusive).
    fn supports(&self, mut frame_joint: usize, joint: usize) -> bool {
        loop {
            if frame_joint == joint {
                return true;
            }
            match self.joints[frame_joint].parent {
                Some(p) => frame_joint = p,
                None => return false,
            }
        }
    }
}

/// Pose of a named frame in the chain base (egocentric) frame.
pub fn forward_kinematics(chain: &KinematicChain, q: &DVector<f64>, frame: &str) -> Result<Pose> {
    chain.check_q(q)?;
    let attachment = chain.frame(frame)?;
    let poses = chain.joint_poses(q);
    Ok(poses[attachment.joint].1.compose(&attachment.offset))
}

/// Geometric Jacobian of a named frame: rows 1-3 map joint rates to the
/// frame's linear velocity, rows 4-6 to its angular velocity. Columns are
/// ordered by joint index and restricted to joints matching `filter`; joints
/// off the frame's ancestor path contribute zero columns.
pub fn geometric_jacobian(
    chain: &KinematicChain,
    q: &DVector<f64>,
    frame: &str,
    filter: OwnerFilter,
) -> Result<DMatrix<f64>> {
    chain.check_q(q)?;
    let attachment = chain.frame(frame)?;
    let poses = chain.joint_poses(q);
    let frame_position = poses[attachment.joint]
        .1
        .transform_point(&attachment.offset.position);

    let columns = chain.joint_indices(filter);
    let mut jacobian = DMatrix::zeros(6, columns.len());
    for (col, &i) in columns.iter().enumerate() {
        if !chain.supports(attachment.joint, i) {
            continue;
        }
        let (pre, _) = &poses[i];
        let axis_world = pre.orientation * chain.joints[i].axis.into_inner();
        let (linear, angular) = if chain.joints[i].kind.is_rotational() {
            let lever = frame_position - pre.position;
            (axis_world.cross(&lever), axis_world)
        } else {
            (axis_world, Vector3::zeros())
        };
        for r in 0..3 {
            jacobian[(r, col)] = linear[r];
            jacobian[(r + 3, col)] = angular[r];
        }
    }
    Ok(jacobian)
}

/// Map from unicycle inputs (v, omega) to base coordinate rates
/// (x_dot, y_dot, theta_dot) at heading `theta`.
pub fn unicycle_velocity_map(theta: f64) -> Matrix3x2<f64> {
    Matrix3x2::new(theta.cos(), 0.0, theta.sin(), 0.0, 0.0, 1.0)
}

/// Robot-side Jacobian expressed in control-input space: for a unicycle base
/// the three base-coordinate columns are composed with the velocity map, so
/// the columns are (v, omega, arm rates).
pub fn input_jacobian(chain: &KinematicChain, q: &DVector<f64>, frame: &str) -> Result<DMatrix<f64>> {
    let joint_space = geometric_jacobian(chain, q, frame, OwnerFilter::Robot)?;
    match chain.base_mode() {
        BaseMode::Fixed => Ok(joint_space),
        BaseMode::Unicycle => {
            let map = unicycle_velocity_map(chain.heading(q));
            let n_arm = joint_space.ncols() - 3;
            let mut composed = DMatrix::zeros(6, 2 + n_arm);
            let base_block = joint_space.columns(0, 3) * map;
            composed.columns_mut(0, 2).copy_from(&base_block);
            composed
                .columns_mut(2, n_arm)
                .copy_from(&joint_space.columns(3, n_arm));
            Ok(composed)
        }
    }
}

/// Rates of the robot joint coordinates produced by a control input `u`.
/// Orders follow the robot joint indices of the chain.
pub fn robot_rates_from_input(
    chain: &KinematicChain,
    q: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n_inputs = chain.n_inputs();
    if u.len() != n_inputs {
        return Err(Error::DimensionMismatch {
            what: "control input",
            expected: n_inputs,
            actual: u.len(),
        });
    }
    match chain.base_mode() {
        BaseMode::Fixed => Ok(u.clone()),
        BaseMode::Unicycle => {
            let map = unicycle_velocity_map(chain.heading(q));
            let base_rates = map * nalgebra::Vector2::new(u[0], u[1]);
            let n_robot = chain.n_robot();
            let mut rates = DVector::zeros(n_robot);
            rates[0] = base_rates[0];
            rates[1] = base_rates[1];
            rates[2] = base_rates[2];
            for i in 3..n_robot {
                rates[i] = u[i - 1];
            }
            Ok(rates)
        }
    }
}
