//! JSON schemas for chain definitions and scenario files, plus loading and
//! validation into the runtime types.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix6, Unit, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{BaseMode, FrameAttachment, Joint, JointKind, KinematicChain, Owner};
use crate::error::{Error, Result};
use crate::human::{HumanModel, InternalModel};
use crate::lqg::RegulatorConfig;
use crate::se3::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModeSpec {
    Fixed,
    Unicycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKindSpec {
    Revolute,
    Prismatic,
    PlanarBaseTranslation,
    PlanarBaseRotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OwnerSpec {
    Human,
    Robot,
}

/// Parent of a joint: an earlier joint index or the literal string "base".
/// When absent the previous joint in the list is the parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParentSpec {
    Index(usize),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: JointKindSpec,
    pub axis: [f64; 3],
    pub origin_xyz: [f64; 3],
    pub origin_rpy: [f64; 3],
    pub owner: OwnerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<ParentSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub joint: usize,
    #[serde(default)]
    pub offset_xyz: [f64; 3],
    #[serde(default)]
    pub offset_rpy: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub base_mode: BaseModeSpec,
    pub joints: Vec<JointSpec>,
    pub frames: BTreeMap<String, FrameSpec>,
    /// Fixed transform of the head above the base (avatar chains); metadata
    /// for visualization, not used by the dynamics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_offset: Option<FrameSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl ChainConfig {
    pub fn to_chain(&self) -> Result<KinematicChain> {
        let mut joints = Vec::with_capacity(self.joints.len());
        for (i, spec) in self.joints.iter().enumerate() {
            let parent = match &spec.parent {
                None => {
                    if i == 0 {
                        None
                    } else {
                        Some(i - 1)
                    }
                }
                Some(ParentSpec::Index(p)) => Some(*p),
                Some(ParentSpec::Named(name)) if name == "base" => None,
                Some(ParentSpec::Named(other)) => {
                    return Err(Error::InvalidConfig(format!(
                        "joint {i}: unknown parent {other:?} (use an index or \"base\")"
                    )));
                }
            };
            joints.push(Joint {
                kind: match spec.kind {
                    JointKindSpec::Revolute => JointKind::Revolute,
                    JointKindSpec::Prismatic => JointKind::Prismatic,
                    JointKindSpec::PlanarBaseTranslation => JointKind::PlanarBaseTranslation,
                    JointKindSpec::PlanarBaseRotation => JointKind::PlanarBaseRotation,
                },
                // Deliberately unchecked here: chain validation rejects
                // non-unit axes instead of silently normalizing them.
                axis: Unit::new_unchecked(Vector3::new(spec.axis[0], spec.axis[1], spec.axis[2])),
                origin: Pose::from_xyz_rpy(spec.origin_xyz, spec.origin_rpy),
                owner: match spec.owner {
                    OwnerSpec::Human => Owner::Human,
                    OwnerSpec::Robot => Owner::Robot,
                },
                parent,
            });
        }
        let mut frames = BTreeMap::new();
        for (name, spec) in &self.frames {
            frames.insert(
                name.clone(),
                FrameAttachment {
                    joint: spec.joint,
                    offset: Pose::from_xyz_rpy(spec.offset_xyz, spec.offset_rpy),
                },
            );
        }
        KinematicChain::new(
            joints,
            frames,
            match self.base_mode {
                BaseModeSpec::Fixed => BaseMode::Fixed,
                BaseModeSpec::Unicycle => BaseMode::Unicycle,
            },
        )
    }
}

/// A square matrix given either as its diagonal or as full rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, n: usize, what: &'static str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Diagonal(d) => {
                if d.len() != n {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected: n,
                        actual: d.len(),
                    });
                }
                Ok(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
            }
            MatrixSpec::Full(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected: n,
                        actual: rows.len(),
                    });
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Connected,
    DisconnectedAvatar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanSpec {
    /// Diagonal entries of the reaching gain.
    pub lambda_e: [f64; 6],
    /// Diagonal entries of the compensation gain.
    pub lambda_c: [f64; 6],
    /// Reaching/compensation trade-off weight; defaults to 0.5 when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorSpec {
    pub q_cov: MatrixSpec,
    pub r_cov: MatrixSpec,
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_max: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// Reaching offset from the initial end-effector position (meters).
    pub translation: [f64; 3],
    /// Reaching offset rotation vector applied to the initial end-effector
    /// orientation (radians).
    #[serde(default)]
    pub rotation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub chain_file: String,
    pub mode: ModeSpec,
    pub human: HumanSpec,
    pub regulator: RegulatorSpec,
    pub initial_q: Vec<f64>,
    pub target: TargetSpec,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_true")]
    pub controller_enabled: bool,
    /// Simulate the frozen linearized system instead of the nonlinear chain.
    #[serde(default)]
    pub linearized: bool,
    #[serde(default)]
    pub seed: u64,
    /// Ratio between the regulator's estimate of the reaching gain and the
    /// plant's true gain.
    #[serde(default = "default_ratio")]
    pub lambda_hat_ratio_e: f64,
    #[serde(default = "default_ratio")]
    pub lambda_hat_ratio_c: f64,
}

fn default_true() -> bool {
    true
}

fn default_ratio() -> f64 {
    1.0
}

/// A fully resolved scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub chain: KinematicChain,
    pub mode: ModeSpec,
    pub human: HumanModel,
    pub w_defaulted: bool,
    pub regulator: RegulatorConfig,
    pub initial_q: DVector<f64>,
    pub target_translation: Vector3<f64>,
    pub target_rotation: Vector3<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub controller_enabled: bool,
    pub linearized: bool,
    pub seed: u64,
    pub lambda_hat_ratio_e: f64,
    pub lambda_hat_ratio_c: f64,
    /// The resolved config as written (plus applied defaults).
    pub config: ScenarioConfig,
    /// SHA-256 over the canonical scenario + chain JSON.
    pub config_hash: String,
}

pub fn default_p0() -> DMatrix<f64> {
    let mut diag = Vector6::zeros();
    let mut p0 = DMatrix::zeros(12, 12);
    for i in 0..6 {
        diag[i] = 10.0;
        p0[(i, i)] = 10.0;
        p0[(i + 6, i + 6)] = 0.05;
    }
    p0
}

pub fn load_chain_config(path: &Path) -> Result<ChainConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ChainConfig = serde_json::from_str(&text)?;
    Ok(config)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let config: ScenarioConfig = serde_json::from_str(&text)?;
    let chain_path = resolve_relative(path, &config.chain_file);
    let chain_config = load_chain_config(&chain_path)?;
    build_scenario(path, config, &chain_config)
}

fn resolve_relative(scenario_path: &Path, chain_file: &str) -> PathBuf {
    let chain_path = Path::new(chain_file);
    if chain_path.is_absolute() {
        chain_path.to_path_buf()
    } else {
        scenario_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(chain_path)
    }
}

pub fn build_scenario(
    path: &Path,
    config: ScenarioConfig,
    chain_config: &ChainConfig,
) -> Result<Scenario> {
    let chain = chain_config.to_chain()?;
    let n_u = chain.n_inputs();

    if config.horizon <= 0.0 || config.dt <= 0.0 || config.dt > config.horizon {
        return Err(Error::InvalidConfig(format!(
            "need horizon > 0, dt > 0 and dt <= horizon (got horizon {}, dt {})",
            config.horizon, config.dt
        )));
    }
    if config.initial_q.len() != chain.n_joints() {
        return Err(Error::DimensionMismatch {
            what: "initial_q",
            expected: chain.n_joints(),
            actual: config.initial_q.len(),
        });
    }
    if config.lambda_hat_ratio_e <= 0.0 || config.lambda_hat_ratio_c <= 0.0 {
        return Err(Error::InvalidConfig(
            "lambda_hat ratios must be positive".into(),
        ));
    }

    let internal_model = match config.mode {
        ModeSpec::Connected => InternalModel::Connected,
        ModeSpec::DisconnectedAvatar => InternalModel::DisconnectedAvatar,
    };
    if internal_model == InternalModel::DisconnectedAvatar
        && !chain.has_frame(crate::chain::HUMAN_HAND_FRAME)
    {
        return Err(Error::InvalidConfig(format!(
            "disconnected_avatar scenarios need a {:?} frame in the chain",
            crate::chain::HUMAN_HAND_FRAME
        )));
    }

    let w_defaulted = config.human.w.is_none();
    let w = config.human.w.unwrap_or(0.5);
    if w_defaulted {
        log::warn!(
            "scenario {:?}: human weight w not set, defaulting to 0.5",
            path
        );
    }
    let human = HumanModel::new(
        Matrix6::from_diagonal(&Vector6::from_row_slice(&config.human.lambda_e)),
        Matrix6::from_diagonal(&Vector6::from_row_slice(&config.human.lambda_c)),
        w,
        internal_model,
    )?;

    let s = match &config.regulator.s {
        None => DMatrix::zeros(12, n_u),
        Some(rows) => {
            if rows.len() != 12 || rows.iter().any(|r| r.len() != n_u) {
                return Err(Error::DimensionMismatch {
                    what: "S",
                    expected: n_u,
                    actual: rows.first().map_or(0, Vec::len),
                });
            }
            DMatrix::from_fn(12, n_u, |i, j| rows[i][j])
        }
    };
    let regulator = RegulatorConfig {
        q_cov: config.regulator.q_cov.to_matrix(12, "Q_cov")?,
        r_cov: config.regulator.r_cov.to_matrix(6, "R_cov")?,
        q: config.regulator.q.to_matrix(12, "Q")?,
        r: config.regulator.r.to_matrix(n_u, "R")?,
        s,
        p0: match &config.regulator.p0 {
            Some(spec) => spec.to_matrix(12, "P(0)")?,
            None => default_p0(),
        },
        u_max: config
            .regulator
            .u_max
            .as_ref()
            .map(|v| DVector::from_row_slice(v)),
    };
    regulator.validate(n_u)?;

    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&config)?);
    hasher.update(serde_json::to_vec(chain_config)?);
    let config_hash = hex_string(&hasher.finalize());

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string());

    Ok(Scenario {
        name,
        chain,
        mode: config.mode,
        human,
        w_defaulted,
        regulator,
        initial_q: DVector::from_row_slice(&config.initial_q),
        target_translation: Vector3::new(
            config.target.translation[0],
            config.target.translation[1],
            config.target.translation[2],
        ),
        target_rotation: Vector3::new(
            config.target.rotation[0],
            config.target.rotation[1],
            config.target.rotation[2],
        ),
        horizon: config.horizon,
        dt: config.dt,
        controller_enabled: config.controller_enabled,
        linearized: config.linearized,
        seed: config.seed,
        lambda_hat_ratio_e: config.lambda_hat_ratio_e,
        lambda_hat_ratio_c: config.lambda_hat_ratio_c,
        config,
        config_hash,
    })
}

fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
