//! JSON document format for [`ProblemInstance`].
//!
//! ```json
//! {
//!   "n_poses": 3,
//!   "landmarks": [[1.0, 2.0], [4.0, 0.5]],
//!   "prior": {"rot_cs": [1.0, 0.0], "pos": [0.0, 0.0], "kappa": 100.0, "sigma2": 0.01},
//!   "odometry": [{"from": 0, "to": 1, "rot_cs": [0.8, 0.6], "pos": [1.0, 0.0], "kappa": 100.0, "sigma2": 0.745}],
//!   "measurements": [{"timestep": 0, "k": 0, "y": [1.0, 2.0], "sigma2": 0.5, "candidates": [0, 1]}]
//! }
//! ```
//!
//! Indices are zero-based. `candidates` defaults to every landmark. A
//! measurement may give `cov` (a 2x2 row-major nested array) instead of
//! `sigma2`; it must be a multiple of the identity.

use crate::error::{Error, Result};
use crate::geometry::Rotation2;
use crate::problem::{
    isotropic_variance, LandmarkMap, PriorMeasurement, ProblemInstance, RelPoseMeasurement,
    UdaMeasurement,
};
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub n_poses: usize,
    pub landmarks: Vec<[f64; 2]>,
    pub prior: PriorDoc,
    #[serde(default)]
    pub odometry: Vec<OdometryDoc>,
    #[serde(default)]
    pub measurements: Vec<MeasurementDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorDoc {
    pub rot_cs: [f64; 2],
    pub pos: [f64; 2],
    pub kappa: f64,
    pub sigma2: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OdometryDoc {
    pub from: usize,
    pub to: usize,
    pub rot_cs: [f64; 2],
    pub pos: [f64; 2],
    pub kappa: f64,
    pub sigma2: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasurementDoc {
    pub timestep: usize,
    pub k: usize,
    pub y: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<usize>>,
}

fn rotation(cs: [f64; 2], what: &str) -> Result<Rotation2<f64>> {
    let r = Rotation2 { c: cs[0], s: cs[1] };
    if r.unit_defect() > 1e-6 {
        return Err(Error::InvalidInstance(format!(
            "{what} rotation {cs:?} is not on SO(2)"
        )));
    }
    // Tiny defects from text round-off are projected away.
    Ok(r.renormalized())
}

fn vec2(v: [f64; 2]) -> Vector2<f64> {
    Vector2::new(v[0], v[1])
}

impl InstanceDoc {
    pub fn into_instance(self) -> Result<ProblemInstance<f64>> {
        let n_landmarks = self.landmarks.len();
        let prior = PriorMeasurement {
            rot: rotation(self.prior.rot_cs, "prior")?,
            pos: vec2(self.prior.pos),
            kappa: self.prior.kappa,
            sigma2: self.prior.sigma2,
        };
        let odometry = self
            .odometry
            .iter()
            .map(|o| {
                Ok(RelPoseMeasurement {
                    from: o.from,
                    to: o.to,
                    delta_rot: rotation(o.rot_cs, "odometry")?,
                    delta_pos: vec2(o.pos),
                    kappa: o.kappa,
                    sigma2: o.sigma2,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let measurements = self
            .measurements
            .iter()
            .map(|m| {
                let sigma2 = match (m.sigma2, m.cov) {
                    (Some(s), None) => s,
                    (None, Some(c)) => {
                        isotropic_variance(&Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]))?
                    }
                    (Some(s), Some(c)) => {
                        let from_cov =
                            isotropic_variance(&Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]))?;
                        if (from_cov - s).abs() > 1e-12 * s.abs().max(1.0) {
                            return Err(Error::InvalidInstance(format!(
                                "measurement ({}, {}) gives inconsistent sigma2 and cov",
                                m.timestep, m.k
                            )));
                        }
                        s
                    }
                    (None, None) => {
                        return Err(Error::InvalidInstance(format!(
                            "measurement ({}, {}) has neither sigma2 nor cov",
                            m.timestep, m.k
                        )))
                    }
                };
                Ok(UdaMeasurement {
                    timestep: m.timestep,
                    meas_index: m.k,
                    y: vec2(m.y),
                    sigma2,
                    candidates: m
                        .candidates
                        .clone()
                        .unwrap_or_else(|| (0..n_landmarks).collect()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ProblemInstance::new(
            self.n_poses,
            LandmarkMap::new(self.landmarks.iter().copied().map(vec2).collect()),
            prior,
            odometry,
            measurements,
        )
    }

    pub fn from_instance(inst: &ProblemInstance<f64>) -> Self {
        let v = |p: &Vector2<f64>| [p.x, p.y];
        Self {
            n_poses: inst.n_poses,
            landmarks: inst.landmarks.positions.iter().map(v).collect(),
            prior: PriorDoc {
                rot_cs: [inst.prior.rot.c, inst.prior.rot.s],
                pos: v(&inst.prior.pos),
                kappa: inst.prior.kappa,
                sigma2: inst.prior.sigma2,
            },
            odometry: inst
                .odometry
                .iter()
                .map(|o| OdometryDoc {
                    from: o.from,
                    to: o.to,
                    rot_cs: [o.delta_rot.c, o.delta_rot.s],
                    pos: v(&o.delta_pos),
                    kappa: o.kappa,
                    sigma2: o.sigma2,
                })
                .collect(),
            measurements: inst
                .uda_measurements
                .iter()
                .map(|m| MeasurementDoc {
                    timestep: m.timestep,
                    k: m.meas_index,
                    y: v(&m.y),
                    sigma2: Some(m.sigma2),
                    cov: None,
                    candidates: Some(m.candidates.clone()),
                })
                .collect(),
        }
    }
}

pub fn instance_from_json(text: &str) -> Result<ProblemInstance<f64>> {
    serde_json::from_str::<InstanceDoc>(text)?.into_instance()
}

pub fn instance_to_json(inst: &ProblemInstance<f64>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&InstanceDoc::from_instance(
        inst,
    ))?)
}

pub fn read_instance(path: &Path) -> Result<ProblemInstance<f64>> {
    instance_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_instance(inst: &ProblemInstance<f64>, path: &Path) -> Result<()> {
    std::fs::write(path, instance_to_json(inst)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "n_poses": 2,
        "landmarks": [[1.0, 2.0], [4.0, 0.5]],
        "prior": {"rot_cs": [1.0, 0.0], "pos": [0.0, 0.0], "kappa": 100.0, "sigma2": 0.01},
        "odometry": [{"from": 0, "to": 1, "rot_cs": [0.8, 0.6], "pos": [1.0, 0.0], "kappa": 100.0, "sigma2": 0.745}],
        "measurements": [
            {"timestep": 0, "k": 0, "y": [1.0, 2.0], "sigma2": 0.5},
            {"timestep": 1, "k": 0, "y": [0.0, 1.0], "cov": [[0.25, 0.0], [0.0, 0.25]], "candidates": [1]}
        ]
    }"#;

    #[test]
    fn parses_and_defaults_candidates() {
        let inst = instance_from_json(DOC).unwrap();
        assert_eq!(inst.n_poses, 2);
        assert_eq!(inst.uda_measurements[0].candidates, vec![0, 1]);
        assert_eq!(inst.uda_measurements[1].candidates, vec![1]);
        assert_eq!(inst.uda_measurements[1].sigma2, 0.25);
        assert_eq!(inst.n_theta(), 3);
    }

    #[test]
    fn round_trips() {
        let inst = instance_from_json(DOC).unwrap();
        let again = instance_from_json(&instance_to_json(&inst).unwrap()).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn rejects_anisotropic_cov() {
        let bad = DOC.replace("[[0.25, 0.0], [0.0, 0.25]]", "[[0.25, 0.0], [0.0, 0.5]]");
        assert!(matches!(
            instance_from_json(&bad),
            Err(Error::Anisotropic(_))
        ));
    }

    #[test]
    fn rejects_off_circle_rotation() {
        let bad = DOC.replace("[0.8, 0.6]", "[0.8, 0.8]");
        assert!(instance_from_json(&bad).is_err());
    }
}
