//! Configuration document (JSON). Every section has defaults, so `{}` is a
//! valid configuration.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::endeffector::{RingRailParams, SpringParams, TorsionParams, STANDARD_GRAVITY};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kinematics::{Gantry, JointLimits, MountFrame};
use crate::torso::{default_anchors, BreathingModel, RegionAnchor, Torso, TorsoDims};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TorsoConfig {
    pub width_mm: f64,
    pub depth_mm: f64,
    pub height_mm: f64,
    pub center_mm: Vec3,
}

impl Default for TorsoConfig {
    fn default() -> Self {
        let d = TorsoDims::default();
        Self {
            width_mm: d.width_mm,
            depth_mm: d.depth_mm,
            height_mm: d.height_mm,
            center_mm: [500.0, 250.0, 0.0],
        }
    }
}

impl TorsoConfig {
    pub fn dims(&self) -> TorsoDims {
        TorsoDims {
            width_mm: self.width_mm,
            depth_mm: self.depth_mm,
            height_mm: self.height_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisRange {
    pub range_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointsConfig {
    pub x: AxisRange,
    pub y: AxisRange,
    pub z: AxisRange,
    pub psi_max_rad: f64,
    pub phi_max_rad: f64,
}

impl Default for JointsConfig {
    fn default() -> Self {
        let l = JointLimits::default();
        Self {
            x: AxisRange { range_mm: l.x_range_mm },
            y: AxisRange { range_mm: l.y_range_mm },
            z: AxisRange { range_mm: l.z_range_mm },
            psi_max_rad: l.psi_max_rad,
            phi_max_rad: l.phi_max_rad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArcConfig {
    pub alpha_max_rad: f64,
    /// Maximum arc rate (rad/s of surface angle) at full stick.
    pub rate_max: f64,
}

impl Default for ArcConfig {
    fn default() -> Self {
        Self {
            alpha_max_rad: 0.48 * PI,
            rate_max: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpringConfig {
    pub f_c_kgf: f64,
    pub m_cw_kg: f64,
    pub m_us_kg: f64,
    pub travel_max_mm: f64,
    pub k_hard_n_per_mm: f64,
    pub g_mps2: f64,
}

impl Default for SpringConfig {
    fn default() -> Self {
        Self {
            f_c_kgf: 0.8,
            m_cw_kg: 0.45,
            m_us_kg: 0.45,
            travel_max_mm: 40.0,
            k_hard_n_per_mm: 5.0,
            g_mps2: STANDARD_GRAVITY,
        }
    }
}

impl SpringConfig {
    pub fn params(&self) -> SpringParams {
        SpringParams {
            f_c_n: self.f_c_kgf * self.g_mps2,
            m_cw_kg: self.m_cw_kg,
            m_us_kg: self.m_us_kg,
            travel_max_mm: self.travel_max_mm,
            g_mps2: self.g_mps2,
            k_hard_n_per_mm: self.k_hard_n_per_mm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyConfig {
    #[serde(rename = "warn_N")]
    pub warn_n: f64,
    #[serde(rename = "estop_N")]
    pub estop_n: f64,
    /// Retract until the rigid tip is this far outside the surface.
    pub clearance_mm: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            warn_n: 15.0,
            estop_n: 20.0,
            clearance_mm: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedsConfig {
    pub translation_mm_s: f64,
    pub rotation_rad_s: f64,
}

impl Default for SpeedsConfig {
    fn default() -> Self {
        Self {
            translation_mm_s: 50.0,
            rotation_rad_s: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt_s: f64,
    pub telemetry_hz: f64,
    pub persist_telemetry_hz: f64,
    pub frame_hz: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_s: 0.001,
            telemetry_hz: 50.0,
            persist_telemetry_hz: 10.0,
            frame_hz: 10.0,
            seed: 20210,
        }
    }
}

impl SimConfig {
    fn ticks_for(&self, hz: f64) -> u64 {
        ((1.0 / hz) / self.dt_s).round().max(1.0) as u64
    }

    pub fn telemetry_every(&self) -> u64 {
        self.ticks_for(self.telemetry_hz)
    }

    pub fn persist_every(&self) -> u64 {
        self.ticks_for(self.persist_telemetry_hz)
    }

    pub fn frame_every(&self) -> u64 {
        self.ticks_for(self.frame_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub width_px: usize,
    pub height_px: usize,
    /// Centre row of the pleural band; A-lines repeat at its multiples.
    pub pleural_row: usize,
    pub band_half_px: usize,
    pub background_mean: f64,
    /// Multiplicative speckle: pixel SD = mean × this coefficient.
    pub speckle_cv: f64,
    pub pleural_gain: f64,
    pub a_line_decay: f64,
    /// Coupling-quality ramp: full quality for force in [low, high], zero at 0 and `zero_at`.
    pub force_good_low_n: f64,
    pub force_good_high_n: f64,
    pub force_zero_at_n: f64,
    /// Lateral jitter (px) of the pleural speckle at full breathing excursion.
    pub sliding_px: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            width_px: 256,
            height_px: 256,
            pleural_row: 64,
            band_half_px: 3,
            background_mean: 40.0,
            speckle_cv: 0.2,
            pleural_gain: 180.0,
            a_line_decay: 0.45,
            force_good_low_n: 5.0,
            force_good_high_n: 15.0,
            force_zero_at_n: 20.0,
            sliding_px: 4.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathologyConfig {
    pub b_lines: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowConfig {
    pub free_scan: bool,
    pub record_duration_s: f64,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            free_scan: false,
            record_duration_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Simulated time allowed after the last scripted message before a
    /// scripted session gives up waiting for completion.
    pub timeout_s: f64,
    /// Directory with the browser console's static assets.
    pub console_dir: String,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            timeout_s: 30.0,
            console_dir: "console/dist".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub torso: TorsoConfig,
    pub breathing: BreathingModel,
    pub regions: Vec<RegionAnchor>,
    pub joints: JointsConfig,
    pub endeffector: MountFrame,
    pub arc: ArcConfig,
    pub spring: SpringConfig,
    pub torsion: TorsionParams,
    pub ringrail: RingRailParams,
    pub safety: SafetyConfig,
    pub speeds: SpeedsConfig,
    pub sim: SimConfig,
    pub frame: FrameConfig,
    pub pathology: PathologyConfig,
    pub workflow: WorkflowConfig,
    pub session: SessionConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            torso: TorsoConfig::default(),
            breathing: BreathingModel::default(),
            regions: default_anchors(),
            joints: JointsConfig::default(),
            endeffector: MountFrame::default(),
            arc: ArcConfig::default(),
            spring: SpringConfig::default(),
            torsion: TorsionParams::default(),
            ringrail: RingRailParams::default(),
            safety: SafetyConfig::default(),
            speeds: SpeedsConfig::default(),
            sim: SimConfig::default(),
            frame: FrameConfig::default(),
            pathology: PathologyConfig::default(),
            workflow: WorkflowConfig::default(),
            session: SessionConfig::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.torso.dims().validate()?;
        self.breathing.validate()?;
        if !(self.endeffector.le_mm > 0.0) {
            return Err(Error::Config("endeffector.le_mm must be > 0".into()));
        }
        for (name, r) in [("x", self.joints.x), ("y", self.joints.y), ("z", self.joints.z)] {
            if !(r.range_mm > 0.0) {
                return Err(Error::Config(format!("joints.{name}.range_mm must be > 0")));
            }
        }
        let s = &self.spring;
        if !(s.f_c_kgf >= 0.0 && s.m_cw_kg >= 0.0 && s.m_us_kg >= 0.0 && s.travel_max_mm > 0.0) {
            return Err(Error::Config("spring parameters out of range".into()));
        }
        if !(self.safety.warn_n > 0.0 && self.safety.estop_n >= self.safety.warn_n) {
            return Err(Error::Config("safety thresholds must satisfy 0 < warn_N <= estop_N".into()));
        }
        if !(self.sim.dt_s > 0.0) {
            return Err(Error::Config("sim.dt_s must be > 0".into()));
        }
        let f = &self.frame;
        if f.width_px < 8 || f.height_px < 8 || f.pleural_row + f.band_half_px >= f.height_px {
            return Err(Error::Config("frame geometry out of range".into()));
        }
        for r in &self.regions {
            if !(1..=5).contains(&r.region_id) {
                return Err(Error::Config(format!("regions: bad region id {}", r.region_id)));
            }
        }
        Ok(())
    }

    pub fn torso(&self) -> Torso {
        Torso::new(self.torso.dims(), self.breathing, self.torso.center_mm).with_anchors(self.regions.clone())
    }

    pub fn joint_limits(&self) -> JointLimits {
        JointLimits {
            x_range_mm: self.joints.x.range_mm,
            y_range_mm: self.joints.y.range_mm,
            z_range_mm: self.joints.z.range_mm,
            psi_max_rad: self.joints.psi_max_rad,
            phi_max_rad: self.joints.phi_max_rad,
        }
    }

    pub fn gantry(&self) -> Gantry {
        Gantry::new(self.joint_limits(), self.endeffector, self.arc.alpha_max_rad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn dotted_keys_from_the_interface_parse() {
        let cfg = Config::from_json(
            r#"{"torso":{"width_mm":300},"breathing":{"enabled":false},
                "joints":{"x":{"range_mm":200}},"safety":{"warn_N":14,"estop_N":19},
                "spring":{"f_c_kgf":0.9},"pathology":{"b_lines":true}}"#,
        )
        .unwrap();
        assert_eq!(cfg.torso.width_mm, 300.0);
        assert!(!cfg.breathing.enabled);
        assert_eq!(cfg.joints.x.range_mm, 200.0);
        assert_eq!(cfg.safety.warn_n, 14.0);
        assert!(cfg.pathology.b_lines);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(Config::from_json(r#"{"torso":{"wdth_mm":1}}"#), Err(Error::Config(_))));
        assert!(matches!(Config::from_json(r#"{"torso":{"width_mm":-1}}"#), Err(Error::Config(_))));
        assert!(matches!(Config::from_json("{"), Err(Error::Config(_))));
    }

    #[test]
    fn decimation_ticks() {
        let s = SimConfig::default();
        assert_eq!(s.telemetry_every(), 20);
        assert_eq!(s.persist_every(), 100);
        assert_eq!(s.frame_every(), 100);
    }
}
