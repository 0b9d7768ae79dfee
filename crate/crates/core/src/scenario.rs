//! Scenario files: one JSON document per experiment.
//!
//! Lines may carry `#` comments (outside string literals); the built-in files
//! use them to mark every field that is a default rather than a measured
//! layout value. Unknown keys are rejected and omitted optional keys take the
//! defaults documented on each field.

use std::collections::HashSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::{ControlBounds, Epsilon, OcpSpec};
use crate::severity_field::{self, ShapeKind};
use crate::vehicle_model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Rating setting (1 or 2) used to look up class ratings.
    #[serde(default = "default_setting")]
    pub setting: u8,
    pub ego: EgoSpec,
    #[serde(default)]
    pub vehicle: VehicleSpec,
    #[serde(default)]
    pub ocp: OcpSettings,
    #[serde(default)]
    pub ratings: RatingTable,
    pub obstacles: Vec<ObstacleSpec>,
}

fn default_setting() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    pub x: f64,
    pub y: f64,
    /// Heading; defaults to π (driving towards decreasing x).
    #[serde(default = "default_heading")]
    pub phi: f64,
    pub v: f64,
    #[serde(default)]
    pub delta: f64,
}

fn default_heading() -> f64 {
    PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    #[serde(default = "default_wheelbase")]
    pub wheelbase: f64,
    #[serde(default = "default_steering_lag")]
    pub steering_lag: f64,
}

fn default_wheelbase() -> f64 {
    2.7
}

fn default_steering_lag() -> f64 {
    0.2
}

impl Default for VehicleSpec {
    fn default() -> Self {
        Self {
            wheelbase: default_wheelbase(),
            steering_lag: default_steering_lag(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonSpec {
    Absolute(f64),
    Relative(f64),
}

impl Default for EpsilonSpec {
    fn default() -> Self {
        EpsilonSpec::Relative(1e-3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpSettings {
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_tf")]
    pub tf: f64,
    #[serde(default = "default_intervals")]
    pub num_intervals: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_a_min")]
    pub a_min: f64,
    #[serde(default = "default_a_max")]
    pub a_max: f64,
    #[serde(default = "default_delta_min")]
    pub delta_min: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default)]
    pub epsilon: EpsilonSpec,
}

fn default_tf() -> f64 {
    4.0
}
fn default_intervals() -> usize {
    40
}
fn default_substeps() -> usize {
    4
}
fn default_a_min() -> f64 {
    -8.0
}
fn default_a_max() -> f64 {
    3.0
}
fn default_delta_min() -> f64 {
    -0.5
}
fn default_delta_max() -> f64 {
    0.5
}

impl Default for OcpSettings {
    fn default() -> Self {
        Self {
            t0: 0.0,
            tf: default_tf(),
            num_intervals: default_intervals(),
            substeps: default_substeps(),
            a_min: default_a_min(),
            a_max: default_a_max(),
            delta_min: default_delta_min(),
            delta_max: default_delta_max(),
            epsilon: EpsilonSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Pedestrian,
    Bus,
    Car,
    BusStation,
    Building,
}

impl ObjectClass {
    /// Footprint used when an obstacle omits `shape`. Buildings have none.
    pub fn default_shape(self) -> Option<ShapeSpec> {
        let (kind, a, b) = match self {
            ObjectClass::Pedestrian => (ShapeKindSpec::Circle, 0.3, 0.3),
            ObjectClass::Bus => (ShapeKindSpec::Rectangle, 6.0, 1.25),
            ObjectClass::Car => (ShapeKindSpec::Rectangle, 2.25, 0.9),
            ObjectClass::BusStation => (ShapeKindSpec::Rectangle, 2.0, 1.0),
            ObjectClass::Building => return None,
        };
        Some(ShapeSpec {
            kind,
            a,
            b,
            d: default_fuzzy(),
        })
    }
}

/// Severity rating per object class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRatings {
    pub pedestrian: f64,
    pub bus: f64,
    pub car: f64,
    pub bus_station: f64,
    pub building: f64,
}

impl ClassRatings {
    pub fn get(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Pedestrian => self.pedestrian,
            ObjectClass::Bus => self.bus,
            ObjectClass::Car => self.car,
            ObjectClass::BusStation => self.bus_station,
            ObjectClass::Building => self.building,
        }
    }

    fn validate(&self, label: &str) -> Result<()> {
        let values = [self.pedestrian, self.bus, self.car, self.bus_station, self.building];
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!("{label}: ratings must be finite and >= 0")));
        }
        if !(self.pedestrian >= self.bus
            && self.bus >= self.car
            && self.car >= self.bus_station
            && self.bus_station == self.building)
        {
            return Err(Error::Validation(format!(
                "{label}: ratings must satisfy pedestrian >= bus >= car >= bus_station = building"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingTable {
    pub setting_1: ClassRatings,
    pub setting_2: ClassRatings,
}

impl Default for RatingTable {
    fn default() -> Self {
        let setting_1 = ClassRatings {
            pedestrian: 40.0,
            bus: 30.0,
            car: 20.0,
            bus_station: 10.0,
            building: 10.0,
        };
        Self {
            setting_1,
            setting_2: ClassRatings {
                pedestrian: 200.0,
                ..setting_1
            },
        }
    }
}

impl RatingTable {
    pub fn setting(&self, setting: u8) -> Result<&ClassRatings> {
        match setting {
            1 => Ok(&self.setting_1),
            2 => Ok(&self.setting_2),
            other => Err(Error::Validation(format!("rating setting must be 1 or 2, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKindSpec {
    Circle,
    Rectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub kind: ShapeKindSpec,
    /// Half length along the obstacle's x axis.
    pub a: f64,
    /// Half width along the obstacle's y axis.
    pub b: f64,
    #[serde(default = "default_fuzzy")]
    pub d: f64,
}

fn default_fuzzy() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub x0: f64,
    pub y0: f64,
    #[serde(default)]
    pub heading0: f64,
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub travel_heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub id: String,
    pub class: ObjectClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeSpec>,
    pub motion: MotionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating_override: Option<f64>,
}

impl ObstacleSpec {
    pub fn resolved_shape(&self) -> Result<ShapeSpec> {
        self.shape
            .or_else(|| self.class.default_shape())
            .ok_or_else(|| Error::Validation(format!("obstacle {}: class {:?} needs an explicit shape", self.id, self.class)))
    }
}

/// Removes `#` comments outside string literals, keeping line structure.
fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let mut in_string = false;
        let mut escaped = false;
        let mut cut = line.len();
        for (i, ch) in line.char_indices() {
            match ch {
                _ if escaped => escaped = false,
                '\\' if in_string => escaped = true,
                '"' => in_string = !in_string,
                '#' if !in_string => {
                    cut = i;
                    break;
                }
                _ => {}
            }
        }
        out.push_str(&line[..cut]);
        out.push('\n');
    }
    out
}

/// Parses and validates a scenario file.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let cleaned = strip_comments(text);
    let scenario: Scenario = serde_json::from_str(&cleaned).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let e = &self.ego;
        if [e.x, e.y, e.phi, e.v, e.delta].iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("ego initial state must be finite".into()));
        }
        self.ratings.setting_1.validate("ratings.setting_1")?;
        self.ratings.setting_2.validate("ratings.setting_2")?;
        self.ratings.setting(self.setting)?;
        let mut seen = HashSet::new();
        for o in &self.obstacles {
            if !seen.insert(o.id.as_str()) {
                return Err(Error::Validation(format!("obstacle ids must be unique, {} repeats", o.id)));
            }
            if let Some(r) = o.rating_override {
                if !(r.is_finite() && r >= 0.0) {
                    return Err(Error::Validation(format!(
                        "obstacle {}: rating_override must be finite and >= 0, got {r}",
                        o.id
                    )));
                }
            }
            let m = &o.motion;
            if [m.x0, m.y0, m.heading0, m.speed, m.travel_heading].iter().any(|v| !v.is_finite()) || m.speed < 0.0 {
                return Err(Error::Validation(format!("obstacle {}: motion must be finite with speed >= 0", o.id)));
            }
        }
        self.to_ocp_spec()
            .and_then(|spec| spec.validate())
            .map_err(|err| match err {
                Error::Validation(_) => err,
                other => Error::Validation(other.to_string()),
            })
    }

    pub fn rating_of(&self, obstacle: &ObstacleSpec) -> Result<f64> {
        match obstacle.rating_override {
            Some(r) => Ok(r),
            None => Ok(self.ratings.setting(self.setting)?.get(obstacle.class)),
        }
    }

    pub fn obstacles(&self) -> Result<Vec<severity_field::Obstacle<f64>>> {
        self.obstacles
            .iter()
            .map(|o| {
                let s = o.resolved_shape()?;
                let kind = match s.kind {
                    ShapeKindSpec::Circle => ShapeKind::Circle,
                    ShapeKindSpec::Rectangle => ShapeKind::Rectangle,
                };
                let shape = severity_field::ShapeParams::new(kind, s.a, s.b, s.d)
                    .map_err(|e| Error::Validation(format!("obstacle {}: {e}", o.id)))?;
                let motion = severity_field::ObstacleMotion {
                    center_x0: o.motion.x0,
                    center_y0: o.motion.y0,
                    heading0: o.motion.heading0,
                    speed: o.motion.speed,
                    heading_of_travel: o.motion.travel_heading,
                };
                severity_field::Obstacle::new(o.id.clone(), shape, motion, self.rating_of(o)?)
                    .map_err(|e| Error::Validation(e.to_string()))
            })
            .collect()
    }

    pub fn to_ocp_spec(&self) -> Result<OcpSpec<f64>> {
        let e = &self.ego;
        let initial = vehicle_model::VehicleState::new(e.x, e.y, e.phi, e.v, e.delta);
        let mut spec = OcpSpec::new(initial, self.obstacles()?);
        spec.vehicle = vehicle_model::VehicleParams {
            wheelbase: self.vehicle.wheelbase,
            steering_lag: self.vehicle.steering_lag,
        };
        let o = &self.ocp;
        spec.t0 = o.t0;
        spec.tf = o.tf;
        spec.num_intervals = o.num_intervals;
        spec.substeps = o.substeps;
        spec.bounds = ControlBounds {
            accel_min: o.a_min,
            accel_max: o.a_max,
            steer_min: o.delta_min,
            steer_max: o.delta_max,
        };
        spec.epsilon = match o.epsilon {
            EpsilonSpec::Absolute(v) => Epsilon::Absolute(v),
            EpsilonSpec::Relative(v) => Epsilon::Relative(v),
        };
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 3] = ["scenario1", "scenario2", "scenario2-cond2"];

const SCENARIO1: &str = include_str!("../scenarios/scenario1.json");
const SCENARIO2: &str = include_str!("../scenarios/scenario2.json");
const SCENARIO2_COND2: &str = include_str!("../scenarios/scenario2_cond2.json");

/// Raw text of a built-in scenario file.
pub fn builtin_text(name: &str) -> Result<&'static str> {
    match name {
        "scenario1" => Ok(SCENARIO1),
        "scenario2" => Ok(SCENARIO2),
        "scenario2-cond2" => Ok(SCENARIO2_COND2),
        other => Err(Error::Validation(format!(
            "unknown built-in scenario {other:?}; expected one of {BUILTIN_NAMES:?}"
        ))),
    }
}

pub fn builtin(name: &str) -> Result<Scenario> {
    parse_scenario(builtin_text(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "minimal",
        "ego": {"x": 0, "y": 0, "v": 5},   # heading defaults to pi
        "obstacles": [
            {"id": "p", "class": "pedestrian", "motion": {"x0": 10, "y0": 0}}
        ]
    }"#;

    #[test]
    fn defaults_fill_missing_keys() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.setting, 1);
        assert_eq!(s.ego.phi, PI);
        assert_eq!(s.vehicle, VehicleSpec::default());
        assert_eq!(s.ocp, OcpSettings::default());
        let spec = s.to_ocp_spec().unwrap();
        assert_eq!(spec.obstacles[0].severity_c, 40.0);
        assert_eq!(spec.obstacles[0].shape.half_length_a, 0.3);
        assert_eq!(spec.obstacles[0].shape.fuzzy_d, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("\"name\"", "\"colour\": 1, \"name\"");
        assert!(matches!(parse_scenario(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_scenario("{\n  \"name\": \"x\",\n  \"ego\": oops\n}").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_rating_is_a_validation_error() {
        let text = MINIMAL.replace("\"motion\"", "\"rating_override\": -1, \"motion\"");
        assert!(matches!(parse_scenario(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = MINIMAL.replace(
            "{\"id\": \"p\", \"class\": \"pedestrian\", \"motion\": {\"x0\": 10, \"y0\": 0}}",
            "{\"id\": \"p\", \"class\": \"pedestrian\", \"motion\": {\"x0\": 10, \"y0\": 0}}, {\"id\": \"p\", \"class\": \"car\", \"motion\": {\"x0\": 1, \"y0\": 0}}",
        );
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("unique"), "{err}");
    }

    #[test]
    fn building_needs_explicit_shape() {
        let text = MINIMAL.replace("pedestrian", "building");
        assert!(matches!(parse_scenario(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn rating_order_is_enforced() {
        let text = MINIMAL.replace(
            "\"obstacles\"",
            "\"ratings\": {\"setting_1\": {\"pedestrian\": 1, \"bus\": 30, \"car\": 20, \"bus_station\": 10, \"building\": 10}, \"setting_2\": {\"pedestrian\": 200, \"bus\": 30, \"car\": 20, \"bus_station\": 10, \"building\": 10}}, \"obstacles\"",
        );
        assert!(matches!(parse_scenario(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn comments_inside_strings_survive() {
        let text = MINIMAL.replace("\"minimal\"", "\"lane #2\"");
        assert_eq!(parse_scenario(&text).unwrap().name, "lane #2");
    }

    #[test]
    fn builtin_scenario_one_matches_layout_table() {
        let s = builtin("scenario1").unwrap();
        // the layout table plus the right-hand building row
        assert_eq!(s.obstacles.len(), 9);
        assert_eq!((s.ego.x, s.ego.y, s.ego.v), (50.0, 1.75, 10.0));
        let pos = |id: &str| {
            let o = s.obstacles.iter().find(|o| o.id == id).unwrap();
            (o.motion.x0, o.motion.y0, o.motion.speed)
        };
        assert_eq!(pos("static_car_1"), (21.0, -5.0, 0.0));
        assert_eq!(pos("static_car_2"), (26.0, -5.0, 0.0));
        assert_eq!(pos("static_car_3"), (30.0, 1.75, 0.0));
        assert_eq!(pos("bus"), (16.0, 1.75, 0.0));
        assert_eq!(pos("pedestrian_1"), (20.0, 3.5, 0.0));
        assert_eq!(pos("pedestrian_2"), (24.0, 3.5, 1.0));
        assert_eq!(pos("moving_car_1"), (-1.75, 18.5, 10.0));
        assert_eq!(pos("moving_car_2"), (1.75, -18.5, 10.0));
        assert_eq!(pos("building_right"), (32.0, 8.5, 0.0));
    }

    #[test]
    fn builtin_scenario_two_matches_layout_table() {
        let s = builtin("scenario2").unwrap();
        assert_eq!(s.obstacles.len(), 11);
        let group: Vec<_> = s
            .obstacles
            .iter()
            .filter(|o| ["pedestrian_3", "pedestrian_4", "pedestrian_5", "pedestrian_6"].contains(&o.id.as_str()))
            .map(|o| (o.motion.x0, o.motion.y0))
            .collect();
        assert_eq!(group, vec![(23.0, -5.0), (24.0, -5.0), (25.0, -5.0), (26.0, -5.0)]);
        let c2 = builtin("scenario2-cond2").unwrap();
        let spec = c2.to_ocp_spec().unwrap();
        for o in &spec.obstacles {
            if o.id == "pedestrian_2" {
                assert_eq!(o.severity_c, 200.0);
            } else if o.id.starts_with("pedestrian") {
                assert_eq!(o.severity_c, 40.0);
            }
        }
    }

    #[test]
    fn builtin_ratings_follow_table_one() {
        let s = builtin("scenario1").unwrap();
        assert_eq!(s.ratings, RatingTable::default());
        assert_eq!(s.ratings.setting_2.pedestrian, 200.0);
        assert_eq!(s.ratings.setting_1.pedestrian, 40.0);
    }

    #[test]
    fn every_builtin_default_is_marked() {
        // fields the layout tables do not give must carry a `# default` marker
        for name in BUILTIN_NAMES {
            let text = builtin_text(name).unwrap();
            for key in ["\"phi\"", "\"wheelbase\"", "\"steering_lag\"", "\"tf\"", "\"num_intervals\"", "\"d\""] {
                for line in text.lines().filter(|l| l.contains(key)) {
                    assert!(line.contains("# default"), "{name}: {line}");
                }
            }
        }
    }

    #[test]
    fn unknown_builtin_is_an_error() {
        assert!(builtin("scenario3").is_err());
    }
}
