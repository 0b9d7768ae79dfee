//! End-to-end runs of a scenario file and comparison of their artifacts.
//!
//! A run directory holds:
//!
//! * `trajectory.csv`: `t,x,y,phi,v,delta,cost_state_J1` at every
//!   integration node of the final (level-two) path
//! * `controls.csv`: `interval_index,t_start,a,delta_s`
//! * `severity.csv`: `t`, one `cs` column per obstacle id, `total_rate`
//!   (the sum of squares the cost state integrates)
//! * `summary.json`: objective values, solver statuses and timings
//! * `scenario.json`: the scenario actually solved, after CLI overrides
//! * `trace_level1.csv`, `trace_level2.csv` when tracing is on
//!
//! CSV numbers are written with 17 significant digits, so every value reads
//! back bit for bit and repeated runs produce identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nlp_solver::write_trace_csv;
use crate::ocp::{two_level_solve, LevelSolution, OcpSpec, PlannerOptions, SolveReport};
use crate::scenario::{parse_scenario, EpsilonSpec, Scenario};
use crate::severity_field::{severities, to_obstacle_frame, Obstacle, ShapeKind};

/// Command-line style overrides applied on top of a scenario file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    /// Absolute severity slack for level two.
    pub epsilon: Option<f64>,
    pub intervals: Option<usize>,
    pub setting: Option<u8>,
    pub trace: bool,
    pub planner: PlannerOptions<f64>,
}

/// The scenario with `options` applied, revalidated.
pub fn apply_overrides(scenario: &Scenario, options: &RunOptions) -> Result<Scenario> {
    let mut s = scenario.clone();
    if let Some(e) = options.epsilon {
        s.ocp.epsilon = EpsilonSpec::Absolute(e);
    }
    if let Some(n) = options.intervals {
        s.ocp.num_intervals = n;
    }
    if let Some(k) = options.setting {
        s.setting = k;
    }
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub status: String,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub function_evaluations: usize,
    pub projected_gradient_norm: f64,
    pub max_violation: f64,
}

impl LevelSummary {
    fn of(level: &LevelSolution<f64>) -> Self {
        let r = &level.result;
        Self {
            status: r.status.as_str().to_string(),
            outer_iterations: r.iterations,
            inner_iterations: r.inner_iterations,
            function_evaluations: r.function_evaluations,
            projected_gradient_norm: r.kkt.projected_gradient_norm,
            max_violation: r.kkt.max_violation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub setting: u8,
    #[serde(rename = "J1_star")]
    pub j1_star: f64,
    #[serde(rename = "J2_level1")]
    pub j2_level1: f64,
    #[serde(rename = "J2_level2")]
    pub j2_level2: f64,
    #[serde(rename = "J1_at_z2")]
    pub j1_at_z2: f64,
    pub epsilon: f64,
    pub budget_satisfied: bool,
    pub converged: bool,
    pub level1: LevelSummary,
    pub level2: LevelSummary,
    pub starts: usize,
    pub selected_start: usize,
    pub wall_time_seconds: f64,
}

impl Summary {
    pub fn from_report(scenario: &Scenario, report: &SolveReport<f64>) -> Self {
        Self {
            scenario: scenario.name.clone(),
            setting: scenario.setting,
            j1_star: report.j1_star,
            j2_level1: report.level1.j2,
            j2_level2: report.level2.j2,
            j1_at_z2: report.level2.j1,
            epsilon: report.epsilon,
            budget_satisfied: report.budget_satisfied,
            converged: report.converged(),
            level1: LevelSummary::of(&report.level1),
            level2: LevelSummary::of(&report.level2),
            starts: report.starts,
            selected_start: report.selected_start,
            wall_time_seconds: report.wall_time_seconds,
        }
    }

    /// Converged at both levels with the budget met.
    pub fn success(&self) -> bool {
        self.converged && self.budget_satisfied
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub spec: OcpSpec<f64>,
    pub report: SolveReport<f64>,
    pub summary: Summary,
}

/// Solves `scenario` (after overrides) and writes the artifacts to `out_dir`.
pub fn run(scenario: &Scenario, out_dir: &Path, options: &RunOptions) -> Result<RunOutcome> {
    let scenario = apply_overrides(scenario, options)?;
    let spec = scenario.to_ocp_spec()?;
    let mut planner = options.planner.clone();
    planner.solver.trace = options.trace;
    let report = two_level_solve(&spec, &planner)?;
    let summary = Summary::from_report(&scenario, &report);
    let outcome = RunOutcome {
        scenario,
        spec,
        report,
        summary,
    };
    write_artifacts(out_dir, &outcome, options.trace)?;
    Ok(outcome)
}

fn num(out: &mut String, v: f64) {
    write!(out, ",{v:.16e}").unwrap();
}

pub fn trajectory_csv(report: &SolveReport<f64>) -> String {
    let r = &report.report_level2;
    let mut out = String::from("t,x,y,phi,v,delta,cost_state_J1\n");
    for ((t, s), c) in r.trajectory.times.iter().zip(&r.trajectory.states).zip(&r.cost_state) {
        write!(out, "{t:.16e}").unwrap();
        for v in [s.x, s.y, s.phi, s.v, s.delta, *c] {
            num(&mut out, v);
        }
        out.push('\n');
    }
    out
}

pub fn controls_csv(spec: &OcpSpec<f64>, report: &SolveReport<f64>) -> String {
    let dt = spec.interval_length();
    let mut out = String::from("interval_index,t_start,a,delta_s\n");
    for (k, c) in report.report_level2.controls.iter().enumerate() {
        write!(out, "{k}").unwrap();
        for v in [spec.t0 + dt * k as f64, c.accel, c.steer_cmd] {
            num(&mut out, v);
        }
        out.push('\n');
    }
    out
}

pub fn severity_csv(spec: &OcpSpec<f64>, report: &SolveReport<f64>) -> String {
    let r = &report.report_level2;
    let mut out = String::from("t");
    for o in &spec.obstacles {
        write!(out, ",{}", o.id).unwrap();
    }
    out.push_str(",total_rate\n");
    for (t, row) in r.trajectory.times.iter().zip(&r.severity) {
        write!(out, "{t:.16e}").unwrap();
        for &cs in row {
            num(&mut out, cs);
        }
        num(&mut out, row.iter().fold(0.0, |acc, cs| acc + cs * cs));
        out.push('\n');
    }
    out
}

fn write_artifacts(dir: &Path, outcome: &RunOutcome, trace: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let report = &outcome.report;
    fs::write(dir.join("trajectory.csv"), trajectory_csv(report))?;
    fs::write(dir.join("controls.csv"), controls_csv(&outcome.spec, report))?;
    fs::write(dir.join("severity.csv"), severity_csv(&outcome.spec, report))?;
    let summary = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
    fs::write(dir.join("summary.json"), summary + "\n")?;
    fs::write(dir.join("scenario.json"), outcome.scenario.to_json() + "\n")?;
    if trace {
        for (name, level) in [("trace_level1.csv", &report.level1), ("trace_level2.csv", &report.level2)] {
            let mut buf = Vec::new();
            write_trace_csv(&level.result.trace, &mut buf)?;
            fs::write(dir.join(name), buf)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub v: f64,
    pub delta: f64,
    pub cost_state: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlRow {
    pub index: usize,
    pub t_start: f64,
    pub accel: f64,
    pub steer_cmd: f64,
}

/// A run directory read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub trajectory: Vec<TrajectoryRow>,
    pub controls: Vec<ControlRow>,
    pub severity_ids: Vec<String>,
    /// `severity[node]` holds one value per id, then the total rate.
    pub severity: Vec<Vec<f64>>,
    pub summary: Summary,
    pub scenario: Scenario,
}

fn read_csv(dir: &Path, name: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(dir.join(name))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| artifact_error(name, "empty file"))?
        .split(',')
        .map(String::from)
        .collect::<Vec<_>>();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(String::from).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    if let Some(i) = rows.iter().position(|r| r.len() != header.len()) {
        return Err(artifact_error(name, &format!("row {} has {} fields, header has {}", i + 1, rows[i].len(), header.len())));
    }
    Ok((header, rows))
}

fn artifact_error(file: &str, message: &str) -> Error {
    Error::Artifact {
        file: file.to_string(),
        message: message.to_string(),
    }
}

fn field<T: std::str::FromStr>(file: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| artifact_error(file, &format!("cannot parse {s:?}")))
}

fn expect_header(file: &str, header: &[String], expected: &[&str]) -> Result<()> {
    if header != expected {
        return Err(artifact_error(file, &format!("header {header:?}, expected {expected:?}")));
    }
    Ok(())
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> Result<Self> {
        let f = "trajectory.csv";
        let (header, rows) = read_csv(dir, f)?;
        expect_header(f, &header, &["t", "x", "y", "phi", "v", "delta", "cost_state_J1"])?;
        let trajectory = rows
            .iter()
            .map(|r| {
                let v = r.iter().map(|s| field::<f64>(f, s)).collect::<Result<Vec<_>>>()?;
                Ok(TrajectoryRow {
                    t: v[0],
                    x: v[1],
                    y: v[2],
                    phi: v[3],
                    v: v[4],
                    delta: v[5],
                    cost_state: v[6],
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let f = "controls.csv";
        let (header, rows) = read_csv(dir, f)?;
        expect_header(f, &header, &["interval_index", "t_start", "a", "delta_s"])?;
        let controls = rows
            .iter()
            .map(|r| {
                Ok(ControlRow {
                    index: field(f, &r[0])?,
                    t_start: field(f, &r[1])?,
                    accel: field(f, &r[2])?,
                    steer_cmd: field(f, &r[3])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let f = "severity.csv";
        let (header, rows) = read_csv(dir, f)?;
        if header.len() < 2 || header[0] != "t" || header[header.len() - 1] != "total_rate" {
            return Err(artifact_error(f, "header must be t,<ids>,total_rate"));
        }
        let severity_ids = header[1..header.len() - 1].to_vec();
        let severity = rows
            .iter()
            .map(|r| r[1..].iter().map(|s| field::<f64>(f, s)).collect())
            .collect::<Result<Vec<_>>>()?;
        if severity.len() != trajectory.len() {
            return Err(artifact_error(f, "row count differs from trajectory.csv"));
        }

        let summary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)
            .map_err(|e| artifact_error("summary.json", &e.to_string()))?;
        let scenario = parse_scenario(&fs::read_to_string(dir.join("scenario.json"))?)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            trajectory,
            controls,
            severity_ids,
            severity,
            summary,
            scenario,
        })
    }

    /// `J1` as recorded by the cost state at the final node.
    pub fn j1_from_csv(&self) -> f64 {
        self.trajectory.last().map_or(0.0, |r| r.cost_state)
    }

    /// `J2` recomputed from the control commands.
    pub fn j2_from_csv(&self) -> Result<f64> {
        let dt = self.scenario.to_ocp_spec()?.interval_length();
        Ok(self.controls.iter().fold(0.0, |acc, c| acc + c.steer_cmd * c.steer_cmd * dt))
    }
}

/// Closest approach of one path to one obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Passage {
    /// Time of the smallest centre distance.
    pub t: f64,
    /// Smallest distance from the ego reference point to the obstacle centre.
    pub center_clearance: f64,
    /// Smallest signed distance to the core boundary (negative inside).
    pub core_clearance: f64,
    /// `+1` if the obstacle is on the ego's left at closest approach, `-1`
    /// if on its right, `0` if dead ahead.
    pub side: i8,
}

/// Signed distance from a world point to the obstacle's core at time `t`.
pub fn core_clearance(obstacle: &Obstacle<f64>, t: f64, x: f64, y: f64) -> f64 {
    let (px, py) = to_obstacle_frame(t, x, y, &obstacle.motion);
    let (a, b) = (obstacle.shape.half_length_a, obstacle.shape.half_width_b);
    match obstacle.shape.kind {
        ShapeKind::Rectangle => {
            let (dx, dy) = (px.abs() - a, py.abs() - b);
            if dx <= 0.0 && dy <= 0.0 {
                dx.max(dy)
            } else {
                dx.max(0.0).hypot(dy.max(0.0))
            }
        }
        ShapeKind::Circle => ellipse_distance(a, b, px, py),
    }
}

/// Signed distance from `(x, y)` to the ellipse with semi-axes `a`, `b`
/// (negative inside), by bisection on the normal-line parameter.
fn ellipse_distance(a: f64, b: f64, x: f64, y: f64) -> f64 {
    let (mut e0, mut e1, mut y0, mut y1) = (a, b, x.abs(), y.abs());
    if e0 < e1 {
        std::mem::swap(&mut e0, &mut e1);
        std::mem::swap(&mut y0, &mut y1);
    }
    let inside = (y0 / e0).powi(2) + (y1 / e1).powi(2) < 1.0;
    let dist = if e0 == e1 {
        (y0.hypot(y1) - e0).abs()
    } else if y1 > 0.0 {
        if y0 > 0.0 {
            let (z0, z1) = (y0 / e0, y1 / e1);
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g == 0.0 {
                0.0
            } else {
                let r0 = (e0 / e1).powi(2);
                let n0 = r0 * z0;
                let (mut s0, mut s1) = (z1 - 1.0, if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 });
                let mut s = 0.0;
                for _ in 0..200 {
                    s = 0.5 * (s0 + s1);
                    if s == s0 || s == s1 {
                        break;
                    }
                    let g = (n0 / (s + r0)).powi(2) + (z1 / (s + 1.0)).powi(2) - 1.0;
                    if g > 0.0 {
                        s0 = s;
                    } else if g < 0.0 {
                        s1 = s;
                    } else {
                        break;
                    }
                }
                let (x0, x1) = (r0 * y0 / (s + r0), y1 / (s + 1.0));
                (x0 - y0).hypot(x1 - y1)
            }
        } else {
            (y1 - e1).abs()
        }
    } else {
        let (numer, denom) = (e0 * y0, e0 * e0 - e1 * e1);
        if numer < denom {
            let xde = numer / denom;
            let (x0, x1) = (e0 * xde, e1 * (1.0 - xde * xde).sqrt());
            (x0 - y0).hypot(x1)
        } else {
            (y0 - e0).abs()
        }
    };
    if inside {
        -dist
    } else {
        dist
    }
}

/// Closest approach of the recorded path to every obstacle of its scenario.
pub fn passages(artifacts: &RunArtifacts) -> Result<Vec<(String, Passage)>> {
    let obstacles = artifacts.scenario.obstacles()?;
    Ok(obstacles
        .iter()
        .map(|o| {
            let mut best: Option<(f64, &TrajectoryRow)> = None;
            let mut core = f64::INFINITY;
            for r in &artifacts.trajectory {
                let (cx, cy) = o.motion.center(r.t);
                let d = (r.x - cx).hypot(r.y - cy);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, r));
                }
                core = core.min(core_clearance(o, r.t, r.x, r.y));
            }
            let passage = match best {
                Some((d, r)) => {
                    let (cx, cy) = o.motion.center(r.t);
                    let cross = r.phi.cos() * (cy - r.y) - r.phi.sin() * (cx - r.x);
                    Passage {
                        t: r.t,
                        center_clearance: d,
                        core_clearance: core,
                        side: if cross > 0.0 {
                            1
                        } else if cross < 0.0 {
                            -1
                        } else {
                            0
                        },
                    }
                }
                None => Passage {
                    t: f64::NAN,
                    center_clearance: f64::INFINITY,
                    core_clearance: f64::INFINITY,
                    side: 0,
                },
            };
            (o.id.clone(), passage)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstacleComparison {
    pub id: String,
    pub a: Option<Passage>,
    pub b: Option<Passage>,
    /// `b − a` of the centre clearance, when both runs have the obstacle.
    pub delta_center_clearance: Option<f64>,
    pub delta_core_clearance: Option<f64>,
    pub side_flipped: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub obstacles: Vec<ObstacleComparison>,
    /// `J1(z2*)` of `b` minus that of `a`.
    pub delta_j1: f64,
    /// `J2(z2*)` of `b` minus that of `a`.
    pub delta_j2: f64,
}

impl Comparison {
    pub fn get(&self, id: &str) -> Option<&ObstacleComparison> {
        self.obstacles.iter().find(|o| o.id == id)
    }
}

/// Per-obstacle comparison of two runs on the same time grid. Obstacles are
/// matched by id; those present in only one run have `None` on the other side.
pub fn compare(a: &RunArtifacts, b: &RunArtifacts) -> Result<Comparison> {
    let same_grid = a.trajectory.len() == b.trajectory.len()
        && a
            .trajectory
            .iter()
            .zip(&b.trajectory)
            .all(|(p, q)| (p.t - q.t).abs() <= 1e-12 * (1.0 + p.t.abs()));
    if !same_grid {
        return Err(Error::GridMismatch(format!(
            "{} has {} nodes, {} has {} nodes or different times",
            a.dir.display(),
            a.trajectory.len(),
            b.dir.display(),
            b.trajectory.len()
        )));
    }
    let pa = passages(a)?;
    let pb = passages(b)?;
    let mut ids: Vec<&String> = pa.iter().map(|(id, _)| id).collect();
    ids.extend(pb.iter().map(|(id, _)| id).filter(|id| !pa.iter().any(|(i, _)| i == *id)));
    let find = |list: &[(String, Passage)], id: &str| list.iter().find(|(i, _)| i == id).map(|(_, p)| *p);
    let obstacles = ids
        .into_iter()
        .map(|id| {
            let (x, y) = (find(&pa, id), find(&pb, id));
            let both = x.zip(y);
            ObstacleComparison {
                id: id.clone(),
                a: x,
                b: y,
                delta_center_clearance: both.map(|(p, q)| q.center_clearance - p.center_clearance),
                delta_core_clearance: both.map(|(p, q)| q.core_clearance - p.core_clearance),
                side_flipped: both.map(|(p, q)| p.side * q.side < 0),
            }
        })
        .collect();
    Ok(Comparison {
        obstacles,
        delta_j1: b.summary.j1_at_z2 - a.summary.j1_at_z2,
        delta_j2: b.summary.j2_level2 - a.summary.j2_level2,
    })
}

/// Exit status for a finished run: 0 on success, 2 on solver diagnostics.
pub fn exit_code(summary: &Summary) -> i32 {
    if summary.success() {
        0
    } else {
        2
    }
}

/// Severity values of `obstacles` along recorded rows, for re-deriving the
/// severity CSV from the trajectory.
pub fn severity_rows(obstacles: &[Obstacle<f64>], rows: &[TrajectoryRow]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let state = crate::vehicle_model::VehicleState::new(r.x, r.y, r.phi, r.v, r.delta);
            severities(r.t, &state, obstacles).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::severity_field::{ObstacleMotion, ShapeParams};

    const EMPTY: &str = r#"{
        "name": "empty",
        "ego": {"x": 50, "y": 1.75, "v": 10},
        "ocp": {"num_intervals": 8},
        "obstacles": []
    }"#;

    const ONE_PEDESTRIAN: &str = r#"{
        "name": "one pedestrian",
        "ego": {"x": 50, "y": 1.75, "v": 10},
        "ocp": {"num_intervals": 10, "a_min": -0.5, "a_max": 0.5},
        "obstacles": [
            {"id": "p", "class": "pedestrian", "motion": {"x0": 32, "y0": 1.9, "heading0": 0, "speed": 0}}
        ]
    }"#;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ellipse_distance_examples() {
        // circle
        assert!(close(ellipse_distance(2.0, 2.0, 3.0, 4.0), 3.0, 1e-12));
        assert!(close(ellipse_distance(2.0, 2.0, 0.0, 1.0), -1.0, 1e-12));
        // on the axes
        assert!(close(ellipse_distance(3.0, 1.0, 5.0, 0.0), 2.0, 1e-12));
        assert!(close(ellipse_distance(3.0, 1.0, 0.0, -4.0), 3.0, 1e-12));
        assert!(close(ellipse_distance(1.0, 3.0, 0.0, 4.0), 1.0, 1e-12));
        // on the boundary
        let th: f64 = 0.7;
        assert!(close(ellipse_distance(3.0, 1.0, 3.0 * th.cos(), th.sin()), 0.0, 1e-12));
        // off-axis: the foot point lies on the ellipse and the offset is normal to it
        let (a, b, x, y) = (3.0, 1.0, 2.5, 2.0);
        let d = ellipse_distance(a, b, x, y);
        let best = (0..200_000)
            .map(|k| {
                let t = k as f64 / 200_000.0 * std::f64::consts::FRAC_PI_2;
                (a * t.cos() - x).hypot(b * t.sin() - y)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(close(d, best, 1e-9), "{d} vs {best}");
    }

    #[test]
    fn box_clearance_examples() {
        let car = Obstacle::new(
            "car",
            ShapeParams::new(ShapeKind::Rectangle, 2.0, 1.0, 0.5).unwrap(),
            ObstacleMotion::stationary(10.0, 0.0, 0.0),
            20.0,
        )
        .unwrap();
        assert!(close(core_clearance(&car, 0.0, 10.0, 4.0), 3.0, 1e-12));
        assert!(close(core_clearance(&car, 0.0, 15.0, 5.0), 5.0, 1e-12));
        assert!(close(core_clearance(&car, 0.0, 10.5, 0.0), -1.0, 1e-12));
        let turned = Obstacle::new(
            "car",
            ShapeParams::new(ShapeKind::Rectangle, 2.0, 1.0, 0.5).unwrap(),
            ObstacleMotion::stationary(10.0, 0.0, std::f64::consts::FRAC_PI_2),
            20.0,
        )
        .unwrap();
        assert!(close(core_clearance(&turned, 0.0, 10.0, 4.0), 2.0, 1e-12));
    }

    fn fake_artifacts(y_offset: f64, scenario: &Scenario) -> RunArtifacts {
        let trajectory = (0..=40)
            .map(|k| {
                let t = k as f64 * 0.1;
                TrajectoryRow {
                    t,
                    x: 50.0 - 10.0 * t,
                    y: 1.75 + y_offset,
                    phi: std::f64::consts::PI,
                    v: 10.0,
                    delta: 0.0,
                    cost_state: 0.0,
                }
            })
            .collect::<Vec<_>>();
        let n = trajectory.len();
        RunArtifacts {
            dir: PathBuf::from("fake"),
            trajectory,
            controls: vec![],
            severity_ids: vec![],
            severity: vec![vec![]; n],
            summary: Summary {
                scenario: scenario.name.clone(),
                setting: 1,
                j1_star: 0.0,
                j2_level1: 0.0,
                j2_level2: 0.0,
                j1_at_z2: 0.0,
                epsilon: 0.0,
                budget_satisfied: true,
                converged: true,
                level1: LevelSummary {
                    status: "converged".into(),
                    outer_iterations: 1,
                    inner_iterations: 0,
                    function_evaluations: 1,
                    projected_gradient_norm: 0.0,
                    max_violation: 0.0,
                },
                level2: LevelSummary {
                    status: "converged".into(),
                    outer_iterations: 1,
                    inner_iterations: 0,
                    function_evaluations: 1,
                    projected_gradient_norm: 0.0,
                    max_violation: 0.0,
                },
                starts: 1,
                selected_start: 0,
                wall_time_seconds: 0.0,
            },
            scenario: scenario.clone(),
        }
    }

    #[test]
    fn lateral_shift_shows_up_as_clearance_difference() {
        let scenario = parse_scenario(ONE_PEDESTRIAN).unwrap();
        let a = fake_artifacts(0.0, &scenario);
        let b = fake_artifacts(-1.25, &scenario);
        let c = compare(&a, &b).unwrap();
        let p = c.get("p").unwrap();
        // the path passes through x = 32 exactly, so closest approach is lateral
        assert!(close(p.delta_center_clearance.unwrap(), 1.25, 1e-12));
        assert!(close(p.delta_core_clearance.unwrap(), 1.25, 1e-12));
        assert_eq!(p.a.unwrap().side, -1);
        assert_eq!(p.side_flipped, Some(false));
        let flipped = compare(&a, &fake_artifacts(0.5, &scenario)).unwrap();
        assert_eq!(flipped.get("p").unwrap().side_flipped, Some(true));
    }

    #[test]
    fn identical_runs_compare_to_zero() {
        let scenario = parse_scenario(ONE_PEDESTRIAN).unwrap();
        let a = fake_artifacts(0.3, &scenario);
        let c = compare(&a, &a).unwrap();
        assert_eq!((c.delta_j1, c.delta_j2), (0.0, 0.0));
        for o in &c.obstacles {
            assert_eq!(o.delta_center_clearance, Some(0.0));
            assert_eq!(o.delta_core_clearance, Some(0.0));
        }
    }

    #[test]
    fn grid_mismatch_is_an_input_error() {
        let scenario = parse_scenario(ONE_PEDESTRIAN).unwrap();
        let a = fake_artifacts(0.0, &scenario);
        let mut b = a.clone();
        b.trajectory.pop();
        assert!(matches!(compare(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn empty_scenario_drives_straight() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = parse_scenario(EMPTY).unwrap();
        let out = run(&scenario, dir.path(), &RunOptions::default()).unwrap();
        assert_eq!(out.summary.j1_star, 0.0);
        assert_eq!(out.summary.j2_level2, 0.0);
        assert!(out.summary.success());
        let art = RunArtifacts::load(dir.path()).unwrap();
        assert_eq!(art.trajectory.len(), 8 * 4 + 1);
        let last = art.trajectory.last().unwrap();
        assert!(close(last.x, 10.0, 1e-9) && close(last.y, 1.75, 1e-12));
        assert!(art.severity_ids.is_empty());
    }

    #[test]
    fn artifacts_are_consistent_and_repeatable() {
        let scenario = parse_scenario(ONE_PEDESTRIAN).unwrap();
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let options = RunOptions {
            trace: true,
            ..RunOptions::default()
        };
        let out = run(&scenario, d1.path(), &options).unwrap();
        run(&scenario, d2.path(), &options).unwrap();
        for f in ["trajectory.csv", "controls.csv", "severity.csv", "scenario.json", "trace_level1.csv"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
        let art = RunArtifacts::load(d1.path()).unwrap();
        assert_eq!(art.scenario, out.scenario);
        assert_eq!(art.summary, out.summary);
        assert_eq!(art.j1_from_csv(), art.summary.j1_at_z2);
        assert_eq!(art.j2_from_csv().unwrap(), art.summary.j2_level2);
        assert_eq!(art.trajectory.len(), 10 * 4 + 1);
        assert_eq!(art.controls.len(), 10);
        assert_eq!(art.severity_ids, vec!["p".to_string()]);
        let recomputed = severity_rows(&art.scenario.obstacles().unwrap(), &art.trajectory);
        for (row, again) in art.severity.iter().zip(&recomputed) {
            assert!(close(row[0], again[0], 1e-9 * (1.0 + row[0])));
        }
    }

    #[test]
    fn overrides_reach_the_solved_scenario() {
        let scenario = parse_scenario(ONE_PEDESTRIAN).unwrap();
        let options = RunOptions {
            epsilon: Some(0.5),
            intervals: Some(6),
            setting: Some(2),
            ..RunOptions::default()
        };
        let s = apply_overrides(&scenario, &options).unwrap();
        assert_eq!(s.ocp.epsilon, EpsilonSpec::Absolute(0.5));
        assert_eq!(s.ocp.num_intervals, 6);
        assert_eq!(s.setting, 2);
        let bad = RunOptions {
            setting: Some(3),
            ..RunOptions::default()
        };
        assert!(apply_overrides(&scenario, &bad).is_err());
    }
}
