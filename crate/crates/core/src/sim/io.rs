//! CSV readers and writers. Floats are written with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{EpochObservations, SatObservation, Trajectory, TrajectoryPoint};
use crate::error::{Error, Result};
use crate::geo::EcefCoord;
use crate::nav::NavState;
use crate::preint::{ImuSample, Rotation};

pub const IMU_HEADER: &str = "t,gx,gy,gz,ax,ay,az";
pub const OBS_HEADER: &str = "t,sat_id,sat_x,sat_y,sat_z,pseudorange,sigma";
pub const TRAJECTORY_HEADER: &str = "t,x,y,z,vx,vy,vz,qw,qx,qy,qz";

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Data rows as `(line number, fields)`, after checking the header.
fn rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = fs::read_to_string(path)?;
    let expected = header.split(',').count();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        None => return Ok(Vec::new()),
        Some((_, h)) if h == header => {}
        Some((n, h)) => {
            return Err(parse_err(path, n, format!("expected header `{header}`, found `{h}`")))
        }
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(parse_err(
                path,
                n,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        let values = fields
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, n, format!("invalid number `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((n, values));
    }
    Ok(out)
}

fn check_increasing(path: &Path, line: usize, prev: Option<f64>, t: f64, strict: bool) -> Result<()> {
    if let Some(p) = prev {
        if t < p || (strict && t == p) {
            return Err(parse_err(path, line, format!("timestamp {t} does not follow {p}")));
        }
    }
    Ok(())
}

pub fn load_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    let mut out: Vec<ImuSample> = Vec::new();
    for (n, v) in rows(path, IMU_HEADER)? {
        check_increasing(path, n, out.last().map(|s| s.t), v[0], true)?;
        out.push(ImuSample {
            t: v[0],
            gyro: Vector3::new(v[1], v[2], v[3]),
            accel: Vector3::new(v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let mut s = String::with_capacity(samples.len() * 170);
    writeln!(s, "{IMU_HEADER}").unwrap();
    for x in samples {
        let fields = [x.t, x.gyro.x, x.gyro.y, x.gyro.z, x.accel.x, x.accel.y, x.accel.z];
        push_row(&mut s, &fields);
    }
    fs::write(path, s)?;
    Ok(())
}

fn push_row(s: &mut String, fields: &[f64]) {
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&fmt_f64(*f));
    }
    s.push('\n');
}

/// Observations grouped into epochs by identical timestamps.
pub fn load_obs_csv(path: &Path) -> Result<Vec<EpochObservations>> {
    let mut out: Vec<EpochObservations> = Vec::new();
    for (n, v) in rows(path, OBS_HEADER)? {
        let t = v[0];
        check_increasing(path, n, out.last().map(|e| e.t), t, false)?;
        if v[1] < 0.0 || v[1].fract() != 0.0 || v[1] > u32::MAX as f64 {
            return Err(parse_err(path, n, format!("invalid satellite id {}", v[1])));
        }
        if !(v[6] > 0.0) {
            return Err(parse_err(path, n, format!("sigma must be > 0, got {}", v[6])));
        }
        let obs = SatObservation {
            sat_id: v[1] as u32,
            t,
            sat_position: EcefCoord::new(v[2], v[3], v[4]),
            pseudorange: v[5],
            sigma: v[6],
        };
        match out.last_mut() {
            Some(e) if e.t == t => e.observations.push(obs),
            _ => out.push(EpochObservations {
                t,
                observations: vec![obs],
            }),
        }
    }
    Ok(out)
}

pub fn write_obs_csv(path: &Path, epochs: &[EpochObservations]) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "{OBS_HEADER}").unwrap();
    for e in epochs {
        for o in &e.observations {
            let p = o.sat_position;
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                fmt_f64(o.t),
                o.sat_id,
                fmt_f64(p.x),
                fmt_f64(p.y),
                fmt_f64(p.z),
                fmt_f64(o.pseudorange),
                fmt_f64(o.sigma)
            )
            .unwrap();
        }
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn load_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    for (n, v) in rows(path, TRAJECTORY_HEADER)? {
        check_increasing(path, n, traj.points().last().map(|p| p.t), v[0], true)?;
        let q = Quaternion::new(v[7], v[8], v[9], v[10]);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(parse_err(path, n, format!("quaternion norm {} is not 1", q.norm())));
        }
        let orientation: Rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        traj.push(
            v[0],
            NavState {
                position: Vector3::new(v[1], v[2], v[3]),
                velocity: Vector3::new(v[4], v[5], v[6]),
                orientation,
            },
        )
        .map_err(|e| parse_err(path, n, e.to_string()))?;
    }
    Ok(traj)
}

/// Alias of [`load_trajectory_csv`] for truth files.
pub fn load_truth_csv(path: &Path) -> Result<Trajectory> {
    load_trajectory_csv(path)
}

pub fn write_solution_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "{TRAJECTORY_HEADER}").unwrap();
    for TrajectoryPoint { t, state } in traj.iter() {
        let q = UnitQuaternion::from_rotation_matrix(&state.orientation);
        // Fix the sign so that equal rotations always print identically.
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        let fields = [
            *t,
            state.position.x,
            state.position.y,
            state.position.z,
            state.velocity.x,
            state.velocity.y,
            state.velocity.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        push_row(&mut s, &fields);
    }
    fs::write(path, s)?;
    Ok(())
}

/// Writes `key,value` lines, one per metric, under a `metric,value` header.
pub fn write_metrics(path: &Path, metrics: &[(&str, f64)]) -> Result<()> {
    let mut s = String::from("metric,value\n");
    for (k, v) in metrics {
        writeln!(s, "{k},{}", fmt_f64(*v)).unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}
