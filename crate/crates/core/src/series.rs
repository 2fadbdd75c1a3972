//! Sensor measurement streams (IMU, position) and their CSV formats.

use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: Timestamp,
    /// rad/s
    pub gyro: Vector3<f64>,
    /// Specific force, m/s².
    pub accel: Vector3<f64>,
}

/// One scalar channel of an IMU stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    GyroX,
    GyroY,
    GyroZ,
    AccelX,
    AccelY,
    AccelZ,
}

impl Channel {
    pub fn value(self, s: &ImuSample) -> f64 {
        match self {
            Channel::GyroX => s.gyro.x,
            Channel::GyroY => s.gyro.y,
            Channel::GyroZ => s.gyro.z,
            Channel::AccelX => s.accel.x,
            Channel::AccelY => s.accel.y,
            Channel::AccelZ => s.accel.z,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::GyroX => "gyro_x",
            Channel::GyroY => "gyro_y",
            Channel::GyroZ => "gyro_z",
            Channel::AccelX => "accel_x",
            Channel::AccelY => "accel_y",
            Channel::AccelZ => "accel_z",
        }
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gyro_x" => Channel::GyroX,
            "gyro_y" => Channel::GyroY,
            "gyro_z" => Channel::GyroZ,
            "accel_x" => Channel::AccelX,
            "accel_y" => Channel::AccelY,
            "accel_z" => Channel::AccelZ,
            other => return Err(Error::Parameter(format!("unknown channel `{other}`"))),
        })
    }
}

/// Timestamped gyro + accelerometer samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuSeries {
    pub label: String,
    pub rate_hz: f64,
    samples: Vec<ImuSample>,
}

fn median_spacing_ns(stamps: impl Iterator<Item = Timestamp>) -> Option<f64> {
    let stamps: Vec<_> = stamps.collect();
    if stamps.len() < 2 {
        return None;
    }
    let mut d: Vec<i64> = stamps.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_unstable();
    Some(d[d.len() / 2] as f64)
}

impl ImuSeries {
    /// Validates strict monotonicity and, for two or more samples, that
    /// `rate_hz` is within 20% of the median sample spacing.
    pub fn new(label: impl Into<String>, rate_hz: f64, samples: Vec<ImuSample>) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::Parameter(format!("rate must be positive, got {rate_hz}")));
        }
        check_increasing(samples.iter().map(|s| s.t))?;
        if let Some(med) = median_spacing_ns(samples.iter().map(|s| s.t)) {
            let observed = 1e9 / med;
            if (observed - rate_hz).abs() > 0.2 * rate_hz {
                return Err(Error::Data(format!(
                    "nominal rate {rate_hz} Hz disagrees with median spacing ({observed:.3} Hz)"
                )));
            }
        }
        Ok(ImuSeries { label: label.into(), rate_hz, samples })
    }

    /// Nominal rate taken from the median spacing.
    pub fn with_inferred_rate(label: impl Into<String>, samples: Vec<ImuSample>) -> Result<Self> {
        let med = median_spacing_ns(samples.iter().map(|s| s.t))
            .ok_or_else(|| Error::Data("need at least two samples to infer a rate".into()))?;
        ImuSeries::new(label, 1e9 / med, samples)
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start(&self) -> Option<Timestamp> {
        self.samples.first().map(|s| s.t)
    }

    pub fn end(&self) -> Option<Timestamp> {
        self.samples.last().map(|s| s.t)
    }

    pub fn times_secs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t.as_secs_f64()).collect()
    }

    pub fn channel(&self, ch: Channel) -> Vec<f64> {
        self.samples.iter().map(|s| ch.value(s)).collect()
    }

    /// Samples with `t` in `[from, to]`.
    pub fn slice(&self, from: Timestamp, to: Timestamp) -> &[ImuSample] {
        let a = self.samples.partition_point(|s| s.t < from);
        let b = self.samples.partition_point(|s| s.t <= to);
        &self.samples[a..b.max(a)]
    }

    /// Applies `f` to every sample; timestamps must stay strictly increasing.
    pub fn map_samples(&self, f: impl FnMut(&ImuSample) -> ImuSample) -> Result<ImuSeries> {
        let samples: Vec<_> = self.samples.iter().map(f).collect();
        check_increasing(samples.iter().map(|s| s.t))?;
        Ok(ImuSeries { label: self.label.clone(), rate_hz: self.rate_hz, samples })
    }

    /// Linear interpolation of the sample at `t`, clamped to the end samples.
    pub fn sample_at(&self, t: Timestamp) -> ImuSample {
        let s = &self.samples;
        let i = s.partition_point(|x| x.t <= t);
        if i == 0 {
            return ImuSample { t, ..s[0] };
        }
        if i == s.len() {
            return ImuSample { t, ..s[s.len() - 1] };
        }
        let (a, b) = (&s[i - 1], &s[i]);
        let w = (t - a.t) as f64 / (b.t - a.t) as f64;
        ImuSample {
            t,
            gyro: a.gyro * (1.0 - w) + b.gyro * w,
            accel: a.accel * (1.0 - w) + b.accel * w,
        }
    }
}

fn check_increasing(stamps: impl Iterator<Item = Timestamp>) -> Result<()> {
    let mut prev: Option<Timestamp> = None;
    for t in stamps {
        if let Some(p) = prev {
            if t <= p {
                return Err(Error::Data(format!("timestamps must strictly increase ({p} then {t})")));
            }
        }
        prev = Some(t);
    }
    Ok(())
}

pub const IMU_CSV_HEADER: &str = "t_ns,gyro_x,gyro_y,gyro_z,accel_x,accel_y,accel_z";
pub const POSITION_CSV_HEADER: &str = "t_ns,x,y,z";

fn parse_row<const N: usize>(line: &str, lineno: usize) -> Result<(i64, [f64; N])> {
    let mut it = line.split(',').map(str::trim);
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let t: i64 = it
        .next()
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| err("bad t_ns".into()))?;
    let mut v = [0.0; N];
    for (k, slot) in v.iter_mut().enumerate() {
        let f = it.next().ok_or_else(|| err(format!("missing column {}", k + 2)))?;
        *slot = f.parse().map_err(|_| err(format!("bad number `{f}`")))?;
    }
    if it.next().is_some() {
        return Err(err(format!("expected {} columns", N + 1)));
    }
    Ok((t, v))
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) => {
            let t = s.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("t_ns") {
                None
            } else {
                Some((i + 1, Ok(t.to_string())))
            }
        }
        Err(e) => Some((i + 1, Err(e))),
    })
}

pub fn read_imu_csv<R: BufRead>(reader: R, label: &str) -> Result<ImuSeries> {
    let mut samples = Vec::new();
    for (lineno, line) in data_lines(reader) {
        let (t, v) = parse_row::<6>(&line?, lineno)?;
        samples.push(ImuSample {
            t: Timestamp(t),
            gyro: Vector3::new(v[0], v[1], v[2]),
            accel: Vector3::new(v[3], v[4], v[5]),
        });
    }
    ImuSeries::with_inferred_rate(label, samples)
}

pub fn write_imu_csv<W: Write>(series: &ImuSeries, mut w: W) -> Result<()> {
    writeln!(w, "{IMU_CSV_HEADER}")?;
    for s in series.samples() {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.t.nanos(),
            s.gyro.x,
            s.gyro.y,
            s.gyro.z,
            s.accel.x,
            s.accel.y,
            s.accel.z
        )?;
    }
    Ok(())
}

/// Timestamped 3-D positions, e.g. from a total station tracking a prism.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionSeries {
    pub frame: String,
    /// Isotropic measurement noise, m.
    pub sigma_m: f64,
    samples: Vec<(Timestamp, Vector3<f64>)>,
}

impl PositionSeries {
    pub fn new(frame: impl Into<String>, sigma_m: f64, samples: Vec<(Timestamp, Vector3<f64>)>) -> Result<Self> {
        if !(sigma_m.is_finite() && sigma_m >= 0.0) {
            return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma_m}")));
        }
        check_increasing(samples.iter().map(|s| s.0))?;
        Ok(PositionSeries { frame: frame.into(), sigma_m, samples })
    }

    pub fn samples(&self) -> &[(Timestamp, Vector3<f64>)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn map_samples(
        &self,
        f: impl FnMut(&(Timestamp, Vector3<f64>)) -> (Timestamp, Vector3<f64>),
    ) -> Result<PositionSeries> {
        PositionSeries::new(self.frame.clone(), self.sigma_m, self.samples.iter().map(f).collect())
    }

    /// Median inter-sample spacing in seconds.
    pub fn nominal_period_s(&self) -> Option<f64> {
        median_spacing_ns(self.samples.iter().map(|s| s.0)).map(|ns| ns * 1e-9)
    }
}

pub fn read_position_csv<R: BufRead>(reader: R, frame: &str, sigma_m: f64) -> Result<PositionSeries> {
    let mut samples = Vec::new();
    for (lineno, line) in data_lines(reader) {
        let (t, v) = parse_row::<3>(&line?, lineno)?;
        samples.push((Timestamp(t), Vector3::new(v[0], v[1], v[2])));
    }
    PositionSeries::new(frame, sigma_m, samples)
}

pub fn write_position_csv<W: Write>(series: &PositionSeries, mut w: W) -> Result<()> {
    writeln!(w, "{POSITION_CSV_HEADER}")?;
    for (t, p) in series.samples() {
        writeln!(w, "{},{},{},{}", t.nanos(), p.x, p.y, p.z)?;
    }
    Ok(())
}
