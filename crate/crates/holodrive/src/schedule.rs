//! Piecewise control-angle trajectories theta(t), phi(t).
//!
//! A schedule is an ordered list of segments, each ramping (theta, phi)
//! between fixed endpoints over a positive duration. Sampling a schedule
//! yields a [`ControlPoint`]: the instantaneous angles, their rates, and the
//! drive amplitude, which downstream modules turn into Hamiltonians.

use crate::error::{Error, Result};

/// The three gate families. Bit-phase and phase act on one logical qubit in
/// the four-qubit code; the controlled-phase gate acts on two logical qubits
/// in the eight-qubit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    BitPhase,
    Phase,
    ControlledPhase,
}

impl GateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GateKind::BitPhase => "bitphase",
            GateKind::Phase => "phase",
            GateKind::ControlledPhase => "cp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bitphase" => Ok(GateKind::BitPhase),
            "phase" => Ok(GateKind::Phase),
            "cp" => Ok(GateKind::ControlledPhase),
            other => Err(Error::InvalidParameter(format!(
                "unknown gate kind `{other}` (expected bitphase | phase | cp)"
            ))),
        }
    }

    /// Number of schedule legs: the bit-phase loop needs a closing leg
    /// because its dark frame at theta = 0 still depends on phi.
    pub fn segment_count(self) -> usize {
        match self {
            GateKind::BitPhase => 4,
            GateKind::Phase | GateKind::ControlledPhase => 3,
        }
    }
}

impl std::fmt::Display for GateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ramp shape within one segment, as a function of normalized time x in
/// [0, 1]. Cosine ramps have zero slope at both ends, so angle rates (and
/// with them the counterdiabatic field) vanish at every segment boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ramp {
    Cosine,
    Linear,
}

impl Ramp {
    /// Returns (s(x), ds/dx).
    fn shape(self, x: f64) -> (f64, f64) {
        match self {
            Ramp::Cosine => {
                let (sin, cos) = (std::f64::consts::PI * x).sin_cos();
                ((1.0 - cos) / 2.0, std::f64::consts::FRAC_PI_2 * sin)
            }
            Ramp::Linear => (x, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ramp::Cosine => "cosine",
            Ramp::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Ramp::Cosine),
            "linear" => Ok(Ramp::Linear),
            other => Err(Error::InvalidParameter(format!(
                "unknown ramp `{other}` (expected cosine | linear)"
            ))),
        }
    }
}

/// Instantaneous control sample: angles, angle rates, drive amplitude.
/// Angles are radians; rates rad per time unit; `lambda_prime` is the drive
/// amplitude in angular-frequency units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    pub theta: f64,
    pub phi: f64,
    pub theta_dot: f64,
    pub phi_dot: f64,
    pub lambda_prime: f64,
}

impl ControlPoint {
    pub fn new(
        theta: f64,
        phi: f64,
        theta_dot: f64,
        phi_dot: f64,
        lambda_prime: f64,
    ) -> Result<Self> {
        if !(0.0..=std::f64::consts::PI).contains(&theta) {
            return Err(Error::InvalidParameter(format!(
                "theta = {theta} outside [0, pi]"
            )));
        }
        if !(0.0..std::f64::consts::TAU).contains(&phi) {
            return Err(Error::InvalidParameter(format!(
                "phi = {phi} outside [0, 2 pi)"
            )));
        }
        if !(lambda_prime >= 0.0) || !lambda_prime.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda_prime = {lambda_prime} must be finite and >= 0"
            )));
        }
        if !theta_dot.is_finite() || !phi_dot.is_finite() {
            return Err(Error::InvalidParameter("non-finite angle rate".into()));
        }
        Ok(Self {
            theta,
            phi,
            theta_dot,
            phi_dot,
            lambda_prime,
        })
    }
}

/// One leg of a schedule: both angles ramp from their start to their end
/// values over `duration` with the same ramp shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub theta_start: f64,
    pub theta_end: f64,
    pub phi_start: f64,
    pub phi_end: f64,
    pub duration: f64,
    pub ramp: Ramp,
}

impl Segment {
    /// Sample at local time tau in [0, duration].
    fn sample(&self, tau: f64, lambda_prime: f64) -> ControlPoint {
        let x = (tau / self.duration).clamp(0.0, 1.0);
        let (s, ds) = self.ramp.shape(x);
        ControlPoint {
            theta: self.theta_start + (self.theta_end - self.theta_start) * s,
            phi: self.phi_start + (self.phi_end - self.phi_start) * s,
            theta_dot: (self.theta_end - self.theta_start) * ds / self.duration,
            phi_dot: (self.phi_end - self.phi_start) * ds / self.duration,
            lambda_prime,
        }
    }
}

/// Angle-continuity tolerance across segment boundaries.
const CONTINUITY_TOL: f64 = 1e-12;

/// A validated piecewise control trajectory with a fixed drive amplitude.
/// An empty segment list is the zero-duration identity schedule (no drive).
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSchedule {
    segments: Vec<Segment>,
    lambda_prime: f64,
}

impl PulseSchedule {
    pub fn new(segments: Vec<Segment>, lambda_prime: f64) -> Result<Self> {
        if !(lambda_prime >= 0.0) || !lambda_prime.is_finite() {
            return Err(Error::InvalidSchedule(format!(
                "lambda_prime = {lambda_prime} must be finite and >= 0"
            )));
        }
        for (i, seg) in segments.iter().enumerate() {
            if !(seg.duration > 0.0) || !seg.duration.is_finite() {
                return Err(Error::InvalidSchedule(format!(
                    "segment {i} duration {} must be finite and > 0",
                    seg.duration
                )));
            }
            for (name, v) in [
                ("theta_start", seg.theta_start),
                ("theta_end", seg.theta_end),
            ] {
                if !(0.0..=std::f64::consts::PI).contains(&v) {
                    return Err(Error::InvalidSchedule(format!(
                        "segment {i} {name} = {v} outside [0, pi]"
                    )));
                }
            }
            for (name, v) in [("phi_start", seg.phi_start), ("phi_end", seg.phi_end)] {
                if !(0.0..std::f64::consts::TAU).contains(&v) {
                    return Err(Error::InvalidSchedule(format!(
                        "segment {i} {name} = {v} outside [0, 2 pi)"
                    )));
                }
            }
            if i > 0 {
                let prev = &segments[i - 1];
                if (prev.theta_end - seg.theta_start).abs() > CONTINUITY_TOL
                    || (prev.phi_end - seg.phi_start).abs() > CONTINUITY_TOL
                {
                    return Err(Error::InvalidSchedule(format!(
                        "angle discontinuity between segments {} and {i}",
                        i - 1
                    )));
                }
            }
        }
        Ok(Self {
            segments,
            lambda_prime,
        })
    }

    /// Zero-duration identity schedule: no segments, no drive applied.
    pub fn identity(lambda_prime: f64) -> Self {
        Self {
            segments: Vec::new(),
            lambda_prime,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn lambda_prime(&self) -> f64 {
        self.lambda_prime
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn min_segment_duration(&self) -> Option<f64> {
        self.segments
            .iter()
            .map(|s| s.duration)
            .min_by(|a, b| a.total_cmp(b))
    }

    /// Boundary times: 0, each internal knot, and the total duration.
    pub fn knot_times(&self) -> Vec<f64> {
        let mut knots = Vec::with_capacity(self.segments.len() + 1);
        let mut acc = 0.0;
        knots.push(0.0);
        for s in &self.segments {
            acc += s.duration;
            knots.push(acc);
        }
        knots
    }

    /// Samples at time t, clamped to [0, total]. Boundary times belong to the
    /// later segment; the identity schedule samples as theta = phi = 0 at rest.
    pub fn sample(&self, t: f64) -> ControlPoint {
        if self.segments.is_empty() {
            return ControlPoint {
                theta: 0.0,
                phi: 0.0,
                theta_dot: 0.0,
                phi_dot: 0.0,
                lambda_prime: self.lambda_prime,
            };
        }
        let mut start = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let end = start + seg.duration;
            let last = i == self.segments.len() - 1;
            if t < end || last {
                return seg.sample((t - start).clamp(0.0, seg.duration), self.lambda_prime);
            }
            start = end;
        }
        unreachable!("segment list nonempty");
    }

    /// Same path, rescaled so all segment durations sum to `total`.
    pub fn with_total_duration(&self, total: f64) -> Result<PulseSchedule> {
        let current = self.total_duration();
        if current == 0.0 {
            return Err(Error::InvalidSchedule(
                "cannot rescale a zero-duration schedule".into(),
            ));
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidSchedule(format!(
                "target duration {total} must be finite and > 0"
            )));
        }
        let k = total / current;
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                duration: s.duration * k,
                ..*s
            })
            .collect();
        PulseSchedule::new(segments, self.lambda_prime)
    }
}

/// Builds the standard loop for a gate kind:
/// - phase / cp: theta 0 -> pi at phi = 0; phi 0 -> phi_c at theta = pi;
///   theta pi -> 0 at phi = phi_c (3 legs);
/// - bitphase: theta 0 -> pi/2 at phi = 0; phi 0 -> phi_c at theta = pi/2;
///   theta pi/2 -> 0 at phi = phi_c; plus the closing leg phi: phi_c -> 0 at
///   theta = 0 (4 legs), which returns the dark frame to the logical basis.
///
/// `durations` must contain one positive entry per leg.
pub fn make_schedule(
    kind: GateKind,
    phi_c: f64,
    durations: &[f64],
    ramp: Ramp,
    lambda_prime: f64,
) -> Result<PulseSchedule> {
    if !(0.0..std::f64::consts::TAU).contains(&phi_c) {
        return Err(Error::InvalidSchedule(format!(
            "phi_c = {phi_c} outside [0, 2 pi)"
        )));
    }
    let n = kind.segment_count();
    if durations.len() != n {
        return Err(Error::InvalidSchedule(format!(
            "{kind} schedule needs {n} durations, got {}",
            durations.len()
        )));
    }
    if let Some(d) = durations.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(Error::InvalidSchedule(format!(
            "non-positive segment duration {d}"
        )));
    }
    let theta_peak = match kind {
        GateKind::BitPhase => std::f64::consts::FRAC_PI_2,
        GateKind::Phase | GateKind::ControlledPhase => std::f64::consts::PI,
    };
    let seg = |ts, te, ps, pe, d| Segment {
        theta_start: ts,
        theta_end: te,
        phi_start: ps,
        phi_end: pe,
        duration: d,
        ramp,
    };
    let mut segments = vec![
        seg(0.0, theta_peak, 0.0, 0.0, durations[0]),
        seg(theta_peak, theta_peak, 0.0, phi_c, durations[1]),
        seg(theta_peak, 0.0, phi_c, phi_c, durations[2]),
    ];
    if kind == GateKind::BitPhase {
        segments.push(seg(0.0, 0.0, phi_c, 0.0, durations[3]));
    }
    PulseSchedule::new(segments, lambda_prime)
}
