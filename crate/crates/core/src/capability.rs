//! Reactive-power capability envelopes of inverter-interfaced generation.
//!
//! PV inverters are bounded by a power-factor cone and by their apparent
//! power rating; doubly fed wind turbines follow a sampled P/Q curve. Both
//! limits are scaled by `(1 - k)` where `k` is the fraction of reactive
//! capability held back for fault ride-through.
//!
//! Only the injection (over-excited) side is used by the controllers. The
//! absorption side is symmetric for PV and exposed through
//! [`Envelope::q_min`] for completeness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Power factor the inverters may operate down to (over- and under-excited).
pub const MIN_POWER_FACTOR: f64 = 0.8;

/// Curve shipped with the crate, normalized to the turbine's apparent rating.
pub const DEFAULT_DFIG_CURVE: &str = include_str!("../data/dfig_capability.txt");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CapabilityError {
    #[error("active output {p} p.u. outside device range [0, {max}] p.u.")]
    OutOfRange { p: f64, max: f64 },
    #[error("reserve coefficient {0} outside [0, 1]")]
    Reserve(f64),
    #[error("invalid capability curve: {0}")]
    Curve(String),
    #[error("capability curve line {line}: {msg}")]
    CurveSyntax { line: usize, msg: String },
}

/// Fraction of reactive capability withheld in normal operation.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ReserveCoefficient(f64);

impl ReserveCoefficient {
    pub const ZERO: ReserveCoefficient = ReserveCoefficient(0.0);
    pub const FULL: ReserveCoefficient = ReserveCoefficient(1.0);

    pub fn new(k: f64) -> Result<Self, CapabilityError> {
        if (0.0..=1.0).contains(&k) {
            Ok(ReserveCoefficient(k))
        } else {
            Err(CapabilityError::Reserve(k))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Share of capability left for loss minimization, `1 - k`.
    pub fn usable(self) -> f64 {
        1.0 - self.0
    }
}

impl TryFrom<f64> for ReserveCoefficient {
    type Error = CapabilityError;

    fn try_from(k: f64) -> Result<Self, Self::Error> {
        ReserveCoefficient::new(k)
    }
}

impl From<ReserveCoefficient> for f64 {
    fn from(k: ReserveCoefficient) -> f64 {
        k.0
    }
}

impl fmt::Display for ReserveCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for ReserveCoefficient {
    type Err = CapabilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let k: f64 = s
            .trim()
            .parse()
            .map_err(|_| CapabilityError::Reserve(f64::NAN))?;
        ReserveCoefficient::new(k)
    }
}

/// PV inverter envelope: power-factor cone intersected with the rating circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvEnvelope {
    pub s_rated: f64,
    pub phi_max: f64,
}

impl PvEnvelope {
    pub fn new(s_rated: f64) -> Self {
        PvEnvelope {
            s_rated,
            phi_max: MIN_POWER_FACTOR.acos(),
        }
    }
}

/// Piecewise-linear P/Q capability curve of a DFIG turbine.
///
/// Samples are stored normalized to the turbine's apparent rating so one
/// curve file can serve machines of different size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfigEnvelope {
    points: Vec<(f64, f64)>,
}

impl DfigEnvelope {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, CapabilityError> {
        if points.len() < 2 {
            return Err(CapabilityError::Curve("need at least two samples".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(CapabilityError::Curve(format!(
                    "P samples must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(p, q)) = points
            .iter()
            .find(|(p, q)| !p.is_finite() || !q.is_finite() || *q < 0.0)
        {
            return Err(CapabilityError::Curve(format!(
                "invalid sample ({p}, {q}); Q_max must be finite and >= 0"
            )));
        }
        Ok(DfigEnvelope { points })
    }

    /// Parses a two-column `P Qmax` text file; `%` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CapabilityError> {
        let mut points = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('%').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(CapabilityError::CurveSyntax {
                    line: i + 1,
                    msg: format!("expected 2 columns, found {}", cols.len()),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| CapabilityError::CurveSyntax {
                    line: i + 1,
                    msg: format!("not a number: {s:?}"),
                })
            };
            points.push((num(cols[0])?, num(cols[1])?));
        }
        DfigEnvelope::new(points)
    }

    pub fn default_curve() -> Self {
        DfigEnvelope::parse(DEFAULT_DFIG_CURVE).expect("bundled DFIG curve is valid")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn p_range(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    /// Linear interpolation of `Q_max` at `p`, in the curve's own units.
    pub fn interpolate(&self, p: f64) -> Result<f64, CapabilityError> {
        let (lo, hi) = self.p_range();
        if !(p >= lo && p <= hi) {
            return Err(CapabilityError::OutOfRange { p, max: hi });
        }
        let i = self.points.partition_point(|&(x, _)| x <= p);
        if i == 0 {
            return Ok(self.points[0].1);
        }
        if i == self.points.len() {
            return Ok(self.points[i - 1].1);
        }
        let (x0, y0) = self.points[i - 1];
        let (x1, y1) = self.points[i];
        if p == x0 {
            return Ok(y0);
        }
        Ok(y0 + (y1 - y0) * (p - x0) / (x1 - x0))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("% P(p.u.)  Qmax(p.u.)\n");
        for (p, q) in &self.points {
            out.push_str(&format!("{p} {q}\n"));
        }
        out
    }
}

/// Pulls values within rounding distance of `[lo, hi]` onto the interval.
fn snap(x: f64, lo: f64, hi: f64) -> f64 {
    let eps = 1e-12 * hi.abs().max(1.0);
    if x > hi && x <= hi + eps {
        hi
    } else if x < lo && x >= lo - eps {
        lo
    } else {
        x
    }
}

/// `(1 - k)`-scaled reactive injection limit of a PV inverter.
///
/// Returns `min((1-k) P tan(phi_max), (1-k) sqrt(S^2 - P^2))`.
pub fn pv_q_limit(
    p_g: f64,
    env: &PvEnvelope,
    k: ReserveCoefficient,
) -> Result<f64, CapabilityError> {
    let p_g = snap(p_g, 0.0, env.s_rated);
    if !(p_g >= 0.0 && p_g <= env.s_rated) {
        return Err(CapabilityError::OutOfRange {
            p: p_g,
            max: env.s_rated,
        });
    }
    let pf_term = p_g * env.phi_max.tan();
    let s_term = (env.s_rated * env.s_rated - p_g * p_g).max(0.0).sqrt();
    Ok(k.usable() * pf_term.min(s_term))
}

/// `(1 - k)`-scaled reactive limit from the DFIG curve, in the curve's units.
pub fn dfig_q_limit(
    p_g: f64,
    env: &DfigEnvelope,
    k: ReserveCoefficient,
) -> Result<f64, CapabilityError> {
    Ok(k.usable() * env.interpolate(p_g)?)
}

/// Capability of one device, in system per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Envelope {
    Pv(PvEnvelope),
    /// Curve normalized to `s_rated`, which is carried alongside.
    Dfig { curve: DfigEnvelope, s_rated: f64 },
}

impl Envelope {
    /// Reactive injection limit at active output `p` (system p.u.).
    pub fn q_limit(&self, p: f64, k: ReserveCoefficient) -> Result<f64, CapabilityError> {
        match self {
            Envelope::Pv(env) => pv_q_limit(p, env, k),
            Envelope::Dfig { curve, s_rated } => {
                let (lo, hi) = curve.p_range();
                let x = snap(p / s_rated, lo, hi);
                let q = dfig_q_limit(x, curve, k).map_err(|e| match e {
                    CapabilityError::OutOfRange { .. } => CapabilityError::OutOfRange {
                        p,
                        max: curve.p_range().1 * s_rated,
                    },
                    e => e,
                })?;
                Ok(q * s_rated)
            }
        }
    }

    /// Full capability with nothing held in reserve.
    pub fn q_capacity(&self, p: f64) -> Result<f64, CapabilityError> {
        self.q_limit(p, ReserveCoefficient::ZERO)
    }

    /// Absorption limit (negative). Unused by the controllers.
    pub fn q_min(&self, p: f64, k: ReserveCoefficient) -> Result<f64, CapabilityError> {
        self.q_limit(p, k).map(|q| -q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(v: f64) -> ReserveCoefficient {
        ReserveCoefficient::new(v).unwrap()
    }

    #[test]
    fn pv_limit_vanishes_at_zero_output() {
        let env = PvEnvelope::new(1.0);
        for kv in [0.0, 0.3, 1.0] {
            assert_eq!(pv_q_limit(0.0, &env, k(kv)).unwrap(), 0.0);
        }
    }

    #[test]
    fn pv_limit_vanishes_at_rating() {
        let env = PvEnvelope::new(1.0);
        assert_eq!(pv_q_limit(1.0, &env, k(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn pv_limit_hand_values() {
        // tan(acos 0.8) = 0.75; min(0.6 * 0.75, sqrt(1 - 0.36)) = 0.45
        let env = PvEnvelope::new(1.0);
        assert!((pv_q_limit(0.6, &env, k(0.0)).unwrap() - 0.45).abs() < 1e-12);
        assert!((pv_q_limit(0.6, &env, k(0.6)).unwrap() - 0.18).abs() < 1e-12);
    }

    #[test]
    fn pv_limit_rejects_overrated_output() {
        let env = PvEnvelope::new(1.0);
        assert!(matches!(
            pv_q_limit(1.2, &env, k(0.0)),
            Err(CapabilityError::OutOfRange { .. })
        ));
        assert!(pv_q_limit(-0.1, &env, k(0.0)).is_err());
    }

    #[test]
    fn dfig_interpolation() {
        let env = DfigEnvelope::new(vec![(0.0, 0.5), (0.2, 0.5), (0.4, 0.4), (1.0, 0.1)]).unwrap();
        assert_eq!(dfig_q_limit(0.4, &env, k(0.0)).unwrap(), 0.4);
        assert!((dfig_q_limit(0.3, &env, k(0.0)).unwrap() - 0.45).abs() < 1e-12);
        assert_eq!(dfig_q_limit(0.3, &env, k(1.0)).unwrap(), 0.0);
        assert_eq!(dfig_q_limit(1.0, &env, k(0.0)).unwrap(), 0.1);
        assert!(dfig_q_limit(1.01, &env, k(0.0)).is_err());
        assert!(dfig_q_limit(-0.01, &env, k(0.0)).is_err());
    }

    #[test]
    fn dfig_curve_validation() {
        assert!(DfigEnvelope::new(vec![(0.0, 0.5)]).is_err());
        assert!(DfigEnvelope::new(vec![(0.0, 0.5), (0.0, 0.4)]).is_err());
        assert!(DfigEnvelope::new(vec![(0.0, 0.5), (0.5, -0.1)]).is_err());
        let err = DfigEnvelope::parse("0 0.5\n0.5 x\n").unwrap_err();
        assert_eq!(
            err,
            CapabilityError::CurveSyntax {
                line: 2,
                msg: "not a number: \"x\"".into()
            }
        );
    }

    #[test]
    fn bundled_curve_parses() {
        let env = DfigEnvelope::default_curve();
        assert_eq!(env.p_range(), (0.0, 1.0));
        assert_eq!(DfigEnvelope::parse(&env.to_text()).unwrap(), env);
    }

    #[test]
    fn dfig_envelope_scales_with_rating() {
        let curve = DfigEnvelope::new(vec![(0.0, 0.6), (1.0, 0.3)]).unwrap();
        let env = Envelope::Dfig {
            curve,
            s_rated: 0.1,
        };
        assert!((env.q_capacity(0.05).unwrap() - 0.045).abs() < 1e-15);
        assert!(env.q_capacity(0.11).is_err());
    }

    #[test]
    fn reserve_bounds() {
        assert!(ReserveCoefficient::new(1.5).is_err());
        assert!(ReserveCoefficient::new(-0.1).is_err());
        assert!("0.4".parse::<ReserveCoefficient>().is_ok());
        assert!("abc".parse::<ReserveCoefficient>().is_err());
    }
}
