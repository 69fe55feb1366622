//! Full-day experiments: profile ingestion, per-timestep control and power
//! flow, aggregate loss reports.
//!
//! Profiles are CSV with a `timestamp` column followed by `pv_<bus>`,
//! `wind_<bus>` and `load_scale` columns, powers in kW. Optional
//! `fc_pv_<bus>` / `fc_wind_<bus>` columns hold, on each row, the forecast
//! of the next row's output.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDateTime, NaiveTime};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::capability::ReserveCoefficient;
use crate::control::{lfma_plan, llma_plan, no_action, ControlError, OperatingPoint, SetpointPlan};
use crate::netmodel::{BusId, DeviceKind, Network};
use crate::opf::{solve_opf, OpfOptions, OpfStatus};
use crate::powerflow::{PowerFlow, SolveOptions};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile schema: {0}")]
    Schema(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("timestamps not strictly increasing at row {0}")]
    NonMonotone(usize),
    #[error("timestamps not evenly spaced at row {0}")]
    Uneven(usize),
    #[error("column {0} has no values")]
    EmptyColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("profile covers {0} minutes, a day run needs 1440")]
    NotADay(i64),
    #[error("no profile column for {kind} device at bus {bus}")]
    MissingColumn { kind: &'static str, bus: BusId },
    #[error("forecast from file requested but the profile has no fc_{kind}_{bus} column")]
    MissingForecastColumn { kind: &'static str, bus: BusId },
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum SourceKind {
    Pv,
    Wind,
}

impl SourceKind {
    fn prefix(self) -> &'static str {
        match self {
            SourceKind::Pv => "pv",
            SourceKind::Wind => "wind",
        }
    }

    fn of(kind: DeviceKind) -> Self {
        match kind {
            DeviceKind::Pv => SourceKind::Pv,
            DeviceKind::Dfig => SourceKind::Wind,
        }
    }
}

/// Uniformly sampled day profile. Powers in kW.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesProfile {
    pub timestamps: Vec<NaiveDateTime>,
    pub load_scale: Vec<f64>,
    sources: BTreeMap<(SourceKind, BusId), Vec<f64>>,
    forecasts: BTreeMap<(SourceKind, BusId), Vec<f64>>,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_local());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn parse_column_name(name: &str) -> Option<(bool, SourceKind, BusId)> {
    let (fc, rest) = match name.strip_prefix("fc_") {
        Some(r) => (true, r),
        None => (false, name),
    };
    let (kind, bus) = if let Some(b) = rest.strip_prefix("pv_") {
        (SourceKind::Pv, b)
    } else if let Some(b) = rest.strip_prefix("wind_") {
        (SourceKind::Wind, b)
    } else {
        return None;
    };
    Some((fc, kind, bus.parse().ok()?))
}

/// Fills gaps linearly; leading and trailing gaps hold the nearest value.
fn fill_gaps(name: &str, col: &mut [Option<f64>]) -> Result<Vec<f64>, ProfileError> {
    let known: Vec<usize> = (0..col.len()).filter(|&i| col[i].is_some()).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return Err(ProfileError::EmptyColumn(name.to_string()));
    };
    let mut out = vec![0.0; col.len()];
    for i in 0..col.len() {
        out[i] = match col[i] {
            Some(v) => v,
            None if i < first => col[first].unwrap(),
            None if i > last => col[last].unwrap(),
            None => {
                let lo = known[known.partition_point(|&j| j < i) - 1];
                let hi = known[known.partition_point(|&j| j < i)];
                let (a, b) = (col[lo].unwrap(), col[hi].unwrap());
                a + (b - a) * (i - lo) as f64 / (hi - lo) as f64
            }
        };
    }
    Ok(out)
}

impl TimeSeriesProfile {
    pub fn from_reader<R: Read>(rdr: R) -> Result<Self, ProfileError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rdr);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("timestamp") {
            return Err(ProfileError::Schema("first column must be timestamp".into()));
        }
        let mut load_col = None;
        let mut cols = Vec::new();
        for (i, h) in headers.iter().enumerate().skip(1) {
            if h == "load_scale" {
                if load_col.replace(i).is_some() {
                    return Err(ProfileError::Schema("duplicate load_scale".into()));
                }
                continue;
            }
            let key = parse_column_name(h)
                .ok_or_else(|| ProfileError::Schema(format!("unknown column {h:?}")))?;
            if cols.iter().any(|(_, k)| *k == key) {
                return Err(ProfileError::Schema(format!("duplicate column {h:?}")));
            }
            cols.push((i, key));
        }
        let load_col =
            load_col.ok_or_else(|| ProfileError::Schema("missing load_scale column".into()))?;
        for (_, (fc, kind, bus)) in &cols {
            if *fc && !cols.iter().any(|(_, k)| *k == (false, *kind, *bus)) {
                return Err(ProfileError::Schema(format!(
                    "fc_{}_{bus} has no matching {}_{bus} column",
                    kind.prefix(),
                    kind.prefix()
                )));
            }
        }

        let mut timestamps = Vec::new();
        let mut raw: Vec<Vec<Option<f64>>> = vec![Vec::new(); headers.len()];
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = r + 2;
            if rec.len() != headers.len() {
                return Err(ProfileError::Row {
                    row,
                    msg: format!("{} fields, header has {}", rec.len(), headers.len()),
                });
            }
            let ts = parse_timestamp(&rec[0]).ok_or_else(|| ProfileError::Row {
                row,
                msg: format!("bad timestamp {:?}", &rec[0]),
            })?;
            if let Some(&prev) = timestamps.last() {
                if ts <= prev {
                    return Err(ProfileError::NonMonotone(row));
                }
            }
            timestamps.push(ts);
            for i in 1..headers.len() {
                let f = &rec[i];
                let v = if f.is_empty() || f.eq_ignore_ascii_case("nan") {
                    None
                } else {
                    let v: f64 = f.parse().map_err(|_| ProfileError::Row {
                        row,
                        msg: format!("bad number {f:?} in {}", &headers[i]),
                    })?;
                    if !v.is_finite() || (i != load_col && v < 0.0) {
                        return Err(ProfileError::Row {
                            row,
                            msg: format!("invalid value {v} in {}", &headers[i]),
                        });
                    }
                    Some(v)
                };
                raw[i].push(v);
            }
        }
        if timestamps.is_empty() {
            return Err(ProfileError::Schema("no data rows".into()));
        }
        if timestamps.len() > 1 {
            let step = timestamps[1] - timestamps[0];
            if let Some(w) = timestamps.windows(2).position(|w| w[1] - w[0] != step) {
                return Err(ProfileError::Uneven(w + 3));
            }
        }

        let load_scale = fill_gaps("load_scale", &mut raw[load_col])?;
        let mut sources = BTreeMap::new();
        let mut forecasts = BTreeMap::new();
        for (i, (fc, kind, bus)) in cols {
            let v = fill_gaps(&headers[i], &mut raw[i])?;
            if fc {
                forecasts.insert((kind, bus), v);
            } else {
                sources.insert((kind, bus), v);
            }
        }
        Ok(TimeSeriesProfile {
            timestamps,
            load_scale,
            sources,
            forecasts,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let f = std::fs::File::open(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Sampling interval. A single-row profile reports one minute.
    pub fn step(&self) -> Duration {
        match self.timestamps.as_slice() {
            [a, b, ..] => *b - *a,
            _ => Duration::minutes(1),
        }
    }

    /// Total time covered, rows treated as interval starts.
    pub fn span(&self) -> Duration {
        self.step() * self.len() as i32
    }

    pub fn has_forecasts(&self) -> bool {
        !self.forecasts.is_empty()
    }

    pub fn pv(&self, bus: BusId) -> Option<&[f64]> {
        self.sources.get(&(SourceKind::Pv, bus)).map(Vec::as_slice)
    }

    pub fn wind(&self, bus: BusId) -> Option<&[f64]> {
        self.sources.get(&(SourceKind::Wind, bus)).map(Vec::as_slice)
    }

    pub fn forecast_pv(&self, bus: BusId) -> Option<&[f64]> {
        self.forecasts.get(&(SourceKind::Pv, bus)).map(Vec::as_slice)
    }

    pub fn forecast_wind(&self, bus: BusId) -> Option<&[f64]> {
        self.forecasts.get(&(SourceKind::Wind, bus)).map(Vec::as_slice)
    }

    /// Linear resampling onto a finer or coarser grid. Rows are interval
    /// starts, so the result spans the same time; samples past the last row
    /// hold its value.
    pub fn resample(&self, step: Duration) -> Result<Self, ProfileError> {
        let old = self.step().num_milliseconds();
        let new = step.num_milliseconds();
        if new <= 0 {
            return Err(ProfileError::Schema("resampling step must be positive".into()));
        }
        let span = old * self.len() as i64;
        if span % new != 0 {
            return Err(ProfileError::Schema(format!(
                "span of {span} ms is not a multiple of the {new} ms step"
            )));
        }
        let n = (span / new) as usize;
        let last = self.len() - 1;
        let interp = |v: &[f64], j: usize| {
            let x = (j as i64 * new) as f64 / old as f64;
            let i = (x.floor() as usize).min(last);
            if i == last {
                return v[last];
            }
            let f = x - i as f64;
            v[i] + (v[i + 1] - v[i]) * f
        };
        let t0 = self.timestamps[0];
        let map = |m: &BTreeMap<_, Vec<f64>>| {
            m.iter()
                .map(|(k, v)| (*k, (0..n).map(|j| interp(v, j)).collect()))
                .collect()
        };
        Ok(TimeSeriesProfile {
            timestamps: (0..n).map(|j| t0 + step * j as i32).collect(),
            load_scale: (0..n).map(|j| interp(&self.load_scale, j)).collect(),
            sources: map(&self.sources),
            forecasts: map(&self.forecasts),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    NoAction,
    Llma,
    Lfma,
    Opf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastMode {
    None,
    File,
    Persistence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NightPolicy {
    Connected,
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {what} {got:?}, expected one of {expected}")]
pub struct ParseEnumError {
    what: &'static str,
    got: String,
    expected: &'static str,
}

macro_rules! str_enum {
    ($t:ty, $what:literal, $($s:literal => $v:expr),+) => {
        impl FromStr for $t {
            type Err = ParseEnumError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    _ => Err(ParseEnumError {
                        what: $what,
                        got: s.to_string(),
                        expected: concat!($($s, " "),+),
                    }),
                }
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $v { return f.write_str($s); })+
                unreachable!()
            }
        }
    };
}

str_enum!(ControllerKind, "controller",
    "noaction" => ControllerKind::NoAction,
    "llma" => ControllerKind::Llma,
    "lfma" => ControllerKind::Lfma,
    "opf" => ControllerKind::Opf);
str_enum!(ForecastMode, "forecast mode",
    "none" => ForecastMode::None,
    "file" => ForecastMode::File,
    "persistence" => ForecastMode::Persistence);
str_enum!(NightPolicy, "night policy",
    "connected" => NightPolicy::Connected,
    "disconnected" => NightPolicy::Disconnected);

/// Wall-clock window during which PV inverters may be disconnected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NightWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl Default for NightWindow {
    fn default() -> Self {
        NightWindow {
            start: NaiveTime::from_hms_opt(20, 0, 0).unwrap(),
            end: NaiveTime::from_hms_opt(5, 0, 0).unwrap(),
        }
    }
}

impl NightWindow {
    pub fn contains(&self, t: NaiveTime) -> bool {
        if self.start <= self.end {
            t >= self.start && t < self.end
        } else {
            t >= self.start || t < self.end
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayConfig {
    pub controller: ControllerKind,
    pub k: ReserveCoefficient,
    pub forecast: ForecastMode,
    pub night: NightPolicy,
    pub night_window: NightWindow,
    pub power_flow: SolveOptions,
    pub opf: OpfOptions,
}

impl DayConfig {
    pub fn new(controller: ControllerKind, k: ReserveCoefficient) -> Self {
        DayConfig {
            controller,
            k,
            forecast: ForecastMode::None,
            night: NightPolicy::Connected,
            night_window: NightWindow::default(),
            power_flow: SolveOptions::default(),
            opf: OpfOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub timestamp: String,
    /// `None` when the power flow failed at this step.
    pub loss_kw: Option<f64>,
    pub q_total_kvar: Option<f64>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayReport {
    pub controller: ControllerKind,
    pub k: ReserveCoefficient,
    pub forecast: ForecastMode,
    pub night: NightPolicy,
    pub step_minutes: f64,
    pub average_loss_kw: f64,
    pub energy_loss_kwh: f64,
    pub steps: usize,
    pub failed_steps: usize,
    pub fallback_count: usize,
    pub trace: Vec<TraceRow>,
}

/// Per-device kW series for one source, forecast series if any.
struct DeviceSeries<'a> {
    actual: &'a [f64],
    forecast: Option<&'a [f64]>,
}

fn device_series<'a>(
    net: &Network,
    profile: &'a TimeSeriesProfile,
    forecast: ForecastMode,
) -> Result<Vec<DeviceSeries<'a>>, HarnessError> {
    net.devices
        .iter()
        .map(|dev| {
            let kind = SourceKind::of(dev.kind);
            let actual = profile
                .sources
                .get(&(kind, dev.bus))
                .ok_or(HarnessError::MissingColumn {
                    kind: kind.prefix(),
                    bus: dev.bus,
                })?;
            let fc = match forecast {
                ForecastMode::File => Some(
                    profile
                        .forecasts
                        .get(&(kind, dev.bus))
                        .ok_or(HarnessError::MissingForecastColumn {
                            kind: kind.prefix(),
                            bus: dev.bus,
                        })?
                        .as_slice(),
                ),
                _ => None,
            };
            Ok(DeviceSeries {
                actual,
                forecast: fc,
            })
        })
        .collect()
}

/// Operating point of the network at profile row `t` under `cfg`.
pub fn operating_point(
    net: &Network,
    profile: &TimeSeriesProfile,
    t: usize,
    cfg: &DayConfig,
) -> Result<OperatingPoint, HarnessError> {
    let series = device_series(net, profile, cfg.forecast)?;
    Ok(point_at(net, profile, &series, t, cfg))
}

fn point_at(
    net: &Network,
    profile: &TimeSeriesProfile,
    series: &[DeviceSeries<'_>],
    t: usize,
    cfg: &DayConfig,
) -> OperatingPoint {
    let mut op = OperatingPoint::base(net);
    let ls = profile.load_scale[t];
    op.load_p.iter_mut().for_each(|p| *p *= ls);
    op.load_q.iter_mut().for_each(|q| *q *= ls);
    let night = cfg.night == NightPolicy::Disconnected
        && cfg.night_window.contains(profile.timestamps[t].time());
    let clamp = |kw: f64, rated: f64, bus: BusId| {
        let p = net.kw_to_pu(kw);
        if p > rated + 1e-12 {
            log::debug!("output {kw} kW at bus {bus} clamped to rating");
        }
        p.clamp(0.0, rated)
    };
    let mut fc = Vec::with_capacity(net.devices.len());
    for (d, dev) in net.devices.iter().enumerate() {
        let s = &series[d];
        op.device_p[d] = clamp(s.actual[t], dev.p_rated, dev.bus);
        op.connected[d] = !(night && dev.kind == DeviceKind::Pv);
        fc.push(match s.forecast {
            Some(f) => clamp(f[t], dev.p_rated, dev.bus),
            None => op.device_p[d],
        });
    }
    if cfg.forecast != ForecastMode::None {
        op.forecast_p = Some(fc);
    }
    op
}

fn plan_for(
    net: &Network,
    pf: &PowerFlow,
    op: &OperatingPoint,
    cfg: &DayConfig,
) -> Result<(SetpointPlan, bool), ControlError> {
    let fc = cfg.forecast != ForecastMode::None;
    Ok(match cfg.controller {
        ControllerKind::NoAction => (no_action(net), false),
        ControllerKind::Llma => (llma_plan(net, op, cfg.k, fc)?, false),
        ControllerKind::Lfma => (lfma_plan(net, pf, op, cfg.k, fc, &cfg.power_flow)?.plan, false),
        ControllerKind::Opf => {
            let r = solve_opf(net, pf, op, cfg.k, &cfg.opf);
            let fell_back = r.status == OpfStatus::FellBack;
            if fell_back {
                log::debug!("opf fell back: {}", r.reason.as_deref().unwrap_or(""));
            }
            (r.plan, fell_back)
        }
    })
}

/// Runs one controller configuration over a full-day profile.
///
/// Steps whose power flow fails are excluded from the aggregates and counted.
pub fn run_day(
    net: &Network,
    pf: &PowerFlow,
    profile: &TimeSeriesProfile,
    cfg: &DayConfig,
) -> Result<DayReport, HarnessError> {
    let span = profile.span().num_minutes();
    if span != 24 * 60 {
        return Err(HarnessError::NotADay(span));
    }
    let series = device_series(net, profile, cfg.forecast)?;
    let step_h = profile.step().num_milliseconds() as f64 / 3.6e6;
    let mut trace = Vec::with_capacity(profile.len());
    let (mut sum_kw, mut ok, mut failed, mut fallbacks) = (0.0, 0usize, 0usize, 0usize);
    for t in 0..profile.len() {
        let op = point_at(net, profile, &series, t, cfg);
        let stamp = profile.timestamps[t].format("%Y-%m-%dT%H:%M:%S").to_string();
        let solved = plan_for(net, pf, &op, cfg).and_then(|(plan, fb)| {
            op.solve(net, pf, &plan, &cfg.power_flow)
                .map(|s| (s, plan, fb))
        });
        match solved {
            Ok((sol, plan, fb)) => {
                let loss_kw = net.pu_to_kw(sol.total_loss);
                sum_kw += loss_kw;
                ok += 1;
                fallbacks += fb as usize;
                trace.push(TraceRow {
                    timestamp: stamp,
                    loss_kw: Some(loss_kw),
                    q_total_kvar: Some(net.pu_to_kw(plan.total())),
                    fallback: fb,
                });
            }
            Err(ControlError::PowerFlow { stage, source }) => {
                log::warn!("{stamp}: power flow failed at {stage:?}: {source}");
                failed += 1;
                trace.push(TraceRow {
                    timestamp: stamp,
                    loss_kw: None,
                    q_total_kvar: None,
                    fallback: false,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(DayReport {
        controller: cfg.controller,
        k: cfg.k,
        forecast: cfg.forecast,
        night: cfg.night,
        step_minutes: step_h * 60.0,
        average_loss_kw: if ok > 0 { sum_kw / ok as f64 } else { f64::NAN },
        energy_loss_kwh: sum_kw * step_h,
        steps: profile.len(),
        failed_steps: failed,
        fallback_count: fallbacks,
        trace,
    })
}

/// Runs every configuration in parallel. Results keep the input order.
pub fn run_matrix(
    net: &Network,
    pf: &PowerFlow,
    profile: &TimeSeriesProfile,
    configs: &[DayConfig],
) -> Vec<Result<DayReport, HarnessError>> {
    configs
        .par_iter()
        .map(|cfg| run_day(net, pf, profile, cfg))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

impl DayReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["timestamp", "loss_kw", "q_total_kvar", "fallback"])?;
        for r in &self.trace {
            w.write_record([
                r.timestamp.clone(),
                fmt_opt(r.loss_kw),
                fmt_opt(r.q_total_kvar),
                (r.fallback as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(w, self)
    }

    pub fn summary(&self) -> SummaryRow {
        SummaryRow {
            controller: self.controller,
            k: self.k,
            forecast: self.forecast,
            night: self.night,
            average_loss_kw: self.average_loss_kw,
            energy_loss_kwh: self.energy_loss_kwh,
            failed_steps: self.failed_steps,
            fallback_count: self.fallback_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub controller: ControllerKind,
    pub k: ReserveCoefficient,
    pub forecast: ForecastMode,
    pub night: NightPolicy,
    pub average_loss_kw: f64,
    pub energy_loss_kwh: f64,
    pub failed_steps: usize,
    pub fallback_count: usize,
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "controller",
        "k",
        "forecast",
        "night",
        "average_loss_kw",
        "energy_loss_kwh",
        "failed_steps",
        "fallback_count",
    ])?;
    for r in rows {
        w.write_record([
            r.controller.to_string(),
            r.k.to_string(),
            r.forecast.to_string(),
            r.night.to_string(),
            format!("{:.9}", r.average_loss_kw),
            format!("{:.9}", r.energy_loss_kwh),
            r.failed_steps.to_string(),
            r.fallback_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(text: &str) -> Result<TimeSeriesProfile, ProfileError> {
        TimeSeriesProfile::from_reader(text.as_bytes())
    }

    #[test]
    fn night_window_wraps_midnight() {
        let w = NightWindow::default();
        let t = |h, m| NaiveTime::from_hms_opt(h, m, 0).unwrap();
        assert!(w.contains(t(20, 0)));
        assert!(w.contains(t(0, 0)));
        assert!(w.contains(t(4, 59)));
        assert!(!w.contains(t(5, 0)));
        assert!(!w.contains(t(12, 0)));
    }

    #[test]
    fn gaps_are_interpolated() {
        let p = profile(
            "timestamp,pv_2,load_scale\n\
             2020-01-01T00:00:00,1,1\n2020-01-01T00:01:00,,1\n\
             2020-01-01T00:02:00,,1\n2020-01-01T00:03:00,4,\n",
        )
        .unwrap();
        assert_eq!(p.pv(2).unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.load_scale, vec![1.0; 4]);
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(profile(""), Err(ProfileError::Schema(_) | ProfileError::Csv(_))));
        assert!(matches!(
            profile("timestamp,pv_2\n2020-01-01T00:00:00,1\n"),
            Err(ProfileError::Schema(_))
        ));
        assert!(matches!(
            profile("timestamp,load_scale,foo\n2020-01-01T00:00:00,1,2\n"),
            Err(ProfileError::Schema(_))
        ));
        assert!(matches!(
            profile("timestamp,load_scale,fc_pv_3\n2020-01-01T00:00:00,1,2\n"),
            Err(ProfileError::Schema(_))
        ));
        assert!(matches!(
            profile("timestamp,load_scale\n"),
            Err(ProfileError::Schema(_))
        ));
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let r = profile(
            "timestamp,load_scale\n2020-01-01T00:01:00,1\n2020-01-01T00:00:00,1\n",
        );
        assert!(matches!(r, Err(ProfileError::NonMonotone(3))));
    }

    #[test]
    fn offsets_are_accepted() {
        let p = profile("timestamp,load_scale\n2020-01-01T00:00:00+02:00,1\n").unwrap();
        assert_eq!(p.timestamps[0].format("%H:%M").to_string(), "00:00");
    }

    #[test]
    fn enums_round_trip() {
        for s in ["noaction", "llma", "lfma", "opf"] {
            assert_eq!(s.parse::<ControllerKind>().unwrap().to_string(), s);
        }
        assert!("bogus".parse::<ForecastMode>().is_err());
        assert_eq!("Disconnected".parse::<NightPolicy>().unwrap(), NightPolicy::Disconnected);
    }
}
