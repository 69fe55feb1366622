//! Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{case, data, fixture_day, ieee33_reference as reference};
use gridloss::capability::{DfigEnvelope, ReserveCoefficient};
use gridloss::control::{
    forecast_adjusted_setpoint, lfma_plan, llma_plan, llma_setpoint, no_action, OperatingPoint,
    SetpointPlan, SetpointRule, Stage, Step4,
};
use gridloss::harness::{
    operating_point, run_day, run_matrix, ControllerKind, DayConfig, DayReport, ForecastMode,
    NightPolicy, TimeSeriesProfile,
};
use gridloss::lvrt::{
    required_reactive_current, simulate_fault_response, FaultOptions, FaultOutcome, FaultScenario,
    GridCodeCurve,
};
use gridloss::netmodel::{load_case, parse_case, Device, Network};
use gridloss::opf::{solve_opf, OpfOptions, OpfStatus};
use gridloss::powerflow::{total_losses, InjectionSet, PowerFlow, SolveOptions};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rayon::prelude::*;

const KS: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];
const CONTROLLERS: [ControllerKind; 4] = [
    ControllerKind::NoAction,
    ControllerKind::Llma,
    ControllerKind::Lfma,
    ControllerKind::Opf,
];

/// Relative tolerance against the reference power-flow solution.
const PF_REL_TOL: f64 = 0.005;
const PF_MAX_RUNTIME: Duration = Duration::from_secs(1);
/// Absolute tolerance for hand-computed setpoints.
const EQ_TOL: f64 = 1e-12;
/// Per-timestep slack on loss comparisons, kW.
const STEP_TOL_KW: f64 = 1e-6;
const REFERENCE_REL_TOL: f64 = 0.05;
const MATRIX_MAX_RUNTIME: Duration = Duration::from_secs(120);
const RESERVE_CASES: u32 = 1000;
/// DFIG capacity at bus 27 at half output, kVAr.
const DFIG_CAPACITY_KVAR: f64 = 600.0;
/// Slack on recovery-time comparisons, s.
const RECOVERY_TOL: f64 = 1e-9;
const OPF_SCAN_STEP: f64 = 1e-4;
const OPF_SCAN_TOL: f64 = 1e-4;
const LFMA_ORACLE_TOL: f64 = 1e-6;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn k(v: f64) -> ReserveCoefficient {
    ReserveCoefficient::new(v).unwrap()
}

fn loss_of(net: &Network, pf: &PowerFlow, op: &OperatingPoint, q: &[f64]) -> f64 {
    let plan = SetpointPlan {
        q: q.to_vec(),
        stage: Stage::Opf,
        k: ReserveCoefficient::ZERO,
    };
    op.solve(net, pf, &plan, &SolveOptions::default())
        .unwrap()
        .total_loss
}

fn power_flow_fidelity() -> Outcome {
    let start = Instant::now();
    let net = load_case(&data("ieee33.case")).unwrap();
    let pf = PowerFlow::new(&net).unwrap();
    let sol = pf
        .solve(&InjectionSet::from_loads(&net), &SolveOptions::default())
        .unwrap();
    let elapsed = start.elapsed();
    let loss = net.pu_to_kw(total_losses(&sol).unwrap());
    let (i, vmin) = sol.min_voltage();
    let e_loss = (loss - reference::TOTAL_LOSS_KW).abs() / reference::TOTAL_LOSS_KW;
    let e_v = (vmin - reference::MIN_VM_PU).abs() / reference::MIN_VM_PU;
    outcome(
        e_loss <= PF_REL_TOL && e_v <= PF_REL_TOL && elapsed < PF_MAX_RUNTIME,
        format!(
            "loss {loss:.4} kW (ref {:.4}, {:.2e} rel), vmin {vmin:.6} at bus {} (ref {:.6}, {:.2e} rel), {:.1} ms",
            reference::TOTAL_LOSS_KW,
            e_loss,
            net.buses[i].id,
            reference::MIN_VM_PU,
            e_v,
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn equation_level() -> Outcome {
    let pv = Device::pv(2, 1.0);
    let q = |p, kv| pv.capability.q_limit(p, k(kv)).unwrap();
    // (got, want) pairs from hand arithmetic with S = 1, tan(acos 0.8) = 0.75.
    let checks = [
        ("pv limit p=0.6 k=0", q(0.6, 0.0), 0.45),
        ("pv limit p=0.6 k=0.6", q(0.6, 0.6), 0.18),
        ("pv limit p=0.9 k=0", q(0.9, 0.0), 0.19f64.sqrt()),
        ("pv limit p=0 k=0", q(0.0, 0.0), 0.0),
        ("llma load below limit", llma_setpoint(0.3, 0.6, &pv, k(0.0)).unwrap(), 0.3),
        ("llma load above limit", llma_setpoint(0.6, 0.6, &pv, k(0.0)).unwrap(), 0.45),
        ("llma load above limit k=0.6", llma_setpoint(0.6, 0.6, &pv, k(0.6)).unwrap(), 0.18),
        ("llma negative load", llma_setpoint(-0.1, 0.6, &pv, k(0.0)).unwrap(), 0.0),
        (
            "forecast raises limit",
            forecast_adjusted_setpoint(0.3, 0.6, 0.5, &pv, k(0.0), SetpointRule::Llma).unwrap(),
            0.45,
        ),
        (
            "forecast below current",
            forecast_adjusted_setpoint(0.6, 0.3, 0.5, &pv, k(0.0), SetpointRule::Llma).unwrap(),
            0.45,
        ),
        (
            "forecast with upstream term",
            forecast_adjusted_setpoint(
                0.3,
                0.6,
                0.1,
                &pv,
                k(0.0),
                SetpointRule::LfmaStep { q_upstream: 0.2 },
            )
            .unwrap(),
            0.3,
        ),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > EQ_TOL)
        .map(|(name, got, want)| format!("{name}: {got} != {want}"))
        .collect();
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} hand values within {EQ_TOL:e}", checks.len())
        } else {
            bad.join("; ")
        },
    )
}

struct DayRuns {
    plain: Vec<DayReport>,
    forecast: Vec<DayReport>,
    night_off: Vec<DayReport>,
    matrix_time: Duration,
}

fn configs(forecast: ForecastMode, night: NightPolicy) -> Vec<DayConfig> {
    CONTROLLERS
        .iter()
        .flat_map(|&c| {
            KS.iter().map(move |&kv| DayConfig {
                forecast,
                night,
                ..DayConfig::new(c, k(kv))
            })
        })
        .collect()
}

fn run_all(net: &Network, pf: &PowerFlow, profile: &TimeSeriesProfile, cfgs: &[DayConfig]) -> Vec<DayReport> {
    run_matrix(net, pf, profile, cfgs)
        .into_iter()
        .map(|r| r.unwrap())
        .collect()
}

fn day_runs() -> &'static DayRuns {
    static CELL: OnceLock<DayRuns> = OnceLock::new();
    CELL.get_or_init(|| {
        let (net, pf) = case("ieee33.case");
        let profile = fixture_day();
        let start = Instant::now();
        let plain = run_all(&net, &pf, &profile, &configs(ForecastMode::None, NightPolicy::Connected));
        let matrix_time = start.elapsed();
        let forecast = run_all(&net, &pf, &profile, &configs(ForecastMode::File, NightPolicy::Connected));
        let night_off = run_all(&net, &pf, &profile, &configs(ForecastMode::None, NightPolicy::Disconnected));
        DayRuns {
            plain,
            forecast,
            night_off,
            matrix_time,
        }
    })
}

fn find(reports: &[DayReport], c: ControllerKind, kv: f64) -> &DayReport {
    reports
        .iter()
        .find(|r| r.controller == c && r.k.value() == kv)
        .unwrap()
}

/// Count of timesteps where `a` exceeds `b` by more than the step slack.
fn step_violations(a: &DayReport, b: &DayReport) -> usize {
    a.trace
        .iter()
        .zip(&b.trace)
        .filter(|(x, y)| match (x.loss_kw, y.loss_kw) {
            (Some(x), Some(y)) => x > y + STEP_TOL_KW,
            _ => true,
        })
        .count()
}

fn loss_ordering() -> Outcome {
    let runs = day_runs();
    let mut problems = Vec::new();
    for kv in KS {
        let none = find(&runs.plain, ControllerKind::NoAction, kv);
        let ll = find(&runs.plain, ControllerKind::Llma, kv);
        let lf = find(&runs.plain, ControllerKind::Lfma, kv);
        if !(none.average_loss_kw >= ll.average_loss_kw && ll.average_loss_kw >= lf.average_loss_kw) {
            problems.push(format!("k={kv}: averages out of order"));
        }
        let pairs = [
            ("llma>none", ll, none),
            ("lfma>llma", lf, ll),
            ("fc-llma>llma", find(&runs.forecast, ControllerKind::Llma, kv), ll),
            ("fc-lfma>lfma", find(&runs.forecast, ControllerKind::Lfma, kv), lf),
        ];
        for (name, a, b) in pairs {
            let n = step_violations(a, b);
            if n > 0 {
                problems.push(format!("k={kv}: {name} at {n} steps"));
            }
        }
    }
    let none = find(&runs.plain, ControllerKind::NoAction, 0.0).average_loss_kw;
    let lf = find(&runs.plain, ControllerKind::Lfma, 0.0).average_loss_kw;
    let reduction = 100.0 * (none - lf) / none;
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "5 k values x 1440 steps ordered; fixture LFMA reduction at k=0 {reduction:.1}% ({none:.3} -> {lf:.3} kW)"
            )
        } else {
            problems.join("; ")
        },
    )
}

/// Grid-connected and grid-disconnected (average kW, energy kWh).
const REFERENCE_DAY: [(ControllerKind, [f64; 4]); 4] = [
    (ControllerKind::NoAction, [9.66, 231.52, 9.73, 233.21]),
    (ControllerKind::Llma, [9.42, 225.82, 9.53, 228.58]),
    (ControllerKind::Lfma, [7.59, 182.09, 7.69, 184.51]),
    (ControllerKind::Opf, [8.95, 214.71, 9.39, 225.21]),
];

fn reference_day() -> Outcome {
    let runs = day_runs();
    let mut problems = Vec::new();
    if runs.matrix_time >= MATRIX_MAX_RUNTIME {
        problems.push(format!("matrix took {:.1} s", runs.matrix_time.as_secs_f64()));
    }
    let mut night_gap = Vec::new();
    for c in CONTROLLERS {
        for kv in KS {
            let on = find(&runs.plain, c, kv).average_loss_kw;
            let off = find(&runs.night_off, c, kv).average_loss_kw;
            if on > off {
                problems.push(format!("{c} k={kv}: connected {on:.3} > disconnected {off:.3} kW"));
            }
            if kv == 0.0 {
                night_gap.push(format!("{c} {:.1}%", 100.0 * (off - on) / off));
            }
        }
    }
    let fixture = format!(
        "fixture matrix ({} runs) {:.1} s; night disconnection raises k=0 losses: {}",
        runs.plain.len(),
        runs.matrix_time.as_secs_f64(),
        night_gap.join(", ")
    );
    let Ok(path) = std::env::var("GRIDLOSS_REFERENCE_DAY") else {
        if !problems.is_empty() {
            return outcome(false, problems.join("; "));
        }
        return Outcome {
            verdict: Verdict::Skip,
            detail: format!("reference day not supplied (set GRIDLOSS_REFERENCE_DAY); {fixture}"),
        };
    };
    let kv: f64 = std::env::var("GRIDLOSS_REFERENCE_K")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.0);
    let (net, pf) = case("ieee33.case");
    let profile = TimeSeriesProfile::load(Path::new(&path)).unwrap();
    let mut cells = Vec::new();
    for (c, want) in REFERENCE_DAY {
        let on = DayConfig::new(c, k(kv));
        let off = DayConfig {
            night: NightPolicy::Disconnected,
            ..on
        };
        let a = run_day(&net, &pf, &profile, &on).unwrap();
        let b = run_day(&net, &pf, &profile, &off).unwrap();
        let got = [a.average_loss_kw, a.energy_loss_kwh, b.average_loss_kw, b.energy_loss_kwh];
        for (g, w) in got.iter().zip(want) {
            if (g - w).abs() > REFERENCE_REL_TOL * w {
                problems.push(format!("{c}: {g:.2} vs {w}"));
            }
        }
        if a.average_loss_kw > b.average_loss_kw {
            problems.push(format!("{c}: connected above disconnected"));
        }
        cells.push(format!("{c} {:.2}/{:.2}", got[0], got[1]));
    }
    outcome(
        problems.is_empty(),
        format!("k={kv}: {}; {}; {fixture}", cells.join(", "), problems.join("; ")),
    )
}

fn random_device() -> impl Strategy<Value = Device> {
    (
        any::<bool>(),
        0.01..5.0f64,
        proptest::collection::vec(0.0..1.0f64, 2..8),
    )
        .prop_map(|(pv, s, qs)| {
            if pv {
                Device::pv(2, s)
            } else {
                let n = qs.len() - 1;
                let pts = qs.iter().enumerate().map(|(i, &q)| (i as f64 / n as f64, q)).collect();
                Device::dfig(2, s, s, DfigEnvelope::new(pts).unwrap())
            }
        })
}

fn reserve_monotonicity() -> Outcome {
    let (net, _) = case("ieee33.case");
    let base = OperatingPoint::base(&net);
    let strategy = (
        random_device(),
        0.0..=1.0f64,
        0.0..=1.0f64,
        proptest::collection::vec(0.0..=1.0f64, net.devices.len()),
        0.2..2.0f64,
    );
    let mut runner = TestRunner::new(Config {
        cases: RESERVE_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&strategy, |(dev, k1, k2, outputs, scale)| {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        for i in 0..=20 {
            let p = dev.p_rated * i as f64 / 20.0;
            let a = dev.capability.q_limit(p, k(lo)).unwrap();
            let b = dev.capability.q_limit(p, k(hi)).unwrap();
            prop_assert!(b <= a, "limit at p={p}: {b} > {a}");
        }
        let mut op = base.clone().with_outputs(
            outputs.iter().zip(&net.devices).map(|(x, d)| x * d.p_rated).collect(),
        );
        op.load_q.iter_mut().for_each(|q| *q *= scale);
        let a = llma_plan(&net, &op, k(lo), false).unwrap();
        let b = llma_plan(&net, &op, k(hi), false).unwrap();
        for (qa, qb) in a.q.iter().zip(&b.q) {
            prop_assert!(qb <= qa, "llma: {qb} > {qa}");
        }
        Ok(())
    });
    match result {
        Ok(()) => outcome(true, format!("{RESERVE_CASES} random cases, 21-point output grid")),
        Err(e) => outcome(false, e.to_string()),
    }
}

/// 33-bus feeder with every device at half its rating.
fn half_output(net: &Network) -> OperatingPoint {
    let p = net.devices.iter().map(|d| 0.5 * d.p_rated).collect();
    OperatingPoint::base(net).with_outputs(p)
}

fn grid_code_compliance() -> Outcome {
    let curve = GridCodeCurve::default();
    let mut problems = Vec::new();
    for (v, want) in [(1.0, 0.0), (0.7, 0.5), (0.3, 1.0)] {
        let got = required_reactive_current(v, &curve).iq_ratio;
        if (got - want).abs() > EQ_TOL {
            problems.push(format!("I_q/I_n({v}) = {got}"));
        }
    }
    let (net, pf) = case("ieee33.case");
    let mut op = half_output(&net);
    op.forecast_p = Some(net.devices.iter().map(|d| 0.7 * d.p_rated).collect());
    let scen = FaultScenario::load(&data("deep_sag_bus27.fault")).unwrap();
    let d = net.device_at(scen.bus).unwrap();
    let opts = SolveOptions::default();
    let mut runs = 0;
    for kv in KS {
        let kk = k(kv);
        let plans = [
            ("no-action", no_action(&net)),
            ("llma", llma_plan(&net, &op, kk, false).unwrap()),
            ("llma+fc", llma_plan(&net, &op, kk, true).unwrap()),
            ("lfma", lfma_plan(&net, &pf, &op, kk, false, &opts).unwrap().plan),
            ("lfma+fc", lfma_plan(&net, &pf, &op, kk, true, &opts).unwrap().plan),
            ("opf", solve_opf(&net, &pf, &op, kk, &OpfOptions::default()).plan),
        ];
        for (name, plan) in plans {
            let r = simulate_fault_response(&net, &pf, &op, &plan, &scen, &FaultOptions::default()).unwrap();
            let q = net.pu_to_kw(r.fault_q[d]);
            let deep = r.faulted_bus_voltage.iter().cloned().fold(f64::INFINITY, f64::min) < 0.5;
            if (q - DFIG_CAPACITY_KVAR).abs() > 1e-6 || !deep || !r.all_compliant() {
                problems.push(format!("{name} k={kv}: {q:.3} kVAr, compliant {}", r.all_compliant()));
            }
            runs += 1;
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{runs} runs inject {DFIG_CAPACITY_KVAR} kVAr at bus 27; anchors 1.0->0, 0.7->0.5, 0.3->1.0")
        } else {
            problems.join("; ")
        },
    )
}

#[derive(Default)]
struct Tally {
    checked: usize,
    violations: usize,
    worst: f64,
}

impl Tally {
    fn record(&mut self, excess: f64) {
        self.checked += 1;
        if excess > RECOVERY_TOL {
            self.violations += 1;
            self.worst = self.worst.max(excess);
        }
    }

    fn describe(&self, name: &str) -> String {
        if self.violations == 0 {
            format!("{name} 0/{}", self.checked)
        } else {
            format!(
                "{name} {}/{} (worst {:.2} ms)",
                self.violations,
                self.checked,
                self.worst * 1e3
            )
        }
    }
}

fn recovery_ordering() -> Outcome {
    let (net, pf) = case("ieee33.case");
    let profile = fixture_day();
    let scenarios: Vec<FaultScenario> = [27, 18, 6]
        .iter()
        .flat_map(|&bus| {
            [0.3, 0.6, 0.9]
                .iter()
                .map(move |&sag| FaultScenario::new(bus, sag, 0.1, 0.15, 0.005).unwrap())
        })
        .collect();
    let snapshots: Vec<usize> = (0..1440).step_by(30).collect();
    let controllers = [ControllerKind::Llma, ControllerKind::Lfma, ControllerKind::Opf];
    let opts = FaultOptions::default();

    let per_snapshot: Vec<(Vec<Tally>, Vec<Tally>, usize, f64)> = snapshots
        .par_iter()
        .map(|&t| {
            let cfg = DayConfig {
                forecast: ForecastMode::File,
                ..DayConfig::new(ControllerKind::Llma, ReserveCoefficient::ZERO)
            };
            let op = operating_point(&net, &profile, t, &cfg).unwrap();
            let mut k_tally: Vec<Tally> = controllers.iter().map(|_| Tally::default()).collect();
            let mut fc_tally: Vec<Tally> = controllers.iter().map(|_| Tally::default()).collect();
            let mut severe = 0;
            let mut pinned: f64 = 0.0;
            for (ci, &c) in controllers.iter().enumerate() {
                let plan = |kv: f64, fc: bool| match c {
                    ControllerKind::Llma => llma_plan(&net, &op, k(kv), fc).unwrap(),
                    ControllerKind::Lfma => {
                        lfma_plan(&net, &pf, &op, k(kv), fc, &SolveOptions::default()).unwrap().plan
                    }
                    _ => solve_opf(&net, &pf, &op, k(kv), &OpfOptions::default()).plan,
                };
                let fcs: &[bool] = if c == ControllerKind::Opf { &[false] } else { &[false, true] };
                let plans: Vec<Vec<SetpointPlan>> = fcs
                    .iter()
                    .map(|&fc| KS.iter().map(|&kv| plan(kv, fc)).collect())
                    .collect();
                for scen in &scenarios {
                    let rec: Vec<Vec<f64>> = plans
                        .iter()
                        .map(|row| {
                            row.iter()
                                .map(|p| {
                                    let r = simulate_fault_response(&net, &pf, &op, p, scen, &opts).unwrap();
                                    if matches!(r.outcome, FaultOutcome::Severe { .. }) {
                                        severe += 1;
                                    }
                                    r.recovery_proxy
                                })
                                .collect()
                        })
                        .collect();
                    for row in &rec {
                        for w in row.windows(2) {
                            k_tally[ci].record(w[1] - w[0]);
                        }
                    }
                    if rec.len() == 2 {
                        for (plain, fc) in rec[0].iter().zip(&rec[1]) {
                            fc_tally[ci].record(plain - fc);
                        }
                    }
                    if c == ControllerKind::Llma {
                        pinned = pinned.max(rec[0][4] - rec[0][0]);
                    }
                }
            }
            (k_tally, fc_tally, severe, pinned)
        })
        .collect();

    let mut k_tally: Vec<Tally> = controllers.iter().map(|_| Tally::default()).collect();
    let mut fc_tally: Vec<Tally> = controllers.iter().map(|_| Tally::default()).collect();
    let mut severe = 0;
    let mut pinned_excess: f64 = 0.0;
    for (kt, ft, s, p) in per_snapshot {
        for (acc, t) in k_tally.iter_mut().zip(kt).chain(fc_tally.iter_mut().zip(ft)) {
            acc.checked += t.checked;
            acc.violations += t.violations;
            acc.worst = acc.worst.max(t.worst);
        }
        severe += s;
        pinned_excess = pinned_excess.max(p);
    }
    let total: usize = k_tally.iter().chain(&fc_tally).map(|t| t.violations).sum();
    let names = ["llma", "lfma", "opf"];
    let k_desc: Vec<String> = k_tally.iter().zip(names).map(|(t, n)| t.describe(n)).collect();
    let fc_desc: Vec<String> = fc_tally
        .iter()
        .zip(names)
        .take(2)
        .map(|(t, n)| t.describe(n))
        .collect();
    outcome(
        total == 0 && pinned_excess <= RECOVERY_TOL,
        format!(
            "{} snapshots x {} faults; k-order violations: {}; forecast-order violations: {}; llma k=0 vs k=0.8 worst excess {:.2e} s; severe {severe}",
            snapshots.len(),
            scenarios.len(),
            k_desc.join(", "),
            fc_desc.join(", "),
            pinned_excess
        ),
    )
}

fn opf_baseline() -> Outcome {
    let mut problems = Vec::new();
    let net = parse_case(
        "BASE_MVA 1\nBASE_KV 1\nUNITS pu\nBUS\n1 slack 0 0\n2 pq 0.10 0.05\n\
         BRANCH\n1 2 0.01 0.01\nDEVICE\n2 pv 0.12 0.12\n",
    )
    .unwrap();
    let pf = PowerFlow::new(&net).unwrap();
    let op = OperatingPoint::base(&net).with_outputs(vec![0.08]);
    let cap = net.devices[0].capability.q_capacity(0.08).unwrap();
    let mut worst_gap: f64 = 0.0;
    for kv in KS {
        let hi = (1.0 - kv) * cap;
        let n = (hi / OPF_SCAN_STEP).ceil() as usize;
        let (q_best, _) = (0..=n)
            .map(|i| hi * i as f64 / n as f64)
            .map(|q| (q, loss_of(&net, &pf, &op, &[q])))
            .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let r = solve_opf(&net, &pf, &op, k(kv), &OpfOptions::default());
        let gap = (r.plan.q[0] - q_best).abs();
        worst_gap = worst_gap.max(gap);
        if r.status != OpfStatus::Converged || gap > OPF_SCAN_TOL {
            problems.push(format!("k={kv}: q {} vs scan {q_best}", r.plan.q[0]));
        }
    }

    let forced = solve_opf(&net, &pf, &op, k(0.0), &OpfOptions { max_iterations: 0, ..Default::default() });
    let starved = solve_opf(
        &net,
        &pf,
        &op,
        k(0.0),
        &OpfOptions {
            power_flow: SolveOptions { tolerance: 1e-8, max_iterations: 1 },
            ..Default::default()
        },
    );
    for (name, r) in [("iteration cap", &forced), ("power-flow failure", &starved)] {
        if r.status != OpfStatus::FellBack || r.plan.q != no_action(&net).q || r.plan.stage != Stage::NoAction {
            problems.push(format!("{name} did not fall back to no-action"));
        }
    }

    let mut fixtures: Vec<(String, Network, PowerFlow, OperatingPoint)> = vec![
        ("two-bus".into(), net.clone(), pf, op),
    ];
    for (name, p) in [("chain5_single.case", vec![0.10]), ("chain5_multi.case", vec![0.2, 0.2, 0.06])] {
        let (n, f) = case(name);
        let o = OperatingPoint::base(&n).with_outputs(p);
        fixtures.push((name.into(), n, f, o));
    }
    let (n33, pf33) = case("ieee33.case");
    let profile = fixture_day();
    for t in (0..1440).step_by(120) {
        let o = operating_point(&n33, &profile, t, &DayConfig::new(ControllerKind::Opf, ReserveCoefficient::ZERO)).unwrap();
        fixtures.push((format!("ieee33@{t}"), n33.clone(), pf33.clone(), o));
    }
    let mut checked = 0;
    for (name, n, f, o) in &fixtures {
        let none = loss_of(n, f, o, &no_action(n).q);
        for kv in KS {
            let r = solve_opf(n, f, o, k(kv), &OpfOptions::default());
            if r.status == OpfStatus::Converged {
                checked += 1;
                if r.loss.unwrap() > none {
                    problems.push(format!("{name} k={kv}: loss above no-action"));
                }
            }
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "scan gap {worst_gap:.1e} p.u.; fallback returns no-action; {checked} converged runs on {} fixtures <= no-action{}",
            fixtures.len(),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn lfma_oracle() -> Outcome {
    let mut problems = Vec::new();
    let (net, pf) = case("chain5_single.case");
    let op = OperatingPoint::base(&net).with_outputs(vec![0.10]);
    let opts = SolveOptions::default();
    let mut worst: f64 = 0.0;
    for kv in KS {
        let out = lfma_plan(&net, &pf, &op, k(kv), false, &opts).unwrap();
        let (lo, hi) = (out.step2.q[0], out.step3.q[0]);
        let n = 2000;
        let best = (0..=n)
            .map(|i| loss_of(&net, &pf, &op, &[lo + (hi - lo) * i as f64 / n as f64]))
            .fold(f64::INFINITY, f64::min);
        let gap = loss_of(&net, &pf, &op, &out.plan.q) - best;
        worst = worst.max(gap);
        if gap > LFMA_ORACLE_TOL {
            problems.push(format!("k={kv}: {gap:.2e} above search"));
        }
    }

    let (net, pf) = case("chain5_multi.case");
    let op = OperatingPoint::base(&net).with_outputs(vec![0.2, 0.2, 0.06]);
    let out = lfma_plan(&net, &pf, &op, k(0.0), false, &opts).unwrap();
    let mut seen = BTreeSet::new();
    for t in &out.branch_nodes {
        let up = t.observed_h.q_up * t.observed_i.q_up;
        let down_stable = t
            .observed_h
            .q_do
            .iter()
            .zip(&t.observed_i.q_do)
            .all(|(h, i)| h * i >= 0.0);
        let (expected, q) = if up >= 0.0 {
            (Step4::Kept, out.step3.q[t.device])
        } else if down_stable {
            (Step4::Subtracted, (out.step3.q[t.device] - t.observed_i.q_up.abs()).max(0.0))
        } else {
            (Step4::Reverted, out.step2.q[t.device])
        };
        if t.step4 != expected || (out.plan.q[t.device] - q).abs() > EQ_TOL {
            problems.push(format!("device {}: {:?} vs {:?}", t.device, t.step4, expected));
        }
        seen.insert(format!("{:?}", t.step4));
    }
    if seen.len() != 3 {
        problems.push(format!("branches covered: {seen:?}"));
    }
    outcome(
        problems.is_empty(),
        format!(
            "single-chain gap {worst:.1e} p.u. over 2001-point search; multi-chain covers {}{}",
            seen.into_iter().collect::<Vec<_>>().join("/"),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("power-flow fidelity", power_flow_fidelity),
        ("equation-level setpoints", equation_level),
        ("loss ordering", loss_ordering),
        ("reference-day reproduction", reference_day),
        ("reserve monotonicity", reserve_monotonicity),
        ("grid-code compliance", grid_code_compliance),
        ("recovery ordering", recovery_ordering),
        ("opf baseline", opf_baseline),
        ("lfma small-instance oracle", lfma_oracle),
    ];
    let (mut pass, mut fail, mut skip) = (0, 0, 0);
    for (name, check) in criteria {
        let o = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| Outcome {
            verdict: Verdict::Fail,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            ),
        });
        let tag = match o.verdict {
            Verdict::Pass => {
                pass += 1;
                "PASS"
            }
            Verdict::Fail => {
                fail += 1;
                "FAIL"
            }
            Verdict::Skip => {
                skip += 1;
                "SKIP"
            }
        };
        println!("{tag} {name}: {}", o.detail);
    }
    println!("acceptance: {pass} passed, {fail} failed, {skip} skipped");
    if fail > 0 {
        std::process::exit(1);
    }
}
