use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gridloss::capability::ReserveCoefficient;
use gridloss::control::{lfma_plan, llma_plan, no_action, OperatingPoint, SetpointPlan};
use gridloss::harness::{
    operating_point, run_matrix, write_summary_csv, ControllerKind, DayConfig, ForecastMode,
    HarnessError, NightPolicy, SummaryRow, TimeSeriesProfile,
};
use gridloss::lvrt::{simulate_fault_response, FaultOptions, FaultOutcome, FaultScenario, LvrtError};
use gridloss::netmodel::{load_case, Network};
use gridloss::opf::{solve_opf, OpfOptions};
use gridloss::powerflow::{InjectionSet, PowerFlow, SolveOptions};

#[derive(Parser)]
#[command(name = "gridloss", version, about = "Loss-minimizing inverter control on radial feeders")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the case-file snapshot and report voltages, flows and losses.
    Powerflow {
        #[command(flatten)]
        common: Common,
    },
    /// Run full-day experiments over a controller x k x night matrix.
    Day {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        profile: PathBuf,
        #[command(flatten)]
        matrix: Matrix,
        #[arg(long, value_delimiter = ',', default_value = "connected")]
        night: Vec<NightPolicy>,
        /// Resample the profile to this step before running.
        #[arg(long)]
        resample_minutes: Option<u32>,
    },
    /// Simulate a fault for every controller and k.
    Fault {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: PathBuf,
        /// Operating point source; without it devices run at half rating.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[command(flatten)]
        matrix: Matrix,
    },
    /// Parse and check inputs without simulating.
    Validate {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    case: PathBuf,
    /// Output directory. Optional for `powerflow`, which then prints JSON to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Power-flow mismatch tolerance, p.u.
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

impl Common {
    fn solve_options(&self) -> Result<SolveOptions, Failure> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Failure::usage(anyhow!("--tolerance must be positive")));
        }
        if self.max_iter == 0 {
            return Err(Failure::usage(anyhow!("--max-iter must be at least 1")));
        }
        Ok(SolveOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iter,
        })
    }

    fn out_dir(&self) -> Result<&Path, Failure> {
        let dir = self
            .out
            .as_deref()
            .ok_or_else(|| Failure::usage(anyhow!("--out is required")))?;
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::runtime)?;
        Ok(dir)
    }
}

#[derive(Args)]
struct Matrix {
    #[arg(long, value_delimiter = ',', default_value = "noaction,llma,lfma,opf")]
    controller: Vec<ControllerKind>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8")]
    k: Vec<ReserveCoefficient>,
    #[arg(long, default_value = "none")]
    forecast: ForecastMode,
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn usage(err: anyhow::Error) -> Self {
        Failure { code: 2, err }
    }

    fn runtime(err: anyhow::Error) -> Self {
        Failure { code: 1, err }
    }
}

fn load_network(path: &Path) -> Result<(Network, PowerFlow), Failure> {
    let net = load_case(path).map_err(|e| Failure::usage(e.into()))?;
    let pf = PowerFlow::new(&net)
        .with_context(|| format!("{}: not a radial feeder", path.display()))
        .map_err(Failure::usage)?;
    Ok((net, pf))
}

fn load_profile(path: &Path) -> Result<TimeSeriesProfile, Failure> {
    TimeSeriesProfile::load(path)
        .with_context(|| format!("reading profile {}", path.display()))
        .map_err(Failure::usage)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::runtime)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Failure::runtime(e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Failure::runtime(e.into()))
}

fn write_csv_rows(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    let mut emit = || -> io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()
    };
    emit().map_err(|e| Failure::runtime(e.into()))
}

fn run_label(c: ControllerKind, k: ReserveCoefficient, f: ForecastMode) -> String {
    format!("{c}_k{k}_{f}")
}

#[derive(Serialize)]
struct BusRow {
    bus: u32,
    vm_pu: f64,
    va_deg: f64,
}

#[derive(Serialize)]
struct BranchRow {
    from_bus: u32,
    to_bus: u32,
    p_from_kw: f64,
    q_from_kvar: f64,
    p_to_kw: f64,
    q_to_kvar: f64,
    loss_kw: f64,
    current_pu: f64,
}

#[derive(Serialize)]
struct PowerFlowReport {
    case: String,
    tolerance: f64,
    max_iterations: usize,
    iterations: usize,
    mismatch: f64,
    total_loss_kw: f64,
    slack_p_kw: f64,
    slack_q_kvar: f64,
    min_voltage_bus: u32,
    min_voltage_pu: f64,
    buses: Vec<BusRow>,
    branches: Vec<BranchRow>,
}

fn cmd_powerflow(common: &Common) -> Result<(), Failure> {
    let opts = common.solve_options()?;
    let (net, pf) = load_network(&common.case)?;
    let sol = pf
        .solve(&InjectionSet::from_loads(&net), &opts)
        .map_err(|e| Failure::runtime(e.into()))?;
    let (imin, vmin) = sol.min_voltage();
    let kw = |x: f64| net.pu_to_kw(x);
    let report = PowerFlowReport {
        case: common.case.display().to_string(),
        tolerance: opts.tolerance,
        max_iterations: opts.max_iterations,
        iterations: sol.iterations,
        mismatch: sol.mismatch,
        total_loss_kw: kw(sol.total_loss),
        slack_p_kw: kw(sol.slack_p),
        slack_q_kvar: kw(sol.slack_q),
        min_voltage_bus: net.buses[imin].id,
        min_voltage_pu: vmin,
        buses: net
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| BusRow {
                bus: b.id,
                vm_pu: sol.vm[i],
                va_deg: sol.va[i].to_degrees(),
            })
            .collect(),
        branches: net
            .branches
            .iter()
            .zip(&sol.flows)
            .map(|(b, f)| BranchRow {
                from_bus: b.from_bus,
                to_bus: b.to_bus,
                p_from_kw: kw(f.p_from),
                q_from_kvar: kw(f.q_from),
                p_to_kw: kw(f.p_to),
                q_to_kvar: kw(f.q_to),
                loss_kw: kw(f.loss()),
                current_pu: f.current,
            })
            .collect(),
    };
    let Some(_) = common.out else {
        let stdout = io::stdout();
        let mut w = stdout.lock();
        serde_json::to_writer_pretty(&mut w, &report).map_err(|e| Failure::runtime(e.into()))?;
        return writeln!(w).map_err(|e| Failure::runtime(e.into()));
    };
    let dir = common.out_dir()?;
    write_json(dir, "powerflow.json", &report)?;
    let bus_rows: Vec<Vec<String>> = report
        .buses
        .iter()
        .map(|b| vec![b.bus.to_string(), format!("{:.9}", b.vm_pu), format!("{:.9}", b.va_deg)])
        .collect();
    write_csv_rows(dir, "powerflow_buses.csv", &["bus", "vm_pu", "va_deg"], &bus_rows)?;
    let branch_rows: Vec<Vec<String>> = report
        .branches
        .iter()
        .map(|b| {
            let mut r = vec![b.from_bus.to_string(), b.to_bus.to_string()];
            r.extend(
                [b.p_from_kw, b.q_from_kvar, b.p_to_kw, b.q_to_kvar, b.loss_kw, b.current_pu]
                    .iter()
                    .map(|x| format!("{x:.9}")),
            );
            r
        })
        .collect();
    write_csv_rows(
        dir,
        "powerflow_branches.csv",
        &["from_bus", "to_bus", "p_from_kw", "q_from_kvar", "p_to_kw", "q_to_kvar", "loss_kw", "current_pu"],
        &branch_rows,
    )?;
    println!(
        "total loss {:.3} kW, min voltage {:.4} pu at bus {}, {} iterations",
        report.total_loss_kw, vmin, report.min_voltage_bus, sol.iterations
    );
    Ok(())
}

fn cmd_day(
    common: &Common,
    profile: &Path,
    matrix: &Matrix,
    night: &[NightPolicy],
    resample: Option<u32>,
) -> Result<(), Failure> {
    let opts = common.solve_options()?;
    let (net, pf) = load_network(&common.case)?;
    let mut prof = load_profile(profile)?;
    if let Some(m) = resample {
        prof = prof
            .resample(chrono::Duration::minutes(m as i64))
            .map_err(|e| Failure::usage(e.into()))?;
    }
    let dir = common.out_dir()?;
    let mut configs = Vec::new();
    for &policy in night {
        for &c in &matrix.controller {
            for &k in &matrix.k {
                let mut cfg = DayConfig::new(c, k);
                cfg.forecast = matrix.forecast;
                cfg.night = policy;
                cfg.power_flow = opts;
                cfg.opf = OpfOptions {
                    power_flow: opts,
                    ..OpfOptions::default()
                };
                configs.push(cfg);
            }
        }
    }
    let mut summary: Vec<SummaryRow> = Vec::with_capacity(configs.len());
    for (cfg, result) in configs.iter().zip(run_matrix(&net, &pf, &prof, &configs)) {
        let report = result.map_err(|e| match e {
            HarnessError::Control(_) => Failure::runtime(e.into()),
            _ => Failure::usage(e.into()),
        })?;
        let name = format!("day_{}_{}", run_label(cfg.controller, cfg.k, cfg.forecast), cfg.night);
        let mut w = create(dir, &format!("{name}.csv"))?;
        report
            .write_csv(&mut w)
            .map_err(|e| Failure::runtime(e.into()))?;
        write_json(dir, &format!("{name}.json"), &report)?;
        if report.failed_steps > 0 {
            log::warn!("{name}: {} steps failed to converge", report.failed_steps);
        }
        println!(
            "{name}: average {:.3} kW, energy {:.2} kWh, failed {}, fallbacks {}",
            report.average_loss_kw, report.energy_loss_kwh, report.failed_steps, report.fallback_count
        );
        summary.push(report.summary());
    }
    let w = create(dir, "summary.csv")?;
    write_summary_csv(&summary, w).map_err(|e| Failure::runtime(e.into()))?;
    write_json(dir, "summary.json", &summary)
}

#[derive(Serialize)]
struct FaultSummary {
    controller: ControllerKind,
    k: ReserveCoefficient,
    forecast: ForecastMode,
    outcome: FaultOutcome,
    compliant: bool,
    recovery_proxy_s: f64,
    max_voltage_deviation_pu: f64,
    headroom: f64,
    fault_q_kvar: Vec<(u32, f64)>,
}

fn plan_for(
    net: &Network,
    pf: &PowerFlow,
    op: &OperatingPoint,
    cfg: &DayConfig,
) -> anyhow::Result<SetpointPlan> {
    let fc = cfg.forecast != ForecastMode::None;
    Ok(match cfg.controller {
        ControllerKind::NoAction => no_action(net),
        ControllerKind::Llma => llma_plan(net, op, cfg.k, fc)?,
        ControllerKind::Lfma => lfma_plan(net, pf, op, cfg.k, fc, &cfg.power_flow)?.plan,
        ControllerKind::Opf => solve_opf(net, pf, op, cfg.k, &cfg.opf).plan,
    })
}

fn cmd_fault(
    common: &Common,
    scenario: &Path,
    profile: Option<&Path>,
    matrix: &Matrix,
) -> Result<(), Failure> {
    let opts = common.solve_options()?;
    let (net, pf) = load_network(&common.case)?;
    let scen = FaultScenario::load(scenario).map_err(|e| Failure::usage(e.into()))?;
    if net.bus_index(scen.bus).is_none() {
        return Err(Failure::usage(LvrtError::UnknownBus(scen.bus).into()));
    }
    let prof = profile.map(load_profile).transpose()?;
    let row = match (&prof, scen.snapshot) {
        (Some(p), Some(at)) => Some(
            p.timestamps
                .iter()
                .position(|t| t.time() >= at)
                .ok_or_else(|| Failure::usage(anyhow!("profile has no row at or after {at}")))?,
        ),
        (Some(_), None) => {
            return Err(Failure::usage(anyhow!(
                "scenario needs a snapshot time when a profile is given"
            )))
        }
        (None, _) if matrix.forecast == ForecastMode::File => {
            return Err(Failure::usage(anyhow!("--forecast file needs --profile")))
        }
        (None, _) => None,
    };
    let dir = common.out_dir()?;
    let fault_opts = FaultOptions {
        power_flow: opts,
        ..FaultOptions::default()
    };
    let mut summary = Vec::new();
    for &c in &matrix.controller {
        for &k in &matrix.k {
            let mut cfg = DayConfig::new(c, k);
            cfg.forecast = matrix.forecast;
            cfg.power_flow = opts;
            let op = match (&prof, row) {
                (Some(p), Some(t)) => {
                    operating_point(&net, p, t, &cfg).map_err(|e| Failure::usage(e.into()))?
                }
                _ => {
                    let p = net.devices.iter().map(|d| 0.5 * d.p_rated).collect();
                    let mut op = OperatingPoint::base(&net).with_outputs(p);
                    if cfg.forecast != ForecastMode::None {
                        op.forecast_p = Some(op.device_p.clone());
                    }
                    op
                }
            };
            let plan = plan_for(&net, &pf, &op, &cfg).map_err(Failure::runtime)?;
            let report = simulate_fault_response(&net, &pf, &op, &plan, &scen, &fault_opts)
                .map_err(|e| Failure::runtime(e.into()))?;
            let name = format!("fault_{}", run_label(c, k, cfg.forecast));
            let w = create(dir, &format!("{name}.csv"))?;
            report
                .write_csv(&net, w)
                .map_err(|e| Failure::runtime(e.into()))?;
            write_json(dir, &format!("{name}.json"), &report)?;
            println!(
                "{name}: recovery {:.4} s, max deviation {:.4} pu, compliant {}",
                report.recovery_proxy,
                report.max_voltage_deviation,
                report.all_compliant()
            );
            summary.push(FaultSummary {
                controller: c,
                k,
                forecast: cfg.forecast,
                outcome: report.outcome.clone(),
                compliant: report.all_compliant(),
                recovery_proxy_s: report.recovery_proxy,
                max_voltage_deviation_pu: report.max_voltage_deviation,
                headroom: report.headroom,
                fault_q_kvar: net
                    .devices
                    .iter()
                    .zip(&report.fault_q)
                    .map(|(d, q)| (d.bus, net.pu_to_kw(*q)))
                    .collect(),
            });
        }
    }
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            let mut r = vec![
                s.controller.to_string(),
                s.k.to_string(),
                s.forecast.to_string(),
                match &s.outcome {
                    FaultOutcome::Normal => "normal".to_string(),
                    FaultOutcome::Severe { .. } => "severe".to_string(),
                },
                (s.compliant as u8).to_string(),
                format!("{:.9}", s.recovery_proxy_s),
                format!("{:.9}", s.max_voltage_deviation_pu),
                format!("{:.9}", s.headroom),
            ];
            r.extend(s.fault_q_kvar.iter().map(|(_, q)| format!("{q:.6}")));
            r
        })
        .collect();
    let q_cols: Vec<String> = net.devices.iter().map(|d| format!("fault_q_kvar_{}", d.bus)).collect();
    let mut header = vec![
        "controller",
        "k",
        "forecast",
        "outcome",
        "compliant",
        "recovery_proxy_s",
        "max_voltage_deviation_pu",
        "headroom",
    ];
    header.extend(q_cols.iter().map(String::as_str));
    write_csv_rows(dir, "fault_summary.csv", &header, &rows)?;
    write_json(dir, "fault_summary.json", &summary)
}

fn cmd_validate(case: &Path, profile: Option<&Path>, scenario: Option<&Path>) -> Result<(), Failure> {
    let (net, pf) = load_network(case)?;
    let tree = pf.tree();
    println!(
        "{}: {} buses, {} branches, {} devices, {} leaves, {} branch nodes",
        case.display(),
        net.buses.len(),
        net.branches.len(),
        net.devices.len(),
        tree.leaves().len(),
        tree.branch_nodes().len()
    );
    if let Some(p) = profile {
        let prof = load_profile(p)?;
        println!(
            "{}: {} rows, step {} s, span {} min, forecasts {}",
            p.display(),
            prof.len(),
            prof.step().num_seconds(),
            prof.span().num_minutes(),
            prof.has_forecasts()
        );
        for d in &net.devices {
            let col = match d.kind {
                gridloss::netmodel::DeviceKind::Pv => prof.pv(d.bus),
                gridloss::netmodel::DeviceKind::Dfig => prof.wind(d.bus),
            };
            if col.is_none() {
                return Err(Failure::usage(anyhow!(
                    "profile has no column for the {} device at bus {}",
                    d.kind.as_str(),
                    d.bus
                )));
            }
        }
    }
    if let Some(s) = scenario {
        let scen = FaultScenario::load(s).map_err(|e| Failure::usage(e.into()))?;
        if net.bus_index(scen.bus).is_none() {
            return Err(Failure::usage(LvrtError::UnknownBus(scen.bus).into()));
        }
        println!(
            "{}: bus {}, sag {}, {} s to {} s",
            s.display(),
            scen.bus,
            scen.sag,
            scen.t_start,
            scen.t_clear()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.cmd {
        Command::Powerflow { common } => cmd_powerflow(common),
        Command::Day {
            common,
            profile,
            matrix,
            night,
            resample_minutes,
        } => cmd_day(common, profile, matrix, night, *resample_minutes),
        Command::Fault {
            common,
            scenario,
            profile,
            matrix,
        } => cmd_fault(common, scenario, profile.as_deref(), matrix),
        Command::Validate {
            case,
            profile,
            scenario,
        } => cmd_validate(case, profile.as_deref(), scenario.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRIDLOSS_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
