//! Radial feeder data model and the `.case` text format.
//!
//! A case file is UTF-8 text made of header directives followed by `BUS`,
//! `BRANCH`, `DEVICE` and optional `CURVE <name>` sections. Columns are
//! whitespace separated and `%` starts a comment.
//!
//! ```text
//! BASE_MVA 10
//! BASE_KV 12.66
//! UNITS physical          % or `pu`
//!
//! BUS
//! % id  type   Pd    Qd    [Vmin Vmax]
//!   1   slack  0     0
//!   2   pq     100   60    0.9  1.1
//! BRANCH
//! % from to  r      x
//!   1    2   0.0922 0.0470
//! DEVICE
//! % bus kind  S_rated  P_rated  [curve]
//!   2   pv    500      500
//! ```
//!
//! With `UNITS physical` (the default) loads are kW/kVAr, impedances ohm and
//! device ratings kVA/kW; with `UNITS pu` every column is already per-unit on
//! the case base. Bus type is `slack` (or MATPOWER's `3`/`ref`) or `pq` (`1`).
//! DFIG rows take an optional curve column naming a `CURVE` section or a file
//! (relative to the case file); without it the bundled curve is used.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{DfigEnvelope, Envelope, PvEnvelope};

pub type BusId = u32;

pub const DEFAULT_V_MIN: f64 = 0.9;
pub const DEFAULT_V_MAX: f64 = 1.1;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Semantic(String),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn syntax(line: usize, msg: impl Into<String>) -> CaseError {
    CaseError::Syntax {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("cycle detected: branch {from}-{to} closes a loop")]
    Cycle { from: BusId, to: BusId },
    #[error("bus {0} is not connected to the slack bus")]
    Disconnected(BusId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    /// Active load, p.u.
    pub load_p: f64,
    /// Reactive load, p.u.
    pub load_q: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Bus {
    pub fn new(id: BusId, load_p: f64, load_q: f64) -> Self {
        Bus {
            id,
            load_p,
            load_q,
            v_min: DEFAULT_V_MIN,
            v_max: DEFAULT_V_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Pv,
    Dfig,
}

impl DeviceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::Pv => "pv",
            DeviceKind::Dfig => "dfig",
        }
    }
}

/// Inverter-interfaced generator. Ratings are system p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub bus: BusId,
    pub kind: DeviceKind,
    pub s_rated: f64,
    pub p_rated: f64,
    pub capability: Envelope,
}

impl Device {
    pub fn pv(bus: BusId, rating: f64) -> Self {
        Device {
            bus,
            kind: DeviceKind::Pv,
            s_rated: rating,
            p_rated: rating,
            capability: Envelope::Pv(PvEnvelope::new(rating)),
        }
    }

    pub fn dfig(bus: BusId, s_rated: f64, p_rated: f64, curve: DfigEnvelope) -> Self {
        Device {
            bus,
            kind: DeviceKind::Dfig,
            s_rated,
            p_rated,
            capability: Envelope::Dfig { curve, s_rated },
        }
    }
}

/// Validated radial feeder in per-unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub devices: Vec<Device>,
    pub slack_bus: BusId,
    #[serde(skip)]
    index: HashMap<BusId, usize>,
}

impl Network {
    /// Checks the local invariants; topology is checked by [`orient_radial`].
    pub fn new(
        base_mva: f64,
        base_kv: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        devices: Vec<Device>,
        slack_bus: BusId,
    ) -> Result<Self, CaseError> {
        let bad = |m: String| Err(CaseError::Semantic(m));
        if !(base_mva > 0.0 && base_mva.is_finite()) {
            return bad(format!("base MVA must be positive, got {base_mva}"));
        }
        if !(base_kv > 0.0 && base_kv.is_finite()) {
            return bad(format!("base kV must be positive, got {base_kv}"));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return bad(format!("duplicate bus id {}", b.id));
            }
            if !(b.v_min < b.v_max) {
                return bad(format!("bus {}: v_min {} >= v_max {}", b.id, b.v_min, b.v_max));
            }
            if !b.load_p.is_finite() || !b.load_q.is_finite() {
                return bad(format!("bus {}: non-finite load", b.id));
            }
        }
        if !index.contains_key(&slack_bus) {
            return bad(format!("slack bus {slack_bus} not in bus list"));
        }
        for (i, br) in branches.iter().enumerate() {
            for end in [br.from_bus, br.to_bus] {
                if !index.contains_key(&end) {
                    return bad(format!("branch {} references unknown bus {end}", i + 1));
                }
            }
            if br.from_bus == br.to_bus {
                return bad(format!("branch {} is a self-loop at bus {}", i + 1, br.from_bus));
            }
            if !(br.r >= 0.0 && br.x >= 0.0) || (br.r == 0.0 && br.x == 0.0) {
                return bad(format!(
                    "branch {}-{}: impedance must be nonnegative and nonzero (r={}, x={})",
                    br.from_bus, br.to_bus, br.r, br.x
                ));
            }
        }
        let mut seen = HashSet::new();
        for d in &devices {
            if !index.contains_key(&d.bus) {
                return bad(format!("device references unknown bus {}", d.bus));
            }
            if !seen.insert(d.bus) {
                return bad(format!("more than one device at bus {}", d.bus));
            }
            if !(d.s_rated > 0.0) || !(d.p_rated > 0.0) {
                return bad(format!("device at bus {}: ratings must be positive", d.bus));
            }
            if d.kind == DeviceKind::Pv && d.s_rated != d.p_rated {
                return bad(format!(
                    "PV device at bus {}: apparent rating {} must equal active rating {}",
                    d.bus, d.s_rated, d.p_rated
                ));
            }
            if d.p_rated > d.s_rated {
                return bad(format!("device at bus {}: P rating exceeds S rating", d.bus));
            }
        }
        Ok(Network {
            base_mva,
            base_kv,
            buses,
            branches,
            devices,
            slack_bus,
            index,
        })
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.bus_index(id).map(|i| &self.buses[i])
    }

    pub fn slack_index(&self) -> usize {
        self.index[&self.slack_bus]
    }

    pub fn device_at(&self, id: BusId) -> Option<usize> {
        self.devices.iter().position(|d| d.bus == id)
    }

    /// Same feeder with a different device fleet.
    pub fn with_devices(&self, devices: Vec<Device>) -> Result<Network, CaseError> {
        Network::new(
            self.base_mva,
            self.base_kv,
            self.buses.clone(),
            self.branches.clone(),
            devices,
            self.slack_bus,
        )
    }

    /// Impedance base in ohm.
    pub fn z_base(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / (self.base_mva * 1000.0)
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.base_mva * 1000.0
    }

    /// Per-unit text form that parses back to an identical network.
    pub fn to_case_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "% written by gridloss");
        let _ = writeln!(out, "BASE_MVA {}", self.base_mva);
        let _ = writeln!(out, "BASE_KV {}", self.base_kv);
        let _ = writeln!(out, "UNITS pu");
        let _ = writeln!(out, "BUS");
        for b in &self.buses {
            let kind = if b.id == self.slack_bus { "slack" } else { "pq" };
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                b.id, kind, b.load_p, b.load_q, b.v_min, b.v_max
            );
        }
        let _ = writeln!(out, "BRANCH");
        for br in &self.branches {
            let _ = writeln!(out, "{} {} {} {}", br.from_bus, br.to_bus, br.r, br.x);
        }
        let default_curve = DfigEnvelope::default_curve();
        let mut curves = Vec::new();
        let _ = writeln!(out, "DEVICE");
        for d in &self.devices {
            let _ = write!(
                out,
                "{} {} {} {}",
                d.bus,
                d.kind.as_str(),
                d.s_rated,
                d.p_rated
            );
            if let Envelope::Dfig { curve, .. } = &d.capability {
                if *curve != default_curve {
                    let name = format!("dfig_{}", d.bus);
                    let _ = write!(out, " {name}");
                    curves.push((name, curve));
                }
            }
            out.push('\n');
        }
        for (name, curve) in curves {
            let _ = writeln!(out, "CURVE {name}");
            for (p, q) in curve.points() {
                let _ = writeln!(out, "{p} {q}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Header,
    Bus,
    Branch,
    Device,
    Curve,
}

struct RawDevice {
    line: usize,
    bus: BusId,
    kind: DeviceKind,
    s: f64,
    p: f64,
    curve: Option<String>,
}

/// Parses case text. Curve files named by DFIG rows resolve against the
/// working directory; use [`load_case`] to resolve against the file's own.
pub fn parse_case(text: &str) -> Result<Network, CaseError> {
    parse_case_in(text, None)
}

pub fn load_case(path: &Path) -> Result<Network, CaseError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case_in(&text, path.parent())
}

pub fn parse_case_in(text: &str, base_dir: Option<&Path>) -> Result<Network, CaseError> {
    let mut section = Section::Header;
    let mut base_mva = None;
    let mut base_kv = None;
    let mut physical = true;
    let mut buses: Vec<(usize, Bus, bool)> = Vec::new();
    let mut branches: Vec<(usize, Branch)> = Vec::new();
    let mut devices: Vec<RawDevice> = Vec::new();
    let mut curves: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    let mut curve_name = String::new();

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('%').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let num = |j: usize| -> Result<f64, CaseError> {
            let s = cols
                .get(j)
                .ok_or_else(|| syntax(ln, format!("missing column {}", j + 1)))?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| syntax(ln, format!("not a number: {s:?}")))
        };
        let id = |j: usize| -> Result<BusId, CaseError> {
            let s = cols
                .get(j)
                .ok_or_else(|| syntax(ln, format!("missing column {}", j + 1)))?;
            s.parse::<BusId>()
                .map_err(|_| syntax(ln, format!("not a bus id: {s:?}")))
        };

        match cols[0].to_ascii_uppercase().as_str() {
            "BUS" if cols.len() == 1 => {
                section = Section::Bus;
                continue;
            }
            "BRANCH" if cols.len() == 1 => {
                section = Section::Branch;
                continue;
            }
            "DEVICE" if cols.len() == 1 => {
                section = Section::Device;
                continue;
            }
            "CURVE" => {
                if cols.len() != 2 {
                    return Err(syntax(ln, "CURVE needs exactly one name"));
                }
                curve_name = cols[1].to_string();
                if curves.insert(curve_name.clone(), Vec::new()).is_some() {
                    return Err(syntax(ln, format!("duplicate curve {curve_name:?}")));
                }
                section = Section::Curve;
                continue;
            }
            _ => {}
        }

        match section {
            Section::Header => {
                if cols.len() != 2 {
                    return Err(syntax(ln, format!("unexpected header line {line:?}")));
                }
                match cols[0].to_ascii_uppercase().as_str() {
                    "BASE_MVA" => base_mva = Some(num(1)?),
                    "BASE_KV" => base_kv = Some(num(1)?),
                    "UNITS" => {
                        physical = match cols[1].to_ascii_lowercase().as_str() {
                            "physical" => true,
                            "pu" => false,
                            u => return Err(syntax(ln, format!("unknown units {u:?}"))),
                        }
                    }
                    d => return Err(syntax(ln, format!("unknown directive {d:?}"))),
                }
            }
            Section::Bus => {
                if cols.len() != 4 && cols.len() != 6 {
                    return Err(syntax(
                        ln,
                        format!("BUS row needs 4 or 6 columns, found {}", cols.len()),
                    ));
                }
                let slack = match cols[1].to_ascii_lowercase().as_str() {
                    "slack" | "ref" | "3" => true,
                    "pq" | "1" => false,
                    t => return Err(syntax(ln, format!("unsupported bus type {t:?}"))),
                };
                let mut bus = Bus::new(id(0)?, num(2)?, num(3)?);
                if cols.len() == 6 {
                    bus.v_min = num(4)?;
                    bus.v_max = num(5)?;
                }
                buses.push((ln, bus, slack));
            }
            Section::Branch => {
                if cols.len() != 4 {
                    return Err(syntax(
                        ln,
                        format!("BRANCH row needs 4 columns, found {}", cols.len()),
                    ));
                }
                branches.push((
                    ln,
                    Branch {
                        from_bus: id(0)?,
                        to_bus: id(1)?,
                        r: num(2)?,
                        x: num(3)?,
                    },
                ));
            }
            Section::Device => {
                if cols.len() != 4 && cols.len() != 5 {
                    return Err(syntax(
                        ln,
                        format!("DEVICE row needs 4 or 5 columns, found {}", cols.len()),
                    ));
                }
                let kind = match cols[1].to_ascii_lowercase().as_str() {
                    "pv" => DeviceKind::Pv,
                    "dfig" | "wind" => DeviceKind::Dfig,
                    t => return Err(syntax(ln, format!("unknown device kind {t:?}"))),
                };
                if kind == DeviceKind::Pv && cols.len() == 5 {
                    return Err(syntax(ln, "PV devices take no curve column"));
                }
                devices.push(RawDevice {
                    line: ln,
                    bus: id(0)?,
                    kind,
                    s: num(2)?,
                    p: num(3)?,
                    curve: cols.get(4).map(|s| s.to_string()),
                });
            }
            Section::Curve => {
                if cols.len() != 2 {
                    return Err(syntax(ln, "curve rows need 2 columns"));
                }
                let point = (num(0)?, num(1)?);
                curves.get_mut(&curve_name).expect("open curve").push(point);
            }
        }
    }

    let base_mva = base_mva.ok_or_else(|| CaseError::Semantic("missing BASE_MVA".into()))?;
    let base_kv = base_kv.ok_or_else(|| CaseError::Semantic("missing BASE_KV".into()))?;
    if buses.is_empty() {
        return Err(CaseError::Semantic("case has no buses".into()));
    }
    let (s_scale, z_scale) = if physical {
        (1.0 / (base_mva * 1000.0), base_mva / (base_kv * base_kv))
    } else {
        (1.0, 1.0)
    };

    let slacks: Vec<&(usize, Bus, bool)> = buses.iter().filter(|b| b.2).collect();
    let slack_bus = match slacks.as_slice() {
        [one] => one.1.id,
        [] => return Err(CaseError::Semantic("no slack bus".into())),
        [_, second, ..] => {
            return Err(syntax(second.0, "more than one slack bus"));
        }
    };
    let bus_ids: HashSet<BusId> = buses.iter().map(|b| b.1.id).collect();
    for (ln, br) in &branches {
        for end in [br.from_bus, br.to_bus] {
            if !bus_ids.contains(&end) {
                return Err(CaseError::Semantic(format!(
                    "line {ln}: branch {}-{} references unknown bus {end}",
                    br.from_bus, br.to_bus
                )));
            }
        }
    }

    let mut curve_cache: HashMap<String, DfigEnvelope> = HashMap::new();
    let mut out_devices = Vec::with_capacity(devices.len());
    for d in devices {
        let (s, p) = (d.s * s_scale, d.p * s_scale);
        let dev = match d.kind {
            DeviceKind::Pv => {
                if d.s != d.p {
                    return Err(CaseError::Semantic(format!(
                        "line {}: PV apparent rating must equal active rating",
                        d.line
                    )));
                }
                Device::pv(d.bus, s)
            }
            DeviceKind::Dfig => {
                let curve = match d.curve {
                    None => DfigEnvelope::default_curve(),
                    Some(name) => match curve_cache.get(&name) {
                        Some(c) => c.clone(),
                        None => {
                            let c = resolve_curve(&name, &curves, base_dir, d.line)?;
                            curve_cache.insert(name, c.clone());
                            c
                        }
                    },
                };
                Device::dfig(d.bus, s, p, curve)
            }
        };
        out_devices.push(dev);
    }

    let buses = buses
        .into_iter()
        .map(|(_, mut b, _)| {
            b.load_p *= s_scale;
            b.load_q *= s_scale;
            b
        })
        .collect();
    let branches = branches
        .into_iter()
        .map(|(_, mut br)| {
            br.r *= z_scale;
            br.x *= z_scale;
            br
        })
        .collect();
    Network::new(base_mva, base_kv, buses, branches, out_devices, slack_bus)
}

fn resolve_curve(
    name: &str,
    inline: &HashMap<String, Vec<(f64, f64)>>,
    base_dir: Option<&Path>,
    line: usize,
) -> Result<DfigEnvelope, CaseError> {
    if let Some(points) = inline.get(name) {
        return DfigEnvelope::new(points.clone())
            .map_err(|e| CaseError::Semantic(format!("curve {name:?}: {e}")));
    }
    let path = match base_dir {
        Some(dir) => dir.join(name),
        None => Path::new(name).to_path_buf(),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| {
        syntax(
            line,
            format!("curve {name:?} is neither a CURVE section nor a readable file: {e}"),
        )
    })?;
    DfigEnvelope::parse(&text)
        .map_err(|e| CaseError::Semantic(format!("curve file {}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Slack,
    /// Non-slack bus with at least one downstream neighbour.
    Branch,
    Leaf,
}

/// Parent/children relation of a radial feeder rooted at the slack bus.
/// All indices are positions in `Network::buses` / `Network::branches`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTree {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    pub parent_branch: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Breadth-first order from the root; parents precede children.
    pub order: Vec<usize>,
    /// Branch indices incident to each bus.
    pub incident: Vec<Vec<usize>>,
}

impl RadialTree {
    pub fn kind(&self, bus: usize) -> NodeKind {
        if bus == self.root {
            NodeKind::Slack
        } else if self.children[bus].is_empty() {
            NodeKind::Leaf
        } else {
            NodeKind::Branch
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.parent.len())
            .filter(|&b| self.kind(b) == NodeKind::Leaf)
            .collect()
    }

    pub fn branch_nodes(&self) -> Vec<usize> {
        (0..self.parent.len())
            .filter(|&b| self.kind(b) == NodeKind::Branch)
            .collect()
    }
}

/// Orients the feeder from the slack bus; rejects loops and islands.
pub fn orient_radial(net: &Network) -> Result<RadialTree, TopologyError> {
    let n = net.buses.len();
    let mut incident = vec![Vec::new(); n];
    for (k, br) in net.branches.iter().enumerate() {
        let f = net.bus_index(br.from_bus).expect("validated");
        let t = net.bus_index(br.to_bus).expect("validated");
        incident[f].push(k);
        incident[t].push(k);
    }
    let root = net.slack_index();
    let mut parent = vec![None; n];
    let mut parent_branch = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut used = vec![false; net.branches.len()];
    let mut queue = VecDeque::from([root]);
    visited[root] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &k in &incident[u] {
            if used[k] {
                continue;
            }
            used[k] = true;
            let br = &net.branches[k];
            let f = net.bus_index(br.from_bus).expect("validated");
            let v = if f == u {
                net.bus_index(br.to_bus).expect("validated")
            } else {
                f
            };
            if visited[v] {
                return Err(TopologyError::Cycle {
                    from: br.from_bus,
                    to: br.to_bus,
                });
            }
            visited[v] = true;
            parent[v] = Some(u);
            parent_branch[v] = Some(k);
            children[u].push(v);
            queue.push_back(v);
        }
    }
    if let Some(b) = visited.iter().position(|v| !v) {
        // A loop confined to an island is still reported as disconnection.
        return Err(TopologyError::Disconnected(net.buses[b].id));
    }
    Ok(RadialTree {
        root,
        parent,
        parent_branch,
        children,
        order,
        incident,
    })
}
