//! Match recordings: data model, line-delimited file format and validation.
//!
//! A match file starts with one metadata line followed by one record per
//! (tick, agent):
//!
//! ```text
//! #match    match_id=m07    strategy_label=flank    arena_width=340    arena_height=340    tick_interval=3    controlled_agent_id=b02
//! 0    r00    red    301.5    40.25    1
//! 0    b00    blue    120    118.5    1
//! 3    r00    red    298.1    43.9    1
//! ...
//! ```
//!
//! Fields are tab separated and always appear in the order shown. The two
//! optional metadata fields are omitted when absent. Records sharing a time
//! value form one tick.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub const DEFAULT_ARENA: f64 = 340.0;
pub const DEFAULT_TICK_INTERVAL: f64 = 3.0;
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MATCH_EXTENSION: &str = "match";

const TIME_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid match: {}", summarize(.0))]
    Validation(Vec<Violation>),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Red,
    Blue,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Red => "red",
            Side::Blue => "blue",
        })
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "red" => Ok(Side::Red),
            "blue" => Ok(Side::Blue),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

/// High-level directive that produced the blue force's behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Assault,
    Flank,
    Fallback,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Assault, Strategy::Flank, Strategy::Fallback];

    pub fn index(self) -> usize {
        match self {
            Strategy::Assault => 0,
            Strategy::Flank => 1,
            Strategy::Fallback => 2,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Assault => "assault",
            Strategy::Flank => "flank",
            Strategy::Fallback => "fallback",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "assault" => Ok(Strategy::Assault),
            "flank" => Ok(Strategy::Flank),
            "fallback" => Ok(Strategy::Fallback),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub agent_id: String,
    pub side: Side,
    pub x: f64,
    pub y: f64,
    pub health: f64,
}

impl AgentRecord {
    pub fn is_alive(&self) -> bool {
        self.health > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub time: f64,
    pub agents: Vec<AgentRecord>,
}

impl Tick {
    pub fn agent(&self, agent_id: &str) -> Option<&AgentRecord> {
        self.agents.iter().find(|a| a.agent_id == agent_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchMeta {
    pub match_id: String,
    pub strategy_label: Option<Strategy>,
    pub arena_width: f64,
    pub arena_height: f64,
    pub tick_interval: f64,
    pub controlled_agent_id: Option<String>,
}

impl MatchMeta {
    pub fn new(match_id: impl Into<String>) -> Self {
        Self {
            match_id: match_id.into(),
            strategy_label: None,
            arena_width: DEFAULT_ARENA,
            arena_height: DEFAULT_ARENA,
            tick_interval: DEFAULT_TICK_INTERVAL,
            controlled_agent_id: None,
        }
    }

    pub fn arena_diagonal(&self) -> f64 {
        self.arena_width.hypot(self.arena_height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub meta: MatchMeta,
    pub ticks: Vec<Tick>,
}

impl Match {
    pub fn duration(&self) -> f64 {
        match (self.ticks.first(), self.ticks.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    /// Recorded positions of one agent, one entry per tick.
    pub fn track(&self, agent_id: &str) -> Option<Vec<&AgentRecord>> {
        self.ticks.iter().map(|t| t.agent(agent_id)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    EmptyMatch,
    EmptyTick,
    DuplicateAgent,
    ArenaSize,
    TickSpacing,
    TimeOrdering,
    HealthRange,
    ArenaBounds,
    AgentContinuity,
    Resurrection,
    ControlledAgent,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::EmptyMatch => "empty match",
            ViolationKind::EmptyTick => "empty tick",
            ViolationKind::DuplicateAgent => "duplicate agent",
            ViolationKind::ArenaSize => "arena size",
            ViolationKind::TickSpacing => "tick spacing",
            ViolationKind::TimeOrdering => "time ordering",
            ViolationKind::HealthRange => "health range",
            ViolationKind::ArenaBounds => "arena bounds",
            ViolationKind::AgentContinuity => "agent continuity",
            ViolationKind::Resurrection => "resurrection",
            ViolationKind::ControlledAgent => "controlled agent",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.kind, self.detail)
    }
}

/// Collects every invariant breach. Each kind is reported once, at its
/// first occurrence.
pub fn validate_match(m: &Match) -> Vec<Violation> {
    let mut out: Vec<Violation> = Vec::new();
    let mut push = |kind: ViolationKind, detail: String| {
        if !out.iter().any(|v| v.kind == kind) {
            out.push(Violation { kind, detail });
        }
    };

    let meta = &m.meta;
    if !(meta.arena_width > 0.0 && meta.arena_height > 0.0 && meta.tick_interval > 0.0) {
        push(
            ViolationKind::ArenaSize,
            format!(
                "arena {}x{}, tick interval {}",
                meta.arena_width, meta.arena_height, meta.tick_interval
            ),
        );
    }
    if m.ticks.is_empty() {
        push(ViolationKind::EmptyMatch, "no ticks".into());
        return out;
    }

    for (i, tick) in m.ticks.iter().enumerate() {
        if tick.agents.is_empty() {
            push(ViolationKind::EmptyTick, format!("tick {i}"));
        }
        let mut seen = HashSet::new();
        for a in &tick.agents {
            if !seen.insert(a.agent_id.as_str()) {
                push(
                    ViolationKind::DuplicateAgent,
                    format!("agent {} twice at tick {i}", a.agent_id),
                );
            }
            if !(0.0..=1.0).contains(&a.health) {
                push(
                    ViolationKind::HealthRange,
                    format!("agent {} health {} at tick {i}", a.agent_id, a.health),
                );
            }
            if !(0.0..=meta.arena_width).contains(&a.x) || !(0.0..=meta.arena_height).contains(&a.y)
            {
                push(
                    ViolationKind::ArenaBounds,
                    format!("agent {} at ({}, {}) at tick {i}", a.agent_id, a.x, a.y),
                );
            }
        }
        if i > 0 {
            let dt = tick.time - m.ticks[i - 1].time;
            if dt <= 0.0 || dt.is_nan() {
                push(
                    ViolationKind::TimeOrdering,
                    format!("time {} follows {}", tick.time, m.ticks[i - 1].time),
                );
            } else if (dt - meta.tick_interval).abs() > TIME_TOLERANCE * meta.tick_interval.max(1.0)
            {
                push(
                    ViolationKind::TickSpacing,
                    format!("gap {dt} before tick {i}, expected {}", meta.tick_interval),
                );
            }
        }
    }

    let first = &m.ticks[0];
    let mut dead: HashMap<&str, bool> = first
        .agents
        .iter()
        .map(|a| (a.agent_id.as_str(), !a.is_alive()))
        .collect();
    for (i, tick) in m.ticks.iter().enumerate().skip(1) {
        for a0 in &first.agents {
            match tick.agent(&a0.agent_id) {
                None => push(
                    ViolationKind::AgentContinuity,
                    format!("agent {} missing at tick {i}", a0.agent_id),
                ),
                Some(a) => {
                    let was_dead = dead.get(a0.agent_id.as_str()).copied().unwrap_or(false);
                    if was_dead && a.is_alive() {
                        push(
                            ViolationKind::Resurrection,
                            format!("agent {} alive again at tick {i}", a.agent_id),
                        );
                    }
                    if !a.is_alive() {
                        dead.insert(a0.agent_id.as_str(), true);
                    }
                }
            }
        }
    }

    if let Some(id) = &meta.controlled_agent_id {
        match first.agent(id) {
            Some(a) if a.side == Side::Blue => {}
            Some(_) => push(ViolationKind::ControlledAgent, format!("{id} is not blue")),
            None => push(ViolationKind::ControlledAgent, format!("{id} not in match")),
        }
    }
    out
}

fn check_identifier(value: &str, line: usize) -> Result<(), TrajectoryError> {
    if value.is_empty() || value.chars().any(|c| c.is_whitespace() || c == '=') {
        return Err(TrajectoryError::Parse {
            line,
            message: format!("invalid identifier `{value}`"),
        });
    }
    Ok(())
}

fn parse_number(value: &str, field: &str, line: usize) -> Result<f64, TrajectoryError> {
    let v: f64 = value.parse().map_err(|_| TrajectoryError::Parse {
        line,
        message: format!("{field}: `{value}` is not a decimal number"),
    })?;
    if !v.is_finite() {
        return Err(TrajectoryError::Parse {
            line,
            message: format!("{field}: non-finite value"),
        });
    }
    Ok(v)
}

fn parse_meta(text: &str) -> Result<MatchMeta, TrajectoryError> {
    let err = |message: String| TrajectoryError::Parse { line: 1, message };
    let mut fields = text.split('\t');
    if fields.next() != Some("#match") {
        return Err(err("expected `#match` metadata record".into()));
    }
    let mut pairs = Vec::new();
    for field in fields {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| err(format!("metadata field `{field}` lacks `=`")))?;
        pairs.push((k, v));
    }
    let mut it = pairs.into_iter().peekable();
    let mut take = |key: &str, optional: bool| -> Result<Option<&str>, TrajectoryError> {
        match it.peek() {
            Some((k, v)) if *k == key => {
                let v = *v;
                it.next();
                Ok(Some(v))
            }
            _ if optional => Ok(None),
            Some((k, _)) => Err(err(format!("expected `{key}`, found `{k}`"))),
            None => Err(err(format!("missing `{key}`"))),
        }
    };
    let match_id = take("match_id", false)?.unwrap_or_default().to_string();
    check_identifier(&match_id, 1)?;
    let strategy_label = take("strategy_label", true)?
        .map(|s| s.parse::<Strategy>().map_err(&err))
        .transpose()?;
    let arena_width = parse_number(take("arena_width", false)?.unwrap_or_default(), "arena_width", 1)?;
    let arena_height =
        parse_number(take("arena_height", false)?.unwrap_or_default(), "arena_height", 1)?;
    let tick_interval =
        parse_number(take("tick_interval", false)?.unwrap_or_default(), "tick_interval", 1)?;
    let controlled_agent_id = take("controlled_agent_id", true)?.map(str::to_string);
    if let Some(id) = &controlled_agent_id {
        check_identifier(id, 1)?;
    }
    if let Some((k, _)) = it.next() {
        return Err(err(format!("unexpected metadata field `{k}`")));
    }
    Ok(MatchMeta {
        match_id,
        strategy_label,
        arena_width,
        arena_height,
        tick_interval,
        controlled_agent_id,
    })
}

fn parse_record(text: &str, line: usize) -> Result<(f64, AgentRecord), TrajectoryError> {
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() != 6 {
        return Err(TrajectoryError::Parse {
            line,
            message: format!("expected 6 fields, found {}", fields.len()),
        });
    }
    let time = parse_number(fields[0], "time", line)?;
    check_identifier(fields[1], line)?;
    let side = fields[2]
        .parse::<Side>()
        .map_err(|message| TrajectoryError::Parse { line, message })?;
    Ok((
        time,
        AgentRecord {
            agent_id: fields[1].to_string(),
            side,
            x: parse_number(fields[3], "x", line)?,
            y: parse_number(fields[4], "y", line)?,
            health: parse_number(fields[5], "health", line)?,
        },
    ))
}

/// Parses and validates one match file. No partially built match is ever
/// returned.
pub fn parse_match<R: BufRead>(source: R) -> Result<Match, TrajectoryError> {
    let mut lines = source.lines();
    let header = lines.next().ok_or(TrajectoryError::Parse {
        line: 1,
        message: "empty input".into(),
    })??;
    let meta = parse_meta(header.trim_end_matches('\r'))?;
    let mut ticks: Vec<Tick> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (time, record) = parse_record(line, idx + 2)?;
        match ticks.last_mut() {
            Some(t) if t.time == time => t.agents.push(record),
            _ => ticks.push(Tick {
                time,
                agents: vec![record],
            }),
        }
    }
    let m = Match { meta, ticks };
    let violations = validate_match(&m);
    if violations.is_empty() {
        Ok(m)
    } else {
        Err(TrajectoryError::Validation(violations))
    }
}

pub fn write_match<W: Write>(m: &Match, mut out: W) -> io::Result<()> {
    let meta = &m.meta;
    write!(out, "#match\tmatch_id={}", meta.match_id)?;
    if let Some(label) = meta.strategy_label {
        write!(out, "\tstrategy_label={label}")?;
    }
    write!(
        out,
        "\tarena_width={}\tarena_height={}\ttick_interval={}",
        meta.arena_width, meta.arena_height, meta.tick_interval
    )?;
    if let Some(id) = &meta.controlled_agent_id {
        write!(out, "\tcontrolled_agent_id={id}")?;
    }
    writeln!(out)?;
    for tick in &m.ticks {
        for a in &tick.agents {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                tick.time, a.agent_id, a.side, a.x, a.y, a.health
            )?;
        }
    }
    Ok(())
}

pub fn match_to_string(m: &Match) -> String {
    let mut buf = Vec::new();
    write_match(m, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("match files are UTF-8")
}

pub fn read_match_file(path: &Path) -> Result<Match, TrajectoryError> {
    let file = fs::File::open(path)?;
    parse_match(io::BufReader::new(file))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub match_id: String,
    pub label: Option<String>,
    /// Initial force separation preset of generated matches.
    #[serde(default)]
    pub separation: Option<String>,
}

impl ManifestEntry {
    pub fn strategy(&self) -> Option<Strategy> {
        self.label.as_deref().and_then(|l| l.parse().ok())
    }
}

/// Writes one file per match plus `manifest.csv` into `dir`.
pub fn write_dataset(dir: &Path, matches: &[Match]) -> Result<Vec<ManifestEntry>, TrajectoryError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(matches.len());
    for m in matches {
        let file = format!("{}.{MATCH_EXTENSION}", m.meta.match_id);
        write_atomic(&dir.join(&file), match_to_string(m).as_bytes())?;
        entries.push(ManifestEntry {
            file,
            match_id: m.meta.match_id.clone(),
            label: m.meta.strategy_label.map(|s| s.to_string()),
            separation: None,
        });
    }
    write_manifest(dir, &entries)?;
    Ok(entries)
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<(), TrajectoryError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in entries {
        w.serialize(e)?;
    }
    let bytes = w.into_inner().map_err(|e| TrajectoryError::Io(e.into_error()))?;
    write_atomic(&dir.join(MANIFEST_FILE), &bytes)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, TrajectoryError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(TrajectoryError::Manifest(format!(
            "{} does not exist",
            path.display()
        )));
    }
    let mut r = csv::Reader::from_path(&path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let e: ManifestEntry = row?;
        if let Some(l) = &e.label {
            l.parse::<Strategy>().map_err(TrajectoryError::Manifest)?;
        }
        out.push(e);
    }
    Ok(out)
}

/// Reads every match listed in the manifest, in manifest order.
pub fn read_dataset(dir: &Path) -> Result<Vec<(ManifestEntry, Match)>, TrajectoryError> {
    read_manifest(dir)?
        .into_iter()
        .map(|e| {
            let m = read_match_file(&dir.join(&e.file))?;
            Ok((e, m))
        })
        .collect()
}
