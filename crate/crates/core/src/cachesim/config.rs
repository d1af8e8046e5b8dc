//! Cache hierarchy parameters and their key-value text form.
//!
//! ```text
//! # comments start with '#'
//! line_size = 64
//! replacement = lru
//! l1d.shared = false
//! l1d.assoc = 8
//! l1d.size = 32kB
//! l1d.latency = 4
//! l1d.mshrs = 32
//! l2.* / l3.*  same keys
//! memory.latency = 155
//! memory.bandwidth = 16GB/s
//! memory.size = 32GB
//! ```
//!
//! Sizes accept `B`, `kB`/`KB`/`KiB`, `MB`/`MiB`, `GB`/`GiB` suffixes, all
//! binary multiples.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SimError;

pub const LINE_BYTES: u64 = 64;
pub const LEVEL_NAMES: [&str; 3] = ["l1d", "l2", "l3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Replacement {
    Lru,
    Fifo,
}

impl FromStr for Replacement {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lru" => Ok(Replacement::Lru),
            "fifo" => Ok(Replacement::Fifo),
            _ => Err(SimError::Config(format!("unknown replacement policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub shared: bool,
    pub assoc: usize,
    pub size_bytes: u64,
    pub latency: u64,
    pub mshrs: usize,
}

impl LevelConfig {
    pub fn sets(&self, line: u64) -> usize {
        (self.size_bytes / (self.assoc as u64 * line)) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    /// L1D, L2, L3 in probe order.
    pub levels: [LevelConfig; 3],
    pub line_size: u64,
    pub memory_latency: u64,
    /// Recorded for reference only; memory is modelled as fixed latency.
    pub memory_bandwidth_bytes_per_s: u64,
    pub memory_size_bytes: u64,
    pub replacement: Replacement,
}

const KIB: u64 = 1024;
const MIB: u64 = 1024 * KIB;
const GIB: u64 = 1024 * MIB;

impl Default for CacheConfig {
    fn default() -> Self {
        Self::table1()
    }
}

impl CacheConfig {
    /// Xeon E5-2670-like hierarchy: 8-way 32kB L1D, 8-way 256kB L2, 16-way
    /// 20MB shared L3, 155-cycle memory.
    pub fn table1() -> Self {
        Self {
            levels: [
                LevelConfig {
                    shared: false,
                    assoc: 8,
                    size_bytes: 32 * KIB,
                    latency: 4,
                    mshrs: 32,
                },
                LevelConfig {
                    shared: false,
                    assoc: 8,
                    size_bytes: 256 * KIB,
                    latency: 12,
                    mshrs: 32,
                },
                LevelConfig {
                    shared: true,
                    assoc: 16,
                    size_bytes: 20 * MIB,
                    latency: 28,
                    mshrs: 128,
                },
            ],
            line_size: LINE_BYTES,
            memory_latency: 155,
            memory_bandwidth_bytes_per_s: 16 * GIB,
            memory_size_bytes: 32 * GIB,
            replacement: Replacement::Lru,
        }
    }

    /// Capacities scaled so a `side`³ grid sees the same cache pressure a
    /// 64³ grid sees with the unscaled hierarchy. Identity for `side >= 64`.
    pub fn for_grid_side(side: usize) -> Result<Self, SimError> {
        let base = Self::table1();
        if side >= 64 {
            return Ok(base);
        }
        let ratio = (64.0 / side as f64).powi(3);
        let mut out = base.clone();
        for l in &mut out.levels {
            let unit = l.assoc as u64 * out.line_size;
            let sets = ((l.size_bytes / unit) as f64 / ratio).floor().max(1.0) as u64;
            l.size_bytes = sets * unit;
        }
        out.validate()?;
        Ok(out)
    }

    /// All latencies zero. With no latency no miss is ever outstanding, so
    /// the simulator reduces to a purely functional cache model.
    pub fn latency_free(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.levels {
            l.latency = 0;
        }
        out.memory_latency = 0;
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.line_size != LINE_BYTES {
            return Err(SimError::Config(format!(
                "line size must be {LINE_BYTES}, got {}",
                self.line_size
            )));
        }
        for (name, l) in LEVEL_NAMES.iter().zip(&self.levels) {
            if l.assoc == 0 || l.mshrs == 0 || l.size_bytes == 0 {
                return Err(SimError::Config(format!(
                    "{name}: associativity, size and MSHR count must be positive"
                )));
            }
            if l.size_bytes % (l.assoc as u64 * self.line_size) != 0 {
                return Err(SimError::Config(format!(
                    "{name}: size {} not divisible by associativity x line size",
                    l.size_bytes
                )));
            }
        }
        Ok(())
    }

    /// Cumulative latency of a hit at `level` (0-based), or of a memory
    /// access when `level == 3`.
    pub fn latency_to(&self, level: usize) -> u64 {
        let caches: u64 = self.levels.iter().take(level + 1).map(|l| l.latency).sum();
        if level >= self.levels.len() {
            caches + self.memory_latency
        } else {
            caches
        }
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut cfg = Self::table1();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| SimError::Config(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<u64>().map_err(|_| err(format!("bad number `{v}`")));
            match key {
                "line_size" => cfg.line_size = parse_size(value).map_err(err)?,
                "replacement" => cfg.replacement = value.parse()?,
                "memory.latency" => cfg.memory_latency = num(value)?,
                "memory.size" => cfg.memory_size_bytes = parse_size(value).map_err(err)?,
                "memory.bandwidth" => {
                    let v = value.strip_suffix("/s").unwrap_or(value);
                    cfg.memory_bandwidth_bytes_per_s = parse_size(v).map_err(err)?;
                }
                _ => {
                    let (level, field) = key.split_once('.').ok_or_else(|| err(format!("unknown key `{key}`")))?;
                    let idx = LEVEL_NAMES
                        .iter()
                        .position(|n| *n == level)
                        .ok_or_else(|| err(format!("unknown cache level `{level}`")))?;
                    let l = &mut cfg.levels[idx];
                    match field {
                        "shared" => l.shared = value.parse().map_err(|_| err(format!("bad boolean `{value}`")))?,
                        "assoc" => l.assoc = num(value)? as usize,
                        "size" => l.size_bytes = parse_size(value).map_err(err)?,
                        "latency" => l.latency = num(value)?,
                        "mshrs" => l.mshrs = num(value)? as usize,
                        _ => return Err(err(format!("unknown key `{key}`"))),
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "line_size = {}", self.line_size);
        let _ = writeln!(
            s,
            "replacement = {}",
            match self.replacement {
                Replacement::Lru => "lru",
                Replacement::Fifo => "fifo",
            }
        );
        for (name, l) in LEVEL_NAMES.iter().zip(&self.levels) {
            let _ = writeln!(s, "{name}.shared = {}", l.shared);
            let _ = writeln!(s, "{name}.assoc = {}", l.assoc);
            let _ = writeln!(s, "{name}.size = {}", format_size(l.size_bytes));
            let _ = writeln!(s, "{name}.latency = {}", l.latency);
            let _ = writeln!(s, "{name}.mshrs = {}", l.mshrs);
        }
        let _ = writeln!(s, "memory.latency = {}", self.memory_latency);
        let _ = writeln!(
            s,
            "memory.bandwidth = {}/s",
            format_size(self.memory_bandwidth_bytes_per_s)
        );
        let _ = writeln!(s, "memory.size = {}", format_size(self.memory_size_bytes));
        s
    }
}

fn parse_size(v: &str) -> Result<u64, String> {
    let split = v.find(|c: char| !c.is_ascii_digit()).unwrap_or(v.len());
    let (digits, unit) = v.split_at(split);
    let n: u64 = digits.parse().map_err(|_| format!("bad size `{v}`"))?;
    let mult = match unit.trim() {
        "" | "B" => 1,
        "kB" | "KB" | "KiB" | "k" | "K" => KIB,
        "MB" | "MiB" | "M" => MIB,
        "GB" | "GiB" | "G" => GIB,
        u => return Err(format!("unknown size unit `{u}`")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size `{v}` overflows"))
}

fn format_size(bytes: u64) -> String {
    for (unit, mult) in [("GB", GIB), ("MB", MIB), ("kB", KIB)] {
        if bytes >= mult && bytes % mult == 0 {
            return format!("{}{unit}", bytes / mult);
        }
    }
    format!("{bytes}B")
}
