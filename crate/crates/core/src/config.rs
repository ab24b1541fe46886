//! The fifteen tunable parameters, their bounds, and value/unit handling
//! shared by the tuner's response parser and the run-config file reader.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ftl::PlacementPolicy;
use crate::units::Micros;

const MIB: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    ConversionGranularity,
    ConversionTriggerThreshold,
    GcGranularity,
    GcTriggerThreshold,
    PlacementStrategy,
    WindowSize,
    StdDevThreshold,
    SliceSize,
    KmeansMaxIterations,
    KmeansTriggerThreshold,
    RlTrainingInterval,
    RlLearningRate,
    RlRewardThreshold,
    RlDiscount,
    RlExploration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Integer,
    Real,
    Enum,
}

/// Physical dimension of a parsed number, already scaled to canonical units
/// (microseconds for time, bytes for size).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dim {
    Plain,
    Percent,
    Time,
    Size,
}

impl Param {
    pub const ALL: [Param; 15] = [
        Param::ConversionGranularity,
        Param::ConversionTriggerThreshold,
        Param::GcGranularity,
        Param::GcTriggerThreshold,
        Param::PlacementStrategy,
        Param::WindowSize,
        Param::StdDevThreshold,
        Param::SliceSize,
        Param::KmeansMaxIterations,
        Param::KmeansTriggerThreshold,
        Param::RlTrainingInterval,
        Param::RlLearningRate,
        Param::RlRewardThreshold,
        Param::RlDiscount,
        Param::RlExploration,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Param::ConversionGranularity => "conversion_granularity",
            Param::ConversionTriggerThreshold => "conversion_trigger_threshold",
            Param::GcGranularity => "gc_granularity",
            Param::GcTriggerThreshold => "gc_trigger_threshold",
            Param::PlacementStrategy => "placement_strategy",
            Param::WindowSize => "window_size",
            Param::StdDevThreshold => "std_dev_threshold",
            Param::SliceSize => "slice_size",
            Param::KmeansMaxIterations => "kmeans_max_iterations",
            Param::KmeansTriggerThreshold => "kmeans_trigger_threshold",
            Param::RlTrainingInterval => "rl_training_interval",
            Param::RlLearningRate => "rl_learning_rate",
            Param::RlRewardThreshold => "rl_reward_threshold",
            Param::RlDiscount => "rl_discount",
            Param::RlExploration => "rl_exploration",
        }
    }

    /// Human-readable name used in prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Param::ConversionGranularity => "Conversion granularity",
            Param::ConversionTriggerThreshold => "Conversion trigger threshold",
            Param::GcGranularity => "GC granularity",
            Param::GcTriggerThreshold => "GC trigger threshold",
            Param::PlacementStrategy => "Data placement strategy",
            Param::WindowSize => "Windows size",
            Param::StdDevThreshold => "Standard deviation threshold",
            Param::SliceSize => "Slice size",
            Param::KmeansMaxIterations => "K-means max iterations",
            Param::KmeansTriggerThreshold => "K-means trigger threshold",
            Param::RlTrainingInterval => "RL training interval",
            Param::RlLearningRate => "RL learning rate",
            Param::RlRewardThreshold => "RL reward",
            Param::RlDiscount => "RL discount factor",
            Param::RlExploration => "RL exploration rate",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            Param::WindowSize => &["window size", "sliding window size"],
            Param::StdDevThreshold => &["std threshold", "stddev threshold", "std dev threshold"],
            Param::KmeansMaxIterations => &["kmeans iterations", "max iterations"],
            Param::RlRewardThreshold => &["rl reward threshold", "reward threshold"],
            Param::RlDiscount => &["rl discount"],
            Param::RlExploration => &["rl epsilon", "exploration rate"],
            Param::RlLearningRate => &["learning rate"],
            Param::PlacementStrategy => &["placement strategy"],
            _ => &[],
        }
    }

    /// Case- and punctuation-insensitive lookup by key, display name or alias.
    pub fn from_name(name: &str) -> Option<Param> {
        let wanted = squash(name);
        if wanted.is_empty() {
            return None;
        }
        Param::ALL.into_iter().find(|p| {
            squash(p.key()) == wanted
                || squash(p.display_name()) == wanted
                || p.aliases().iter().any(|a| squash(a) == wanted)
        })
    }

    pub fn kind(self) -> ParamKind {
        match self {
            Param::ConversionGranularity
            | Param::GcGranularity
            | Param::WindowSize
            | Param::SliceSize
            | Param::KmeansMaxIterations
            | Param::KmeansTriggerThreshold
            | Param::RlTrainingInterval
            | Param::RlRewardThreshold => ParamKind::Integer,
            Param::PlacementStrategy => ParamKind::Enum,
            _ => ParamKind::Real,
        }
    }

    /// Dimension a value must carry. Bare numbers are read in
    /// [`Param::bare_scale`] units.
    pub fn dim(self) -> Dim {
        match self {
            Param::ConversionTriggerThreshold | Param::GcTriggerThreshold => Dim::Percent,
            Param::SliceSize => Dim::Size,
            Param::RlRewardThreshold => Dim::Time,
            _ => Dim::Plain,
        }
    }

    /// Multiplier applied to a unitless number to reach canonical units.
    pub fn bare_scale(self) -> f64 {
        match self {
            Param::SliceSize => MIB as f64,
            Param::RlRewardThreshold => 1000.0,
            _ => 1.0,
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Param::ConversionGranularity | Param::GcGranularity => "blocks",
            Param::ConversionTriggerThreshold | Param::GcTriggerThreshold => "% free blocks",
            Param::WindowSize | Param::RlTrainingInterval => "requests",
            Param::StdDevThreshold => "pages",
            Param::SliceSize => "bytes",
            Param::KmeansMaxIterations => "iterations",
            Param::KmeansTriggerThreshold => "writes",
            Param::RlRewardThreshold => "us",
            Param::RlLearningRate | Param::RlDiscount | Param::RlExploration => "ratio",
            Param::PlacementStrategy => "enum",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// A value as it appears in a response or config file, after unit scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RawValue {
    Number { value: f64, dim: Dim },
    Text(String),
}

impl RawValue {
    pub fn number(value: f64) -> Self {
        RawValue::Number { value, dim: Dim::Plain }
    }
}

/// Splits `"1.6ms"`, `"200 MB"`, `"8%"`, `"10,000"` into a scaled number,
/// or keeps the text when it does not start with a number.
pub fn parse_value(text: &str) -> RawValue {
    let t = text
        .trim()
        .trim_end_matches([',', '.', ';', ')', '`', '"', '\''])
        .trim_start_matches(['`', '"', '\'', '('])
        .trim();
    let numeric_end = t
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit()
                || c == '.'
                || c == ','
                || ((c == '-' || c == '+') && (i == 0 || t[..i].ends_with(['e', 'E'])))
                || ((c == 'e' || c == 'E')
                    && i > 0
                    && t[i + 1..].starts_with(|n: char| n.is_ascii_digit() || n == '-' || n == '+')))
        })
        .map(|(i, _)| i)
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(numeric_end);
    let num = num.replace(',', "");
    let Ok(value) = num.parse::<f64>() else {
        return RawValue::Text(t.to_string());
    };
    let unit = unit.trim().to_ascii_lowercase();
    let (scale, dim) = match unit.as_str() {
        "" | "x" => (1.0, Dim::Plain),
        "%" | "percent" | "pct" => (1.0, Dim::Percent),
        "us" | "µs" | "μs" | "usec" | "microseconds" => (1.0, Dim::Time),
        "ms" | "msec" | "milliseconds" => (1e3, Dim::Time),
        "s" | "sec" | "seconds" => (1e6, Dim::Time),
        "b" | "bytes" | "byte" => (1.0, Dim::Size),
        "k" | "kb" | "kib" => (1024.0, Dim::Size),
        "m" | "mb" | "mib" => (MIB as f64, Dim::Size),
        "g" | "gb" | "gib" => ((1u64 << 30) as f64, Dim::Size),
        "t" | "tb" | "tib" => ((1u64 << 40) as f64, Dim::Size),
        "block" | "blocks" | "request" | "requests" | "ops" | "operations" | "writes" | "pages"
        | "page" | "iterations" | "iteration" | "times" => (1.0, Dim::Plain),
        _ => return RawValue::Text(t.to_string()),
    };
    RawValue::Number {
        value: value * scale,
        dim,
    }
}

pub fn parse_placement(text: &str) -> Option<PlacementPolicy> {
    match squash(text).as_str() {
        "slcfirst" | "slc" => Some(PlacementPolicy::SlcFirst),
        "hotnessbased" | "hotness" | "hotcold" | "hotnessaware" | "hotslccoldqlc" => {
            Some(PlacementPolicy::HotnessBased)
        }
        _ => None,
    }
}

fn placement_name(p: PlacementPolicy) -> &'static str {
    match p {
        PlacementPolicy::SlcFirst => "SLC first",
        PlacementPolicy::HotnessBased => "Hotness based",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    Int(u64),
    Real(f64),
    Placement(PlacementPolicy),
}

impl ParamValue {
    pub fn as_f64(self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(v as f64),
            ParamValue::Real(v) => Some(v),
            ParamValue::Placement(_) => None,
        }
    }
}

/// The live tuning target: every knob the auto-tuner may rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigProfile {
    pub conversion_granularity: u32,
    /// Percent of free SLC blocks.
    pub conversion_trigger_threshold: f64,
    pub gc_granularity: u32,
    /// Percent of free blocks in a region.
    pub gc_trigger_threshold: f64,
    pub placement_strategy: PlacementPolicy,
    pub window_size: u64,
    /// LPN standard deviation change, in pages.
    pub std_dev_threshold: f64,
    /// Bytes.
    pub slice_size: u64,
    pub kmeans_max_iterations: u32,
    pub kmeans_trigger_threshold: u64,
    pub rl_training_interval: u64,
    pub rl_learning_rate: f64,
    pub rl_reward_threshold: Micros,
    pub rl_discount: f64,
    pub rl_exploration: f64,
}

impl Default for ConfigProfile {
    fn default() -> Self {
        ConfigProfile {
            conversion_granularity: 1,
            conversion_trigger_threshold: 6.0,
            gc_granularity: 1,
            gc_trigger_threshold: 6.0,
            placement_strategy: PlacementPolicy::SlcFirst,
            window_size: 2000,
            std_dev_threshold: 10_000.0,
            slice_size: 200 * MIB,
            kmeans_max_iterations: 10,
            kmeans_trigger_threshold: 10_000,
            rl_training_interval: 1000,
            rl_learning_rate: 0.1,
            rl_reward_threshold: Micros(1600),
            rl_discount: 0.9,
            rl_exploration: 0.1,
        }
    }
}

impl ConfigProfile {
    pub fn get(&self, p: Param) -> ParamValue {
        use ParamValue::*;
        match p {
            Param::ConversionGranularity => Int(self.conversion_granularity as u64),
            Param::ConversionTriggerThreshold => Real(self.conversion_trigger_threshold),
            Param::GcGranularity => Int(self.gc_granularity as u64),
            Param::GcTriggerThreshold => Real(self.gc_trigger_threshold),
            Param::PlacementStrategy => Placement(self.placement_strategy),
            Param::WindowSize => Int(self.window_size),
            Param::StdDevThreshold => Real(self.std_dev_threshold),
            Param::SliceSize => Int(self.slice_size),
            Param::KmeansMaxIterations => Int(self.kmeans_max_iterations as u64),
            Param::KmeansTriggerThreshold => Int(self.kmeans_trigger_threshold),
            Param::RlTrainingInterval => Int(self.rl_training_interval),
            Param::RlLearningRate => Real(self.rl_learning_rate),
            Param::RlRewardThreshold => Int(self.rl_reward_threshold.as_u64()),
            Param::RlDiscount => Real(self.rl_discount),
            Param::RlExploration => Real(self.rl_exploration),
        }
    }

    /// Stores `v` if its variant matches the parameter kind; returns whether
    /// it was stored.
    pub fn set(&mut self, p: Param, v: ParamValue) -> bool {
        use ParamValue::*;
        match (p, v) {
            (Param::ConversionGranularity, Int(x)) => self.conversion_granularity = x as u32,
            (Param::ConversionTriggerThreshold, Real(x)) => self.conversion_trigger_threshold = x,
            (Param::GcGranularity, Int(x)) => self.gc_granularity = x as u32,
            (Param::GcTriggerThreshold, Real(x)) => self.gc_trigger_threshold = x,
            (Param::PlacementStrategy, Placement(x)) => self.placement_strategy = x,
            (Param::WindowSize, Int(x)) => self.window_size = x,
            (Param::StdDevThreshold, Real(x)) => self.std_dev_threshold = x,
            (Param::SliceSize, Int(x)) => self.slice_size = x,
            (Param::KmeansMaxIterations, Int(x)) => self.kmeans_max_iterations = x as u32,
            (Param::KmeansTriggerThreshold, Int(x)) => self.kmeans_trigger_threshold = x,
            (Param::RlTrainingInterval, Int(x)) => self.rl_training_interval = x,
            (Param::RlLearningRate, Real(x)) => self.rl_learning_rate = x,
            (Param::RlRewardThreshold, Int(x)) => self.rl_reward_threshold = Micros(x),
            (Param::RlDiscount, Real(x)) => self.rl_discount = x,
            (Param::RlExploration, Real(x)) => self.rl_exploration = x,
            _ => return false,
        }
        true
    }

    /// Value rendered the way prompts and config files show it.
    pub fn display_value(&self, p: Param) -> String {
        match self.get(p) {
            ParamValue::Placement(x) => placement_name(x).to_string(),
            ParamValue::Int(v) if p == Param::SliceSize => format_bytes(v),
            ParamValue::Int(v) if p == Param::RlRewardThreshold => format!("{}ms", trim_float(v as f64 / 1000.0)),
            ParamValue::Int(v) => v.to_string(),
            ParamValue::Real(v) if p.dim() == Dim::Percent => format!("{}%", trim_float(v)),
            ParamValue::Real(v) => trim_float(v),
        }
    }

    /// Candidate map reproducing this profile exactly.
    pub fn to_candidates(&self) -> BTreeMap<Param, RawValue> {
        Param::ALL
            .into_iter()
            .map(|p| {
                let v = match self.get(p) {
                    ParamValue::Placement(x) => RawValue::Text(placement_name(x).to_string()),
                    ParamValue::Int(v) => RawValue::Number { value: v as f64, dim: p.dim() },
                    ParamValue::Real(v) => RawValue::Number { value: v, dim: p.dim() },
                };
                (p, v)
            })
            .collect()
    }

    /// Parameters whose values differ between two profiles.
    pub fn diff(&self, other: &ConfigProfile) -> Vec<Param> {
        Param::ALL
            .into_iter()
            .filter(|&p| self.get(p) != other.get(p))
            .collect()
    }
}

fn format_bytes(v: u64) -> String {
    if v >= MIB && v.is_multiple_of(MIB) {
        format!("{}MB", v / MIB)
    } else if v >= 1024 && v.is_multiple_of(1024) {
        format!("{}KB", v / 1024)
    } else {
        format!("{v}B")
    }
}

/// Shortest decimal that round-trips.
pub fn trim_float(v: f64) -> String {
    let s = format!("{v}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub min: f64,
    pub max: f64,
}

/// Allowed range for every numeric parameter, in canonical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    /// Slice sizes must be a whole number of pages.
    pub page_size: u64,
    pub ranges: BTreeMap<Param, Bound>,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds::for_page_size(16 * 1024)
    }
}

impl ParamBounds {
    pub fn for_page_size(page_size: u64) -> Self {
        let b = |min: f64, max: f64| Bound { min, max };
        let ranges = BTreeMap::from([
            (Param::ConversionGranularity, b(1.0, 64.0)),
            (Param::ConversionTriggerThreshold, b(0.0, 100.0)),
            (Param::GcGranularity, b(1.0, 64.0)),
            (Param::GcTriggerThreshold, b(0.0, 100.0)),
            (Param::WindowSize, b(2.0, 1_000_000.0)),
            (Param::StdDevThreshold, b(0.0, 1e9)),
            (Param::SliceSize, b(page_size as f64, (1u64 << 40) as f64)),
            (Param::KmeansMaxIterations, b(1.0, 1000.0)),
            (Param::KmeansTriggerThreshold, b(1.0, 1e8)),
            (Param::RlTrainingInterval, b(1.0, 1e8)),
            (Param::RlLearningRate, b(0.001, 1.0)),
            (Param::RlRewardThreshold, b(1.0, 1e8)),
            (Param::RlDiscount, b(0.0, 0.99)),
            (Param::RlExploration, b(0.0, 1.0)),
        ]);
        ParamBounds { page_size, ranges }
    }

    pub fn range(&self, p: Param) -> Option<Bound> {
        self.ranges.get(&p).copied()
    }

    /// Every violated constraint of `profile`, empty when it is in bounds.
    pub fn violations(&self, profile: &ConfigProfile) -> Vec<String> {
        let mut out = Vec::new();
        for p in Param::ALL {
            let Some(v) = profile.get(p).as_f64() else { continue };
            let Some(r) = self.range(p) else { continue };
            if !v.is_finite() || v < r.min || v > r.max {
                out.push(format!("{p} = {v} outside [{}, {}]", r.min, r.max));
            }
        }
        if !profile.slice_size.is_multiple_of(self.page_size) {
            out.push(format!("slice_size {} not page aligned", profile.slice_size));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_table() {
        let c = ConfigProfile::default();
        assert_eq!(c.conversion_granularity, 1);
        assert_eq!(c.conversion_trigger_threshold, 6.0);
        assert_eq!(c.gc_granularity, 1);
        assert_eq!(c.gc_trigger_threshold, 6.0);
        assert_eq!(c.placement_strategy, PlacementPolicy::SlcFirst);
        assert_eq!(c.window_size, 2000);
        assert_eq!(c.std_dev_threshold, 10_000.0);
        assert_eq!(c.slice_size, 200 * 1024 * 1024);
        assert_eq!(c.kmeans_max_iterations, 10);
        assert_eq!(c.kmeans_trigger_threshold, 10_000);
        assert_eq!(c.rl_training_interval, 1000);
        assert_eq!(c.rl_learning_rate, 0.1);
        assert_eq!(c.rl_reward_threshold, Micros(1600));
        assert_eq!(c.rl_discount, 0.9);
        assert_eq!(c.rl_exploration, 0.1);
        assert_eq!(Param::ALL.len(), 15);
    }

    #[test]
    fn defaults_inside_bounds() {
        let b = ParamBounds::default();
        assert!(b.violations(&ConfigProfile::default()).is_empty());
        for p in Param::ALL {
            if let (Some(r), Some(v)) = (b.range(p), ConfigProfile::default().get(p).as_f64()) {
                assert!(r.min <= v && v <= r.max, "{p}");
            }
        }
    }

    #[test]
    fn name_lookup() {
        assert_eq!(Param::from_name("K-means trigger threshold"), Some(Param::KmeansTriggerThreshold));
        assert_eq!(Param::from_name("Windows size"), Some(Param::WindowSize));
        assert_eq!(Param::from_name("window_size"), Some(Param::WindowSize));
        assert_eq!(Param::from_name("RL Discount Factor"), Some(Param::RlDiscount));
        assert_eq!(Param::from_name("RL Reward"), Some(Param::RlRewardThreshold));
        assert_eq!(Param::from_name("standard deviation threshold"), Some(Param::StdDevThreshold));
        assert_eq!(Param::from_name("cache size"), None);
        for p in Param::ALL {
            assert_eq!(Param::from_name(p.key()), Some(p));
            assert_eq!(Param::from_name(p.display_name()), Some(p));
        }
    }

    #[test]
    fn unit_normalization() {
        assert_eq!(parse_value("8%"), RawValue::Number { value: 8.0, dim: Dim::Percent });
        assert_eq!(parse_value("1.6ms"), RawValue::Number { value: 1600.0, dim: Dim::Time });
        assert_eq!(parse_value("200us"), RawValue::Number { value: 200.0, dim: Dim::Time });
        assert_eq!(
            parse_value("200MB"),
            RawValue::Number { value: 209_715_200.0, dim: Dim::Size }
        );
        assert_eq!(parse_value(" 10,000 "), RawValue::number(10_000.0));
        assert_eq!(parse_value("1e-4"), RawValue::number(1e-4));
        assert_eq!(parse_value("2 blocks"), RawValue::number(2.0));
        assert_eq!(parse_value("SLC first"), RawValue::Text("SLC first".into()));
        assert_eq!(parse_value("1500."), RawValue::number(1500.0));
    }

    #[test]
    fn display_values() {
        let c = ConfigProfile::default();
        assert_eq!(c.display_value(Param::SliceSize), "200MB");
        assert_eq!(c.display_value(Param::RlRewardThreshold), "1.6ms");
        assert_eq!(c.display_value(Param::GcTriggerThreshold), "6%");
        assert_eq!(c.display_value(Param::PlacementStrategy), "SLC first");
        assert_eq!(c.display_value(Param::RlLearningRate), "0.1");
    }

    #[test]
    fn placement_names() {
        assert_eq!(parse_placement("SLC first"), Some(PlacementPolicy::SlcFirst));
        assert_eq!(parse_placement("hotness-based"), Some(PlacementPolicy::HotnessBased));
        assert_eq!(parse_placement("random"), None);
    }

    #[test]
    fn diff_lists_changed_params() {
        let a = ConfigProfile::default();
        let mut b = a.clone();
        b.window_size = 1500;
        b.gc_trigger_threshold = 8.0;
        assert_eq!(a.diff(&b), vec![Param::GcTriggerThreshold, Param::WindowSize]);
    }
}
