//! Response parsing and bounds-based mistake correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    parse_placement, parse_value, ConfigProfile, Dim, Param, ParamBounds, ParamKind, ParamValue, RawValue,
};

#[derive(Debug, Error, PartialEq, Eq, Clone, Serialize, Deserialize)]
pub enum ParseError {
    #[error("response contains no backtick-fenced configuration")]
    NoFencedBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    /// Text outside the fence.
    pub reason: String,
    pub candidates: BTreeMap<Param, RawValue>,
    /// Names inside the fence that matched no parameter.
    pub unknown: Vec<String>,
}

/// Returns (inside, outside) for the first fenced span. Triple fences take
/// precedence when they open first; a language tag line is skipped.
fn split_fence(raw: &str) -> Option<(String, String)> {
    let open = raw.find('`')?;
    let (delim, body_start) = if raw[open..].starts_with("```") {
        ("```", open + 3)
    } else {
        ("`", open + 1)
    };
    let close = body_start + raw[body_start..].find(delim)?;
    let mut body = &raw[body_start..close];
    if delim == "```" {
        if let Some((first, rest)) = body.split_once('\n') {
            let tag = first.trim();
            if !tag.contains(':') && !tag.contains(' ') {
                body = rest;
            }
        }
    }
    let outside = format!("{} {}", &raw[..open], &raw[close + delim.len()..]);
    Some((body.to_string(), outside))
}

fn strip_index(item: &str) -> &str {
    let t = item.trim().trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    t
}

/// Extracts `name: value` items from the first fenced block.
pub fn parse_config(raw: &str) -> Result<ParsedResponse, ParseError> {
    let (body, outside) = split_fence(raw).ok_or(ParseError::NoFencedBlock)?;
    let mut candidates = BTreeMap::new();
    let mut unknown = Vec::new();
    for item in body.split([';', '\n']) {
        let item = strip_index(item);
        if item.is_empty() {
            continue;
        }
        let Some((name, value)) = item.split_once(':').or_else(|| item.split_once('=')) else {
            log::debug!("ignoring fenced text without a separator: {item:?}");
            continue;
        };
        match Param::from_name(name) {
            Some(p) => {
                let v = if p.kind() == ParamKind::Enum {
                    RawValue::Text(value.trim().trim_end_matches(['.', ',']).to_string())
                } else {
                    parse_value(value)
                };
                candidates.insert(p, v);
            }
            None => {
                log::info!("dropping unknown parameter {:?}", name.trim());
                unknown.push(name.trim().to_string());
            }
        }
    }
    let reason = outside
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_start_matches("New configuration:")
        .trim()
        .to_string();
    Ok(ParsedResponse { reason, candidates, unknown })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CorrectionKind {
    /// Value outside its range, moved to the nearest bound.
    Clamped { from: f64, to: f64 },
    /// Slice size rounded down to a page multiple.
    Aligned { from: u64, to: u64 },
    /// Fractional value for an integer parameter.
    Rounded { from: f64, to: u64 },
    /// Wrong type, dimension or a non-finite number; value ignored.
    Dropped { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub param: Param,
    pub kind: CorrectionKind,
}

impl Correction {
    /// Whether the value was used after adjustment, as opposed to ignored.
    pub fn adjusted(&self) -> bool {
        !matches!(self.kind, CorrectionKind::Dropped { .. })
    }
}

#[derive(Debug, Error, PartialEq, Eq, Clone, Serialize, Deserialize)]
pub enum CorrectionError {
    #[error("no candidate value was usable")]
    NoValidUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corrected {
    pub profile: ConfigProfile,
    pub log: Vec<Correction>,
}

impl Corrected {
    pub fn any_adjusted(&self) -> bool {
        self.log.iter().any(Correction::adjusted)
    }
}

fn is_ratio(p: Param) -> bool {
    matches!(p, Param::RlLearningRate | Param::RlDiscount | Param::RlExploration)
}

/// Canonical number for `p`, or why it cannot be used.
fn canonical(p: Param, raw: &RawValue) -> Result<f64, String> {
    let RawValue::Number { value, dim } = raw else {
        return Err(format!("expected a number, got {raw:?}"));
    };
    if !value.is_finite() {
        return Err(format!("non-finite value {value}"));
    }
    match *dim {
        Dim::Plain => Ok(value * p.bare_scale()),
        d if d == p.dim() => Ok(*value),
        Dim::Percent if is_ratio(p) => Ok(value / 100.0),
        d => Err(format!("unit {d:?} does not fit {:?}", p.dim())),
    }
}

/// Numeric value forced into range, integral where required, page aligned
/// for the slice size. Adjustments are appended to `log`.
fn fit(p: Param, v: f64, bounds: &ParamBounds, log: &mut Vec<Correction>) -> ParamValue {
    let mut v = v;
    if let Some(r) = bounds.range(p) {
        let c = v.clamp(r.min, r.max);
        if c != v {
            log.push(Correction { param: p, kind: CorrectionKind::Clamped { from: v, to: c } });
            v = c;
        }
    }
    if p.kind() == ParamKind::Real {
        return ParamValue::Real(v);
    }
    let mut n = v.round() as u64;
    if n as f64 != v {
        log.push(Correction { param: p, kind: CorrectionKind::Rounded { from: v, to: n } });
    }
    if p == Param::SliceSize {
        let page = bounds.page_size.max(1);
        let aligned = (n / page).max(1) * page;
        if aligned != n {
            log.push(Correction { param: p, kind: CorrectionKind::Aligned { from: n, to: aligned } });
            n = aligned;
        }
    }
    ParamValue::Int(n)
}

/// Applies usable candidates on top of `current`. The result always lies
/// within `bounds`; inherited values are re-fitted too.
pub fn correct_mistakes(
    candidates: &BTreeMap<Param, RawValue>,
    bounds: &ParamBounds,
    current: &ConfigProfile,
) -> Result<Corrected, CorrectionError> {
    let mut profile = current.clone();
    let mut log = Vec::new();
    let mut used = 0usize;
    for (&p, raw) in candidates {
        if p.kind() == ParamKind::Enum {
            let text = match raw {
                RawValue::Text(t) => Some(t.as_str()),
                RawValue::Number { .. } => None,
            };
            match text.and_then(parse_placement) {
                Some(policy) => {
                    profile.set(p, ParamValue::Placement(policy));
                    used += 1;
                }
                None => log.push(Correction {
                    param: p,
                    kind: CorrectionKind::Dropped { detail: format!("unknown strategy {raw:?}") },
                }),
            }
            continue;
        }
        match canonical(p, raw) {
            Ok(v) => {
                let fitted = fit(p, v, bounds, &mut log);
                profile.set(p, fitted);
                used += 1;
            }
            Err(detail) => log.push(Correction { param: p, kind: CorrectionKind::Dropped { detail } }),
        }
    }
    if used == 0 {
        return Err(CorrectionError::NoValidUpdate);
    }
    for p in Param::ALL {
        if candidates.contains_key(&p) {
            continue;
        }
        if let Some(v) = profile.get(p).as_f64() {
            let fitted = fit(p, v, bounds, &mut log);
            profile.set(p, fitted);
        }
    }
    Ok(Corrected { profile, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::Micros;

    fn parse(raw: &str) -> BTreeMap<Param, RawValue> {
        parse_config(raw).unwrap().candidates
    }

    #[test]
    fn reference_example() {
        let r = parse_config("New configuration: `1.K-means trigger threshold: 1000; 2.Windows size: 1500`").unwrap();
        assert_eq!(
            r.candidates,
            BTreeMap::from([
                (Param::KmeansTriggerThreshold, RawValue::number(1000.0)),
                (Param::WindowSize, RawValue::number(1500.0)),
            ])
        );
        assert!(r.unknown.is_empty());
    }

    #[test]
    fn no_fence_fails() {
        assert_eq!(parse_config("Windows size: 1500"), Err(ParseError::NoFencedBlock));
        assert_eq!(parse_config("unterminated `Windows size: 1500"), Err(ParseError::NoFencedBlock));
    }

    #[test]
    fn percent_and_units() {
        let c = parse("`GC trigger threshold: 8%`");
        assert_eq!(c[&Param::GcTriggerThreshold], RawValue::Number { value: 8.0, dim: Dim::Percent });
        let out = correct_mistakes(&c, &ParamBounds::default(), &ConfigProfile::default()).unwrap();
        assert_eq!(out.profile.gc_trigger_threshold, 8.0);
        assert!(out.log.is_empty());
    }

    #[test]
    fn triple_fence_reason_and_unknowns() {
        let raw = "Lowering the trigger helps.\n```text\n1. GC trigger threshold: 4\n2. Cache size: 9\n3. RL reward: 2ms\n```\nDone.";
        let r = parse_config(raw).unwrap();
        assert_eq!(r.unknown, vec!["Cache size".to_string()]);
        assert_eq!(r.candidates.len(), 2);
        assert_eq!(r.candidates[&Param::RlRewardThreshold], RawValue::Number { value: 2000.0, dim: Dim::Time });
        assert_eq!(r.reason, "Lowering the trigger helps. Done.");
    }

    #[test]
    fn learning_rate_clamped_and_logged() {
        let c = parse("`RL learning rate: 5.0`");
        let out = correct_mistakes(&c, &ParamBounds::default(), &ConfigProfile::default()).unwrap();
        assert_eq!(out.profile.rl_learning_rate, 1.0);
        assert_eq!(
            out.log,
            vec![Correction { param: Param::RlLearningRate, kind: CorrectionKind::Clamped { from: 5.0, to: 1.0 } }]
        );
    }

    #[test]
    fn missing_keys_inherit() {
        let current = ConfigProfile { gc_granularity: 3, ..ConfigProfile::default() };
        let c = parse("`Windows size: 1500; K-means trigger threshold: 1000`");
        let out = correct_mistakes(&c, &ParamBounds::default(), &current).unwrap();
        let changed = current.diff(&out.profile);
        assert_eq!(changed, vec![Param::WindowSize, Param::KmeansTriggerThreshold]);
        assert_eq!(out.profile.gc_granularity, 3);
    }

    #[test]
    fn slice_size_units() {
        let c = parse("`Slice size: 200MB`");
        let out = correct_mistakes(&c, &ParamBounds::default(), &ConfigProfile::default()).unwrap();
        assert_eq!(out.profile.slice_size, 209_715_200);
        let bare = parse("`Slice size: 100`");
        let out = correct_mistakes(&bare, &ParamBounds::default(), &ConfigProfile::default()).unwrap();
        assert_eq!(out.profile.slice_size, 100 << 20);
        let odd = parse("`Slice size: 20000 B`");
        let out = correct_mistakes(&odd, &ParamBounds::default(), &ConfigProfile::default()).unwrap();
        assert_eq!(out.profile.slice_size, 16_384);
        assert!(matches!(out.log[0].kind, CorrectionKind::Aligned { .. }));
    }

    #[test]
    fn reward_units() {
        let out = correct_mistakes(&parse("`RL reward: 1.2`"), &ParamBounds::default(), &ConfigProfile::default()).unwrap();
        assert_eq!(out.profile.rl_reward_threshold, Micros(1200));
        let out = correct_mistakes(&parse("`RL reward: 900us`"), &ParamBounds::default(), &ConfigProfile::default()).unwrap();
        assert_eq!(out.profile.rl_reward_threshold, Micros(900));
    }

    #[test]
    fn type_and_dimension_mismatches_dropped() {
        let c = parse("`Windows size: lots; GC trigger threshold: 3ms; Data placement strategy: 7`");
        assert_eq!(
            correct_mistakes(&c, &ParamBounds::default(), &ConfigProfile::default()),
            Err(CorrectionError::NoValidUpdate)
        );
        let c = parse("`Windows size: lots; Data placement strategy: Hotness based`");
        let out = correct_mistakes(&c, &ParamBounds::default(), &ConfigProfile::default()).unwrap();
        assert_eq!(out.profile.placement_strategy, crate::ftl::PlacementPolicy::HotnessBased);
        assert_eq!(out.log.len(), 1);
        assert!(!out.log[0].adjusted());
    }

    #[test]
    fn idempotent_on_own_output() {
        let c = parse("`RL learning rate: 5; GC granularity: 2.6; Slice size: 3.3MB; RL discount factor: -1`");
        let b = ParamBounds::default();
        let first = correct_mistakes(&c, &b, &ConfigProfile::default()).unwrap();
        let again = correct_mistakes(&first.profile.to_candidates(), &b, &first.profile).unwrap();
        assert_eq!(again.profile, first.profile);
        assert!(again.log.is_empty());
        assert!(b.violations(&first.profile).is_empty());
    }
}
