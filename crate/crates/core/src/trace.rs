//! Trace records, format adapters (MSR Cambridge, FIU, OLTP/SPC) and a
//! seeded synthetic generator.

use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IoKind {
    Read,
    Write,
}

impl IoKind {
    fn parse(s: &str) -> Option<IoKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "read" | "r" => Some(IoKind::Read),
            "write" | "w" => Some(IoKind::Write),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Microseconds since trace start.
    pub timestamp: u64,
    pub kind: IoKind,
    pub offset: u64,
    pub size: u64,
    pub line: u64,
}

impl TraceRecord {
    /// First page and page count covered by the request; the offset rounds
    /// down and the end rounds up.
    pub fn page_span(&self, page_size: u64) -> (u64, u64) {
        let first = self.offset / page_size;
        let end = (self.offset + self.size).div_ceil(page_size);
        (first, (end - first).max(1))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: u64, expected: usize, found: usize },
    #[error("line {line}: bad {field} value {value:?}")]
    BadField { line: u64, field: &'static str, value: String },
    #[error("line {line}: zero-sized request")]
    ZeroSize { line: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    /// `ticks,host,disk,Read|Write,offset,size,response`; ticks are 100ns.
    Msr,
    /// `ts_ns pid process lba blocks R|W major minor [md5]`; 512-byte sectors.
    Fiu,
    /// `asu,lba,bytes,r|w,seconds`; 512-byte sectors.
    Oltp,
    /// `key value` lines describing a synthetic workload.
    Synth,
}

const SECTOR: u64 = 512;

fn num<T: std::str::FromStr>(line: u64, field: &'static str, s: &str) -> Result<T, TraceError> {
    s.trim().parse().map_err(|_| TraceError::BadField {
        line,
        field,
        value: s.trim().to_string(),
    })
}

fn kind(line: u64, s: &str) -> Result<IoKind, TraceError> {
    IoKind::parse(s).ok_or_else(|| TraceError::BadField {
        line,
        field: "type",
        value: s.trim().to_string(),
    })
}

fn nonzero(rec: TraceRecord) -> Result<TraceRecord, TraceError> {
    if rec.size == 0 {
        Err(TraceError::ZeroSize { line: rec.line })
    } else {
        Ok(rec)
    }
}

/// Parses one MSR line; the timestamp is in microseconds but not yet rebased.
pub fn parse_msr_line(text: &str, line: u64) -> Result<TraceRecord, TraceError> {
    let f: Vec<&str> = text.trim().split(',').collect();
    if f.len() != 7 {
        return Err(TraceError::FieldCount { line, expected: 7, found: f.len() });
    }
    let ticks: u64 = num(line, "timestamp", f[0])?;
    let _: u64 = num(line, "response time", f[6])?;
    nonzero(TraceRecord {
        timestamp: ticks / 10,
        kind: kind(line, f[3])?,
        offset: num(line, "offset", f[4])?,
        size: num(line, "size", f[5])?,
        line,
    })
}

pub fn parse_fiu_line(text: &str, line: u64) -> Result<TraceRecord, TraceError> {
    let f: Vec<&str> = text.split_whitespace().collect();
    if !(8..=9).contains(&f.len()) {
        return Err(TraceError::FieldCount { line, expected: 9, found: f.len() });
    }
    let ns: u64 = num(line, "timestamp", f[0])?;
    let lba: u64 = num(line, "lba", f[3])?;
    let blocks: u64 = num(line, "blocks", f[4])?;
    nonzero(TraceRecord {
        timestamp: ns / 1000,
        kind: kind(line, f[5])?,
        offset: lba * SECTOR,
        size: blocks * SECTOR,
        line,
    })
}

pub fn parse_oltp_line(text: &str, line: u64) -> Result<TraceRecord, TraceError> {
    let f: Vec<&str> = text.trim().split(',').collect();
    if f.len() < 5 {
        return Err(TraceError::FieldCount { line, expected: 5, found: f.len() });
    }
    let _: u64 = num(line, "asu", f[0])?;
    let lba: u64 = num(line, "lba", f[1])?;
    let secs: f64 = num(line, "timestamp", f[4])?;
    if !secs.is_finite() || secs < 0.0 {
        return Err(TraceError::BadField { line, field: "timestamp", value: f[4].trim().into() });
    }
    nonzero(TraceRecord {
        timestamp: (secs * 1e6).round() as u64,
        kind: kind(line, f[3])?,
        offset: lba * SECTOR,
        size: num(line, "size", f[2])?,
        line,
    })
}

/// Parsed trace plus the count of lines that were skipped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadedTrace {
    pub records: Vec<TraceRecord>,
    pub skipped: u64,
}

/// Reads a whole trace, skipping blank, comment and malformed lines. Records
/// are stably sorted by time and rebased so the first starts at zero.
pub fn load_trace<R: BufRead>(reader: R, format: TraceFormat) -> std::io::Result<LoadedTrace> {
    let mut out = LoadedTrace::default();
    if format == TraceFormat::Synth {
        let mut text = String::new();
        for l in reader.lines() {
            text.push_str(&l?);
            text.push('\n');
        }
        return match SynthSpec::parse(&text) {
            Ok(spec) => {
                out.records = synth_trace(&spec);
                Ok(out)
            }
            Err(e) => Err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
        };
    }
    for (i, l) in reader.lines().enumerate() {
        let l = l?;
        let t = l.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let n = i as u64 + 1;
        let parsed = match format {
            TraceFormat::Msr => parse_msr_line(t, n),
            TraceFormat::Fiu => parse_fiu_line(t, n),
            TraceFormat::Oltp => parse_oltp_line(t, n),
            TraceFormat::Synth => unreachable!(),
        };
        match parsed {
            Ok(r) => out.records.push(r),
            Err(e) => {
                log::warn!("{e}");
                out.skipped += 1;
            }
        }
    }
    out.records.sort_by_key(|r| r.timestamp);
    if let Some(t0) = out.records.first().map(|r| r.timestamp) {
        for r in &mut out.records {
            r.timestamp -= t0;
        }
    }
    Ok(out)
}

/// Parameters of the synthetic workload generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub ops: u64,
    /// Fraction of writes aimed at the hot region.
    pub hot_fraction: f64,
    /// Leading fraction of the address space that is hot.
    pub hot_region_fraction: f64,
    pub write_ratio: f64,
    pub seed: u64,
    /// Address space in bytes.
    pub span_bytes: u64,
    pub request_bytes: u64,
    /// Virtual gap between consecutive requests, microseconds.
    pub interarrival_us: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            ops: 10_000,
            hot_fraction: 0.9,
            hot_region_fraction: 0.1,
            write_ratio: 0.7,
            seed: 1,
            span_bytes: 1 << 30,
            request_bytes: 16 * 1024,
            interarrival_us: 100,
        }
    }
}

impl SynthSpec {
    /// Reads `key = value` (or `key value`) lines over the field names.
    pub fn parse(text: &str) -> Result<SynthSpec, String> {
        let mut spec = SynthSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .or_else(|| l.split_once(char::is_whitespace))
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |_: std::num::ParseFloatError| format!("line {}: bad value for {k}: {v}", i + 1);
            let bad_int = |_: std::num::ParseIntError| format!("line {}: bad value for {k}: {v}", i + 1);
            match k {
                "ops" => spec.ops = v.parse().map_err(bad_int)?,
                "hot_fraction" => spec.hot_fraction = v.parse().map_err(bad)?,
                "hot_region_fraction" => spec.hot_region_fraction = v.parse().map_err(bad)?,
                "write_ratio" => spec.write_ratio = v.parse().map_err(bad)?,
                "seed" => spec.seed = v.parse().map_err(bad_int)?,
                "span_bytes" => spec.span_bytes = v.parse().map_err(bad_int)?,
                "request_bytes" => spec.request_bytes = v.parse().map_err(bad_int)?,
                "interarrival_us" => spec.interarrival_us = v.parse().map_err(bad_int)?,
                _ => return Err(format!("line {}: unknown key {k}", i + 1)),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("hot_fraction", self.hot_fraction),
            ("hot_region_fraction", self.hot_region_fraction),
            ("write_ratio", self.write_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.ops == 0 || self.request_bytes == 0 || self.span_bytes < self.request_bytes {
            return Err("ops, request_bytes must be positive and span_bytes >= request_bytes".into());
        }
        Ok(())
    }

    /// Number of request-aligned slots in the hot region (at least one).
    pub fn hot_slots(&self) -> u64 {
        let slots = self.span_bytes / self.request_bytes;
        ((slots as f64 * self.hot_region_fraction) as u64).clamp(1, slots)
    }
}

/// Deterministic request stream. Writes go to the hot region with
/// probability `hot_fraction` and to the rest of the span otherwise; reads
/// are uniform over the whole span.
pub fn synth_trace(spec: &SynthSpec) -> Vec<TraceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let slots = (spec.span_bytes / spec.request_bytes).max(1);
    let hot = spec.hot_slots();
    (0..spec.ops)
        .map(|i| {
            let kind = if rng.random_bool(spec.write_ratio) { IoKind::Write } else { IoKind::Read };
            let slot = match kind {
                IoKind::Write if rng.random_bool(spec.hot_fraction) => rng.random_range(0..hot),
                IoKind::Write if hot < slots => rng.random_range(hot..slots),
                _ => rng.random_range(0..slots),
            };
            TraceRecord {
                timestamp: i * spec.interarrival_us,
                kind,
                offset: slot * spec.request_bytes,
                size: spec.request_bytes,
                line: i + 1,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msr_sample_line() {
        let r = parse_msr_line("128166372003061629,hm,0,Write,2216341504,4096,419", 1).unwrap();
        assert_eq!(r.kind, IoKind::Write);
        assert_eq!(r.offset, 2_216_341_504);
        assert_eq!(r.size, 4096);
        assert_eq!(r.timestamp, 12_816_637_200_306_162);
    }

    #[test]
    fn msr_lowercase_and_bad_lines() {
        let r = parse_msr_line("10,hm,0,read,0,512,1", 3).unwrap();
        assert_eq!(r.kind, IoKind::Read);
        assert_eq!(
            parse_msr_line("10,hm,0,Write,0,512", 4),
            Err(TraceError::FieldCount { line: 4, expected: 7, found: 6 })
        );
        assert!(parse_msr_line("x,hm,0,Write,0,512,1", 5).is_err());
        assert!(parse_msr_line("10,hm,0,Trim,0,512,1", 6).is_err());
    }

    #[test]
    fn load_rebases_and_counts_skips() {
        let text = "200,hm,0,Write,0,4096,1\n100,hm,0,Read,8192,4096,1\nbroken\n\n";
        let t = load_trace(text.as_bytes(), TraceFormat::Msr).unwrap();
        assert_eq!(t.skipped, 1);
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.records[0].timestamp, 0);
        assert_eq!(t.records[0].kind, IoKind::Read);
        assert_eq!(t.records[1].timestamp, 10);
    }

    #[test]
    fn fiu_and_oltp_adapters() {
        let r = parse_fiu_line("89795000000 4892 syslogd 904265560 8 W 6 0 531e779e5f05e8d4a9a6d4c9b8f3a2b1", 1).unwrap();
        assert_eq!((r.kind, r.offset, r.size, r.timestamp), (IoKind::Write, 904_265_560 * 512, 4096, 89_795_000));
        let r = parse_oltp_line("0,20941264,8192,W,0.551706", 1).unwrap();
        assert_eq!((r.kind, r.offset, r.size, r.timestamp), (IoKind::Write, 20_941_264 * 512, 8192, 551_706));
    }

    #[test]
    fn page_span_rounds_outward() {
        let r = TraceRecord { timestamp: 0, kind: IoKind::Read, offset: 100, size: 16_384, line: 1 };
        assert_eq!(r.page_span(16_384), (0, 2));
        let r = TraceRecord { offset: 16_384, ..r };
        assert_eq!(r.page_span(16_384), (1, 1));
    }

    #[test]
    fn synth_hot_share_matches_binomial() {
        let spec = SynthSpec { ops: 10_000, write_ratio: 1.0, seed: 42, ..SynthSpec::default() };
        let t = synth_trace(&spec);
        let hot_limit = spec.hot_slots() * spec.request_bytes;
        let in_hot = t.iter().filter(|r| r.offset < hot_limit).count() as f64;
        assert!((in_hot - 9000.0).abs() <= 100.0, "{in_hot}");
    }

    #[test]
    fn synth_write_only_and_deterministic() {
        let spec = SynthSpec { write_ratio: 1.0, ..SynthSpec::default() };
        assert!(synth_trace(&spec).iter().all(|r| r.kind == IoKind::Write));
        assert_eq!(synth_trace(&spec), synth_trace(&spec));
        let other = SynthSpec { seed: 2, ..spec.clone() };
        assert_ne!(synth_trace(&other), synth_trace(&spec));
    }

    #[test]
    fn synth_spec_text() {
        let s = SynthSpec::parse("ops = 50\nseed 9 # comment\nwrite_ratio=1\n").unwrap();
        assert_eq!((s.ops, s.seed, s.write_ratio), (50, 9, 1.0));
        assert!(SynthSpec::parse("hot_fraction = 2").is_err());
        assert!(SynthSpec::parse("bogus = 1").is_err());
    }
}
