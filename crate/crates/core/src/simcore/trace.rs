//! Event trace: text format, parser and replay comparison.
//!
//! ```text
//! #qhpc-trace v1<TAB>seed=42<TAB>horizon_s=3600.000000000<TAB>fabric.intra_node.rtt_s=0.000004 ...
//! #resource<TAB>id=qpu-a<TAB>tier=R3<TAB>cores=32 ...
//! #job<TAB>id=vqe-0<TAB>submit_s=0.000000000<TAB>priority=1 ...
//! 0<TAB>0.000000000<TAB>sim_start
//! 1<TAB>0.000000000<TAB>job_submit<TAB>job=vqe-0
//! ```
//!
//! Lines starting with `#` form the header; every other line is one event:
//! index, time in seconds with nanosecond digits, kind, then `key=value`
//! fields.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::time::SimTime;

pub const FORMAT_VERSION: &str = "v1";
const MAGIC: &str = "#qhpc-trace";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    SimStart,
    JobSubmit,
    SchedPass,
    JobStart,
    TaskStart,
    TaskEnd,
    QpuPhaseStart,
    QpuPhaseEnd,
    CoresReleased,
    CoresReacquired,
    CalibPoll,
    Recalibration,
    Fallback,
    JobEnd,
    SimEnd,
}

impl EventKind {
    pub const ALL: [EventKind; 15] = [
        EventKind::SimStart,
        EventKind::JobSubmit,
        EventKind::SchedPass,
        EventKind::JobStart,
        EventKind::TaskStart,
        EventKind::TaskEnd,
        EventKind::QpuPhaseStart,
        EventKind::QpuPhaseEnd,
        EventKind::CoresReleased,
        EventKind::CoresReacquired,
        EventKind::CalibPoll,
        EventKind::Recalibration,
        EventKind::Fallback,
        EventKind::JobEnd,
        EventKind::SimEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SimStart => "sim_start",
            EventKind::JobSubmit => "job_submit",
            EventKind::SchedPass => "sched_pass",
            EventKind::JobStart => "job_start",
            EventKind::TaskStart => "task_start",
            EventKind::TaskEnd => "task_end",
            EventKind::QpuPhaseStart => "qpu_phase_start",
            EventKind::QpuPhaseEnd => "qpu_phase_end",
            EventKind::CoresReleased => "cores_released",
            EventKind::CoresReacquired => "cores_reacquired",
            EventKind::CalibPoll => "calib_poll",
            EventKind::Recalibration => "recalibration",
            EventKind::Fallback => "fallback",
            EventKind::JobEnd => "job_end",
            EventKind::SimEnd => "sim_end",
        }
    }
}

impl core::str::FromStr for EventKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: SimTime,
    pub kind: EventKind,
    pub fields: Vec<(String, String)>,
}

impl TraceEvent {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// A `#`-line of the header: a tag plus `key=value` fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderLine {
    pub tag: String,
    pub fields: Vec<(String, String)>,
}

impl HeaderLine {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub version: String,
    /// First header line fields (seed, horizon, constants).
    pub params: Vec<(String, String)>,
    /// `#resource` and `#job` declarations, in order.
    pub declarations: Vec<HeaderLine>,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("trace format version `{found}` is not supported (expected `{expected}`)")]
    Version { found: String, expected: String },
}

impl Trace {
    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{MAGIC} {}", self.version);
        write_fields(&mut out, &self.params);
        out.push('\n');
        for d in &self.declarations {
            out.push('#');
            out.push_str(&d.tag);
            write_fields(&mut out, &d.fields);
            out.push('\n');
        }
        for (i, e) in self.events.iter().enumerate() {
            let _ = write!(out, "{i}\t{}\t{}", e.time, e.kind.as_str());
            write_fields(&mut out, &e.fields);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Trace, FormatError> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(FormatError::Malformed { line: 1, reason: "empty trace".into() })?;
        let mut parts = first.split('\t');
        let magic = parts.next().unwrap_or("");
        let Some(version) = magic.strip_prefix(MAGIC).and_then(|v| v.strip_prefix(' ')) else {
            return Err(FormatError::Malformed { line: 1, reason: "missing `#qhpc-trace` header".into() });
        };
        let params = parse_fields(parts, 1)?;
        let mut trace = Trace { version: version.to_string(), params, declarations: Vec::new(), events: Vec::new() };
        for (i, raw) in lines {
            let line = i + 1;
            let bad = |reason: String| FormatError::Malformed { line, reason };
            if raw.is_empty() {
                continue;
            }
            if let Some(rest) = raw.strip_prefix('#') {
                let mut parts = rest.split('\t');
                let tag = parts.next().unwrap_or("").to_string();
                trace.declarations.push(HeaderLine { tag, fields: parse_fields(parts, line)? });
                continue;
            }
            let mut parts = raw.split('\t');
            let idx = parts.next().unwrap_or("");
            if idx.parse::<usize>().ok() != Some(trace.events.len()) {
                return Err(bad(format!("expected event index {}, found `{idx}`", trace.events.len())));
            }
            let time = parts.next().ok_or_else(|| bad("missing time".into()))?;
            let time = parse_time(time).ok_or_else(|| bad(format!("bad time `{time}`")))?;
            let kind = parts.next().ok_or_else(|| bad("missing event kind".into()))?;
            let kind = kind.parse().map_err(|_| bad(format!("unknown event kind `{kind}`")))?;
            trace.events.push(TraceEvent { time, kind, fields: parse_fields(parts, line)? });
        }
        Ok(trace)
    }
}

fn write_fields(out: &mut String, fields: &[(String, String)]) {
    for (k, v) in fields {
        let _ = write!(out, "\t{k}={v}");
    }
}

fn parse_fields<'a>(parts: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec<(String, String)>, FormatError> {
    parts
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| FormatError::Malformed { line, reason: format!("expected key=value, found `{p}`") })
        })
        .collect()
}

/// Parses `secs.nnnnnnnnn` (the [`SimTime`] display form) exactly.
pub fn parse_time(s: &str) -> Option<SimTime> {
    let (secs, frac) = s.split_once('.')?;
    if frac.len() != 9 || !frac.bytes().all(|b| b.is_ascii_digit()) || !secs.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let secs: u64 = secs.parse().ok()?;
    let frac: u64 = frac.parse().ok()?;
    secs.checked_mul(1_000_000_000)?.checked_add(frac).map(SimTime)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Replay {
    Equal,
    /// First difference. `event` is `None` when the events agree and the
    /// header differs.
    Diverged {
        event: Option<usize>,
        field: String,
        left: String,
        right: String,
    },
}

/// Compares two traces: events first (so the first behavioural difference
/// is reported), then the header.
pub fn replay_check(a: &str, b: &str) -> Result<Replay, FormatError> {
    let ta = Trace::parse(a)?;
    let tb = Trace::parse(b)?;
    for t in [&ta, &tb] {
        if t.version != FORMAT_VERSION {
            return Err(FormatError::Version { found: t.version.clone(), expected: FORMAT_VERSION.into() });
        }
    }
    let n = ta.events.len().max(tb.events.len());
    for i in 0..n {
        let (ea, eb) = match (ta.events.get(i), tb.events.get(i)) {
            (Some(x), Some(y)) => (x, y),
            (x, y) => {
                let show = |e: Option<&TraceEvent>| e.map_or("<end of trace>".to_string(), |e| e.kind.as_str().into());
                return Ok(Replay::Diverged { event: Some(i), field: "kind".into(), left: show(x), right: show(y) });
            }
        };
        if ea.time != eb.time {
            return Ok(diverged(Some(i), "time", ea.time.to_string(), eb.time.to_string()));
        }
        if ea.kind != eb.kind {
            return Ok(diverged(Some(i), "kind", ea.kind.as_str().into(), eb.kind.as_str().into()));
        }
        if let Some(Replay::Diverged { field, left, right, .. }) = compare_fields(&ea.fields, &eb.fields) {
            return Ok(Replay::Diverged { event: Some(i), field, left, right });
        }
    }
    if let Some(d) = compare_fields(&ta.params, &tb.params) {
        return Ok(d);
    }
    let m = ta.declarations.len().max(tb.declarations.len());
    for i in 0..m {
        match (ta.declarations.get(i), tb.declarations.get(i)) {
            (Some(x), Some(y)) if x == y => {}
            (x, y) => {
                let show = |h: Option<&HeaderLine>| h.map_or("<none>".to_string(), |h| format!("#{}", h.tag));
                let field = format!("declaration {i}");
                if let (Some(x), Some(y)) = (x, y) {
                    if x.tag == y.tag {
                        if let Some(Replay::Diverged { field: f, left, right, .. }) =
                            compare_fields(&x.fields, &y.fields)
                        {
                            return Ok(diverged(None, &format!("{field}.{f}"), left, right));
                        }
                    }
                }
                return Ok(diverged(None, &field, show(x), show(y)));
            }
        }
    }
    if a != b {
        // Same content, different bytes (e.g. blank lines).
        return Ok(diverged(None, "bytes", String::new(), String::new()));
    }
    Ok(Replay::Equal)
}

fn diverged(event: Option<usize>, field: &str, left: String, right: String) -> Replay {
    Replay::Diverged { event, field: field.to_string(), left, right }
}

fn compare_fields(a: &[(String, String)], b: &[(String, String)]) -> Option<Replay> {
    let n = a.len().max(b.len());
    for i in 0..n {
        match (a.get(i), b.get(i)) {
            (Some((ka, va)), Some((kb, vb))) if ka == kb => {
                if va != vb {
                    return Some(diverged(None, ka, va.clone(), vb.clone()));
                }
            }
            (x, y) => {
                let key = x.or(y).map(|(k, _)| k.clone()).unwrap_or_default();
                let show =
                    |f: Option<&(String, String)>| f.map_or("<missing>".to_string(), |(k, v)| format!("{k}={v}"));
                return Some(diverged(None, &key, show(x), show(y)));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> Trace {
        Trace {
            version: FORMAT_VERSION.into(),
            params: vec![("seed".into(), "1".into())],
            declarations: vec![HeaderLine { tag: "resource".into(), fields: vec![("id".into(), "n1".into())] }],
            events: vec![
                TraceEvent { time: SimTime::ZERO, kind: EventKind::SimStart, fields: vec![] },
                TraceEvent {
                    time: SimTime::from_secs(900),
                    kind: EventKind::CalibPoll,
                    fields: vec![("resource".into(), "q".into()), ("fidelity".into(), "0.99".into())],
                },
            ],
        }
    }

    #[test]
    fn text_round_trip() {
        let t = sample();
        let text = t.to_text();
        assert!(text.starts_with("#qhpc-trace v1\tseed=1\n#resource\tid=n1\n0\t0.000000000\tsim_start\n"));
        assert_eq!(Trace::parse(&text).unwrap(), t);
    }

    #[test]
    fn time_parsing_is_exact() {
        assert_eq!(parse_time("0.000004000"), Some(SimTime(4_000)));
        assert_eq!(parse_time("900.000000001"), Some(SimTime(900_000_000_001)));
        assert_eq!(parse_time("1.5"), None);
        assert_eq!(parse_time("-1.000000000"), None);
    }

    #[test]
    fn replay_localizes_divergence() {
        let a = sample().to_text();
        assert_eq!(replay_check(&a, &a).unwrap(), Replay::Equal);
        let mut t = sample();
        t.events[1].fields[1].1 = "0.98".into();
        t.params[0].1 = "2".into();
        match replay_check(&a, &t.to_text()).unwrap() {
            Replay::Diverged { event, field, .. } => {
                assert_eq!(event, Some(1));
                assert_eq!(field, "fidelity");
            }
            Replay::Equal => panic!("traces differ"),
        }
        let mut h = sample();
        h.params[0].1 = "2".into();
        assert!(matches!(replay_check(&a, &h.to_text()).unwrap(), Replay::Diverged { event: None, .. }));
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let a = sample().to_text();
        let b = a.replacen("v1", "v9", 1);
        assert!(matches!(replay_check(&a, &b), Err(FormatError::Version { .. })));
    }
}
