use std::io::{self, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    OrderArrived,
    Assigned,
    WorkerNotified,
    LoadStart,
    LoadEnd,
    Delivered,
    EmergencyStop,
    SlowDown,
    /// A design alternative was applied to the fleet between ticks.
    RuleEnacted,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub tick: u64,
    pub t: f64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amr: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<u64>,
    pub x: f64,
    pub y: f64,
}

impl Event {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

/// Writes events as JSON lines.
pub fn write_events<W: Write>(mut out: W, events: &[Event]) -> io::Result<()> {
    for e in events {
        writeln!(out, "{}", e.to_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format_omits_absent_subjects() {
        let e = Event {
            seq: 3,
            tick: 500,
            t: 50.0,
            kind: EventKind::OrderArrived,
            order: Some(0),
            amr: None,
            worker: None,
            alternative: None,
            analysis: None,
            x: 7.5,
            y: 3.5,
        };
        assert_eq!(
            e.to_line(),
            r#"{"seq":3,"tick":500,"t":50.0,"kind":"OrderArrived","order":0,"x":7.5,"y":3.5}"#
        );
        let back: Event = serde_json::from_str(&e.to_line()).unwrap();
        assert_eq!(back, e);
    }
}
