use std::io::Write;

use serde::Serialize;

use super::{ExecutionTrace, TraceEvent, TraceTotals};
use crate::error::Result;
use crate::metrics::MetricReport;

/// One row per tick: `tick,progress,cmd_<name>...,exec_<name>...,speed_mm_s,
/// stalled,starved,chunk_id,event`.
pub fn write_trace_csv<W: Write>(writer: W, trace: &ExecutionTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["tick".to_string(), "progress".to_string()];
    header.extend(trace.channel_names.iter().map(|n| format!("cmd_{n}")));
    header.extend(trace.channel_names.iter().map(|n| format!("exec_{n}")));
    header.extend(["speed_mm_s", "stalled", "starved", "chunk_id", "event"].map(String::from));
    w.write_record(&header)?;
    for t in &trace.ticks {
        let mut rec = vec![t.tick.to_string(), t.progress.to_string()];
        rec.extend(t.commanded.iter().map(|v| v.to_string()));
        rec.extend(t.executed.iter().map(|v| v.to_string()));
        rec.push(t.speed_mm_s.to_string());
        rec.push((t.stalled as u8).to_string());
        rec.push((t.starved as u8).to_string());
        rec.push(t.chunk_id.to_string());
        rec.push(
            match t.event {
                TraceEvent::None => "none",
                TraceEvent::InferenceStart => "inference_start",
                TraceEvent::ChunkSwitch => "chunk_switch",
            }
            .to_string(),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSummary<'a> {
    pub ticks: usize,
    pub totals: &'a TraceTotals,
    pub metrics: &'a MetricReport,
}

pub fn summary_json(trace: &ExecutionTrace, metrics: &MetricReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(&TraceSummary { ticks: trace.ticks.len(), totals: &trace.totals, metrics })?)
}
