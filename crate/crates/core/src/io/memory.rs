//! Peak-memory comparison across run lengths.

use std::io::Write;

use crate::error::Result;
use crate::fifo::{generate, NullSink, QueueConfig, RunMode};
use crate::sampler::SamplerContext;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryRow {
    pub mode: RunMode,
    pub frames: u64,
    pub peak_bytes: usize,
    /// Process peak resident set in KiB, when probed.
    pub vm_hwm_kib: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryReport {
    pub rows: Vec<MemoryRow>,
    /// Every FIFO row reports the same `peak_bytes`.
    pub constant: bool,
}

impl MemoryReport {
    pub const CSV_HEADER: &'static str = "mode,frames,peak_bytes,constant";

    pub fn from_rows(rows: Vec<MemoryRow>) -> Self {
        let mut fifo = rows.iter().filter(|r| r.mode == RunMode::Fifo).map(|r| r.peak_bytes);
        let constant = match fifo.next() {
            Some(first) => fifo.all(|p| p == first),
            None => true,
        };
        Self { rows, constant }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let probed = self.rows.iter().any(|r| r.vm_hwm_kib.is_some());
        if probed {
            writeln!(w, "{},vm_hwm_kib", Self::CSV_HEADER)?;
        } else {
            writeln!(w, "{}", Self::CSV_HEADER)?;
        }
        for r in &self.rows {
            write!(w, "{},{},{},{}", r.mode, r.frames, r.peak_bytes, self.constant)?;
            if probed {
                let hwm = r.vm_hwm_kib.map(|v| v.to_string()).unwrap_or_default();
                write!(w, ",{hwm}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Runs each `(mode, frames)` pair into a discarding sink and records its
/// accounted peak. With `probe_rss`, the kernel's peak-RSS counter is reset
/// before each run (Linux only) and read afterwards.
pub fn memory_report(
    ctx: &SamplerContext<'_>,
    cfg: &QueueConfig,
    window: u64,
    runs: &[(RunMode, u64)],
    probe_rss: bool,
) -> Result<MemoryReport> {
    let mut rows = Vec::with_capacity(runs.len());
    for &(mode, frames) in runs {
        if probe_rss {
            reset_peak_rss();
        }
        let stats = generate(mode, frames, window, ctx, cfg, &mut NullSink)?;
        rows.push(MemoryRow {
            mode,
            frames,
            peak_bytes: stats.peak_bytes,
            vm_hwm_kib: if probe_rss { peak_rss_kib() } else { None },
        });
    }
    Ok(MemoryReport::from_rows(rows))
}

fn reset_peak_rss() {
    // "5" resets VmHWM to the current RSS; unsupported kernels just refuse it
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}
