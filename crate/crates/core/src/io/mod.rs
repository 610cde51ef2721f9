//! Files and reports: IAFS frame streams, PGM dumps, stream statistics and
//! memory comparisons.

mod memory;
mod pgm;
mod stats;
mod stream;

pub use memory::{memory_report, peak_rss_kib, MemoryReport, MemoryRow};
pub use pgm::{emit_pgm, render_pgm, FLAT_GRAY};
pub use stats::{stream_stats, window_grid, ChannelStats, StatsReport, DEFAULT_MAX_LAG};
pub use stream::{
    read_stream, write_stream, FrameStream, StreamWriter, STREAM_HEADER_LEN, STREAM_MAGIC, STREAM_VERSION,
};
