//! File formats, bandwidth reporting, a thread-pool executor and the
//! command line for `rgc-core`.

pub mod bandwidth;
pub mod cli;
pub mod events;
pub mod format;
pub mod parallel;
pub mod schema;
pub mod tensor;

pub use bandwidth::{bandwidth_report, BandwidthReport};
pub use events::{read_events, write_events, EventFile};
pub use format::FormatError;
pub use tensor::{read_video, write_video, RawTensor};
