//! Event bandwidth statistics and the channel-entropy coding estimate.

use std::fmt;

use rgc_core::oracle::EventStream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub events: u64,
    pub bins: usize,
    pub duration: f64,
    pub per_bin: Vec<u64>,
    pub mean_per_bin: f64,
    pub max_per_bin: u64,
    pub events_per_second: f64,
    pub channel_histogram: Vec<u64>,
    /// x, y and polarity bits of a fixed-width packet.
    pub position_bits: u32,
    /// `ceil(log2 C)`.
    pub naive_channel_bits: u32,
    /// `-sum p_c log2 p_c` over the observed channel frequencies.
    pub channel_entropy: f64,
    pub naive_bits: f64,
    pub entropy_bits: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("stream has zero duration ({0} .. {1})")]
    ZeroDuration(f64, f64),
    #[error("need at least one bin")]
    NoBins,
    #[error(transparent)]
    Invalid(#[from] rgc_core::Error),
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Statistics of `stream` over `bins` equal intervals of its time range.
pub fn bandwidth_report(stream: &EventStream, bins: usize) -> Result<BandwidthReport, ReportError> {
    stream.validate()?;
    if bins == 0 {
        return Err(ReportError::NoBins);
    }
    let h = &stream.header;
    let duration = h.t_end - h.t_start;
    if !(duration > 0.0) {
        return Err(ReportError::ZeroDuration(h.t_start, h.t_end));
    }
    let mut per_bin = vec![0u64; bins];
    for p in &stream.packets {
        let u = (p.t - h.t_start) / duration * bins as f64;
        let b = if u <= 0.0 { 0 } else { (u as usize).min(bins - 1) };
        per_bin[b] += 1;
    }
    let events = stream.len() as u64;
    let channel_histogram = stream.channel_counts();
    let channel_entropy = if events == 0 {
        0.0
    } else {
        channel_histogram
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / events as f64;
                -p * p.log2()
            })
            .sum::<f64>()
            .max(0.0)
    };
    let position_bits = ceil_log2(h.width) + ceil_log2(h.height) + 1;
    let naive_channel_bits = ceil_log2(h.channels);
    // Guard the estimate against rounding above the fixed-width field.
    let channel_entropy = channel_entropy.min(naive_channel_bits as f64);
    Ok(BandwidthReport {
        events,
        bins,
        duration,
        mean_per_bin: events as f64 / bins as f64,
        max_per_bin: per_bin.iter().copied().max().unwrap_or(0),
        events_per_second: events as f64 / duration,
        per_bin,
        channel_histogram,
        position_bits,
        naive_channel_bits,
        channel_entropy,
        naive_bits: events as f64 * (position_bits + naive_channel_bits) as f64,
        entropy_bits: events as f64 * (position_bits as f64 + channel_entropy),
    })
}

impl fmt::Display for BandwidthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "events            {}", self.events)?;
        writeln!(f, "duration          {} s", self.duration)?;
        writeln!(f, "bins              {}", self.bins)?;
        writeln!(f, "events/bin mean   {:.3}", self.mean_per_bin)?;
        writeln!(f, "events/bin max    {}", self.max_per_bin)?;
        writeln!(f, "events/s          {:.3}", self.events_per_second)?;
        writeln!(f, "packet bits       {} position + {} channel", self.position_bits, self.naive_channel_bits)?;
        writeln!(f, "channel entropy   {:.4} bits/event", self.channel_entropy)?;
        writeln!(f, "naive bits        {:.0}", self.naive_bits)?;
        writeln!(f, "entropy bits      {:.1}", self.entropy_bits)?;
        let hist: Vec<String> = self.channel_histogram.iter().map(u64::to_string).collect();
        write!(f, "channel histogram [{}]", hist.join(", "))
    }
}
