//! In-memory frame sets: K frames of per-pixel samples for one or more
//! detection channels, with provenance.

use serde::Serialize;

use crate::error::{data, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKind {
    /// Unsigned photon or photoelectron counts.
    Counts,
    /// Analog detector output, stored as integer ADU on disk.
    Adu,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameHeader {
    pub kind: SampleKind,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub frames: u64,
    pub seed: u64,
    #[serde(serialize_with = "crate::io::serialize_hash")]
    pub config_hash: [u8; 32],
}

impl FrameHeader {
    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn samples(&self) -> usize {
        self.pixels() * self.channels as usize * self.frames as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameData {
    Counts(Vec<u64>),
    Analog(Vec<f64>),
}

/// Samples are laid out frame-major: `[frame][channel][pixel]`, pixels in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub header: FrameHeader,
    pub data: FrameData,
}

impl FrameSet {
    fn check(header: &FrameHeader, len: usize) -> Result<()> {
        if header.channels == 0 || header.width == 0 || header.height == 0 {
            return data("frame set needs at least one channel and one pixel");
        }
        if len != header.samples() {
            return data(format!("payload has {len} samples, header implies {}", header.samples()));
        }
        Ok(())
    }

    pub fn from_counts(
        width: u32,
        height: u32,
        channels: u8,
        seed: u64,
        counts: Vec<u64>,
    ) -> Result<Self> {
        let per_frame = (width as usize * height as usize * channels as usize).max(1);
        let header = FrameHeader {
            kind: SampleKind::Counts,
            width,
            height,
            channels,
            frames: (counts.len() / per_frame) as u64,
            seed,
            config_hash: [0; 32],
        };
        Self::check(&header, counts.len())?;
        Ok(Self { header, data: FrameData::Counts(counts) })
    }

    pub fn from_analog(
        width: u32,
        height: u32,
        channels: u8,
        seed: u64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let per_frame = (width as usize * height as usize * channels as usize).max(1);
        let header = FrameHeader {
            kind: SampleKind::Adu,
            width,
            height,
            channels,
            frames: (values.len() / per_frame) as u64,
            seed,
            config_hash: [0; 32],
        };
        Self::check(&header, values.len())?;
        Ok(Self { header, data: FrameData::Analog(values) })
    }

    pub fn with_config_hash(mut self, hash: [u8; 32]) -> Self {
        self.header.config_hash = hash;
        self
    }

    pub fn width(&self) -> usize {
        self.header.width as usize
    }

    pub fn height(&self) -> usize {
        self.header.height as usize
    }

    pub fn pixels(&self) -> usize {
        self.header.pixels()
    }

    pub fn channels(&self) -> usize {
        self.header.channels as usize
    }

    pub fn frames(&self) -> usize {
        self.header.frames as usize
    }

    fn offset(&self, frame: usize, channel: usize) -> usize {
        (frame * self.channels() + channel) * self.pixels()
    }

    /// Counts of one channel of one frame. Panics on analog data.
    pub fn counts(&self, frame: usize, channel: usize) -> &[u64] {
        let o = self.offset(frame, channel);
        match &self.data {
            FrameData::Counts(c) => &c[o..o + self.pixels()],
            FrameData::Analog(_) => panic!("frame set holds analog samples"),
        }
    }

    pub fn values(&self, frame: usize, channel: usize) -> Vec<f64> {
        let o = self.offset(frame, channel);
        let p = self.pixels();
        match &self.data {
            FrameData::Counts(c) => c[o..o + p].iter().map(|&v| v as f64).collect(),
            FrameData::Analog(a) => a[o..o + p].to_vec(),
        }
    }

    pub fn value(&self, frame: usize, channel: usize, pixel: usize) -> f64 {
        let i = self.offset(frame, channel) + pixel;
        match &self.data {
            FrameData::Counts(c) => c[i] as f64,
            FrameData::Analog(a) => a[i],
        }
    }

    /// Time series of one pixel of one channel.
    pub fn pixel_series(&self, channel: usize, pixel: usize) -> Vec<f64> {
        (0..self.frames()).map(|f| self.value(f, channel, pixel)).collect()
    }

    /// Per-frame sum over all pixels of a channel.
    pub fn channel_totals(&self, channel: usize) -> Vec<f64> {
        (0..self.frames()).map(|f| self.values(f, channel).iter().sum()).collect()
    }

    /// Hardware binning: sum samples in d×d blocks.
    pub fn bin(&self, d: usize) -> Result<FrameSet> {
        let (w, h) = (self.width(), self.height());
        if d == 0 || w % d != 0 || h % d != 0 {
            return data(format!("binning factor {d} does not divide the {w}x{h} grid"));
        }
        let (bw, bh) = (w / d, h / d);
        let blocks = bw * bh;
        let map = |p: usize| (p / w / d) * bw + (p % w) / d;
        let mut header = self.header.clone();
        header.width = bw as u32;
        header.height = bh as u32;
        let data = match &self.data {
            FrameData::Counts(c) => {
                let mut out = vec![0u64; self.frames() * self.channels() * blocks];
                for (chunk, dst) in c.chunks(self.pixels()).zip(out.chunks_mut(blocks)) {
                    for (p, &v) in chunk.iter().enumerate() {
                        dst[map(p)] += v;
                    }
                }
                FrameData::Counts(out)
            }
            FrameData::Analog(a) => {
                let mut out = vec![0f64; self.frames() * self.channels() * blocks];
                for (chunk, dst) in a.chunks(self.pixels()).zip(out.chunks_mut(blocks)) {
                    for (p, &v) in chunk.iter().enumerate() {
                        dst[map(p)] += v;
                    }
                }
                FrameData::Analog(out)
            }
        };
        Ok(FrameSet { header, data })
    }

    pub fn total(&self) -> f64 {
        match &self.data {
            FrameData::Counts(c) => c.iter().map(|&v| v as f64).sum(),
            FrameData::Analog(a) => a.iter().sum(),
        }
    }
}
