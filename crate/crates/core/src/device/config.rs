use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::latency::{default_size_curve, LatencyModel};
use crate::{Error, Result};

/// Geometry and timing of the emulated device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub page_size: usize,
    pub page_count: u64,
    pub channels: u32,
    /// Kept for documentation; package-level parallelism is folded into
    /// `size_latency_curve`.
    pub packages_per_channel: u32,
    pub read_latency_us: f64,
    pub write_latency_us: f64,
    pub size_latency_curve: BTreeMap<u32, f64>,
    pub interleave_penalty: f64,
    /// Largest number of requests accepted in one psync batch.
    pub max_batch: usize,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            page_size: 4096,
            page_count: 1 << 24,
            channels: 16,
            packages_per_channel: 4,
            read_latency_us: 100.0,
            write_latency_us: 200.0,
            size_latency_curve: default_size_curve(),
            interleave_penalty: 1.3,
            max_batch: 4096,
        }
    }
}

impl DeviceConfig {
    pub fn with_channels(mut self, channels: u32) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_page_size(mut self, page_size: usize) -> Self {
        self.page_size = page_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.page_size < 64 {
            return Err(Error::Config(format!("page_size {} too small", self.page_size)));
        }
        if self.channels == 0 || self.packages_per_channel == 0 {
            return Err(Error::Config("channels and packages_per_channel must be >= 1".into()));
        }
        if !(self.interleave_penalty >= 1.0) {
            return Err(Error::Config("interleave_penalty must be >= 1".into()));
        }
        if !(self.read_latency_us > 0.0 && self.write_latency_us > 0.0) {
            return Err(Error::Config("latencies must be positive".into()));
        }
        if self.max_batch == 0 {
            return Err(Error::Config("max_batch must be >= 1".into()));
        }
        if self.size_latency_curve.is_empty() {
            return Err(Error::Config("size_latency_curve is empty".into()));
        }
        let mut prev = 0.0;
        for (&size, &factor) in &self.size_latency_curve {
            if size == 0 || !(factor > 0.0) || factor < prev {
                return Err(Error::Config(
                    "size_latency_curve must be positive and non-decreasing".into(),
                ));
            }
            prev = factor;
        }
        Ok(())
    }

    pub fn latency_model(&self) -> LatencyModel {
        LatencyModel {
            channels: self.channels,
            read_latency_us: self.read_latency_us,
            write_latency_us: self.write_latency_us,
            size_latency_curve: self.size_latency_curve.clone(),
            interleave_penalty: self.interleave_penalty,
        }
    }

    /// Parses a `key = value` config. Blank lines and `#` comments are
    /// ignored; unspecified keys keep their defaults. The size curve is
    /// written as `size_latency_curve = 1:1.0,2:1.0,4:1.6`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = DeviceConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Config(format!("line {}: bad {what}: {value}", lineno + 1));
            match key {
                "page_size" => cfg.page_size = value.parse().map_err(|_| bad(key))?,
                "page_count" => cfg.page_count = value.parse().map_err(|_| bad(key))?,
                "channels" => cfg.channels = value.parse().map_err(|_| bad(key))?,
                "packages_per_channel" => cfg.packages_per_channel = value.parse().map_err(|_| bad(key))?,
                "read_latency_us" => cfg.read_latency_us = value.parse().map_err(|_| bad(key))?,
                "write_latency_us" => cfg.write_latency_us = value.parse().map_err(|_| bad(key))?,
                "interleave_penalty" => cfg.interleave_penalty = value.parse().map_err(|_| bad(key))?,
                "max_batch" => cfg.max_batch = value.parse().map_err(|_| bad(key))?,
                "size_latency_curve" => {
                    let mut curve = BTreeMap::new();
                    for pair in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                        let (s, f) = pair.split_once(':').ok_or_else(|| bad(key))?;
                        let s: u32 = s.trim().parse().map_err(|_| bad(key))?;
                        let f: f64 = f.trim().parse().map_err(|_| bad(key))?;
                        curve.insert(s, f);
                    }
                    cfg.size_latency_curve = curve;
                }
                other => return Err(Error::Config(format!("line {}: unknown key {other}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "page_size = {}", self.page_size);
        let _ = writeln!(out, "page_count = {}", self.page_count);
        let _ = writeln!(out, "channels = {}", self.channels);
        let _ = writeln!(out, "packages_per_channel = {}", self.packages_per_channel);
        let _ = writeln!(out, "read_latency_us = {}", self.read_latency_us);
        let _ = writeln!(out, "write_latency_us = {}", self.write_latency_us);
        let _ = writeln!(out, "interleave_penalty = {}", self.interleave_penalty);
        let _ = writeln!(out, "max_batch = {}", self.max_batch);
        let curve: Vec<String> = self
            .size_latency_curve
            .iter()
            .map(|(s, f)| format!("{s}:{f}"))
            .collect();
        let _ = writeln!(out, "size_latency_curve = {}", curve.join(","));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let mut cfg = DeviceConfig::default().with_channels(8);
        cfg.size_latency_curve.insert(16, 4.0);
        let parsed = DeviceConfig::parse(&cfg.to_kv_string()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn parse_partial_with_comments() {
        let cfg = DeviceConfig::parse("# emu\nchannels = 4 # four\n\nread_latency_us=80\n").unwrap();
        assert_eq!(cfg.channels, 4);
        assert_eq!(cfg.read_latency_us, 80.0);
        assert_eq!(cfg.page_size, 4096);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(DeviceConfig::parse("channels = 0").is_err());
        assert!(DeviceConfig::parse("interleave_penalty = 0.5").is_err());
        assert!(DeviceConfig::parse("bogus = 1").is_err());
        assert!(DeviceConfig::parse("size_latency_curve = 1:2.0,2:1.0").is_err());
    }
}
