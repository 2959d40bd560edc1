//! Flat `key = value` configuration: file values, overridden by flags,
//! resolved against defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use contention_core::adversary::{AdversarySpec, BlockingVariant};
use contention_core::protocol::adaptive::AdaptiveParams;
use contention_core::protocol::{DEFAULT_B, DEFAULT_C, DEFAULT_Q};
use contention_core::{AckMode, Error, ExperimentConfig, ProtocolSpec, Result};

/// Every accepted key, with its default (`None` = required or unset).
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("protocol", None),
    ("adversary", Some("batch")),
    ("k", None),
    ("trials", Some("100")),
    ("seed", Some("0")),
    ("max-rounds", Some("auto")),
    ("eta", Some("1")),
    ("c", Some("8")),
    ("b", Some("8")),
    ("ack", Some("on")),
    ("q", Some("2")),
    ("sawtooth-initial-phase", Some("1")),
    ("control-exponent", Some("2")),
    ("output", Some("-")),
    ("trace-output", None),
    ("trace-trial", Some("0")),
    ("assert", None),
    ("k-grid", None),
    ("gamma", Some("3")),
    ("variant", Some("frontloaded")),
    ("t1", None),
    ("t2", Some("1")),
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl Settings {
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            s.set(key.trim(), value.trim())?;
        }
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Layers `other` over `self`.
    pub fn merge(mut self, other: Settings) -> Self {
        self.values.extend(other.values);
        self
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        debug_assert!(known(key), "{key}");
        self.values
            .get(key)
            .map(String::as_str)
            .or_else(|| KEYS.iter().find(|(k, _)| *k == key).and_then(|(_, d)| *d))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value for {key}: {v:?}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    /// `key = value` lines for `keys`, readable back by [`Settings::parse_text`].
    pub fn banner(&self, keys: &[&str]) -> String {
        let mut out = String::from("# resolved configuration\n");
        for key in keys {
            if let Some(v) = self.raw(key) {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        out
    }

    pub fn protocol(&self) -> Result<ProtocolSpec> {
        let name: String = self.require("protocol")?;
        let k: u32 = self.require("k")?;
        Ok(match name.as_str() {
            "nak" => ProtocolSpec::Nak {
                k: k as u64,
                c: self.get("c")?.unwrap_or(DEFAULT_C),
            },
            "sublinear" => ProtocolSpec::Sublinear {
                b: self.get("b")?.unwrap_or(DEFAULT_B),
                ack: match self.require::<String>("ack")?.as_str() {
                    "on" => AckMode::SwitchOffOnAck,
                    "off" => AckMode::IgnoreAcks,
                    other => return Err(Error::Config(format!("ack must be on or off, got {other:?}"))),
                },
            },
            "decrease-slowly" => ProtocolSpec::DecreaseSlowly {
                q: self.get("q")?.unwrap_or(DEFAULT_Q),
            },
            "sawtooth" => ProtocolSpec::Sawtooth {
                initial_phase: self.require("sawtooth-initial-phase")?,
            },
            "adaptive" => ProtocolSpec::Adaptive(AdaptiveParams {
                q: self.get("q")?.unwrap_or(DEFAULT_Q),
                sawtooth_initial_phase: self.require("sawtooth-initial-phase")?,
                control_min_exponent: self.require("control-exponent")?,
            }),
            other => {
                return Err(Error::Config(format!(
                    "unknown protocol {other:?} (nak, sublinear, decrease-slowly, sawtooth, adaptive)"
                )))
            }
        })
    }

    /// Keys that matter for the selected protocol.
    pub fn protocol_keys(&self) -> Vec<&'static str> {
        match self.raw("protocol") {
            Some("nak") => vec!["c"],
            Some("sublinear") => vec!["b", "ack"],
            Some("decrease-slowly") => vec!["q"],
            Some("sawtooth") => vec!["sawtooth-initial-phase"],
            Some("adaptive") => vec!["q", "sawtooth-initial-phase", "control-exponent"],
            _ => vec![],
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let max_rounds = match self.raw("max-rounds") {
            Some("auto") | None => None,
            Some(_) => Some(self.require("max-rounds")?),
        };
        let cfg = ExperimentConfig {
            protocol: self.protocol()?,
            adversary: self.require::<AdversarySpec>("adversary")?,
            k: self.require("k")?,
            trials: self.require("trials")?,
            master_seed: self.require("seed")?,
            max_rounds,
            eta: self.require("eta")?,
            record_traces: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn variant(&self) -> Result<BlockingVariant> {
        match self.require::<String>("variant")?.as_str() {
            "frontloaded" => Ok(BlockingVariant::FrontLoaded),
            "twophase" => Ok(BlockingVariant::TwoPhaseJk),
            other => Err(Error::Config(format!("variant must be frontloaded or twophase, got {other:?}"))),
        }
    }

    pub fn k_grid(&self) -> Result<Vec<u32>> {
        let raw: String = self.require("k-grid")?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid k-grid entry {s:?}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let file = Settings::parse_text("# comment\nprotocol = nak\nk = 16\ntrials=3\n").unwrap();
        let mut flags = Settings::default();
        flags.set("k", "64").unwrap();
        let s = file.merge(flags);
        let cfg = s.experiment().unwrap();
        assert_eq!(cfg.k, 64);
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.protocol, ProtocolSpec::Nak { k: 64, c: 8 });
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(Settings::parse_text("colour = blue").is_err());
        assert!(Settings::parse_text("just words").is_err());
    }

    #[test]
    fn banner_round_trips() {
        let s = Settings::parse_text("protocol = sublinear\nk = 32\nack = off").unwrap();
        let keys = ["protocol", "k", "adversary", "b", "ack", "seed"];
        let again = Settings::parse_text(&s.banner(&keys)).unwrap();
        assert_eq!(again.experiment().unwrap(), s.experiment().unwrap());
    }

    #[test]
    fn missing_k() {
        let s = Settings::parse_text("protocol = nak").unwrap();
        assert!(matches!(s.experiment(), Err(Error::Config(_))));
    }
}
