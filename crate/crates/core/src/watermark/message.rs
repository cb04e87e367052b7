use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A non-empty bit string `m ∈ {0,1}^K`. Serialises as a string of `0`/`1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WatermarkMessage {
    bits: Vec<bool>,
}

impl WatermarkMessage {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::invalid("watermark message must have at least one bit"));
        }
        Ok(WatermarkMessage { bits })
    }

    /// Uniformly random `k`-bit message.
    pub fn random(k: usize, stream: &RngStream) -> Result<Self> {
        let mut rng = stream.rng();
        Self::new((0..k).map(|_| rng.gen::<bool>()).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i]
    }

    /// `±1` per bit (`1 ↦ +1`, `0 ↦ −1`).
    pub fn signs(&self) -> impl Iterator<Item = f64> + '_ {
        self.bits.iter().map(|&b| if b { 1.0 } else { -1.0 })
    }

    pub fn complement(&self) -> Self {
        WatermarkMessage {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

impl fmt::Display for WatermarkMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for WatermarkMessage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::invalid(format!("message character {other:?} is not a bit"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bits)
    }
}

impl TryFrom<String> for WatermarkMessage {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WatermarkMessage> for String {
    fn from(m: WatermarkMessage) -> String {
        m.to_string()
    }
}

/// Pairwise-distinct messages of equal length, one of which is embedded per
/// image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessagePool {
    messages: Vec<WatermarkMessage>,
}

impl MessagePool {
    pub fn new(messages: Vec<WatermarkMessage>) -> Result<Self> {
        let Some(first) = messages.first() else {
            return Err(Error::invalid("message pool must not be empty"));
        };
        if messages.iter().any(|m| m.len() != first.len()) {
            return Err(Error::invalid("pool messages must share one length"));
        }
        let distinct: std::collections::HashSet<_> = messages.iter().collect();
        if distinct.len() != messages.len() {
            return Err(Error::invalid("pool messages must be pairwise distinct"));
        }
        Ok(MessagePool { messages })
    }

    /// `size` distinct random `k`-bit messages.
    pub fn random(size: usize, k: usize, stream: &RngStream) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("message pool must not be empty"));
        }
        if k < 64 && (size as u128) > (1u128 << k) {
            return Err(Error::invalid(format!("cannot draw {size} distinct {k}-bit messages")));
        }
        let mut seen = std::collections::HashSet::new();
        let mut messages = Vec::with_capacity(size);
        let mut i = 0u64;
        while messages.len() < size {
            let m = WatermarkMessage::random(k, &stream.index(i))?;
            i += 1;
            if seen.insert(m.clone()) {
                messages.push(m);
            }
        }
        Ok(MessagePool { messages })
    }

    pub fn single(m: WatermarkMessage) -> Self {
        MessagePool { messages: vec![m] }
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn message_len(&self) -> usize {
        self.messages[0].len()
    }

    pub fn messages(&self) -> &[WatermarkMessage] {
        &self.messages
    }

    pub fn get(&self, i: usize) -> &WatermarkMessage {
        &self.messages[i]
    }

    /// Uniform index drawn from `stream`.
    pub fn choose(&self, stream: &RngStream) -> usize {
        stream.rng().gen_range(0..self.messages.len())
    }
}
