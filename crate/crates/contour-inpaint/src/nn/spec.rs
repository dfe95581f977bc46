//! Layer specification grammar: `K{k}[D{d}]S{s}C{c}[+act]` for convolutions
//! (D omitted means dilation 1), plus the tokens `resize` (nearest 2x
//! upsample) and `attention` (contextual attention at the current scale).
//!
//! A conv spec without an activation suffix is a gated convolution with ELU;
//! `+sigmoid`, `+tanh`, `+linear` and `+lrelu` denote plain convolutions with
//! that output activation (network heads, discriminator stages).

use serde::{Deserialize, Serialize};

use super::gated::Act;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub k: usize,
    pub d: usize,
    pub s: usize,
    pub c: usize,
    /// None = gated conv with ELU; Some(act) = plain conv with activation.
    pub act: Option<Act>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Resize,
    Attention,
}

pub fn parse_layer_spec(token: &str) -> Result<LayerSpec> {
    let token = token.trim();
    match token {
        "resize" => return Ok(LayerSpec::Resize),
        "attention" => return Ok(LayerSpec::Attention),
        _ => {}
    }
    let (core, act) = match token.split_once('+') {
        Some((c, a)) => {
            let act = match a {
                "sigmoid" => Act::Sigmoid,
                "tanh" => Act::Tanh,
                "linear" => Act::Linear,
                "lrelu" => Act::LeakyRelu,
                "elu" => Act::Elu,
                other => {
                    return Err(Error::Config(format!(
                        "unknown activation suffix '{other}' in layer spec '{token}'"
                    )))
                }
            };
            (c, Some(act))
        }
        None => (token, None),
    };

    let bytes = core.as_bytes();
    let mut fields: Vec<(u8, usize)> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let tag = bytes[i];
        if !tag.is_ascii_uppercase() {
            return Err(Error::Config(format!(
                "bad layer spec '{token}': expected field letter at byte {i}"
            )));
        }
        i += 1;
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(Error::Config(format!(
                "bad layer spec '{token}': field '{}' has no number",
                tag as char
            )));
        }
        let val: usize = core[start..i]
            .parse()
            .map_err(|_| Error::Config(format!("bad number in layer spec '{token}'")))?;
        fields.push((tag, val));
    }

    let mut k = None;
    let mut d = 1usize;
    let mut s = None;
    let mut c = None;
    for (tag, val) in fields {
        match tag {
            b'K' => k = Some(val),
            b'D' => d = val,
            b'S' => s = Some(val),
            b'C' => c = Some(val),
            other => {
                return Err(Error::Config(format!(
                    "unknown field '{}' in layer spec '{token}'",
                    other as char
                )))
            }
        }
    }
    let (k, s, c) = match (k, s, c) {
        (Some(k), Some(s), Some(c)) => (k, s, c),
        _ => {
            return Err(Error::Config(format!(
                "layer spec '{token}' must define K, S and C"
            )))
        }
    };
    if k % 2 == 0 {
        return Err(Error::Config(format!("layer spec '{token}': K must be odd")));
    }
    if !(1..=2).contains(&s) {
        return Err(Error::Config(format!(
            "layer spec '{token}': S must be 1 or 2"
        )));
    }
    if d == 0 || c == 0 {
        return Err(Error::Config(format!(
            "layer spec '{token}': D and C must be >= 1"
        )));
    }
    Ok(LayerSpec::Conv(ConvSpec { k, d, s, c, act }))
}

pub fn parse_layer_specs(tokens: &[String]) -> Result<Vec<LayerSpec>> {
    tokens.iter().map(|t| parse_layer_spec(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_supplementary_notation() {
        assert_eq!(
            parse_layer_spec("K5S1C48").unwrap(),
            LayerSpec::Conv(ConvSpec {
                k: 5,
                d: 1,
                s: 1,
                c: 48,
                act: None
            })
        );
        assert_eq!(
            parse_layer_spec("K3D16S1C192").unwrap(),
            LayerSpec::Conv(ConvSpec {
                k: 3,
                d: 16,
                s: 1,
                c: 192,
                act: None
            })
        );
        assert_eq!(
            parse_layer_spec("K3S1C3+sigmoid").unwrap(),
            LayerSpec::Conv(ConvSpec {
                k: 3,
                d: 1,
                s: 1,
                c: 3,
                act: Some(Act::Sigmoid)
            })
        );
        assert_eq!(parse_layer_spec("resize").unwrap(), LayerSpec::Resize);
        assert_eq!(parse_layer_spec("attention").unwrap(), LayerSpec::Attention);
    }

    #[test]
    fn rejects_malformed_specs() {
        assert!(parse_layer_spec("K4S1C8").is_err()); // even kernel
        assert!(parse_layer_spec("K3S3C8").is_err()); // bad stride
        assert!(parse_layer_spec("K3S1").is_err()); // missing C
        assert!(parse_layer_spec("K3S1C8+swish").is_err()); // unknown act
        assert!(parse_layer_spec("Q3S1C8").is_err()); // unknown field
    }
}
