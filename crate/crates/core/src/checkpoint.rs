//! Bit-exact model checkpoints.
//!
//! A checkpoint is a JSON document. Every float is stored twice: as a
//! hexadecimal float literal (`0x1.921fb54442d18p+1`), which is what gets read
//! back, and as a decimal rendering for people.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::TustinModel;
use crate::nn::FeedforwardNet;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "tustin-net-checkpoint/1";

/// Hexadecimal float literal for an `f64`, exact for every finite value.
pub fn to_hex_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let digits = format!("{mant:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{e:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{e:+}")
    }
}

/// Inverse of [`to_hex_float`].
pub fn from_hex_float(s: &str) -> Option<f64> {
    match s {
        "nan" => return Some(f64::NAN),
        "inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let rest = rest.strip_prefix("0x")?;
    let (mantissa, exp) = rest.split_once('p')?;
    let exp: i64 = exp.parse().ok()?;
    let (lead, frac) = match mantissa.split_once('.') {
        Some((l, f)) => (l, f),
        None => (mantissa, ""),
    };
    if frac.len() > 13 || !frac.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    let frac_bits = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
    };
    let sign_bit = u64::from(negative) << 63;
    let bits = match lead {
        "0" if frac_bits == 0 => 0,
        "0" if exp == -1022 => frac_bits,
        "1" if (-1022..=1023).contains(&exp) => (((exp + 1023) as u64) << 52) | frac_bits,
        _ => return None,
    };
    Some(f64::from_bits(sign_bit | bits))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major hexadecimal literals.
    pub hex: Vec<String>,
    pub decimal: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorRecord {
    pub hex: Vec<String>,
    pub decimal: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub layer_sizes: Vec<usize>,
    pub activation_slope: String,
    pub tau_s: String,
    pub n_q: usize,
    pub n_u: usize,
    pub frozen: Vec<bool>,
    pub weights: Vec<MatrixRecord>,
    pub biases: Vec<VectorRecord>,
    /// Free-form provenance (stage name, seed, ...).
    #[serde(default)]
    pub note: String,
}

fn vector_record<T: Scalar>(v: &[T]) -> VectorRecord {
    VectorRecord {
        hex: v.iter().map(|x| to_hex_float(x.as_f64())).collect(),
        decimal: v.iter().map(|x| x.as_f64()).collect(),
    }
}

fn parse_values<T: Scalar>(hex: &[String]) -> Result<Vec<T>> {
    hex.iter()
        .map(|h| {
            from_hex_float(h)
                .map(T::c)
                .ok_or_else(|| Error::Checkpoint(format!("bad hexadecimal float `{h}`")))
        })
        .collect()
}

fn parse_scalar<T: Scalar>(h: &str) -> Result<T> {
    Ok(parse_values::<T>(&[h.to_string()])?[0])
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &TustinModel<T>, note: impl Into<String>) -> Self {
        let net = &model.net;
        Self {
            format: CHECKPOINT_FORMAT.into(),
            layer_sizes: net.layer_sizes().to_vec(),
            activation_slope: to_hex_float(net.activation_slope().as_f64()),
            tau_s: to_hex_float(model.tau_s().as_f64()),
            n_q: model.n_q(),
            n_u: model.n_u(),
            frozen: net.frozen().to_vec(),
            weights: net
                .weights()
                .iter()
                .map(|w| {
                    let v = vector_record(w.as_slice());
                    MatrixRecord {
                        rows: w.rows(),
                        cols: w.cols(),
                        hex: v.hex,
                        decimal: v.decimal,
                    }
                })
                .collect(),
            biases: net.biases().iter().map(|b| vector_record(b)).collect(),
            note: note.into(),
        }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<TustinModel<T>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", self.format)));
        }
        let weights = self
            .weights
            .iter()
            .map(|w| {
                Matrix::from_row_major(w.rows, w.cols, parse_values(&w.hex)?)
                    .ok_or_else(|| Error::Checkpoint(format!("matrix {}x{} has wrong entry count", w.rows, w.cols)))
            })
            .collect::<Result<Vec<_>>>()?;
        let biases = self
            .biases
            .iter()
            .map(|b| parse_values(&b.hex))
            .collect::<Result<Vec<_>>>()?;
        let mut net = FeedforwardNet::from_parts(weights, biases, parse_scalar(&self.activation_slope)?)?;
        if net.layer_sizes() != self.layer_sizes.as_slice() {
            return Err(Error::Checkpoint("layer_sizes disagree with stored matrices".into()));
        }
        net.set_frozen(self.frozen.clone())?;
        TustinModel::new(net, self.n_q, self.n_u, parse_scalar(&self.tau_s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn save_model<T: Scalar>(model: &TustinModel<T>, path: &Path, note: &str) -> Result<()> {
    Checkpoint::from_model(model, note).save(path)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<TustinModel<T>> {
    Checkpoint::load(path)?.to_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hex_literals() {
        assert_eq!(to_hex_float(1.0), "0x1p+0");
        assert_eq!(to_hex_float(-2.5), "-0x1.4p+1");
        assert_eq!(to_hex_float(0.0), "0x0p+0");
        assert_eq!(to_hex_float(-0.0), "-0x0p+0");
        assert_eq!(to_hex_float(std::f64::consts::PI), "0x1.921fb54442d18p+1");
        assert_eq!(from_hex_float("0x1.921fb54442d18p+1"), Some(std::f64::consts::PI));
        assert_eq!(from_hex_float("0x2p+0"), None);
        assert_eq!(from_hex_float("1.5"), None);
    }

    proptest! {
        #[test]
        fn hex_round_trip_is_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(!x.is_nan());
            let back = from_hex_float(&to_hex_float(x)).unwrap();
            prop_assert_eq!(back.to_bits(), bits);
        }
    }
}
