//! Binary checkpoint format.
//!
//! ```text
//! magic          4 bytes  "XMLT"
//! version        u32 LE   (1)
//! feature_dim    u32 LE
//! text_dim       u32 LE
//! shared_dim     u32 LE
//! num_classes    u32 LE
//! fusion flags   u32 LE   bit 0 use_title, bit 1 use_ingredients,
//!                         bit 2 renormalize_fused
//! weights        f64 LE   image W (shared × feature), image b,
//!                         text W (shared × 2·text), text b,
//!                         classifier W (classes × shared), classifier b
//! ```
//!
//! Weight matrices are row-major. Nothing follows the last weight.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{FusionConfig, ModelDims, ModelParams};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"XMLT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub fusion: FusionConfig,
}

fn flags(f: FusionConfig) -> u32 {
    u32::from(f.use_title) | u32::from(f.use_ingredients) << 1 | u32::from(f.renormalize_fused) << 2
}

pub fn encode_checkpoint<T: Scalar>(params: &ModelParams<T>, fusion: FusionConfig) -> Vec<u8> {
    let d = params.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.num_values());
    out.extend_from_slice(&MAGIC);
    for v in [
        VERSION,
        d.feature_dim as u32,
        d.text_dim as u32,
        d.shared_dim as u32,
        d.num_classes as u32,
        flags(fusion),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for w in params.values() {
        out.extend_from_slice(&w.as_f64().to_le_bytes());
    }
    out
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let bad = |m: String| Error::BadCheckpoint(m);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(bad(format!(
            "unsupported version {version} (this build reads version {VERSION})"
        )));
    }
    let dims = ModelDims {
        feature_dim: word(1) as usize,
        text_dim: word(2) as usize,
        shared_dim: word(3) as usize,
        num_classes: word(4) as usize,
    };
    if [
        dims.feature_dim,
        dims.text_dim,
        dims.shared_dim,
        dims.num_classes,
    ]
    .contains(&0)
    {
        return Err(bad("zero dimension in header".into()));
    }
    let f = word(5);
    if f & !0b111 != 0 {
        return Err(bad(format!("unknown flags {f:#x}")));
    }
    let fusion = FusionConfig {
        use_title: f & 1 != 0,
        use_ingredients: f & 2 != 0,
        renormalize_fused: f & 4 != 0,
    };

    let mut params = ModelParams::<T>::zeros(dims);
    let expected = HEADER_LEN + 8 * params.num_values();
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    for (w, chunk) in params.values_mut().zip(bytes[HEADER_LEN..].chunks_exact(8)) {
        let x = f64::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(bad("non-finite weight".into()));
        }
        *w = T::lit(x);
    }
    Ok(Checkpoint { params, fusion })
}

pub fn save_checkpoint<T: Scalar>(
    params: &ModelParams<T>,
    fusion: FusionConfig,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params, fusion)).map_err(|e| Error::write(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::read(path, e))?;
    decode_checkpoint(&bytes)
}
