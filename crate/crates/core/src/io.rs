//! Embedding file format (`.xmeb`).
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header
//!   magic            4 bytes "XMEB"
//!   version          u32     (1)
//!   sample count     u64
//!   feature_dim      u32
//!   text_dim         u32
//!   max_ingredients  u32     longest ingredient list in the file
//!   flags            u32     reserved, written as 0
//!   num_classes      u32
//! per sample
//!   id               u64
//!   label            u32
//!   domain           u8      0 source, 1 target
//!   ingredient count u8
//!   image feature    feature_dim × f32
//!   title feature    text_dim × f32
//!   ingredients      count × text_dim × f32
//! ```
//!
//! Values are stored as `f32`; reading back yields the in-memory dataset
//! after one `f64 → f32 → f64` rounding (see [`Dataset::quantized_f32`]).
//! This is also the import path for externally computed image and text
//! embeddings.

use std::path::Path;

use crate::data::{Dataset, DomainTag, Sample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::EmbeddingVector;

pub const MAGIC: [u8; 4] = *b"XMEB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 * 5;

pub fn encode_dataset<T: Scalar>(dataset: &Dataset<T>) -> Result<Vec<u8>> {
    let max_ingredients = dataset.max_ingredients();
    if max_ingredients > u8::MAX as usize {
        return Err(Error::InvalidInput(format!(
            "{max_ingredients} ingredients exceed the 255 per sample limit"
        )));
    }
    let per_sample = 8 + 4 + 1 + 1 + 4 * (dataset.feature_dim() + dataset.text_dim());
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.len() * per_sample);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for v in [
        dataset.feature_dim(),
        dataset.text_dim(),
        max_ingredients,
        0,
        dataset.num_classes(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let put = |out: &mut Vec<u8>, v: &EmbeddingVector<T>| -> Result<()> {
        for &x in v.as_slice() {
            let f = x.as_f64() as f32;
            if !f.is_finite() {
                return Err(Error::InvalidPayload(format!("{x} does not fit in f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
        Ok(())
    };
    for s in dataset.samples() {
        out.extend_from_slice(&s.id.to_le_bytes());
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
        out.push(s.domain.as_u8());
        out.push(s.ingredient_features.len() as u8);
        put(&mut out, &s.image_feature)?;
        put(&mut out, &s.title_feature)?;
        for v in &s.ingredient_features {
            put(&mut out, v)?;
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::CorruptFile(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn vector<T: Scalar>(&mut self, dim: usize, what: &str) -> Result<EmbeddingVector<T>> {
        let raw = self.take(4 * dim, what)?;
        let mut values = Vec::with_capacity(dim);
        for chunk in raw.chunks_exact(4) {
            let x = f32::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::InvalidPayload(format!("non-finite {what} value")));
            }
            values.push(T::lit(x as f64));
        }
        Ok(EmbeddingVector::from_finite(values))
    }
}

pub fn decode_dataset<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    if bytes.len() < 4 {
        return Err(Error::CorruptFile("file shorter than its magic".into()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::NotAnEmbeddingFile(magic));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u64("sample count")?;
    let feature_dim = r.u32("feature_dim")? as usize;
    let text_dim = r.u32("text_dim")? as usize;
    let max_ingredients = r.u32("max_ingredients")? as usize;
    let _flags = r.u32("flags")?;
    let num_classes = r.u32("num_classes")? as usize;
    if feature_dim == 0 || text_dim == 0 || num_classes == 0 {
        return Err(Error::CorruptFile("zero dimension in header".into()));
    }
    // Each sample occupies at least this many bytes; reject impossible counts
    // before allocating.
    let min_sample = 14 + 4 * (feature_dim + text_dim);
    if count > (bytes.len() / min_sample) as u64 + 1 {
        return Err(Error::CorruptFile(format!(
            "declared {count} samples, file too short"
        )));
    }

    let mut samples = Vec::with_capacity(count as usize);
    for i in 0..count {
        let what = |f: &str| format!("sample {i} {f}");
        let id = r.u64(&what("id"))?;
        let label = r.u32(&what("label"))? as usize;
        if label >= num_classes {
            return Err(Error::CorruptFile(format!(
                "sample {i}: label {label} ≥ {num_classes} classes"
            )));
        }
        let domain = DomainTag::from_u8(r.u8(&what("domain"))?)
            .ok_or_else(|| Error::CorruptFile(format!("sample {i}: bad domain byte")))?;
        let n_ing = r.u8(&what("ingredient count"))? as usize;
        if n_ing > max_ingredients {
            return Err(Error::CorruptFile(format!(
                "sample {i}: {n_ing} ingredients > declared max {max_ingredients}"
            )));
        }
        let image_feature = r.vector(feature_dim, &what("image feature"))?;
        let title_feature = r.vector(text_dim, &what("title feature"))?;
        let ingredient_features = (0..n_ing)
            .map(|_| r.vector(text_dim, &what("ingredient")))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            id,
            label,
            domain,
            image_feature,
            title_feature,
            ingredient_features,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptFile(format!(
            "{} trailing bytes after {count} samples",
            bytes.len() - r.pos
        )));
    }
    Dataset::new(samples, num_classes, feature_dim, text_dim)
        .map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn write_embedding_file<T: Scalar>(dataset: &Dataset<T>, path: &Path) -> Result<()> {
    let bytes = encode_dataset(dataset)?;
    std::fs::write(path, bytes).map_err(|e| Error::write(path, e))
}

pub fn read_embedding_file<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::read(path, e))?;
    decode_dataset(&bytes)
}
