//! Named `f32` tensor files (safetensors layout) with string metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use photoseq_tensor::Tensor;
use safetensors::{Dtype, SafeTensors};

use crate::{Error, Result};

/// Largest tensor accepted when decoding, in elements.
const MAX_ELEMENTS: usize = 1 << 31;

pub type Metadata = BTreeMap<String, String>;

pub fn encode(tensors: &[(String, &Tensor)], metadata: &Metadata) -> Result<Vec<u8>> {
    let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = tensors
        .iter()
        .map(|(name, t)| {
            let data = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.clone(), data, t.shape().to_vec())
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(name, data, shape)| {
            safetensors::tensor::TensorView::new(Dtype::F32, shape.clone(), data)
                .map(|v| (name.as_str(), v))
                .map_err(|e| Error::Weights(format!("{name}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta: HashMap<String, String> = metadata.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    safetensors::serialize(views, Some(meta)).map_err(|e| Error::Weights(e.to_string()))
}

/// Decode every tensor, sorted by name.
pub fn decode(bytes: &[u8]) -> Result<(Metadata, Vec<(String, Tensor)>)> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::format("tensor file", e))?;
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::format("tensor file", e))?;
    let metadata: Metadata = header
        .metadata()
        .as_ref()
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
        .unwrap_or_default();
    let mut out = Vec::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(Error::format("tensor file", format!("{name}: dtype {:?} is not F32", view.dtype())));
        }
        let numel = view
            .shape()
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| Error::format("tensor file", format!("{name}: tensor too large")))?;
        let data: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if data.len() != numel {
            return Err(Error::format("tensor file", format!("{name}: data length mismatch")));
        }
        let t = Tensor::from_vec(view.shape(), data).map_err(|e| Error::format("tensor file", e))?;
        out.push((name, t));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok((metadata, out))
}

pub fn write(path: &Path, tensors: &[(String, &Tensor)], metadata: &Metadata) -> Result<()> {
    let bytes = encode(tensors, metadata)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(Metadata, Vec<(String, Tensor)>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { what, detail } => Error::Weights(format!("{}: malformed {what}: {detail}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, -7.25]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.125]).unwrap();
        let mut meta = Metadata::new();
        meta.insert("k".into(), "v".into());
        let bytes = encode(&[("z".into(), &a), ("a".into(), &b)], &meta).unwrap();
        let (m, ts) = decode(&bytes).unwrap();
        assert_eq!(m, meta);
        assert_eq!(ts[0].0, "a");
        assert_eq!(ts[1].1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(decode(b"").is_err());
        assert!(decode(&[8, 0, 0, 0, 0, 0, 0, 0, b'{', b'}']).is_err());
    }
}
