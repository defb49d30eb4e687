//! Parameter files: one line of JSON header, then the flat parameter vector
//! as little-endian `f64`s.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, MlpSpec};
use crate::error::{Result, ScasError};

pub const FORMAT_TAG: &str = "scas-params/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub format: String,
    pub spec: MlpSpec,
    pub seed: u64,
    pub step: u64,
    pub n_params: usize,
}

pub fn encode(net: &Mlp, seed: u64, step: u64) -> Vec<u8> {
    let header = ParamHeader {
        format: FORMAT_TAG.to_string(),
        spec: net.spec.clone(),
        seed,
        step,
        n_params: net.params.len(),
    };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    buf.reserve(net.params.len() * 8);
    for p in &net.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    buf
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Mlp, ParamHeader)> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ScasError::format(path, "missing header line"))?;
    let header: ParamHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| ScasError::format(path, format!("bad header: {e}")))?;
    if header.format != FORMAT_TAG {
        return Err(ScasError::format(
            path,
            format!("unsupported format tag {:?}", header.format),
        ));
    }
    let body = &bytes[newline + 1..];
    if body.len() != header.n_params * 8 {
        return Err(ScasError::format(
            path,
            format!(
                "expected {} parameter bytes, found {}",
                header.n_params * 8,
                body.len()
            ),
        ));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let net = Mlp::new(header.spec.clone(), params)
        .map_err(|e| ScasError::format(path, e.to_string()))?;
    Ok((net, header))
}

pub fn save(path: &Path, net: &Mlp, seed: u64, step: u64) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| ScasError::io(path, e))?;
    file.write_all(&encode(net, seed, step))
        .map_err(|e| ScasError::io(path, e))
}

pub fn load(path: &Path) -> Result<(Mlp, ParamHeader)> {
    let bytes = fs::read(path).map_err(|e| ScasError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OutputActivation;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            params in proptest::collection::vec(-1e300f64..1e300, 17),
            seed in any::<u64>(),
            step in any::<u64>(),
        ) {
            let spec = MlpSpec::new(
                vec![3, 2, 3],
                OutputActivation::TanhScaled { scale: vec![1.0, 0.5, 2.0] },
            ).unwrap();
            let net = Mlp::new(spec, params).unwrap();
            let bytes = encode(&net, seed, step);
            let (back, header) = decode(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(header.seed, seed);
            prop_assert_eq!(header.step, step);
            prop_assert_eq!(back.spec, net.spec);
            for (a, b) in back.params.iter().zip(&net.params) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn truncated_body_is_rejected() {
        let spec = MlpSpec::regression(1, &[], 1).unwrap();
        let net = Mlp::new(spec, vec![1.0, 2.0]).unwrap();
        let mut bytes = encode(&net, 0, 0);
        bytes.pop();
        assert!(matches!(
            decode(&bytes, Path::new("x")),
            Err(ScasError::Format { .. })
        ));
    }
}
