//! Binary checkpoint container.
//!
//! Layout:
//!
//! ```text
//! PLACEOPT-CKPT\n
//! version=1\n
//! <key>=<value>\n            (header entries, keys sorted)
//! tensors=<count>\n
//! <name> <rows> <cols>\n      followed by rows*cols f64 little-endian values
//! ...
//! ```
//!
//! Keys and tensor names never contain whitespace, `=` or newlines.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::policy::{CriticParameters, NetConfig, ParamTensors, PolicyParameters, TransformerPolicy, Variant};

const MAGIC: &str = "PLACEOPT-CKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub tensors: Vec<(String, Array2<f64>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.contains(|c: char| c.is_whitespace() || c == '=')
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.header.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing header key `{key}`")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| bad(format!("header key `{key}` has unparsable value `{raw}`")))
    }

    pub fn push_tensors<P: ParamTensors>(&mut self, prefix: &str, params: &P) {
        for (name, t) in params.tensors() {
            self.tensors.push((format!("{prefix}{name}"), t.clone()));
        }
    }

    /// Fills `target` from tensors named `prefix + name`, checking every shape.
    pub fn fill_tensors<P: ParamTensors>(&self, prefix: &str, target: &mut P) -> Result<()> {
        let index: BTreeMap<&str, &Array2<f64>> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let names: Vec<(String, (usize, usize))> = target.tensors().into_iter().map(|(n, t)| (n, t.dim())).collect();
        for ((name, shape), dst) in names.into_iter().zip(target.tensors_mut()) {
            let full = format!("{prefix}{name}");
            let src = index
                .get(full.as_str())
                .ok_or_else(|| bad(format!("missing tensor `{full}`")))?;
            if src.dim() != shape {
                return Err(bad(format!(
                    "tensor `{full}` has shape {:?}, configuration expects {:?}",
                    src.dim(),
                    shape
                )));
            }
            dst.assign(src);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut text = format!("{MAGIC}\nversion={FORMAT_VERSION}\n");
        for (k, v) in &self.header {
            if !valid_token(k) || v.contains('\n') {
                return Err(bad(format!("header entry `{k}` cannot be serialized")));
            }
            text.push_str(&format!("{k}={v}\n"));
        }
        text.push_str(&format!("tensors={}\n", self.tensors.len()));
        out.extend_from_slice(text.as_bytes());
        for (name, t) in &self.tensors {
            if !valid_token(name) {
                return Err(bad(format!("tensor name `{name}` cannot be serialized")));
            }
            let (r, c) = t.dim();
            out.extend_from_slice(format!("{name} {r} {c}\n").as_bytes());
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0usize;
        let next_line = |cursor: &mut usize| -> Result<String> {
            let rest = &bytes[*cursor..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))?;
            *cursor += end + 1;
            Ok(line.to_string())
        };
        if next_line(&mut cursor)? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = next_line(&mut cursor)?;
        if version != format!("version={FORMAT_VERSION}") {
            return Err(bad(format!("unsupported format `{version}`")));
        }
        let mut ckpt = Checkpoint::new();
        let count = loop {
            let line = next_line(&mut cursor)?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
            if k == "tensors" {
                break v.parse::<usize>().map_err(|_| bad("bad tensor count"))?;
            }
            ckpt.header.insert(k.to_string(), v.to_string());
        };
        for _ in 0..count {
            let line = next_line(&mut cursor)?;
            let mut parts = line.split(' ');
            let (Some(name), Some(r), Some(c), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad(format!("malformed tensor line `{line}`")));
            };
            let rows: usize = r.parse().map_err(|_| bad(format!("bad row count in `{line}`")))?;
            let cols: usize = c.parse().map_err(|_| bad(format!("bad column count in `{line}`")))?;
            let len = rows
                .checked_mul(cols)
                .and_then(|k| k.checked_mul(8))
                .ok_or_else(|| bad("tensor too large"))?;
            if bytes.len() - cursor < len {
                return Err(bad(format!("truncated data for tensor `{name}`")));
            }
            let values: Vec<f64> = bytes[cursor..cursor + len]
                .chunks_exact(8)
                .map(|ch| f64::from_le_bytes(ch.try_into().expect("8 bytes")))
                .collect();
            cursor += len;
            let t = Array2::from_shape_vec((rows, cols), values).expect("length checked");
            ckpt.tensors.push((name.to_string(), t));
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(ckpt)
    }

    /// Writes through a temporary sibling and renames, so readers never see a
    /// partial file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

pub fn put_net_config(ckpt: &mut Checkpoint, config: &NetConfig) {
    ckpt.set("net.d_h", config.d_h);
    ckpt.set("net.d_ff", config.d_ff);
    ckpt.set("net.layers", config.layers);
    ckpt.set("net.clip", config.clip);
    ckpt.set("net.variant", config.variant);
}

pub fn get_net_config(ckpt: &Checkpoint) -> Result<NetConfig> {
    let config = NetConfig {
        d_h: ckpt.get_parsed("net.d_h")?,
        d_ff: ckpt.get_parsed("net.d_ff")?,
        layers: ckpt.get_parsed("net.layers")?,
        clip: ckpt.get_parsed("net.clip")?,
        variant: ckpt.get("net.variant")?.parse::<Variant>()?,
    };
    config
        .validate()
        .map_err(|e| bad(format!("stored network configuration is invalid: {e}")))?;
    Ok(config)
}

pub fn policy_checkpoint(policy: &TransformerPolicy) -> Checkpoint {
    let mut ckpt = Checkpoint::new();
    put_net_config(&mut ckpt, &policy.config);
    ckpt.push_tensors("", &policy.actor);
    ckpt.push_tensors("", &policy.critic);
    ckpt
}

pub fn policy_from_checkpoint(ckpt: &Checkpoint) -> Result<TransformerPolicy> {
    let config = get_net_config(ckpt)?;
    let mut actor = PolicyParameters::init(&config, 0);
    let mut critic = CriticParameters::init(&config, 0);
    ckpt.fill_tensors("", &mut actor)?;
    ckpt.fill_tensors("", &mut critic)?;
    if let Some(name) = actor.first_non_finite().or_else(|| critic.first_non_finite()) {
        return Err(bad(format!("tensor `{name}` holds non-finite values")));
    }
    Ok(TransformerPolicy { config, actor, critic })
}

pub fn save_policy(policy: &TransformerPolicy, path: &Path) -> Result<()> {
    policy_checkpoint(policy).write(path)
}

pub fn load_policy(path: &Path) -> Result<TransformerPolicy> {
    policy_from_checkpoint(&Checkpoint::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TransformerPolicy {
        let config = NetConfig {
            d_h: 4,
            d_ff: 6,
            layers: 2,
            clip: 10.0,
            variant: Variant::MaskSwap,
        };
        TransformerPolicy::init(config, 3).unwrap()
    }

    #[test]
    fn policy_round_trips_bit_exactly() {
        let p = small();
        let bytes = policy_checkpoint(&p).to_bytes().unwrap();
        let back = policy_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let p = small();
        save_policy(&p, &path).unwrap();
        assert_eq!(load_policy(&path).unwrap(), p);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = small();
        let mut ckpt = policy_checkpoint(&p);
        ckpt.set("net.d_h", 8);
        let err = policy_from_checkpoint(&ckpt).unwrap_err().to_string();
        assert!(err.contains("shape"), "{err}");
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = policy_checkpoint(&small()).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"hello\n").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn missing_tensor_is_named() {
        let mut ckpt = policy_checkpoint(&small());
        ckpt.tensors.retain(|(n, _)| n != "decoder.w_k");
        let err = policy_from_checkpoint(&ckpt).unwrap_err().to_string();
        assert!(err.contains("decoder.w_k"), "{err}");
    }
}
