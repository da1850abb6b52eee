//! Binary checkpoints.
//!
//! ```text
//! ccc-checkpoint <version> <seed>\n
//! meta <key> <f64 bits as hex>\n        (any number)
//! tensors <count>\n
//! <store>/<param> <d0>x<d1>..\n          (lexicographic by name)
//! end\n
//! <little-endian f64 payload, tensors in manifest order>
//! ```
//!
//! Meta values carry the iteration counter and the baseline trackers. All
//! sampling is keyed by `(seed, iteration, ...)`, so nothing else is needed
//! to resume a run bit-exactly.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &str = "ccc-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub meta: BTreeMap<String, f64>,
    /// Tensors keyed `store/param`.
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(seed: u64) -> Self {
        Checkpoint {
            seed,
            meta: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn add_store(&mut self, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.tensors.insert(format!("{}/{}", store.tag(), name), t.clone());
        }
    }

    /// Overwrites every parameter of `store` from the checkpoint; all must be
    /// present with matching shapes.
    pub fn load_store(&self, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.names().cloned().collect();
        for name in names {
            let key = format!("{}/{}", store.tag(), name);
            let t = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            store
                .set(&name, t.clone())
                .map_err(|e| Error::Checkpoint(format!("{key}: {e}")))?;
        }
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing meta value {key}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC} {VERSION} {}\n", self.seed);
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {k} {:016x}\n", v.to_bits()));
        }
        head.push_str(&format!("tensors {}\n", self.tensors.len()));
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let shape = if shape.is_empty() { "scalar".to_string() } else { shape.join("x") };
            head.push_str(&format!("{name} {shape}\n"));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut pos = 0;
        let mut next_line = || -> Result<String> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header".into()))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| bad("header is not UTF-8".into()))?
                .to_string();
            pos += end + 1;
            Ok(line)
        };

        let first = next_line()?;
        let parts: Vec<&str> = first.split(' ').collect();
        if parts.len() != 3 || parts[0] != MAGIC {
            return Err(bad(format!("bad header line `{first}`")));
        }
        let version: u32 = parts[1]
            .parse()
            .map_err(|_| bad(format!("bad version `{}`", parts[1])))?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let seed: u64 = parts[2].parse().map_err(|_| bad(format!("bad seed `{}`", parts[2])))?;
        let mut ck = Checkpoint::new(seed);

        let count = loop {
            let line = next_line()?;
            let parts: Vec<&str> = line.split(' ').collect();
            match parts.as_slice() {
                ["meta", k, v] => {
                    let bits = u64::from_str_radix(v, 16).map_err(|_| bad(format!("bad meta `{line}`")))?;
                    ck.meta.insert(k.to_string(), f64::from_bits(bits));
                }
                ["tensors", n] => break n.parse::<usize>().map_err(|_| bad(format!("bad count `{line}`")))?,
                _ => return Err(bad(format!("unexpected header line `{line}`"))),
            }
        };
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next_line()?;
            let (name, shape) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("bad manifest line `{line}`")))?;
            let shape: Vec<usize> = if shape == "scalar" {
                Vec::new()
            } else {
                shape
                    .split('x')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad shape in `{line}`"))))
                    .collect::<Result<_>>()?
            };
            manifest.push((name.to_string(), shape));
        }
        if next_line()? != "end" {
            return Err(bad("manifest not terminated by `end`".into()));
        }
        let mut offset = pos;
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            let len = n * 8;
            if offset + len > bytes.len() {
                return Err(bad(format!("payload truncated at {name}")));
            }
            let data = bytes[offset..offset + len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            offset += len;
            ck.tensors.insert(name, Tensor::new(shape, data)?);
        }
        if offset != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
        }
        Ok(ck)
    }
}
