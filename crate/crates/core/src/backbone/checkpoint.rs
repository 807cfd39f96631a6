//! Binary checkpoint files.
//!
//! Layout (little endian): `"DNFA"`, `u16` version, `u32` entry count, then
//! per entry `u32` name length, name bytes, `u8` dtype (1 = f32, 2 = f64),
//! `u8` rank, `rank x u32` dims and the raw values; finally a `u32` CRC32 of
//! every preceding byte.
//!
//! Entries are `meta/*` (architecture, epoch, seed), `param/<name>`,
//! `opt/<name>` (Adagrad accumulators) and `buf/<name>` (batch-norm
//! statistics).

use std::path::Path;

use crate::backbone::{HeadKind, Network, NetworkSpec, NfaOptions};
use crate::error::{Error, Result};
use crate::nfa::CovarianceForm;
use crate::numerics::{Reduce, Tensor};

pub const MAGIC: &[u8; 4] = b"DNFA";
pub const VERSION: u16 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

/// A network together with its training position.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Entry {
    fn scalar(name: &str, v: f64) -> Self {
        Entry {
            name: name.to_string(),
            dims: vec![1],
            data: vec![v],
        }
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn spec_entries(spec: &NetworkSpec, epoch: usize, seed: u64) -> Vec<Entry> {
    let o = &spec.nfa;
    let mut e = vec![
        Entry::scalar("meta/in_channels", spec.in_channels as f64),
        Entry::scalar("meta/levels", spec.levels as f64),
        Entry {
            name: "meta/channels".into(),
            dims: vec![spec.channels.len()],
            data: spec.channels.iter().map(|&c| c as f64).collect(),
        },
        Entry::scalar("meta/head", flag(spec.head == HeadKind::Nfa)),
        Entry::scalar("meta/nfa.form", o.form.code()),
        Entry::scalar("meta/nfa.features", o.features as f64),
        Entry::scalar("meta/nfa.multiscale", flag(o.multiscale)),
        Entry::scalar("meta/nfa.use_eca", flag(o.use_eca)),
        Entry::scalar("meta/nfa.use_spatial", flag(o.use_spatial)),
        Entry::scalar("meta/nfa.reduce", flag(o.reduce == Reduce::Max)),
        Entry::scalar("meta/nfa.alpha", o.alpha),
        Entry::scalar("meta/nfa.reg_weight", o.reg_weight),
        Entry::scalar("meta/nfa.window", o.window as f64),
        Entry::scalar("meta/nfa.heads", o.heads as f64),
        Entry::scalar("meta/nfa.eca_kernel", o.eca_kernel as f64),
        Entry::scalar("meta/epoch", epoch as f64),
    ];
    e.push(Entry {
        name: "meta/seed".into(),
        dims: vec![2],
        data: vec![(seed & 0xffff_ffff) as f64, (seed >> 32) as f64],
    });
    e
}

fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(DTYPE_F64);
        out.push(e.dims.len() as u8);
        for &d in &e.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    if bytes.len() < 6 {
        return Err(Error::Format("checkpoint truncated in header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < 14 {
        return Err(Error::Format("checkpoint truncated in header".into()));
    }
    let (payload, footer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(footer.try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(Error::Format("checkpoint checksum mismatch (corrupt or truncated)".into()));
    }
    let mut r = Reader {
        buf: payload,
        pos: 6,
    };
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let data = match dtype {
            DTYPE_F64 => r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            DTYPE_F32 => r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            other => return Err(Error::Format(format!("entry `{name}` has unknown dtype {other}"))),
        };
        entries.push(Entry { name, dims, data });
    }
    if r.pos != payload.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the entry table",
            payload.len() - r.pos
        )));
    }
    Ok(entries)
}

fn usize_meta(entries: &[Entry], key: &str) -> Result<usize> {
    let v = meta(entries, key)?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::Format(format!("meta entry `{key}` is not a count: {v}")));
    }
    Ok(v as usize)
}

fn find<'a>(entries: &'a [Entry], name: &str) -> Result<&'a Entry> {
    entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Format(format!("checkpoint has no entry `{name}`")))
}

fn meta(entries: &[Entry], key: &str) -> Result<f64> {
    let e = find(entries, &format!("meta/{key}"))?;
    e.data
        .first()
        .copied()
        .ok_or_else(|| Error::Format(format!("meta entry `{key}` is empty")))
}

fn spec_from(entries: &[Entry]) -> Result<(NetworkSpec, usize, u64)> {
    let channels = find(entries, "meta/channels")?
        .data
        .iter()
        .map(|&c| c as usize)
        .collect();
    let nfa = NfaOptions {
        form: CovarianceForm::from_code(meta(entries, "nfa.form")?)?,
        features: usize_meta(entries, "nfa.features")?,
        multiscale: meta(entries, "nfa.multiscale")? != 0.0,
        use_eca: meta(entries, "nfa.use_eca")? != 0.0,
        use_spatial: meta(entries, "nfa.use_spatial")? != 0.0,
        reduce: if meta(entries, "nfa.reduce")? != 0.0 {
            Reduce::Max
        } else {
            Reduce::Min
        },
        alpha: meta(entries, "nfa.alpha")?,
        reg_weight: meta(entries, "nfa.reg_weight")?,
        window: usize_meta(entries, "nfa.window")?,
        heads: usize_meta(entries, "nfa.heads")?,
        eca_kernel: usize_meta(entries, "nfa.eca_kernel")?,
    };
    let spec = NetworkSpec {
        in_channels: usize_meta(entries, "in_channels")?,
        levels: usize_meta(entries, "levels")?,
        channels,
        head: if meta(entries, "head")? != 0.0 {
            HeadKind::Nfa
        } else {
            HeadKind::Plain
        },
        nfa,
    };
    spec.validate()
        .map_err(|e| Error::Format(format!("checkpoint architecture is invalid: {e}")))?;
    let seed_parts = &find(entries, "meta/seed")?.data;
    if seed_parts.len() != 2 {
        return Err(Error::Format("meta entry `seed` must hold two halves".into()));
    }
    let seed = (seed_parts[0] as u64) | ((seed_parts[1] as u64) << 32);
    Ok((spec, usize_meta(entries, "epoch")?, seed))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let mut entries = spec_entries(net.spec(), self.epoch, net.seed);
        for p in net.params.iter() {
            let dims = p.tensor.shape().dims().to_vec();
            entries.push(Entry {
                name: format!("param/{}", p.name),
                dims: dims.clone(),
                data: p.tensor.data().to_vec(),
            });
            entries.push(Entry {
                name: format!("opt/{}", p.name),
                dims,
                data: p.accumulator.clone(),
            });
        }
        for (name, values) in net.params.buffers() {
            entries.push(Entry {
                name: format!("buf/{name}"),
                dims: vec![values.len()],
                data: values.to_vec(),
            });
        }
        encode(&entries)
    }

    /// Rebuilds the network from its recorded architecture and overwrites
    /// every value; nothing is returned unless all entries validate.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let entries = decode(bytes)?;
        let (spec, epoch, seed) = spec_from(&entries)?;
        let mut network = Network::new(&spec, seed)?;
        let mut expected = 0;
        for p in network.params.iter_mut() {
            let e = find(&entries, &format!("param/{}", p.name))?;
            let dims = p.tensor.shape().dims().to_vec();
            if e.dims != dims {
                return Err(Error::Format(format!(
                    "parameter `{}` has dims {:?} in the file, architecture needs {:?}",
                    p.name, e.dims, dims
                )));
            }
            p.tensor = Tensor::new(p.tensor.shape(), e.data.clone())?.with_requires_grad(true);
            let acc = find(&entries, &format!("opt/{}", p.name))?;
            if acc.data.len() != e.data.len() {
                return Err(Error::Format(format!(
                    "optimizer state for `{}` has {} values, expected {}",
                    p.name,
                    acc.data.len(),
                    e.data.len()
                )));
            }
            if acc.data.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Format(format!(
                    "optimizer state for `{}` has negative entries",
                    p.name
                )));
            }
            p.accumulator = acc.data.clone();
            expected += 2;
        }
        let names: Vec<String> = network.params.buffers().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let e = find(&entries, &format!("buf/{name}"))?;
            let slot = network.params.buffer_mut(&name).expect("listed");
            if e.data.len() != slot.len() {
                return Err(Error::Format(format!(
                    "buffer `{name}` has {} values, expected {}",
                    e.data.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(&e.data);
            expected += 1;
        }
        let stored = entries.iter().filter(|e| !e.name.starts_with("meta/")).count();
        if stored != expected {
            return Err(Error::Format(format!(
                "checkpoint holds {stored} arrays, architecture uses {expected}"
            )));
        }
        Ok(Checkpoint { network, epoch })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
