//! Binary checkpoint: `GTRC`, version, encoder config, then every named
//! array as (name, rank, dims, little-endian f32 payload).

use std::path::Path;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::encoder::{Arch, EncoderConfig, ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GTRC";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &ParamSet<f32>, config: &EncoderConfig) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    for v in [
        config.vocab_size,
        config.model_dim,
        config.ffn_dim,
        config.num_layers,
        config.num_heads,
        config.bottleneck_dim,
        config.max_len,
    ] {
        w.u64(v as u64);
    }
    w.u8(config.arch.code());
    w.u32(params.tensors().len() as u32);
    for t in params.tensors() {
        w.str(&t.name);
        w.u32(t.dims.len() as u32);
        for &d in &t.dims {
            w.u64(d as u64);
        }
        w.f32s(&t.data);
    }
    w.buf
}

pub fn from_bytes(data: &[u8]) -> Result<(ParamSet<f32>, EncoderConfig)> {
    let mut r = Reader::new(data);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let mut fields = [0usize; 7];
    for f in fields.iter_mut() {
        *f = r.usize("config field")?;
    }
    let arch_at = r.offset();
    let arch = Arch::from_code(r.u8("arch")?).ok_or_else(|| Error::Corrupt {
        offset: arch_at,
        reason: "unknown architecture code".into(),
    })?;
    let config = EncoderConfig {
        vocab_size: fields[0],
        model_dim: fields[1],
        ffn_dim: fields[2],
        num_layers: fields[3],
        num_heads: fields[4],
        bottleneck_dim: fields[5],
        max_len: fields[6],
        arch,
    };
    let count = r.u32("array count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.str("array name")?;
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.usize("dim")?);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.corrupt(format!("array `{name}` size overflows")))?;
        let data = r.f32s(n, &format!("array `{name}`"))?;
        tensors.push(Tensor { name, dims, data });
    }
    r.finish()?;
    let params = ParamSet::from_tensors(tensors);
    config.validate()?;
    params.check_layout(&config)?;
    Ok((params, config))
}

pub fn save_checkpoint(params: &ParamSet<f32>, config: &EncoderConfig, path: &Path) -> Result<()> {
    params.check_layout(config)?;
    write_file(path, &to_bytes(params, config))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamSet<f32>, EncoderConfig)> {
    from_bytes(&read_file(path)?)
}
