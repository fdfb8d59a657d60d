//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//! `LITMASCK` magic, `u32` version, `u8` step tag (1|2), dims
//! (`input_dim`, hidden count + widths, `d`, `k` as `u64`), modality table
//! (count, then length-prefixed UTF-8 names), a `u8` flag set
//! (projection present / projection shared / classifier present / centers
//! present), then every parameter tensor in registry order as
//! `u32` rank + `u64` dims + raw `f64` data, then optionally the center
//! matrix and its `u64` epoch stamp. Load of a save is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use super::{
    ClassifierParams, Dims, EncoderParams, LinearParams, ModelBundle, ModelError, MoPEParams,
    ProjectionParams, Result, StepTag,
};
use crate::dataio::ModalityTable;
use crate::losses::CenterBank;
use crate::numgrad::Tensor;

const MAGIC: &[u8; 8] = b"LITMASCK";
const VERSION: u32 = 1;

const FLAG_PROJECTION: u8 = 1;
const FLAG_SHARED: u8 = 2;
const FLAG_CLASSIFIER: u8 = 4;
const FLAG_CENTERS: u8 = 8;

pub fn save_checkpoint(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match bundle.step {
        StepTag::Step1 => 1,
        StepTag::Step2 => 2,
    });
    put_u64(&mut buf, bundle.dims.input_dim as u64);
    put_u64(&mut buf, bundle.dims.hidden.len() as u64);
    for &h in &bundle.dims.hidden {
        put_u64(&mut buf, h as u64);
    }
    put_u64(&mut buf, bundle.dims.d as u64);
    put_u64(&mut buf, bundle.dims.k as u64);
    put_u64(&mut buf, bundle.modalities.len() as u64);
    for name in bundle.modalities.names() {
        put_u64(&mut buf, name.len() as u64);
        buf.extend_from_slice(name.as_bytes());
    }
    let mut flags = 0u8;
    match &bundle.projection {
        Some(ProjectionParams::MoPE(_)) => flags |= FLAG_PROJECTION,
        Some(ProjectionParams::Shared(_)) => flags |= FLAG_PROJECTION | FLAG_SHARED,
        None => {}
    }
    if bundle.classifier.is_some() {
        flags |= FLAG_CLASSIFIER;
    }
    if bundle.centers.is_some() {
        flags |= FLAG_CENTERS;
    }
    buf.push(flags);
    for t in bundle.params() {
        put_tensor(&mut buf, t);
    }
    if let Some(bank) = &bundle.centers {
        put_tensor(&mut buf, &bank.centers);
        put_u64(&mut buf, bank.epoch);
    }

    let io_err = |source: std::io::Error| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    let p = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: p.clone(),
        source,
    })?;
    let mut r = Reader {
        path: &p,
        cur: bytes.as_slice(),
    };

    let mut magic = [0u8; 8];
    r.take(&mut magic)?;
    if &magic != MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::Version {
            path: p.clone(),
            found: version,
            supported: VERSION,
        });
    }
    let step = match r.u8()? {
        1 => StepTag::Step1,
        2 => StepTag::Step2,
        other => return Err(r.corrupt(&format!("bad step tag {other}"))),
    };
    let input_dim = r.usize()?;
    let n_hidden = r.usize()?;
    if n_hidden > 1024 {
        return Err(r.corrupt("implausible hidden layer count"));
    }
    let hidden: Vec<usize> = (0..n_hidden)
        .map(|_| r.usize())
        .collect::<Result<_>>()?;
    let d = r.usize()?;
    let k = r.usize()?;
    let dims = Dims {
        input_dim,
        hidden,
        d,
        k,
    };
    dims.validate()?;
    let n_mods = r.usize()?;
    if n_mods > 4096 {
        return Err(r.corrupt("implausible modality count"));
    }
    let mut names = Vec::with_capacity(n_mods);
    for _ in 0..n_mods {
        let len = r.usize()?;
        let raw = r.bytes(len)?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| r.corrupt("modality name is not UTF-8"))?;
        names.push(name.to_string());
    }
    let modalities =
        ModalityTable::new(&names).map_err(|e| r.corrupt(&e.to_string()))?;
    let flags = r.u8()?;

    let linear = |r: &mut Reader| -> Result<LinearParams> {
        let weight = get_tensor(r)?;
        let bias = get_tensor(r)?;
        Ok(LinearParams { weight, bias })
    };

    let n_layers = dims.encoder_layers().len();
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(linear(&mut r)?);
    }
    let projection = if flags & FLAG_PROJECTION != 0 {
        if flags & FLAG_SHARED != 0 {
            Some(ProjectionParams::Shared(linear(&mut r)?))
        } else {
            let mut heads = Vec::with_capacity(n_mods);
            for _ in 0..n_mods {
                heads.push(linear(&mut r)?);
            }
            Some(ProjectionParams::MoPE(MoPEParams { heads }))
        }
    } else {
        None
    };
    let classifier = if flags & FLAG_CLASSIFIER != 0 {
        Some(ClassifierParams {
            linear: linear(&mut r)?,
        })
    } else {
        None
    };
    let centers = if flags & FLAG_CENTERS != 0 {
        let centers = get_tensor(&mut r)?;
        let epoch = r.u64()?;
        Some(CenterBank { centers, epoch })
    } else {
        None
    };
    if !r.cur.is_empty() {
        return Err(r.corrupt("trailing bytes after checkpoint payload"));
    }

    let bundle = ModelBundle {
        step,
        dims,
        modalities,
        encoder: EncoderParams { layers },
        projection,
        classifier,
        centers,
    };
    validate_shapes(&bundle).map_err(|msg| ModelError::Corrupt { path: p, msg })?;
    Ok(bundle)
}

fn validate_shapes(b: &ModelBundle) -> std::result::Result<(), String> {
    for (l, (fan_in, fan_out)) in b.encoder.layers.iter().zip(b.dims.encoder_layers()) {
        if l.weight.shape() != [fan_in, fan_out] || l.bias.shape() != [fan_out] {
            return Err("encoder layer shape does not match dims header".to_string());
        }
    }
    let check_head = |h: &LinearParams| -> std::result::Result<(), String> {
        if h.weight.shape() != [b.dims.d, b.dims.k] || h.bias.shape() != [b.dims.k] {
            return Err("projection head shape does not match dims header".to_string());
        }
        Ok(())
    };
    match &b.projection {
        Some(ProjectionParams::MoPE(m)) => {
            if m.heads.len() != b.modalities.len() {
                return Err("head count does not match modality table".to_string());
            }
            for h in &m.heads {
                check_head(h)?;
            }
        }
        Some(ProjectionParams::Shared(h)) => check_head(h)?,
        None => {}
    }
    if let Some(c) = &b.classifier {
        if c.linear.weight.shape() != [b.dims.k, 2] || c.linear.bias.shape() != [2] {
            return Err("classifier shape does not match dims header".to_string());
        }
    }
    if let Some(bank) = &b.centers {
        if bank.centers.shape() != [b.modalities.len(), b.dims.d] {
            return Err("center bank shape does not match dims header".to_string());
        }
    }
    Ok(())
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &dim in t.shape() {
        put_u64(buf, dim as u64);
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    path: &'a str,
    cur: &'a [u8],
}

impl<'a> Reader<'a> {
    fn corrupt(&self, msg: &str) -> ModelError {
        ModelError::Corrupt {
            path: self.path.to_string(),
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, out: &mut [u8]) -> Result<()> {
        self.cur
            .read_exact(out)
            .map_err(|_| self.corrupt("file truncated"))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.cur.len() < n {
            return Err(self.corrupt("file truncated"));
        }
        let (head, tail) = self.cur.split_at(n);
        self.cur = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.take(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.corrupt("length field overflows usize"))
    }
}

fn get_tensor(r: &mut Reader) -> Result<Tensor> {
    let rank = r.u32()?;
    if rank > 8 {
        return Err(r.corrupt("implausible tensor rank"));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel = 1usize;
    for _ in 0..rank {
        let dim = r.usize()?;
        numel = numel
            .checked_mul(dim)
            .ok_or_else(|| r.corrupt("tensor size overflows"))?;
        shape.push(dim);
    }
    if numel > (1 << 30) {
        return Err(r.corrupt("implausible tensor size"));
    }
    let raw = r.bytes(numel * 8)?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(shape, data).map_err(|e| r.corrupt(&e.to_string()))
}
