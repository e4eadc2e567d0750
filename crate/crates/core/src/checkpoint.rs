//! Model checkpoint container.
//!
//! Little-endian binary layout, documented in `docs/checkpoint-format.md`:
//!
//! ```text
//! magic   b"MVGC"
//! version u32 (currently 1)
//! num_classes u32, cheb_order u32, fc_hidden u32, num_blocks u32
//! laplacian_pool u8, lambda_mode u8
//! per block:
//!   n_views u32, d_in u32, m u32
//!   dropout f64, alpha f64, sigma f64, sigma_mode u8, squared_kernel u8
//! then one record per parameter group, in `Model::param_groups()` order:
//!   name_len u16, name utf-8, rows u32, cols u32, rows*cols f64
//! ```
//!
//! Vectors are stored as `1 x len` records. Round trips are bitwise exact.

use crate::cheb::LambdaMaxMode;
use crate::error::{Error, Result};
use crate::model::{LaplacianPool, LayerParams, Model, ModelArchitecture, ParamGroup};
use crate::rng::SeededRng;
use crate::view::SigmaMode;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MVGC";
const VERSION: u32 = 1;

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ck("unexpected end of checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn pool_code(p: LaplacianPool) -> u8 {
    match p {
        LaplacianPool::Dominant => 0,
        LaplacianPool::Mean => 1,
        LaplacianPool::Max => 2,
    }
}

fn pool_from(code: u8) -> Result<LaplacianPool> {
    match code {
        0 => Ok(LaplacianPool::Dominant),
        1 => Ok(LaplacianPool::Mean),
        2 => Ok(LaplacianPool::Max),
        other => Err(ck(format!("unknown laplacian pool code {other}"))),
    }
}

/// Write a model to `path`.
pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(model.num_classes as u32);
    w.u32(model.cheb_order as u32);
    w.u32(model.fc_hidden() as u32);
    w.u32(model.blocks.len() as u32);
    w.u8(pool_code(model.laplacian_pool));
    w.u8(match model.lambda_mode {
        LambdaMaxMode::Power => 0,
        LambdaMaxMode::Fixed => 1,
    });
    for layer in &model.blocks {
        w.u32(layer.num_views() as u32);
        w.u32(layer.input_dim() as u32);
        w.u32(layer.output_dim() as u32);
        w.f64(layer.dropout_rate);
        w.f64(layer.alpha);
        w.f64(layer.sigma);
        w.u8(match layer.sigma_mode {
            SigmaMode::Fixed => 0,
            SigmaMode::Median => 1,
        });
        w.u8(u8::from(layer.squared_kernel));
    }
    for group in model.param_groups() {
        let name = group.name();
        let data = model.params(&group);
        let (rows, cols) = group_shape(model, &group);
        w.u16(name.len() as u16);
        w.buf.extend_from_slice(name.as_bytes());
        w.u32(rows as u32);
        w.u32(cols as u32);
        for &v in data {
            w.f64(v);
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::Io {
        file: path.display().to_string(),
        source: e,
    })?;
    f.write_all(&w.buf).map_err(|e| Error::Io {
        file: path.display().to_string(),
        source: e,
    })
}

fn group_shape(model: &Model, group: &ParamGroup) -> (usize, usize) {
    match *group {
        ParamGroup::Q { block, view } => model.blocks[block].views[view].q_factor.shape(),
        ParamGroup::Theta { block } => model.blocks[block].thetas.shape(),
        ParamGroup::Gamma { block } => (1, model.blocks[block].bn_gamma.len()),
        ParamGroup::Beta { block } => (1, model.blocks[block].bn_beta.len()),
        ParamGroup::Weight { block } => model.blocks[block].weight.shape(),
        ParamGroup::Bias { block } => (1, model.blocks[block].bias.len()),
        ParamGroup::Fc1Weight => model.fc1_weight.shape(),
        ParamGroup::Fc1Bias => (1, model.fc1_bias.len()),
        ParamGroup::Fc2Weight => model.fc2_weight.shape(),
        ParamGroup::Fc2Bias => (1, model.fc2_bias.len()),
    }
}

/// Read a model from `path`.
pub fn load_model(path: &Path) -> Result<Model> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::Io {
            file: path.display().to_string(),
            source: e,
        })?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ck("bad magic; not a model checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ck(format!("unsupported version {version}")));
    }
    let num_classes = r.u32()? as usize;
    let cheb_order = r.u32()? as usize;
    let fc_hidden = r.u32()? as usize;
    let num_blocks = r.u32()? as usize;
    if num_blocks != 3 {
        return Err(ck(format!("expected 3 blocks, found {num_blocks}")));
    }
    let laplacian_pool = pool_from(r.u8()?)?;
    let lambda_mode = match r.u8()? {
        0 => LambdaMaxMode::Power,
        1 => LambdaMaxMode::Fixed,
        other => return Err(ck(format!("unknown lambda mode code {other}"))),
    };

    let mut views_per_block = [0usize; 3];
    let mut m_schedule = [0usize; 3];
    let mut block_meta = Vec::with_capacity(num_blocks);
    let mut input_dim = 0usize;
    for b in 0..num_blocks {
        let n_views = r.u32()? as usize;
        let d_in = r.u32()? as usize;
        let m = r.u32()? as usize;
        let dropout = r.f64()?;
        let alpha = r.f64()?;
        let sigma = r.f64()?;
        let sigma_mode = match r.u8()? {
            0 => SigmaMode::Fixed,
            1 => SigmaMode::Median,
            other => return Err(ck(format!("unknown sigma mode code {other}"))),
        };
        let squared = r.u8()? != 0;
        if b == 0 {
            input_dim = d_in;
        }
        views_per_block[b] = n_views;
        m_schedule[b] = m;
        block_meta.push((dropout, alpha, sigma, sigma_mode, squared));
    }

    // build a skeleton with the right shapes, then overwrite every group
    let arch = ModelArchitecture {
        input_dim,
        num_classes,
        cheb_order,
        views_per_block,
        m_schedule,
        fc_hidden,
        dropout_rate: block_meta[0].0,
        alpha: block_meta[0].1,
        sigma: block_meta[0].2,
        sigma_mode: block_meta[0].3,
        squared_kernel: block_meta[0].4,
        laplacian_pool,
        lambda_mode,
    };
    let mut model = Model::init(&arch, &mut SeededRng::new(0));
    for (layer, &(dropout, alpha, sigma, sigma_mode, squared)) in
        model.blocks.iter_mut().zip(block_meta.iter())
    {
        apply_meta(layer, dropout, alpha, sigma, sigma_mode, squared);
    }

    for group in model.param_groups() {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ck("record name is not utf-8"))?
            .to_string();
        if name != group.name() {
            return Err(ck(format!(
                "record order mismatch: found '{name}', expected '{}'",
                group.name()
            )));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let dst = model.params_mut(&group);
        if rows * cols != dst.len() {
            return Err(ck(format!(
                "record '{name}' is {rows}x{cols}, expected {} values",
                dst.len()
            )));
        }
        for v in dst.iter_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != buf.len() {
        return Err(ck("trailing bytes after last record"));
    }
    Ok(model)
}

fn apply_meta(
    layer: &mut LayerParams,
    dropout: f64,
    alpha: f64,
    sigma: f64,
    sigma_mode: SigmaMode,
    squared: bool,
) {
    layer.dropout_rate = dropout;
    layer.alpha = alpha;
    layer.sigma = sigma;
    layer.sigma_mode = sigma_mode;
    layer.squared_kernel = squared;
}
