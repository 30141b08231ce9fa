//! Binary network snapshots.
//!
//! Layout (all integers little-endian `u64` unless noted):
//!
//! ```text
//! "MLPCKPT1" | input width | layer count | layer*
//! layer  = tag:u8 | kind length:u32 | kind string | in | out | pattern? | param count | param*
//! pattern = nnz | row_ptr[out + 1] | col_idx[nnz]        (tag 1 only)
//! param  = name length:u32 | name | len | f64 * len
//! ```
//!
//! The kind string is the layer's configuration syntax, e.g. `ReLU(512)`.
//! Tag 0 marks a dense layer, tag 1 a sparse one whose `W` values follow the
//! stored CSR pattern.

use std::path::Path;

use mlpform_core::layers::Layer;
use mlpform_core::sparse::{SparseActivationLayer, SparseLinearLayer};
use mlpform_core::{CsrMatrix, LayerKind, Matrix, Mlp, WeightInit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"MLPCKPT1";

const DENSE: u8 = 0;
const SPARSE: u8 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn text(&mut self, s: &str) {
        self.0.extend_from_slice(&(s.len() as u32).to_le_bytes());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn reals(&mut self, v: &[f64]) {
        self.u64(v.len());
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn encode(mlp: &Mlp) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.u64(mlp.input_width().unwrap_or(0));
    w.u64(mlp.len());
    for layer in mlp.layers() {
        let pattern = layer.sparse_weights();
        w.0.push(if pattern.is_some() { SPARSE } else { DENSE });
        w.text(&layer.kind().to_string());
        w.u64(layer.input_width());
        w.u64(layer.output_width());
        if let Some(csr) = pattern {
            w.u64(csr.nnz());
            csr.row_ptr().iter().for_each(|&p| w.u64(p));
            csr.col_idx().iter().for_each(|&j| w.u64(j));
        }
        let params = layer.parameters();
        w.u64(params.len());
        for p in params {
            w.text(p.name);
            w.reals(p.value);
        }
    }
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let remaining = self.bytes.len() - self.at;
        if n > remaining {
            return Err(format!("truncated at offset {}: need {n} bytes, {remaining} remain", self.at));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<usize, String> {
        let at = self.at;
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| format!("count {v} at offset {at} does not fit in memory"))
    }

    fn len(&mut self, elem: usize) -> Result<usize, String> {
        let at = self.at;
        let n = self.u64()?;
        let remaining = self.bytes.len() - self.at;
        if n.saturating_mul(elem) > remaining {
            return Err(format!(
                "truncated: length {n} at offset {at} needs more than the {remaining} remaining bytes"
            ));
        }
        Ok(n)
    }

    fn text(&mut self) -> Result<&'a str, String> {
        let at = self.at;
        let n = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| format!("invalid UTF-8 string at offset {at}"))
    }

    fn indices(&mut self, n: usize) -> Result<Vec<usize>, String> {
        (0..n).map(|_| self.u64()).collect()
    }

    fn reals(&mut self) -> Result<Vec<f64>, String> {
        let n = self.len(8)?;
        Ok(self.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

struct Record {
    kind: LayerKind,
    input: usize,
    output: usize,
    pattern: Option<(Vec<usize>, Vec<usize>)>,
    params: Vec<(String, Vec<f64>)>,
}

fn read_record(r: &mut Reader<'_>) -> Result<Record, String> {
    let at = r.at;
    let tag = r.u8()?;
    if tag != DENSE && tag != SPARSE {
        return Err(format!("unknown layer tag {tag} at offset {at}"));
    }
    let kind_at = r.at;
    let kind: LayerKind = r.text()?.parse().map_err(|e| format!("layer kind at offset {kind_at}: {e}"))?;
    let (input, output) = (r.u64()?, r.u64()?);
    let pattern = if tag == SPARSE {
        let nnz = r.len(8)?;
        if output.saturating_add(1).saturating_mul(8) > r.bytes.len() - r.at {
            return Err(format!("truncated: {output} CSR rows do not fit in the remaining bytes"));
        }
        Some((r.indices(output + 1)?, r.indices(nnz)?))
    } else {
        None
    };
    let count = r.len(12)?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push((r.text()?.to_string(), r.reals()?));
    }
    Ok(Record { kind, input, output, pattern, params })
}

fn param(record: &Record, name: &str) -> Result<Vec<f64>, String> {
    record
        .params
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| format!("{}: missing parameter '{name}'", record.kind))
}

fn rebuild(record: Record) -> Result<Box<dyn Layer>, String> {
    let fail = |e: mlpform_core::Error| format!("{}: {e}", record.kind);
    if let Some((row_ptr, col_idx)) = &record.pattern {
        let w = CsrMatrix::new(
            record.output,
            record.input,
            row_ptr.clone(),
            col_idx.clone(),
            param(&record, "W")?,
        )
        .map_err(fail)?;
        let b = Matrix::from_vec(1, record.output, param(&record, "b")?).map_err(fail)?;
        return match record.kind {
            LayerKind::SparseLinear { density, .. } => {
                Ok(Box::new(SparseLinearLayer::from_parts(w, b, density).map_err(fail)?))
            }
            LayerKind::SparseActivation { ref act, density, .. } => {
                Ok(Box::new(SparseActivationLayer::from_parts(w, b, *act, density).map_err(fail)?))
            }
            ref other => Err(format!("{other} is not a sparse layer")),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layer = record.kind.build(record.input, WeightInit::Xavier, &mut rng).map_err(fail)?;
    if layer.output_width() != record.output {
        return Err(format!(
            "{}: stored output width {} disagrees with the kind",
            record.kind, record.output
        ));
    }
    let mut targets = layer.parameters_mut();
    if targets.len() != record.params.len() {
        return Err(format!(
            "{}: expected {} parameters, found {}",
            record.kind,
            targets.len(),
            record.params.len()
        ));
    }
    for target in &mut targets {
        let stored = param(&record, target.name)?;
        if stored.len() != target.value.len() {
            return Err(format!(
                "{}: parameter '{}' has {} values, expected {}",
                record.kind,
                target.name,
                stored.len(),
                target.value.len()
            ));
        }
        target.value.copy_from_slice(&stored);
    }
    drop(targets);
    Ok(layer)
}

pub fn decode(bytes: &[u8]) -> Result<Mlp, String> {
    let mut r = Reader { bytes, at: 0 };
    let magic = r.take(8).map_err(|_| "file is too short to be a checkpoint".to_string())?;
    if magic != MAGIC {
        return Err(format!("bad magic at offset 0: expected {:?}", std::str::from_utf8(MAGIC).unwrap()));
    }
    let input = r.u64()?;
    let count = r.len(1)?;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let record = read_record(&mut r).map_err(|e| format!("layer {i}: {e}"))?;
        layers.push(rebuild(record).map_err(|e| format!("layer {i}: {e}"))?);
    }
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes after offset {}", bytes.len() - r.at, r.at));
    }
    let mlp = Mlp::new(layers).map_err(|e| e.to_string())?;
    if mlp.input_width().is_some_and(|d| d != input) {
        return Err(format!("header input width {input} disagrees with the first layer"));
    }
    Ok(mlp)
}

pub fn save(mlp: &Mlp, path: &Path) -> CliResult<()> {
    std::fs::write(path, encode(mlp)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> CliResult<Mlp> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|message| CliError::Format { path: path.to_path_buf(), message })
}
