//! Float weight bundles and their on-disk directory format.
//!
//! A bundle directory holds a text file `manifest` and one or more blob
//! files of little-endian IEEE-754 `f32` values. Manifest grammar:
//!
//! ```text
//! # comment lines and blank lines are ignored
//! mbunet-bundle 1
//! layer name=<id> kind=conv|tconv shape=O,I,KH,KW dtype=f32 blob=<file> offset=<byte> length=<bytes> [bias=<byte>] [bn=<byte>] [eps=<real>]
//! ```
//!
//! `shape` is `out, in, kernel_h, kernel_w` for both kinds and the weights
//! are stored in that order. `bias` points at `O` values and `bn` at `4*O`
//! values (gamma, beta, running mean, running var), both in the same blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::BatchNorm;

pub const MANIFEST: &str = "manifest";
const HEADER: &str = "mbunet-bundle 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Conv,
    TConv,
}

impl EntryKind {
    fn as_str(self) -> &'static str {
        match self {
            EntryKind::Conv => "conv",
            EntryKind::TConv => "tconv",
        }
    }
}

/// Per-channel batchnorm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleEntry {
    pub name: String,
    pub kind: EntryKind,
    /// `[out, in, kernel_h, kernel_w]`.
    pub shape: [usize; 4],
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
    pub bn: Option<BnParams>,
    pub eps: Option<f64>,
}

impl BundleEntry {
    /// Batchnorm of every output channel, or `None` when the entry has none.
    pub fn batchnorm(&self) -> Option<Vec<BatchNorm>> {
        let eps = self.eps.unwrap_or(BatchNorm::DEFAULT_EPS);
        self.bn.as_ref().map(|bn| {
            (0..self.shape[0])
                .map(|o| BatchNorm {
                    gamma: bn.gamma[o] as f64,
                    beta: bn.beta[o] as f64,
                    mean: bn.mean[o] as f64,
                    var: bn.var[o] as f64,
                    eps,
                })
                .collect()
        })
    }

    pub fn bias_f64(&self) -> Vec<f64> {
        match &self.bias {
            Some(b) => b.iter().map(|&v| v as f64).collect(),
            None => vec![0.0; self.shape[0]],
        }
    }

    fn check(&self) -> Result<()> {
        let [o, i, kh, kw] = self.shape;
        let bad = |d: String| Err(Error::shape(self.name.clone(), d));
        if self.weights.len() != o * i * kh * kw {
            return bad(format!(
                "{} weights for shape {o},{i},{kh},{kw}",
                self.weights.len()
            ));
        }
        if let Some(b) = &self.bias {
            if b.len() != o {
                return bad(format!("{} biases for {o} channels", b.len()));
            }
        }
        if let Some(bn) = &self.bn {
            if [&bn.gamma, &bn.beta, &bn.mean, &bn.var]
                .iter()
                .any(|v| v.len() != o)
            {
                return bad("batchnorm vectors do not match the output channels".into());
            }
            if bn.var.iter().any(|&v| v.is_nan() || v < 0.0) {
                return bad("batchnorm variance must be >= 0".into());
            }
        }
        Ok(())
    }
}

/// Named float layers, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightBundle {
    pub entries: Vec<BundleEntry>,
}

impl WeightBundle {
    pub fn get(&self, name: &str) -> Option<&BundleEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut BundleEntry> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    /// Writes `manifest` and a single `weights.bin` blob.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut blob: Vec<u8> = Vec::new();
        let mut manifest = format!("{HEADER}\n");
        let push = |vals: &[f32], blob: &mut Vec<u8>| {
            let off = blob.len();
            for v in vals {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            off
        };
        for e in &self.entries {
            e.check()?;
            if e.name.is_empty() || e.name.chars().any(|c| c.is_whitespace() || c == '=') {
                return Err(Error::RejectedInput(format!(
                    "invalid layer name {:?}",
                    e.name
                )));
            }
            let off = push(&e.weights, &mut blob);
            let [o, i, kh, kw] = e.shape;
            let mut line = format!(
                "layer name={} kind={} shape={o},{i},{kh},{kw} dtype=f32 blob=weights.bin offset={off} length={}",
                e.name,
                e.kind.as_str(),
                e.weights.len() * 4
            );
            if let Some(b) = &e.bias {
                line += &format!(" bias={}", push(b, &mut blob));
            }
            if let Some(bn) = &e.bn {
                let off = push(&bn.gamma, &mut blob);
                push(&bn.beta, &mut blob);
                push(&bn.mean, &mut blob);
                push(&bn.var, &mut blob);
                line += &format!(" bn={off}");
            }
            if let Some(eps) = e.eps {
                line += &format!(" eps={eps:e}");
            }
            manifest += &line;
            manifest.push('\n');
        }
        fs::write(dir.join("weights.bin"), blob)?;
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let records = parse_manifest(&text)?;
        let mut blobs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let mut entries = Vec::new();
        for r in records {
            if !blobs.contains_key(&r.blob) {
                let bytes = fs::read(dir.join(&r.blob))?;
                blobs.insert(r.blob.clone(), bytes);
            }
            let bytes = &blobs[&r.blob];
            let loc = format!("{MANIFEST}:{}", r.line);
            let read = |off: usize, count: usize, what: &str| -> Result<Vec<f32>> {
                let end = off
                    .checked_add(count * 4)
                    .filter(|&e| e <= bytes.len())
                    .ok_or_else(|| {
                        Error::parse(
                            loc.clone(),
                            format!(
                                "{what} needs bytes {off}..{} but {} has {}",
                                off + count * 4,
                                r.blob,
                                bytes.len()
                            ),
                        )
                    })?;
                Ok(bytes[off..end]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect())
            };
            let [o, i, kh, kw] = r.shape;
            let n = o * i * kh * kw;
            if r.length != n * 4 {
                return Err(Error::parse(
                    loc,
                    format!(
                        "length {} does not equal 4 * {n} for the declared shape",
                        r.length
                    ),
                ));
            }
            let weights = read(r.offset, n, "weights")?;
            let bias = r.bias.map(|off| read(off, o, "bias")).transpose()?;
            let bn = match r.bn {
                Some(off) => {
                    let all = read(off, 4 * o, "batchnorm")?;
                    Some(BnParams {
                        gamma: all[..o].to_vec(),
                        beta: all[o..2 * o].to_vec(),
                        mean: all[2 * o..3 * o].to_vec(),
                        var: all[3 * o..].to_vec(),
                    })
                }
                None => None,
            };
            let entry = BundleEntry {
                name: r.name,
                kind: r.kind,
                shape: r.shape,
                weights,
                bias,
                bn,
                eps: r.eps,
            };
            entry
                .check()
                .map_err(|e| Error::parse(loc.clone(), e.to_string()))?;
            entries.push(entry);
        }
        Ok(WeightBundle { entries })
    }
}

struct Record {
    line: usize,
    name: String,
    kind: EntryKind,
    shape: [usize; 4],
    blob: String,
    offset: usize,
    length: usize,
    bias: Option<usize>,
    bn: Option<usize>,
    eps: Option<f64>,
}

fn parse_manifest(text: &str) -> Result<Vec<Record>> {
    let mut seen_header = false;
    let mut out: Vec<Record> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let at = |col: usize, d: String| Error::parse(format!("{MANIFEST}:{line_no}:{col}"), d);
        if !seen_header {
            if raw.trim() != HEADER {
                return Err(at(1, format!("expected header `{HEADER}`")));
            }
            seen_header = true;
            continue;
        }
        let mut tokens = tokens_with_columns(raw);
        match tokens.next() {
            Some((_, "layer")) => {}
            Some((col, t)) => return Err(at(col, format!("expected `layer`, found `{t}`"))),
            None => unreachable!(),
        }
        let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (col, tok) in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| at(col, format!("expected key=value, found `{tok}`")))?;
            if fields.insert(k, (col + k.len() + 1, v)).is_some() {
                return Err(at(col, format!("duplicate key `{k}`")));
            }
        }
        let known = [
            "name", "kind", "shape", "dtype", "blob", "offset", "length", "bias", "bn", "eps",
        ];
        if let Some((k, (col, _))) = fields.iter().find(|(k, _)| !known.contains(k)) {
            return Err(at(*col - k.len() - 1, format!("unknown key `{k}`")));
        }
        let req = |k: &str| -> Result<(usize, &str)> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| at(raw.len() + 1, format!("missing key `{k}`")))
        };
        let num = |(col, v): (usize, &str)| -> Result<usize> {
            v.parse()
                .map_err(|_| at(col, format!("`{v}` is not a non-negative integer")))
        };
        let (ncol, name) = req("name")?;
        if out.iter().any(|r| r.name == name) {
            return Err(at(ncol, format!("duplicate layer `{name}`")));
        }
        let kind = match req("kind")? {
            (_, "conv") => EntryKind::Conv,
            (_, "tconv") => EntryKind::TConv,
            (col, v) => return Err(at(col, format!("unknown kind `{v}`"))),
        };
        let (scol, sv) = req("shape")?;
        let dims: Vec<&str> = sv.split(',').collect();
        if dims.len() != 4 {
            return Err(at(
                scol,
                format!("shape `{sv}` needs 4 comma-separated extents"),
            ));
        }
        let mut shape = [0usize; 4];
        let mut col = scol;
        for (s, d) in shape.iter_mut().zip(&dims) {
            *s = num((col, d))?;
            col += d.len() + 1;
        }
        match req("dtype")? {
            (_, "f32") => {}
            (col, v) => return Err(at(col, format!("unsupported dtype `{v}`, only f32"))),
        }
        let (bcol, blob) = req("blob")?;
        if blob.is_empty() || blob.contains('/') || blob.contains('\\') || blob == MANIFEST {
            return Err(at(bcol, format!("invalid blob file name `{blob}`")));
        }
        let eps = match fields.get("eps") {
            Some(&(col, v)) => {
                let e: f64 = v
                    .parse()
                    .map_err(|_| at(col, format!("`{v}` is not a real number")))?;
                if !(e >= 0.0 && e.is_finite()) {
                    return Err(at(col, format!("eps {v} must be finite and >= 0")));
                }
                Some(e)
            }
            None => None,
        };
        out.push(Record {
            line: line_no,
            name: name.to_string(),
            kind,
            shape,
            blob: blob.to_string(),
            offset: num(req("offset")?)?,
            length: num(req("length")?)?,
            bias: fields.get("bias").map(|&f| num(f)).transpose()?,
            bn: fields.get("bn").map(|&f| num(f)).transpose()?,
            eps,
        });
    }
    if !seen_header {
        return Err(Error::parse(
            format!("{MANIFEST}:1:1"),
            format!("missing header `{HEADER}`"),
        ));
    }
    Ok(out)
}

/// Whitespace-separated tokens with their 1-based column.
fn tokens_with_columns(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = line;
    let mut base = 0;
    std::iter::from_fn(move || {
        let start = rest.find(|c: char| !c.is_whitespace())?;
        let tail = &rest[start..];
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        let tok = &tail[..len];
        let col = base + start + 1;
        base += start + len;
        rest = &tail[len..];
        Some((col, tok))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry() -> BundleEntry {
        BundleEntry {
            name: "down1.conv1".into(),
            kind: EntryKind::Conv,
            shape: [2, 1, 1, 2],
            weights: vec![0.5, -1.0, 2.0, 0.0],
            bias: Some(vec![0.1, -0.2]),
            bn: Some(BnParams {
                gamma: vec![1.0, -1.0],
                beta: vec![0.0, 0.5],
                mean: vec![0.0, 1.0],
                var: vec![1.0, 2.0],
            }),
            eps: Some(1e-3),
        }
    }

    #[test]
    fn dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = WeightBundle {
            entries: vec![entry()],
        };
        let mut e2 = entry();
        e2.name = "up1.tconv".into();
        e2.kind = EntryKind::TConv;
        e2.bias = None;
        e2.bn = None;
        e2.eps = None;
        b.entries.push(e2);
        b.write_dir(dir.path()).unwrap();
        assert_eq!(WeightBundle::read_dir(dir.path()).unwrap(), b);
    }

    fn manifest_error(text: &str) -> String {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST), text).unwrap();
        fs::write(dir.path().join("w.bin"), [0u8; 16]).unwrap();
        WeightBundle::read_dir(dir.path()).unwrap_err().to_string()
    }

    #[test]
    fn positional_errors() {
        let e = manifest_error("mbunet-bundle 2\n");
        assert!(e.contains("manifest:1:1"), "{e}");
        let e = manifest_error(
            "mbunet-bundle 1\nlayer name=a kind=conv shape=1,1,1,x dtype=f32 blob=w.bin offset=0 length=4\n",
        );
        assert!(e.contains("manifest:2:") && e.contains("`x`"), "{e}");
        let e = manifest_error(
            "mbunet-bundle 1\nlayer name=a kind=dense shape=1,1,1,1 dtype=f32 blob=w.bin offset=0 length=4\n",
        );
        assert!(e.contains("manifest:2:19"), "{e}");
        let e = manifest_error(
            "mbunet-bundle 1\nlayer name=a kind=conv shape=2,2,1,1 dtype=f32 blob=w.bin offset=8 length=16\n",
        );
        assert!(e.contains("manifest:2") && e.contains("bytes 8..24"), "{e}");
        let e = manifest_error("mbunet-bundle 1\nlayer name=a kind=conv\n");
        assert!(e.contains("missing key `shape`"), "{e}");
    }
}
