//! Binary model checkpoints.
//!
//! Layout (little-endian): 8-byte magic, u32 version, u32 layer count,
//! u32 widths (input first), one activation tag byte per layer, then every
//! parameter as f64, layer by layer, weights before biases. A trailing
//! section holds optional optimizer state: flag byte, kind tag, learning
//! rate, step counter and the accumulators in parameter order.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, Dense, MlpModel, OptimizerConfig, OptimizerKind, OptimizerState};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"NCLPEMLP";
pub const VERSION: u32 = 1;

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Format {
                offset: self.offset,
                message: "unexpected end of checkpoint".into(),
            },
            _ => Error::Io(e),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.offset,
            message: message.into(),
        })
    }
}

fn put_f64s(w: &mut impl Write, xs: &[f64]) -> io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(
    w: &mut impl Write,
    model: &MlpModel,
    optimizer: Option<&OptimizerState>,
) -> Result<()> {
    let spec = model.spec();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.layers().len() as u32).to_le_bytes())?;
    for d in &spec.dims {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for a in &spec.activations {
        w.write_all(&[a.tag()])?;
    }
    for l in model.layers() {
        put_f64s(w, &l.weights)?;
        put_f64s(w, &l.biases)?;
    }
    match optimizer {
        None => w.write_all(&[0])?,
        Some(s) => {
            if !s.shapes_match(model) {
                return Err(Error::InvalidInput("optimizer state does not match the model".into()));
            }
            w.write_all(&[1, s.config.kind.tag()])?;
            w.write_all(&s.config.learning_rate.to_le_bytes())?;
            w.write_all(&s.step.to_le_bytes())?;
            for m in &s.moments {
                for t in m {
                    put_f64s(w, t)?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: impl Read) -> Result<(MlpModel, Option<OptimizerState>)> {
    let mut c = Cursor { inner: r, offset: 0 };
    if c.bytes::<8>()? != MAGIC {
        return c.fail("not a model checkpoint (bad magic)");
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: version,
            expected: VERSION,
        });
    }
    let n = c.u32()? as usize;
    if n == 0 || n > 1024 {
        return c.fail(format!("implausible layer count {n}"));
    }
    let dims = (0..=n).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    if dims.iter().any(|&d| d == 0 || d > 1 << 20) {
        return c.fail("implausible layer width");
    }
    let mut acts = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = c.u8()?;
        match Activation::from_tag(tag) {
            Some(a) => acts.push(a),
            None => return c.fail(format!("unknown activation tag {tag}")),
        }
    }
    let mut layers = Vec::with_capacity(n);
    for (i, act) in acts.into_iter().enumerate() {
        let (inputs, outputs) = (dims[i], dims[i + 1]);
        let weights = c.f64s(inputs * outputs)?;
        let biases = c.f64s(outputs)?;
        layers.push(Dense {
            inputs,
            outputs,
            weights,
            biases,
            activation: act,
        });
    }
    let model = MlpModel::from_layers(layers)?;
    let optimizer = match c.u8()? {
        0 => None,
        1 => {
            let tag = c.u8()?;
            let Some(kind) = OptimizerKind::from_tag(tag) else {
                return c.fail(format!("unknown optimizer tag {tag}"));
            };
            let lr = f64::from_le_bytes(c.bytes()?);
            let config = match OptimizerConfig::new(kind, lr) {
                Ok(cfg) => cfg,
                Err(_) => return c.fail(format!("invalid learning rate {lr}")),
            };
            let step = c.u64()?;
            let mut state = OptimizerState::new(config, &model)?;
            state.step = step;
            for m in state.moments.iter_mut() {
                for t in m.iter_mut() {
                    *t = c.f64s(t.len())?;
                }
            }
            Some(state)
        }
        f => return c.fail(format!("bad optimizer flag {f}")),
    };
    let mut probe = [0u8; 1];
    if c.inner.read(&mut probe)? != 0 {
        return c.fail("trailing bytes after checkpoint");
    }
    Ok((model, optimizer))
}

/// Write to a sibling temporary file and rename it into place, so a crash
/// never leaves a partial checkpoint at `path`.
pub fn save_checkpoint(
    path: &Path,
    model: &MlpModel,
    optimizer: Option<&OptimizerState>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, optimizer)?;
    atomic_write(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpModel, Option<OptimizerState>)> {
    read_checkpoint(BufReader::new(fs::File::open(path)?))
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init, ModelSpec};

    fn model() -> MlpModel {
        let spec = ModelSpec::relu_stack(&[5, 4, 3], Activation::Sigmoid).unwrap();
        init(&spec, 3)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = model();
        let mut s = OptimizerState::new(OptimizerConfig::new(OptimizerKind::Adam, 1e-3).unwrap(), &m).unwrap();
        s.step = 17;
        s.moments[1][0][2] = f64::MIN_POSITIVE;
        for opt in [None, Some(&s)] {
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &m, opt).unwrap();
            let (back, st) = read_checkpoint(&buf[..]).unwrap();
            assert_eq!(back, m);
            assert_eq!(st.as_ref(), opt);
            let mut again = Vec::new();
            write_checkpoint(&mut again, &back, st.as_ref()).unwrap();
            assert_eq!(buf, again);
        }
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model(), None).unwrap();
        assert_eq!(&buf[..8], b"NCLPEMLP");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 2);
        // 3 widths, 2 tags, 5*4+4+4*3+3 params, optimizer flag.
        assert_eq!(buf.len(), 16 + 12 + 2 + 8 * 39 + 1);
    }

    #[test]
    fn corruption_detected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model(), None).unwrap();
        assert!(matches!(read_checkpoint(&buf[..buf.len() - 3]), Err(Error::Format { .. })));
        let mut v = buf.clone();
        v[8] = 9;
        assert!(matches!(
            read_checkpoint(&v[..]),
            Err(Error::Version { found: 9, expected: 1, .. })
        ));
        let mut m = buf.clone();
        m[0] = b'X';
        assert!(read_checkpoint(&m[..]).is_err());
        let mut t = buf;
        t.push(0);
        assert!(read_checkpoint(&t[..]).is_err());
    }

    #[test]
    fn atomic_save_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model(), None).unwrap();
        let (back, _) = load_checkpoint(&path).unwrap();
        assert_eq!(back, model());
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }
}
