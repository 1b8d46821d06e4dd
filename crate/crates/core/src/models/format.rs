//! Binary model container.
//!
//! ```text
//! "HRVM" | version: u16 | kind: u8 (1 mlp, 2 rfc, 3 svm) | payload
//! ```
//!
//! All integers are little-endian `u32` unless noted, all reals `f64`.
//!
//! * mlp: `n_layers`, `n_layers` layer sizes, `n_params`, parameters
//!   (per layer the `out x in` row-major weights, then `out` biases).
//! * rfc: `n_inputs`, `n_trees`, then per tree `n_nodes` followed by nodes in
//!   preorder. A leaf is `0u8, stress_fraction, n_samples`; a split is
//!   `1u8, feature, threshold, left, right, n_samples`.
//! * svm: `n_inputs`, `gamma`, `rho`, `n_sv`, then per support vector its
//!   coefficient followed by `n_inputs` coordinates.

use super::forest::{ForestModel, Node, Tree};
use super::mlp::MlpModel;
use super::svm::SvmModel;
use super::{Matrix, Model, ModelError};

pub const MAGIC: &[u8; 4] = b"HRVM";
pub const VERSION: u16 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// Guards allocations sized by untrusted counts.
    fn count(&mut self, min_bytes_each: usize) -> Result<usize, ModelError> {
        let n = self.u32()?;
        if n.saturating_mul(min_bytes_each) > self.buf.len() - self.pos {
            return Err(ModelError::Format(format!("count {n} exceeds remaining data")));
        }
        Ok(n)
    }
}

pub fn write_model(m: &Model) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    match m {
        Model::Mlp(m) => {
            w.u8(1);
            w.u32(m.sizes().len());
            for &s in m.sizes() {
                w.u32(s);
            }
            w.u32(m.params().len());
            for &p in m.params() {
                w.f64(p);
            }
        }
        Model::Rfc(m) => {
            w.u8(2);
            w.u32(m.n_inputs);
            w.u32(m.trees.len());
            for t in &m.trees {
                w.u32(t.nodes.len());
                for node in &t.nodes {
                    match *node {
                        Node::Leaf { stress, n_samples } => {
                            w.u8(0);
                            w.f64(stress);
                            w.u32(n_samples as usize);
                        }
                        Node::Split { feature, threshold, left, right, n_samples } => {
                            w.u8(1);
                            w.u32(feature as usize);
                            w.f64(threshold);
                            w.u32(left as usize);
                            w.u32(right as usize);
                            w.u32(n_samples as usize);
                        }
                    }
                }
            }
        }
        Model::Svm(m) => {
            w.u8(3);
            w.u32(m.n_inputs);
            w.f64(m.gamma);
            w.f64(m.rho);
            w.u32(m.coef.len());
            for (k, &c) in m.coef.iter().enumerate() {
                w.f64(c);
                for &v in m.support.row(k) {
                    w.f64(v);
                }
            }
        }
    }
    w.0
}

pub fn read_model(buf: &[u8]) -> Result<Model, ModelError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let model = match r.u8()? {
        1 => {
            let n = r.count(4)?;
            let sizes = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let np = r.count(8)?;
            let params = (0..np).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            Model::Mlp(MlpModel::from_parts(sizes, params)?)
        }
        2 => {
            let n_inputs = r.u32()?;
            let n_trees = r.count(4)?;
            let mut trees = Vec::with_capacity(n_trees);
            for _ in 0..n_trees {
                let n_nodes = r.count(13)?;
                let mut nodes = Vec::with_capacity(n_nodes);
                for _ in 0..n_nodes {
                    nodes.push(match r.u8()? {
                        0 => Node::Leaf { stress: r.f64()?, n_samples: r.u32()? as u32 },
                        1 => Node::Split {
                            feature: r.u32()? as u32,
                            threshold: r.f64()?,
                            left: r.u32()? as u32,
                            right: r.u32()? as u32,
                            n_samples: r.u32()? as u32,
                        },
                        t => return Err(ModelError::Format(format!("bad node tag {t}"))),
                    });
                }
                let tree = Tree { nodes };
                tree.validate(n_inputs)?;
                trees.push(tree);
            }
            if trees.is_empty() {
                return Err(ModelError::Format("forest without trees".into()));
            }
            Model::Rfc(ForestModel { n_inputs, trees })
        }
        3 => {
            let n_inputs = r.u32()?;
            let gamma = r.f64()?;
            let rho = r.f64()?;
            let n_sv = r.count(8 * (n_inputs + 1))?;
            let mut coef = Vec::with_capacity(n_sv);
            let mut data = Vec::with_capacity(n_sv * n_inputs);
            for _ in 0..n_sv {
                coef.push(r.f64()?);
                for _ in 0..n_inputs {
                    data.push(r.f64()?);
                }
            }
            Model::Svm(SvmModel { n_inputs, gamma, rho, coef, support: Matrix::new(n_sv, n_inputs, data) })
        }
        k => return Err(ModelError::Format(format!("unknown model kind {k}"))),
    };
    if r.pos != buf.len() {
        return Err(ModelError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;
    use crate::ingest::BinaryLabel::*;
    use crate::models::{train, ModelKind};

    #[test]
    fn round_trips_every_kind() {
        let rows: Vec<[f64; 3]> = (0..60).map(|i| [i as f64 / 60.0, ((i * 7) % 11) as f64, (i % 2) as f64]).collect();
        let y: Vec<_> = (0..60).map(|i| if i % 2 == 0 { NoStress } else { Stress }).collect();
        let x = Matrix::from_rows(&rows);
        let cfg = PipelineConfig { epochs: 5, n_trees: 7, ..PipelineConfig::default() };
        for kind in ModelKind::ALL {
            let m = train(kind, &x, &y, &cfg, 1).unwrap();
            let bytes = write_model(&m);
            assert_eq!(&bytes[..4], b"HRVM");
            assert_eq!(read_model(&bytes).unwrap(), m);
            assert!(read_model(&bytes[..bytes.len() - 1]).is_err());
            let mut extra = bytes.clone();
            extra.push(0);
            assert!(read_model(&extra).is_err());
        }
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(read_model(b"HRV").is_err());
        assert!(read_model(b"XXXX\x01\x00\x01").is_err());
        assert!(read_model(b"HRVM\x02\x00\x01").is_err());
        assert!(read_model(b"HRVM\x01\x00\x09").is_err());
        assert!(read_model(b"HRVM\x01\x00\x01\xff\xff\xff\xff").is_err());
    }
}
