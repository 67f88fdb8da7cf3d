//! `QNETCKPT/1` weight container.
//!
//! ```text
//! QNETCKPT/1
//! meta <key> <value>                       (any number)
//! tensor <name> <f32|f64> <ndim> <dims...>
//! <product(dims) little-endian values>\n
//! ...
//! end
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::adam::Adam;
use super::qnet::QNetwork;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &str = "QNETCKPT/1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    fn to_scalars<T: Scalar>(&self) -> Vec<T> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| T::from_f64(f64::from(x))).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
        }
    }

    fn from_scalars<T: Scalar>(values: &[T]) -> Self {
        if T::DTYPE == "f32" {
            TensorData::F32(values.iter().map(|v| v.to_f64() as f32).collect())
        } else {
            TensorData::F64(values.iter().map(|v| v.to_f64()).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::parse(path, msg)
}

fn check_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::InvalidParam(format!("checkpoint {what} {s:?} must be a non-empty word")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_owned(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn push<T: Scalar>(&mut self, name: &str, tensor: &Tensor<T>) {
        self.tensors.push(NamedTensor {
            name: name.to_owned(),
            shape: tensor.shape().to_vec(),
            data: TensorData::from_scalars(tensor.data()),
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        for (k, v) in &self.meta {
            check_token(k, "meta key")?;
            if v.contains('\n') {
                return Err(Error::InvalidParam(format!("checkpoint meta {k} spans lines")));
            }
            out.extend_from_slice(format!("meta {k} {v}\n").as_bytes());
        }
        for t in &self.tensors {
            check_token(&t.name, "tensor name")?;
            let dtype = match t.data {
                TensorData::F32(_) => "f32",
                TensorData::F64(_) => "f64",
            };
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            out.extend_from_slice(format!("tensor {} {dtype} {} {}\n", t.name, t.shape.len(), dims.join(" ")).as_bytes());
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| x.write_le(&mut out)),
                TensorData::F64(v) => v.iter().for_each(|x| x.write_le(&mut out)),
            }
            out.push(b'\n');
        }
        out.extend_from_slice(b"end\n");
        Ok(out)
    }

    pub fn from_reader(mut r: impl BufRead, path: &Path) -> Result<Self> {
        let mut line = Vec::new();
        let mut next_line = |r: &mut dyn BufRead| -> Result<String> {
            line.clear();
            r.read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
            if line.pop() != Some(b'\n') {
                return Err(bad(path, "truncated checkpoint"));
            }
            String::from_utf8(line.clone()).map_err(|_| bad(path, "header line is not UTF-8"))
        };
        if next_line(&mut r)? != MAGIC {
            return Err(bad(path, format!("missing {MAGIC} header")));
        }
        let mut ckpt = Checkpoint::default();
        loop {
            let header = next_line(&mut r)?;
            let mut words = header.split(' ');
            match words.next() {
                Some("end") => return Ok(ckpt),
                Some("meta") => {
                    let key = words.next().ok_or_else(|| bad(path, "meta line without key"))?;
                    let value = header["meta ".len() + key.len()..].trim_start_matches(' ');
                    ckpt.meta.insert(key.to_owned(), value.to_owned());
                }
                Some("tensor") => {
                    let fields: Vec<&str> = words.collect();
                    let [name, dtype, ndim, dims @ ..] = fields.as_slice() else {
                        return Err(bad(path, format!("malformed tensor line {header:?}")));
                    };
                    let ndim: usize = ndim.parse().map_err(|_| bad(path, format!("bad ndim in {header:?}")))?;
                    if dims.len() != ndim {
                        return Err(bad(path, format!("tensor {name} declares {ndim} dims, lists {}", dims.len())));
                    }
                    let shape = dims
                        .iter()
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(path, format!("bad dims in {header:?}")))?;
                    let n: usize = shape.iter().product();
                    let width = match *dtype {
                        "f32" => 4,
                        "f64" => 8,
                        other => return Err(bad(path, format!("unknown dtype {other}"))),
                    };
                    let mut raw = vec![0u8; n * width + 1];
                    r.read_exact(&mut raw).map_err(|_| bad(path, format!("tensor {name} is truncated")))?;
                    if raw.pop() != Some(b'\n') {
                        return Err(bad(path, format!("tensor {name} has trailing bytes")));
                    }
                    let data = if width == 4 {
                        TensorData::F32(raw.chunks_exact(4).map(f32::read_le).collect())
                    } else {
                        TensorData::F64(raw.chunks_exact(8).map(f64::read_le).collect())
                    };
                    ckpt.tensors.push(NamedTensor {
                        name: (*name).to_owned(),
                        shape,
                        data,
                    });
                }
                _ => return Err(bad(path, format!("unexpected line {header:?}"))),
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(f), path)
    }

    /// Fills `dst` from the entry called `name`, converting the dtype.
    pub fn read_into<T: Scalar>(&self, name: &str, dst: &mut Tensor<T>) -> Result<()> {
        let entry = self
            .get(name)
            .ok_or_else(|| Error::InvalidParam(format!("checkpoint has no tensor {name}")))?;
        if entry.shape != dst.shape() || entry.data.len() != dst.len() {
            return Err(Error::Shape(format!(
                "checkpoint tensor {name} has shape {:?}, expected {:?}",
                entry.shape,
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(&entry.data.to_scalars::<T>());
        Ok(())
    }
}

impl<T: Scalar> QNetwork<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        ckpt.set_meta("step_limit", self.step_limit());
        for (name, t) in self.params() {
            ckpt.push(&name, t);
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let l = ckpt
            .meta("step_limit")
            .ok_or_else(|| Error::InvalidParam("checkpoint lacks step_limit".into()))?
            .parse::<usize>()
            .map_err(|_| Error::InvalidParam("checkpoint step_limit is not an integer".into()))?;
        let mut net = QNetwork::zeros(l);
        let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
        for (name, dst) in names.iter().zip(net.params_mut()) {
            ckpt.read_into(name, dst)?;
        }
        Ok(net)
    }
}

/// Prefix for optimizer moment tensors stored next to the weights.
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

impl<T: Scalar> Adam<T> {
    /// Adds moment buffers and hyper-parameters to `ckpt`, keyed by the
    /// matching parameter names.
    pub fn write_state(&self, names: &[String], ckpt: &mut Checkpoint) {
        if self.moments().0.is_empty() {
            return;
        }
        ckpt.set_meta("adam_step", self.steps());
        ckpt.set_meta("adam_lr", self.lr);
        for ((name, m), v) in names.iter().zip(self.moments().0).zip(self.moments().1) {
            let mt = Tensor::new(&[m.len()], m.clone()).expect("flat");
            let vt = Tensor::new(&[v.len()], v.clone()).expect("flat");
            ckpt.push(&format!("{ADAM_M}{name}"), &mt);
            ckpt.push(&format!("{ADAM_V}{name}"), &vt);
        }
    }

    /// Restores the state written by [`Adam::write_state`]; `None` when the
    /// checkpoint carries no optimizer state.
    pub fn read_state(ckpt: &Checkpoint, names: &[String], sizes: &[usize]) -> Result<Option<Self>> {
        let Some(step) = ckpt.meta("adam_step") else { return Ok(None) };
        let step: u64 = step
            .parse()
            .map_err(|_| Error::InvalidParam("checkpoint adam_step is not an integer".into()))?;
        let lr: f64 = ckpt
            .meta("adam_lr")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidParam("checkpoint adam_lr missing or invalid".into()))?;
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for (name, &n) in names.iter().zip(sizes) {
            let mut mt = Tensor::<T>::zeros(&[n]);
            let mut vt = Tensor::<T>::zeros(&[n]);
            ckpt.read_into(&format!("{ADAM_M}{name}"), &mut mt)?;
            ckpt.read_into(&format!("{ADAM_V}{name}"), &mut vt)?;
            m.push(mt.into_data());
            v.push(vt.into_data());
        }
        Ok(Some(Adam::new(lr).with_state(step, m, v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn network_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = QNetwork::<f32>::new(3, &mut rng);
        let bytes = net.to_checkpoint().to_bytes().unwrap();
        assert!(bytes.starts_with(b"QNETCKPT/1\nmeta step_limit 3\ntensor branch_a.0.weight f32 4 8 3 5 5\n"));
        let back = Checkpoint::from_reader(&bytes[..], Path::new("mem")).unwrap();
        let net2 = QNetwork::<f32>::from_checkpoint(&back).unwrap();
        assert_eq!(net, net2);
    }

    #[test]
    fn dtype_converts_on_load() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = QNetwork::<f64>::new(2, &mut rng);
        let as32 = QNetwork::<f32>::from_checkpoint(&net.to_checkpoint()).unwrap();
        assert_eq!(as32, net.cast::<f32>());
    }

    #[test]
    fn file_round_trip_with_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let mut ckpt = Checkpoint::default();
        ckpt.set_meta("note", "two words");
        ckpt.push("x", &Tensor::<f64>::new(&[2, 1], vec![1.5, f64::NAN]).unwrap());
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.meta("note"), Some("two words"));
        let TensorData::F64(v) = &back.get("x").unwrap().data else { panic!() };
        assert_eq!(v[0], 1.5);
        assert!(v[1].is_nan());
    }

    #[test]
    fn truncation_and_bad_magic_are_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bytes = QNetwork::<f32>::new(1, &mut rng).to_checkpoint().to_bytes().unwrap();
        let short = &bytes[..bytes.len() / 2];
        assert!(matches!(Checkpoint::from_reader(short, Path::new("c")), Err(Error::Parse { .. })));
        assert!(Checkpoint::from_reader(&b"QNETCKPT/2\nend\n"[..], Path::new("c")).is_err());
    }

    #[test]
    fn missing_tensor_is_reported() {
        let mut ckpt = QNetwork::<f32>::zeros(2).to_checkpoint();
        ckpt.tensors.pop();
        let err = QNetwork::<f32>::from_checkpoint(&ckpt).unwrap_err();
        assert!(err.to_string().contains("head.2.bias"));
    }

    #[test]
    fn optimizer_state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = QNetwork::<f32>::new(1, &mut rng);
        for p in net.params_mut() {
            p.grad_mut().iter_mut().for_each(|g| *g = 0.5);
        }
        let mut opt = Adam::new(1e-3);
        opt.step(&mut net.params_mut()).unwrap();
        let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
        let sizes: Vec<usize> = net.params().iter().map(|(_, t)| t.len()).collect();
        let mut ckpt = net.to_checkpoint();
        opt.write_state(&names, &mut ckpt);
        let back = Adam::<f32>::read_state(&ckpt, &names, &sizes).unwrap().unwrap();
        assert_eq!(back, opt);
        assert!(Adam::<f32>::read_state(&net.to_checkpoint(), &names, &sizes).unwrap().is_none());
    }
}
