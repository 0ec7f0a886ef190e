//! Model checkpoint files.
//!
//! Layout: a text header of `key=value` lines opened by a magic/version line
//! and closed by `end`, followed by little-endian `f64` payloads in row-major
//! order: `w1`, `b`, `w2`, `b'`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{InputCombine, ModelParams, TrainConfig, Variant};
use crate::error::{Error, Result};

const MAGIC: &str = "AUTOREC-CHECKPOINT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub epochs_trained: usize,
    pub split_seed: u64,
    pub test_fraction: f64,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let p = &self.params;
        let c = &self.config;
        writeln!(out, "{MAGIC} v{VERSION}")?;
        writeln!(out, "variant={}", p.variant)?;
        writeln!(out, "combine={}", p.combine)?;
        writeln!(out, "hidden_units={}", p.hidden_units())?;
        writeln!(out, "num_items={}", p.num_items())?;
        writeln!(out, "input_dim={}", p.input_dim())?;
        writeln!(out, "lambda={}", c.lambda)?;
        writeln!(out, "learning_rate={}", c.learning_rate)?;
        writeln!(out, "optimizer={}", c.optimizer)?;
        writeln!(out, "momentum={}", c.momentum)?;
        writeln!(out, "batch_size={}", c.batch_size)?;
        writeln!(out, "seed={}", c.seed)?;
        writeln!(out, "epochs={}", self.epochs_trained)?;
        writeln!(out, "theta={}", c.theta)?;
        writeln!(out, "neighborhood_size={}", c.neighborhood_size)?;
        writeln!(out, "split_seed={}", self.split_seed)?;
        writeln!(out, "test_fraction={}", self.test_fraction)?;
        writeln!(out, "end")?;
        for v in p.w1.iter().chain(&p.b).chain(&p.w2).chain(&p.b_prime) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let io = |e| Error::io("<checkpoint>", e);
        let mut line = String::new();
        input.read_line(&mut line).map_err(io)?;
        let expected = format!("{MAGIC} v{VERSION}");
        if line.trim_end() != expected {
            return Err(bad(format!("expected header {expected:?}, found {:?}", line.trim_end())));
        }
        let mut fields = std::collections::HashMap::new();
        loop {
            line.clear();
            if input.read_line(&mut line).map_err(io)? == 0 {
                return Err(bad("header not terminated"));
            }
            let l = line.trim_end();
            if l == "end" {
                break;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| bad(format!("bad header line {l:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        fn get<T: std::str::FromStr>(fields: &std::collections::HashMap<String, String>, key: &str) -> Result<T> {
            fields
                .get(key)
                .ok_or_else(|| bad(format!("missing {key}")))?
                .parse()
                .map_err(|_| bad(format!("invalid {key}")))
        }
        let variant: Variant = get(&fields, "variant")?;
        let combine: InputCombine = get(&fields, "combine")?;
        let k: usize = get(&fields, "hidden_units")?;
        let n: usize = get(&fields, "num_items")?;
        let d: usize = get(&fields, "input_dim")?;
        if d != super::input_dim(variant, combine, n) {
            return Err(bad(format!("input_dim {d} inconsistent with {variant} over {n} items")));
        }
        let config = TrainConfig {
            hidden_units: k,
            lambda: get(&fields, "lambda")?,
            learning_rate: get(&fields, "learning_rate")?,
            optimizer: get(&fields, "optimizer")?,
            momentum: get(&fields, "momentum")?,
            epochs: get(&fields, "epochs")?,
            batch_size: get(&fields, "batch_size")?,
            seed: get(&fields, "seed")?,
            variant,
            combine,
            theta: get(&fields, "theta")?,
            neighborhood_size: get(&fields, "neighborhood_size")?,
        };

        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; len * 8];
            input.read_exact(&mut buf).map_err(|_| bad("truncated payload"))?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let shape_err = |e: ndarray::ShapeError| bad(e.to_string());
        let w1 = Array2::from_shape_vec((k, d), read_vec(k * d)?).map_err(shape_err)?;
        let b = Array1::from(read_vec(k)?);
        let w2 = Array2::from_shape_vec((n, k), read_vec(n * k)?).map_err(shape_err)?;
        let b_prime = Array1::from(read_vec(n)?);
        let mut rest = Vec::new();
        input.read_to_end(&mut rest).map_err(io)?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        let params = ModelParams {
            variant,
            combine,
            w1,
            b,
            w2,
            b_prime,
        };
        if !params.is_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(Checkpoint {
            params,
            epochs_trained: config.epochs,
            config,
            split_seed: get(&fields, "split_seed")?,
            test_fraction: get(&fields, "test_fraction")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::init_params;

    #[test]
    fn round_trip_and_truncation() {
        let config = TrainConfig {
            hidden_units: 3,
            variant: Variant::Explainable,
            seed: 5,
            epochs: 7,
            lambda: 0.1,
            ..TrainConfig::default()
        };
        let ckpt = Checkpoint {
            params: init_params(&config, 4, 5).unwrap(),
            config,
            epochs_trained: 7,
            split_seed: 9,
            test_fraction: 0.1,
        };
        let mut buf = Vec::new();
        ckpt.write(&mut buf).unwrap();
        assert_eq!(Checkpoint::read(buf.as_slice()).unwrap(), ckpt);

        let err = Checkpoint::read(&buf[..buf.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(Checkpoint::read("nope\n".as_bytes()).is_err());
    }
}
