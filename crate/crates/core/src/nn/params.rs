use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ApeError, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Named trainable parameters, created in a fixed order from a seeded
/// generator so that two builds with the same seed are identical.
pub struct ParamStore {
    vars: Vec<(String, Var)>,
    rng: ChaCha8Rng,
    device: Device,
}

/// Exported parameter: name, shape and row-major values.
pub type ParamData = (String, Vec<usize>, Vec<f32>);

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            vars: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: Device::Cpu,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn create(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.iter().any(|(n, _)| n == name) {
            return Err(ApeError::Config(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| ApeError::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
            }
        };
        let var = Var::from_vec(data, shape, &self.device)?;
        let t = var.as_tensor().clone();
        self.vars.push((name.to_string(), var));
        Ok(t)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn export(&self) -> Result<Vec<ParamData>> {
        self.vars
            .iter()
            .map(|(n, v)| {
                let t = v.as_tensor();
                Ok((
                    n.clone(),
                    t.dims().to_vec(),
                    t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?,
                ))
            })
            .collect()
    }

    /// Overwrites every parameter; names and shapes must match exactly.
    pub fn import(&self, params: &[ParamData]) -> Result<()> {
        if params.len() != self.vars.len() {
            return Err(ApeError::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                params.len(),
                self.vars.len()
            )));
        }
        for ((name, var), (pname, shape, data)) in self.vars.iter().zip(params) {
            if name != pname || var.dims() != shape.as_slice() {
                return Err(ApeError::Checkpoint(format!(
                    "parameter mismatch: model {name} {:?}, checkpoint {pname} {shape:?}",
                    var.dims()
                )));
            }
            var.set(&Tensor::from_slice(data, shape.as_slice(), &self.device)?)?;
        }
        Ok(())
    }
}
