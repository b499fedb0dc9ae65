use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian used for `A` at initialisation.
pub const LORA_A_INIT_STD: f64 = 0.02;

/// Low-rank update `scale · B · A` beside a frozen `[d_out × d_in]` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    /// `[r × d_in]`
    pub a: Tensor,
    /// `[d_out × r]`
    pub b: Tensor,
    pub scale: f64,
    pub dropout: f64,
}

impl LoraAdapter {
    pub fn new(a: Tensor, b: Tensor, scale: f64, dropout: f64) -> Result<Self> {
        let (r, d_in) = a.dims2()?;
        let (d_out, r2) = b.dims2()?;
        if r != r2 {
            return Err(Error::Shape(format!("A has rank {r} but B has rank {r2}")));
        }
        if r > d_in.min(d_out) {
            return Err(Error::Shape(format!(
                "rank {r} exceeds min(d_in, d_out) = {}",
                d_in.min(d_out)
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        Ok(LoraAdapter { a, b, scale, dropout })
    }

    /// Gaussian `A`, zero `B`; the update is exactly zero until trained.
    pub fn init<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        rank: usize,
        scale: f64,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("LoRA rank must be positive".into()));
        }
        let a = Tensor::randn(&[rank, d_in], LORA_A_INIT_STD, rng);
        LoraAdapter::new(a, Tensor::zeros(&[d_out, rank]), scale, dropout)
    }

    pub fn rank(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn d_in(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.b.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// Dense `scale · B · A`, `[d_out × d_in]`.
    pub fn delta_matrix(&self) -> Result<Tensor> {
        Ok(self.b.matmul(&self.a)?.scale(self.scale))
    }
}

/// Per-forward state: training flag and the dropout stream.
pub struct ForwardContext<'r> {
    pub training: bool,
    pub rng: Option<&'r mut dyn rand::RngCore>,
}

impl<'r> ForwardContext<'r> {
    pub fn inference() -> Self {
        ForwardContext {
            training: false,
            rng: None,
        }
    }

    pub fn training(rng: &'r mut dyn rand::RngCore) -> Self {
        ForwardContext {
            training: true,
            rng: Some(rng),
        }
    }

    /// Inverted-dropout mask, or `None` when dropout is inactive.
    fn dropout_mask(&mut self, shape: &[usize], rate: f64) -> Result<Option<Tensor>> {
        if !self.training || rate == 0.0 {
            return Ok(None);
        }
        let rng = self
            .rng
            .as_mut()
            .ok_or_else(|| Error::Contract("training-mode dropout needs a random stream".into()))?;
        let keep = 1.0 / (1.0 - rate);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        Ok(Some(Tensor::new(shape.to_vec(), data)?))
    }
}

/// An adapter recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LoraVars {
    pub a: Var,
    pub b: Var,
    pub scale: f64,
    pub dropout: f64,
}

impl LoraVars {
    pub fn register(tape: &mut Tape, adapter: &LoraAdapter, trainable: bool) -> Self {
        let (a, b) = if trainable {
            (tape.param(adapter.a.clone()), tape.param(adapter.b.clone()))
        } else {
            (tape.constant(adapter.a.clone()), tape.constant(adapter.b.clone()))
        };
        LoraVars {
            a,
            b,
            scale: adapter.scale,
            dropout: adapter.dropout,
        }
    }

    /// `scale · dropout(x) · Aᵀ · Bᵀ` for row-major activations `x`.
    pub fn apply(&self, tape: &mut Tape, x: Var, ctx: &mut ForwardContext<'_>) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let input = match ctx.dropout_mask(&shape, self.dropout)? {
            Some(mask) => {
                let m = tape.constant(mask);
                tape.mul(x, m)?
            }
            None => x,
        };
        let low = tape.matmul_nt(input, self.a)?;
        let up = tape.matmul_nt(low, self.b)?;
        Ok(if self.scale == 1.0 { up } else { tape.scale(up, self.scale) })
    }
}

/// Standalone adapter update for `[T × d_in]` activations.
pub fn lora_delta(adapter: &LoraAdapter, x: &Tensor, ctx: &mut ForwardContext<'_>) -> Result<Tensor> {
    let (_, d) = x.dims2()?;
    if d != adapter.d_in() {
        return Err(Error::Shape(format!(
            "adapter expects {} input features, got {d}",
            adapter.d_in()
        )));
    }
    let mut tape = Tape::new();
    let vars = LoraVars::register(&mut tape, adapter, false);
    let xv = tape.constant(x.clone());
    let out = vars.apply(&mut tape, xv, ctx)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fresh_adapter_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ad = LoraAdapter::init(6, 5, 3, 1.0, 0.1, &mut rng).unwrap();
        let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(1);
        let d = lora_delta(&ad, &x, &mut ForwardContext::training(&mut drop_rng)).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
        assert_eq!(d.shape(), &[4, 5]);
    }

    #[test]
    fn scalar_adapter() {
        let ad = LoraAdapter::new(
            Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            Tensor::matrix(1, 1, vec![2.0]).unwrap(),
            1.0,
            0.0,
        )
        .unwrap();
        let x = Tensor::matrix(1, 1, vec![3.0]).unwrap();
        let d = lora_delta(&ad, &x, &mut ForwardContext::inference()).unwrap();
        assert_eq!(d.data(), &[6.0]);
    }

    #[test]
    fn matches_materialised_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ad = LoraAdapter::new(
            Tensor::randn(&[4, 7], 1.0, &mut rng),
            Tensor::randn(&[6, 4], 1.0, &mut rng),
            0.5,
            0.1,
        )
        .unwrap();
        let x = Tensor::randn(&[3, 7], 1.0, &mut rng);
        let d = lora_delta(&ad, &x, &mut ForwardContext::inference()).unwrap();
        let dense = ad.b.matmul(&ad.a).unwrap().scale(0.5);
        let expected = x.matmul_nt(&dense).unwrap();
        assert!(d.max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn dropout_only_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ad = LoraAdapter::new(
            Tensor::randn(&[2, 8], 1.0, &mut rng),
            Tensor::randn(&[8, 2], 1.0, &mut rng),
            1.0,
            0.5,
        )
        .unwrap();
        let x = Tensor::randn(&[5, 8], 1.0, &mut rng);
        let eval1 = lora_delta(&ad, &x, &mut ForwardContext::inference()).unwrap();
        let eval2 = lora_delta(&ad, &x, &mut ForwardContext::inference()).unwrap();
        assert_eq!(eval1, eval2);
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let train = lora_delta(&ad, &x, &mut ForwardContext::training(&mut r)).unwrap();
        assert_ne!(train, eval1);
    }

    #[test]
    fn shape_errors() {
        assert!(LoraAdapter::new(Tensor::zeros(&[2, 4]), Tensor::zeros(&[4, 3]), 1.0, 0.0).is_err());
        assert!(LoraAdapter::new(Tensor::zeros(&[5, 4]), Tensor::zeros(&[4, 5]), 1.0, 0.0).is_err());
        let ad = LoraAdapter::new(Tensor::zeros(&[2, 4]), Tensor::zeros(&[4, 2]), 1.0, 0.0).unwrap();
        let x = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            lora_delta(&ad, &x, &mut ForwardContext::inference()),
            Err(Error::Shape(_))
        ));
    }
}
