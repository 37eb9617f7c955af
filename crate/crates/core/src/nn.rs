//! Named parameter storage and the layer types the model is built from.

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, ShapeError};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
}

/// Ordered collection of named parameters. Layers refer to entries by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let grad = vec![T::zero(); value.len()];
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Param<T> {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param<T> {
        &mut self.params[index]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Put every parameter on the tape. `trainable = false` binds them as
    /// constants so no gradient is computed for them.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect();
        Bound { vars }
    }

    /// Add the gradients of a backward pass into the stored `grad` buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                p.grad.iter_mut().zip(g).for_each(|(acc, &d)| *acc += d);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// SHA-256 over names, shapes and f32-rounded values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &s in p.value.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                h.update((v.as_f64() as f32).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Replace the value of the parameter called `name`, checking its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<(), Error> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Weights(format!("unexpected parameter block `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Weights(format!(
                "parameter `{name}` has shape {:?}, file has {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn convert<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.convert(),
                    grad: vec![U::zero(); p.value.len()],
                })
                .collect(),
        }
    }
}

fn uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::cast(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Fully connected layer, `weight[out, in]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[outputs, inputs], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
    ) -> Result<Var, ShapeError> {
        tape.linear(x, p.var(self.weight), Some(p.var(self.bias)))
    }
}

/// 2-D convolution layer, `weight[out, in, k, k]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((inputs * kernel * kernel) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[outputs, inputs, kernel, kernel], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
    ) -> Result<Var, ShapeError> {
        let y = tape.conv2d(x, p.var(self.weight), self.stride, self.padding)?;
        tape.channel_bias(y, p.var(self.bias))
    }
}

/// Transposed 2-D convolution layer, `weight[in, out, k, k]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvTranspose2d {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((outputs * kernel * kernel) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[inputs, outputs, kernel, kernel], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
    ) -> Result<Var, ShapeError> {
        let y = tape.conv_transpose2d(x, p.var(self.weight), self.stride, self.padding)?;
        tape.channel_bias(y, p.var(self.bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_twice_doubles_accumulated_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "fc", 3, 2, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, true);
        let x =
            tape.constant(Tensor::from_f64(&[2, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap());
        let y = lin.forward(&mut tape, &p, x).unwrap();
        let y2 = tape.square(y);
        let l = tape.mean(y2);
        let g = tape.backward(l).unwrap();
        store.accumulate(&g, &p);
        let once: Vec<Vec<f64>> = store.iter().map(|p| p.grad.clone()).collect();
        let g = tape.backward(l).unwrap();
        store.accumulate(&g, &p);
        for (p, first) in store.iter().zip(&once) {
            for (a, b) in p.grad.iter().zip(first) {
                assert_eq!(*a, 2.0 * b);
            }
        }
        store.zero_grad();
        assert!(store.iter().all(|p| p.grad.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn set_rejects_wrong_shape() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::zeros(&[2, 2]));
        assert!(store.set("w", Tensor::zeros(&[4])).is_err());
        assert!(store.set("nope", Tensor::zeros(&[2, 2])).is_err());
        assert!(store.set("w", Tensor::full(&[2, 2], 1.0)).is_ok());
    }
}
