use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{ParamId, Params, Tensor};
use super::DiffError;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Parameters of a [`Params`] set recorded on a tape, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars already on a tape, in parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Records every tensor of `params` as a leaf. With `trainable = false` the
/// leaves are constants and no gradient reaches them.
pub fn bind(tape: &mut Tape, params: &Params, trainable: bool) -> Bound {
    let vars = params
        .tensors()
        .iter()
        .map(|t| tape.leaf(t.clone(), trainable))
        .collect();
    Bound { vars }
}

/// Fully connected network; weights are `in × out`, biases `1 × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    weights: Vec<usize>,
    biases: Vec<usize>,
}

impl Mlp {
    /// Registers Xavier-initialised weights and zero biases under `prefix`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut Params,
        prefix: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (k, w) in widths.windows(2).enumerate() {
            let wid = params.add(
                format!("{prefix}.w{k}"),
                Tensor::xavier_uniform(w[0], w[1], rng),
            );
            let bid = params.add(format!("{prefix}.b{k}"), Tensor::zeros(1, w[1]));
            weights.push(wid.0);
            biases.push(bid.0);
        }
        Mlp {
            widths: widths.to_vec(),
            activation,
            weights,
            biases,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [ParamId(*w), ParamId(*b)])
    }

    /// Sets all weights and biases of this network to zero.
    pub fn zero(&self, params: &mut Params) {
        for id in self.param_ids() {
            params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var, DiffError> {
        let (_, cols) = tape.shape(x);
        if cols != self.widths[0] {
            return Err(DiffError::Shape(format!(
                "mlp input width {cols}, expected {}",
                self.widths[0]
            )));
        }
        let last = self.weights.len() - 1;
        let mut h = x;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let lin = tape.matmul(h, bound.get(ParamId(*w)))?;
            h = tape.add_row(lin, bound.get(ParamId(*b)))?;
            if k < last {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_mlp_outputs_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = Params::new();
        let mlp = Mlp::new(&mut p, "m", &[4, 3, 1], Activation::Relu, &mut rng);
        assert_eq!(p.len(), 4);
        mlp.zero(&mut p);
        let mut tape = Tape::new();
        let b = bind(&mut tape, &p, false);
        let x = tape.constant(Tensor::filled(5, 4, 1.3));
        let y = mlp.forward(&mut tape, &b, x).unwrap();
        assert_eq!(tape.shape(y), (5, 1));
        assert!(tape.value(y).data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn width_mismatch() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = Params::new();
        let mlp = Mlp::new(&mut p, "m", &[4, 1], Activation::Identity, &mut rng);
        let mut tape = Tape::new();
        let b = bind(&mut tape, &p, false);
        let x = tape.constant(Tensor::zeros(2, 3));
        assert!(mlp.forward(&mut tape, &b, x).is_err());
    }
}
