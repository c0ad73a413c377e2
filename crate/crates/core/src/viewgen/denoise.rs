use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::InteractionGraph;
use crate::diffmath::{
    bind, sigmoid, Activation, Bound, DiffError, Mlp, ParamId, Params, Tape, Tensor, Var,
};
use crate::encoder::{check_tables, propagate_layer, EmbeddingState, Propagation};
use crate::objectives::{bpr_loss, l2_penalty, TripletBatch};

/// Stretched hard-concrete relaxation of a Bernoulli gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardConcrete {
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
}

impl Default for HardConcrete {
    fn default() -> Self {
        HardConcrete {
            beta: 2.0 / 3.0,
            gamma: -0.1,
            zeta: 1.1,
        }
    }
}

impl HardConcrete {
    pub fn validate(&self) -> Result<(), DiffError> {
        if !(self.beta > 0.0 && self.gamma < 0.0 && self.zeta > 1.0) {
            return Err(DiffError::Domain(format!(
                "hard-concrete constants need beta > 0, gamma < 0, zeta > 1; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Shift such that `P(gate ≠ 0) = σ(α − shift)`.
    pub fn l0_shift(&self) -> f64 {
        self.beta * (-self.gamma / self.zeta).ln()
    }
}

/// Source of the uniform noise driving the gates.
pub enum GateNoise<'a> {
    /// Deterministic, `u = 0.5` everywhere.
    Eval,
    /// Fresh uniform draws per edge and layer.
    Sample(&'a mut dyn RngCore),
    /// The same `u` for every edge and layer.
    Fixed(f64),
    /// Gates replaced by a constant; scores and penalty are still computed.
    Force(f64),
}

/// Gate logits for a batch of edges from the two endpoint rows (E×d each).
pub fn edge_score(
    tape: &mut Tape,
    mlp: &Mlp,
    bound: &Bound,
    user_rows: Var,
    item_rows: Var,
) -> Result<Var, DiffError> {
    let x = tape.concat_cols(user_rows, item_rows)?;
    mlp.forward(tape, bound, x)
}

/// `clamp(σ((log u − log(1−u) + α)/β)·(ζ−γ) + γ, 0, 1)` per entry of `alpha`.
pub fn sample_gate(
    tape: &mut Tape,
    alpha: Var,
    noise_u: &[f64],
    hc: &HardConcrete,
) -> Result<Var, DiffError> {
    hc.validate()?;
    let (r, c) = tape.shape(alpha);
    if noise_u.len() != r * c {
        return Err(DiffError::Shape(format!(
            "{} noise values for {r}x{c} logits",
            noise_u.len()
        )));
    }
    if let Some(u) = noise_u.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
        return Err(DiffError::Domain(format!("gate noise {u} outside (0, 1)")));
    }
    let logistic = tape.constant(Tensor::from_vec(
        r,
        c,
        noise_u.iter().map(|u| u.ln() - (1.0 - u).ln()).collect(),
    ));
    let pre = tape.add(alpha, logistic)?;
    let pre = tape.scale(pre, 1.0 / hc.beta);
    let s = tape.sigmoid(pre);
    let stretched = tape.scale(s, hc.zeta - hc.gamma);
    let stretched = tape.add_scalar(stretched, hc.gamma);
    Ok(tape.clamp(stretched, 0.0, 1.0))
}

/// Probability that each gate is non-zero.
pub fn expected_l0(tape: &mut Tape, alpha: Var, hc: &HardConcrete) -> Var {
    let shifted = tape.add_scalar(alpha, -hc.l0_shift());
    tape.sigmoid(shifted)
}

pub fn expected_l0_value(alpha: f64, hc: &HardConcrete) -> f64 {
    sigmoid(alpha - hc.l0_shift())
}

/// Per-layer edge-gating encoder with its own embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub params: Params,
    pub layers: usize,
    pub mode: Propagation,
    pub hc: HardConcrete,
    user: ParamId,
    item: ParamId,
    gates: Vec<Mlp>,
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub state: EmbeddingState,
    /// Unweighted sum of expected non-zero gates over layers and edges.
    pub lc: Var,
    pub alphas: Vec<Var>,
    pub gates: Vec<Var>,
    /// Mean gate value per layer.
    pub kept_fraction: Vec<f64>,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        users: usize,
        items: usize,
        dim: usize,
        layers: usize,
        mode: Propagation,
        hc: HardConcrete,
        rng: &mut R,
    ) -> Self {
        let mut params = Params::new();
        let user = params.add(
            format!("{prefix}.user_table"),
            Tensor::xavier_uniform(users, dim, rng),
        );
        let item = params.add(
            format!("{prefix}.item_table"),
            Tensor::xavier_uniform(items, dim, rng),
        );
        let gates = (0..layers)
            .map(|l| {
                Mlp::new(
                    &mut params,
                    &format!("{prefix}.gate{l}"),
                    &[2 * dim, dim, 1],
                    Activation::Relu,
                    rng,
                )
            })
            .collect();
        Denoiser {
            params,
            layers,
            mode,
            hc,
            user,
            item,
            gates,
        }
    }

    pub fn gate_mlps(&self) -> &[Mlp] {
        &self.gates
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        bind(tape, &self.params, trainable)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        graph: &InteractionGraph,
        mut noise: GateNoise<'_>,
    ) -> Result<DenoiseOutput, DiffError> {
        let (user_table, item_table) = (bound.get(self.user), bound.get(self.item));
        check_tables(tape, graph, user_table, item_table)?;
        let edges = graph.edges();
        let e = edges.len();
        let eu: Vec<usize> = edges.iter().map(|p| p.0 as usize).collect();
        let ei: Vec<usize> = edges.iter().map(|p| p.1 as usize).collect();
        let norm = tape.constant(Tensor::from_vec(e, 1, graph.normalized().values().to_vec()));
        let mut layer_user = vec![user_table];
        let mut layer_item = vec![item_table];
        let mut alphas = Vec::with_capacity(self.layers);
        let mut gates = Vec::with_capacity(self.layers);
        let mut penalties = Vec::with_capacity(self.layers);
        let mut kept_fraction = Vec::with_capacity(self.layers);
        for mlp in &self.gates {
            let (pu, pi) = (*layer_user.last().unwrap(), *layer_item.last().unwrap());
            let ur = tape.gather_rows(pu, &eu)?;
            let ir = tape.gather_rows(pi, &ei)?;
            let alpha = edge_score(tape, mlp, bound, ur, ir)?;
            let gate = match &mut noise {
                GateNoise::Eval => sample_gate(tape, alpha, &vec![0.5; e], &self.hc)?,
                GateNoise::Fixed(u) => sample_gate(tape, alpha, &vec![*u; e], &self.hc)?,
                GateNoise::Sample(rng) => {
                    let u: Vec<f64> = (0..e).map(|_| open_unit(&mut **rng)).collect();
                    sample_gate(tape, alpha, &u, &self.hc)?
                }
                GateNoise::Force(v) => tape.constant(Tensor::filled(e, 1, *v)),
            };
            let pen = expected_l0(tape, alpha, &self.hc);
            penalties.push(tape.sum(pen));
            kept_fraction.push(if e == 0 {
                0.0
            } else {
                tape.value(gate).data.iter().sum::<f64>() / e as f64
            });
            let w = tape.mul(norm, gate)?;
            let (u, v) = propagate_layer(tape, graph.normalized(), Some(w), pu, pi, self.mode)?;
            layer_user.push(u);
            layer_item.push(v);
            alphas.push(alpha);
            gates.push(gate);
        }
        let final_user = tape.add_all(&layer_user)?;
        let final_item = tape.add_all(&layer_item)?;
        let lc = if penalties.is_empty() {
            tape.scalar_const(0.0)
        } else {
            tape.add_all(&penalties)?
        };
        Ok(DenoiseOutput {
            state: EmbeddingState {
                layer_user,
                layer_item,
                final_user,
                final_item,
            },
            lc,
            alphas,
            gates,
            kept_fraction,
        })
    }
}

fn open_unit(rng: &mut dyn RngCore) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DenoiseLoss {
    pub total: Var,
    pub lc: Var,
    pub bpr: Var,
    pub reg: Var,
}

/// `lc_weight`·L_c + (optionally) BPR on the denoised embeddings +
/// `lambda2`·‖params‖².
pub fn denoise_loss(
    tape: &mut Tape,
    bound: &Bound,
    out: &DenoiseOutput,
    batch: &TripletBatch,
    lc_weight: f64,
    with_bpr: bool,
    lambda2: f64,
) -> Result<DenoiseLoss, DiffError> {
    let lc = tape.scale(out.lc, lc_weight);
    let bpr = if with_bpr {
        bpr_loss(tape, out.state.final_user, out.state.final_item, batch)?
    } else {
        tape.scalar_const(0.0)
    };
    let reg = l2_penalty(tape, bound.vars())?;
    let reg_w = tape.scale(reg, lambda2);
    let total = tape.add_all(&[lc, bpr, reg_w])?;
    Ok(DenoiseLoss {
        total,
        lc,
        bpr,
        reg,
    })
}
