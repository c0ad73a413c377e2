use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::InteractionGraph;
use crate::diffmath::{
    bind, sigmoid, Activation, Bound, DiffError, Mlp, ParamId, Params, Tape, Tensor, Var,
};
use crate::encoder::{propagate, EmbeddingState, Propagation};
use crate::objectives::{bpr_loss, l2_penalty, TripletBatch};

/// Variational graph autoencoder over the stacked node set: users occupy rows
/// `0..I`, items rows `I..I+J`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vgae {
    pub params: Params,
    pub layers: usize,
    pub mode: Propagation,
    user: ParamId,
    item: ParamId,
    mu_head: Mlp,
    std_head: Mlp,
    decoder: Mlp,
}

#[derive(Debug, Clone)]
pub struct VgaeState {
    pub propagated: EmbeddingState,
    pub encoded: Var,
    pub mu: Var,
    pub log_std: Var,
    pub latent: Var,
    pub users: usize,
    pub items: usize,
}

impl VgaeState {
    /// Mean embeddings split into (users, items).
    pub fn mu_split(&self, tape: &mut Tape) -> Result<(Var, Var), DiffError> {
        Ok((
            tape.slice_rows(self.mu, 0, self.users)?,
            tape.slice_rows(self.mu, self.users, self.items)?,
        ))
    }
}

impl Vgae {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        users: usize,
        items: usize,
        dim: usize,
        layers: usize,
        mode: Propagation,
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
        let mu_head = Mlp::new(
            &mut params,
            &format!("{prefix}.mu"),
            &[dim, dim, dim],
            Activation::Relu,
            rng,
        );
        let std_head = Mlp::new(
            &mut params,
            &format!("{prefix}.log_std"),
            &[dim, dim, dim],
            Activation::Relu,
            rng,
        );
        let decoder = Mlp::new(
            &mut params,
            &format!("{prefix}.decoder"),
            &[2 * dim, dim, 1],
            Activation::Relu,
            rng,
        );
        Vgae {
            params,
            layers,
            mode,
            user,
            item,
            mu_head,
            std_head,
            decoder,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.get(self.user).cols
    }

    pub fn mu_head(&self) -> &Mlp {
        &self.mu_head
    }

    pub fn std_head(&self) -> &Mlp {
        &self.std_head
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        bind(tape, &self.params, trainable)
    }

    /// Propagated node embeddings and the two head outputs `(encoded, mu, log_std)`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        graph: &InteractionGraph,
    ) -> Result<(EmbeddingState, Var, Var, Var), DiffError> {
        let state = propagate(
            tape,
            graph,
            bound.get(self.user),
            bound.get(self.item),
            self.layers,
            self.mode,
        )?;
        let encoded = tape.concat_rows(state.final_user, state.final_item)?;
        let mu = self.mu_head.forward(tape, bound, encoded)?;
        let log_std = self.std_head.forward(tape, bound, encoded)?;
        Ok((state, encoded, mu, log_std))
    }

    /// Encodes and draws the latent sample with the given standard-normal noise.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        graph: &InteractionGraph,
        noise: &Tensor,
    ) -> Result<VgaeState, DiffError> {
        let (propagated, encoded, mu, log_std) = self.encode(tape, bound, graph)?;
        let latent = reparameterize(tape, mu, log_std, noise)?;
        Ok(VgaeState {
            propagated,
            encoded,
            mu,
            log_std,
            latent,
            users: graph.user_count(),
            items: graph.item_count(),
        })
    }

    /// Keep probabilities of every observed edge (storage order) under one
    /// latent sample, computed without gradients.
    pub fn edge_probabilities<R: Rng + ?Sized>(
        &self,
        graph: &InteractionGraph,
        rng: &mut R,
    ) -> Result<Vec<f64>, DiffError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let noise = standard_normal(graph.node_count(), self.dim(), rng);
        let state = self.forward(&mut tape, &bound, graph, &noise)?;
        let users = graph.user_count();
        let pairs: Vec<(usize, usize)> = graph
            .edges()
            .into_iter()
            .map(|(u, i)| (u as usize, users + i as usize))
            .collect();
        let logits = decode_edges(
            &mut tape,
            &self.decoder,
            &bound,
            state.latent,
            users,
            &pairs,
        )?;
        Ok(tape
            .value(logits)
            .data
            .iter()
            .map(|&x| sigmoid(x))
            .collect())
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
}

/// `mu + exp(log_std) ⊙ noise`; the noise is a constant of the tape.
pub fn reparameterize(
    tape: &mut Tape,
    mu: Var,
    log_std: Var,
    noise: &Tensor,
) -> Result<Var, DiffError> {
    if tape.shape(mu) != tape.shape(log_std) || tape.shape(mu) != noise.shape() {
        return Err(DiffError::Shape(format!(
            "mu {:?}, log_std {:?}, noise {:?}",
            tape.shape(mu),
            tape.shape(log_std),
            noise.shape()
        )));
    }
    let sd = tape.exp(log_std);
    let eps = tape.constant(noise.clone());
    let scaled = tape.mul(sd, eps)?;
    tape.add(mu, scaled)
}

/// Decoder logits (E×1) for node pairs in stacked indexing. Each pair is
/// reordered so the user row comes first, making the result independent of
/// listing order.
pub fn decode_edges(
    tape: &mut Tape,
    decoder: &Mlp,
    bound: &Bound,
    latent: Var,
    users: usize,
    pairs: &[(usize, usize)],
) -> Result<Var, DiffError> {
    let nodes = tape.shape(latent).0;
    let mut left = Vec::with_capacity(pairs.len());
    let mut right = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let (u, v) = if a <= b { (a, b) } else { (b, a) };
        if v >= nodes || u >= users || v < users {
            return Err(DiffError::Shape(format!(
                "pair ({a},{b}) is not a user-item pair of {nodes} nodes"
            )));
        }
        left.push(u);
        right.push(v);
    }
    let l = tape.gather_rows(latent, &left)?;
    let r = tape.gather_rows(latent, &right)?;
    let x = tape.concat_cols(l, r)?;
    decoder.forward(tape, bound, x)
}

/// Result of resampling the observed edges.
#[derive(Debug, Clone)]
pub struct GeneratedView {
    pub graph: InteractionGraph,
    pub kept: usize,
    pub fell_back: bool,
}

/// Keeps each observed edge independently with its probability. When every
/// edge is dropped the original graph is returned.
pub fn generate_view<R: Rng + ?Sized>(
    graph: &InteractionGraph,
    probs: &[f64],
    rng: &mut R,
) -> Result<GeneratedView, DiffError> {
    if probs.len() != graph.edge_count() {
        return Err(DiffError::Shape(format!(
            "{} probabilities for {} edges",
            probs.len(),
            graph.edge_count()
        )));
    }
    let keep: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
    let kept = keep.iter().filter(|k| **k).count();
    if kept == 0 {
        log::warn!("generated view dropped every edge; using the original graph");
        return Ok(GeneratedView {
            graph: graph.clone(),
            kept: graph.edge_count(),
            fell_back: true,
        });
    }
    let g = if kept == graph.edge_count() {
        graph.clone()
    } else {
        graph.subgraph(&keep)
    };
    Ok(GeneratedView {
        graph: g,
        kept,
        fell_back: false,
    })
}

/// Closed-form `KL(N(mu, exp(log_std)²) ‖ N(0, 1))` summed over dimensions
/// and averaged over rows.
pub fn kl_to_standard_normal(tape: &mut Tape, mu: Var, log_std: Var) -> Result<Var, DiffError> {
    let rows = tape.shape(mu).0.max(1);
    let mu2 = tape.mul(mu, mu)?;
    let two_ls = tape.scale(log_std, 2.0);
    let var = tape.exp(two_ls);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, two_ls)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    Ok(tape.scale(s, 0.5 / rows as f64))
}

#[derive(Debug, Clone, Copy)]
pub struct VgaeLoss {
    pub total: Var,
    pub kl: Var,
    pub dis: Var,
    pub bpr: Var,
    pub reg: Var,
}

fn sample_non_edges<R: Rng + ?Sized>(
    graph: &InteractionGraph,
    count: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let (users, items) = (graph.user_count(), graph.item_count());
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < 100 * count.max(1) {
        attempts += 1;
        let (u, i) = (rng.random_range(0..users), rng.random_range(0..items));
        if !graph.has_edge(u, i) {
            out.push((u, users + i));
        }
    }
    out
}

/// KL + edge cross-entropy + (optionally) BPR on the mean embeddings +
/// `lambda2`·‖params‖².
///
/// The cross-entropy covers the positive edges of `batch` (label 1) and
/// `neg_ratio` sampled non-edges per positive (label 0), scored from the
/// latent sample.
#[allow(clippy::too_many_arguments)]
pub fn vgae_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    vgae: &Vgae,
    bound: &Bound,
    state: &VgaeState,
    graph: &InteractionGraph,
    batch: &TripletBatch,
    neg_ratio: usize,
    with_bpr: bool,
    lambda2: f64,
    rng: &mut R,
) -> Result<VgaeLoss, DiffError> {
    let kl = kl_to_standard_normal(tape, state.mu, state.log_std)?;
    let users = state.users;
    let pos: Vec<(usize, usize)> = batch
        .users
        .iter()
        .zip(&batch.positives)
        .map(|(&u, &i)| (u, users + i))
        .collect();
    let neg = sample_non_edges(graph, pos.len() * neg_ratio, rng);
    let dis = if pos.is_empty() {
        tape.scalar_const(0.0)
    } else {
        let lp = decode_edges(tape, vgae.decoder(), bound, state.latent, users, &pos)?;
        let neg_lp = tape.scale(lp, -1.0);
        let bp = tape.softplus(neg_lp);
        let sp = tape.sum(bp);
        let total = if neg.is_empty() {
            sp
        } else {
            let ln = decode_edges(tape, vgae.decoder(), bound, state.latent, users, &neg)?;
            let bn = tape.softplus(ln);
            let sn = tape.sum(bn);
            tape.add(sp, sn)?
        };
        tape.scale(total, 1.0 / (pos.len() + neg.len()) as f64)
    };
    let bpr = if with_bpr {
        let (mu_u, mu_i) = state.mu_split(tape)?;
        bpr_loss(tape, mu_u, mu_i, batch)?
    } else {
        tape.scalar_const(0.0)
    };
    let reg = l2_penalty(tape, bound.vars())?;
    let reg_w = tape.scale(reg, lambda2);
    let total = tape.add_all(&[kl, dis, bpr, reg_w])?;
    Ok(VgaeLoss {
        total,
        kl,
        dis,
        bpr,
        reg,
    })
}
