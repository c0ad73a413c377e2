use serde::{Deserialize, Serialize};

use super::sampling::sample_triplets;
use super::{GenBatch, TrainState, Variant};
use crate::data::{InteractionGraph, InteractionTable};
use crate::diffmath::{Bound, Params, Tape, Var};
use crate::encoder::Embeddings;
use crate::objectives::{bpr_on_state, l2_penalty, lower_loss, ssl_loss, upper_loss, TripletBatch};
use crate::viewgen::{denoise_loss, generate_view, standard_normal, vgae_loss, GateNoise, Vgae};
use crate::{Error, Result};

/// Loss components and view diagnostics of one training step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub upper: f64,
    pub bpr: f64,
    pub ssl: f64,
    pub reg: f64,
    pub lower: f64,
    pub gen_kl: f64,
    pub gen_dis: f64,
    pub gen_bpr: f64,
    pub den_lc: f64,
    pub den_bpr: f64,
    /// Fraction of training edges present in each view graph (1 for an
    /// embedding-only view).
    pub view1_kept: f64,
    pub view2_kept: f64,
    /// Mean denoiser gate per layer.
    pub gate_kept: Vec<f64>,
}

enum View {
    Graph(InteractionGraph),
    Fixed(Embeddings),
}

fn graph_view(
    vgae: &Vgae,
    graph: &InteractionGraph,
    state_rngs: (&mut rand_chacha::ChaCha8Rng, &mut rand_chacha::ChaCha8Rng),
) -> Result<(View, f64)> {
    let (noise, view) = state_rngs;
    let probs = vgae.edge_probabilities(graph, noise)?;
    let g = generate_view(graph, &probs, view)?;
    let frac = g.kept as f64 / graph.edge_count() as f64;
    Ok((View::Graph(g.graph), frac))
}

fn finite(state: &TrainState, what: &str, values: &[(&str, f64)]) -> Result<()> {
    if values.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let detail = values
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ");
    log::error!("{what} step produced a non-finite loss: {detail}");
    Err(Error::NonFinite {
        epoch: state.epoch,
        step: state.step,
        detail: format!("{what}: {detail}"),
    })
}

fn collect_grads(tape: &Tape, bound: &Bound, params: &mut Params) {
    for (k, v) in bound.vars().iter().enumerate() {
        if let Some(g) = tape.grad(*v) {
            params.accumulate_grad(crate::diffmath::ParamId(k), g);
        }
    }
}

fn view_pair(
    state: &mut TrainState,
    graph: &InteractionGraph,
    m: &mut StepMetrics,
) -> Result<(View, View)> {
    let s = &mut state.streams;
    match state.config.variant {
        Variant::EdgeDrop => {
            let keep = vec![1.0 - state.config.edge_drop_ratio; graph.edge_count()];
            let a = generate_view(graph, &keep, &mut s.view)?;
            let b = generate_view(graph, &keep, &mut s.view)?;
            let e = graph.edge_count() as f64;
            m.view1_kept = a.kept as f64 / e;
            m.view2_kept = b.kept as f64 / e;
            Ok((View::Graph(a.graph), View::Graph(b.graph)))
        }
        Variant::GenGen => {
            let (a, fa) = graph_view(
                state.vgae.as_ref().unwrap(),
                graph,
                (&mut s.vgae_noise, &mut s.view),
            )?;
            let (b, fb) = graph_view(
                state.vgae2.as_ref().unwrap(),
                graph,
                (&mut s.vgae_noise, &mut s.view),
            )?;
            m.view1_kept = fa;
            m.view2_kept = fb;
            Ok((a, b))
        }
        Variant::Full | Variant::NoTask => {
            let (a, fa) = graph_view(
                state.vgae.as_ref().unwrap(),
                graph,
                (&mut s.vgae_noise, &mut s.view),
            )?;
            let den = state.denoiser.as_ref().unwrap();
            let mut tape = Tape::new();
            let b = den.bind(&mut tape, false);
            let out = den.forward(&mut tape, &b, graph, GateNoise::Sample(&mut s.gate_noise))?;
            m.view1_kept = fa;
            m.view2_kept = 1.0;
            m.gate_kept = out.kept_fraction.clone();
            Ok((a, View::Fixed(out.state.snapshot(&tape))))
        }
    }
}

fn view_vars(
    tape: &mut Tape,
    state: &TrainState,
    bound: &Bound,
    view: &View,
) -> Result<(Var, Var)> {
    Ok(match view {
        View::Graph(g) => {
            let s = state.main.forward(tape, bound, g)?;
            (s.final_user, s.final_item)
        }
        View::Fixed(e) => (
            tape.constant(e.users.clone()),
            tape.constant(e.items.clone()),
        ),
    })
}

/// Embeddings of the two contrastive views for the current parameters: the
/// main encoder on each view graph, or the denoiser's deterministic output
/// for a denoised view. Draws from the state's view and noise streams.
pub fn view_embeddings(
    state: &mut TrainState,
    graph: &InteractionGraph,
) -> Result<(Embeddings, Embeddings)> {
    if !state.config.uses_ssl() {
        return Err(Error::Config(
            "lambda1 = 0 trains without contrastive views".into(),
        ));
    }
    let mut m = StepMetrics::default();
    let (v1, v2) = view_pair(state, graph, &mut m)?;
    let embed = |state: &TrainState, v: View| -> Result<Embeddings> {
        match v {
            View::Graph(g) => Ok(state.main.embed(&g)?),
            View::Fixed(e) => Ok(e),
        }
    };
    let first = embed(state, v1)?;
    let second = match &state.denoiser {
        Some(den) => {
            let mut tape = Tape::new();
            let b = den.bind(&mut tape, false);
            den.forward(&mut tape, &b, graph, GateNoise::Eval)?
                .state
                .snapshot(&tape)
        }
        None => embed(state, v2)?,
    };
    Ok((first, second))
}

/// Upper step on the main encoder, then (if generators exist) a lower step on
/// the generators from fresh forward passes.
pub fn train_step(
    state: &mut TrainState,
    train: &InteractionTable,
    graph: &InteractionGraph,
    batch: &TripletBatch,
) -> Result<StepMetrics> {
    let mut m = StepMetrics::default();
    let views = if state.config.uses_ssl() {
        Some(view_pair(state, graph, &mut m)?)
    } else {
        None
    };

    upper_step_with(state, graph, batch, views.as_ref(), &mut m)?;
    if state.vgae.is_some() {
        lower_step(state, train, graph, batch, &mut m)?;
    }
    state.step += 1;
    Ok(m)
}

#[cfg(test)]
pub(crate) fn upper_step(
    state: &mut TrainState,
    graph: &InteractionGraph,
    batch: &TripletBatch,
    m: &mut StepMetrics,
) -> Result<()> {
    let views = if state.config.uses_ssl() {
        Some(view_pair(state, graph, m)?)
    } else {
        None
    };
    upper_step_with(state, graph, batch, views.as_ref(), m)
}

fn upper_step_with(
    state: &mut TrainState,
    graph: &InteractionGraph,
    batch: &TripletBatch,
    views: Option<&(View, View)>,
    m: &mut StepMetrics,
) -> Result<()> {
    let ccfg = state.config.contrastive();
    let mut tape = Tape::new();
    let b = state.main.bind(&mut tape, true);
    let s = state.main.forward(&mut tape, &b, graph)?;
    let bpr = bpr_on_state(&mut tape, &s, batch)?;
    let ssl = match views {
        Some((v1, v2)) => {
            let a = view_vars(&mut tape, state, &b, v1)?;
            let c = view_vars(&mut tape, state, &b, v2)?;
            ssl_loss(&mut tape, a, c, batch, &ccfg)?
        }
        None => tape.scalar_const(0.0),
    };
    let reg = l2_penalty(&mut tape, b.vars())?;
    let upper = upper_loss(&mut tape, bpr, ssl, reg, &ccfg)?;
    (m.upper, m.bpr, m.ssl, m.reg) = (
        tape.scalar(upper),
        tape.scalar(bpr),
        tape.scalar(ssl),
        tape.scalar(reg),
    );
    finite(
        state,
        "upper",
        &[
            ("upper", m.upper),
            ("bpr", m.bpr),
            ("ssl", m.ssl),
            ("reg", m.reg),
        ],
    )?;
    tape.backward(upper)?;
    collect_grads(&tape, &b, &mut state.main.params);
    state.opt_main.step(&mut state.main.params);
    Ok(())
}

pub(crate) fn lower_step(
    state: &mut TrainState,
    train: &InteractionTable,
    graph: &InteractionGraph,
    batch: &TripletBatch,
    m: &mut StepMetrics,
) -> Result<()> {
    let cfg = state.config.clone();
    let with_bpr = cfg.variant != Variant::NoTask;
    let resampled;
    let gb = match cfg.gen_batch {
        GenBatch::Reuse => batch,
        GenBatch::Resample => {
            resampled = sample_triplets(train, batch.len(), &mut state.streams.batch);
            &resampled
        }
    };
    let nodes = graph.node_count();
    let mut tape = Tape::new();
    let s = &mut state.streams;

    let vgae = state.vgae.as_ref().unwrap();
    let vb = vgae.bind(&mut tape, true);
    let noise = standard_normal(nodes, vgae.dim(), &mut s.vgae_noise);
    let vs = vgae.forward(&mut tape, &vb, graph, &noise)?;
    let gen = vgae_loss(
        &mut tape,
        vgae,
        &vb,
        &vs,
        graph,
        gb,
        cfg.neg_ratio,
        with_bpr,
        cfg.lambda2,
        &mut s.negatives,
    )?;
    m.gen_kl = tape.scalar(gen.kl);
    m.gen_dis = tape.scalar(gen.dis);
    m.gen_bpr = tape.scalar(gen.bpr);

    let (second, second_bound) = if let Some(v2) = &state.vgae2 {
        let b2 = v2.bind(&mut tape, true);
        let noise = standard_normal(nodes, v2.dim(), &mut s.vgae_noise);
        let st = v2.forward(&mut tape, &b2, graph, &noise)?;
        let l = vgae_loss(
            &mut tape,
            v2,
            &b2,
            &st,
            graph,
            gb,
            cfg.neg_ratio,
            with_bpr,
            cfg.lambda2,
            &mut s.negatives,
        )?;
        m.gen_kl += tape.scalar(l.kl);
        m.gen_dis += tape.scalar(l.dis);
        m.gen_bpr += tape.scalar(l.bpr);
        (l.total, b2)
    } else {
        let den = state.denoiser.as_ref().unwrap();
        let db = den.bind(&mut tape, true);
        let out = den.forward(&mut tape, &db, graph, GateNoise::Sample(&mut s.gate_noise))?;
        let l = denoise_loss(
            &mut tape,
            &db,
            &out,
            gb,
            cfg.lc_weight,
            with_bpr,
            cfg.lambda2,
        )?;
        m.den_lc = tape.scalar(l.lc);
        m.den_bpr = tape.scalar(l.bpr);
        (l.total, db)
    };

    let lower = lower_loss(&mut tape, gen.total, second)?;
    m.lower = tape.scalar(lower);
    finite(
        state,
        "lower",
        &[
            ("lower", m.lower),
            ("kl", m.gen_kl),
            ("dis", m.gen_dis),
            ("lc", m.den_lc),
        ],
    )?;
    tape.backward(lower)?;

    let vgae = state.vgae.as_mut().unwrap();
    collect_grads(&tape, &vb, &mut vgae.params);
    state.opt_vgae.as_mut().unwrap().step(&mut vgae.params);
    if let Some(v2) = state.vgae2.as_mut() {
        collect_grads(&tape, &second_bound, &mut v2.params);
        state.opt_vgae2.as_mut().unwrap().step(&mut v2.params);
    } else {
        let den = state.denoiser.as_mut().unwrap();
        collect_grads(&tape, &second_bound, &mut den.params);
        state.opt_denoiser.as_mut().unwrap().step(&mut den.params);
    }
    Ok(())
}
