use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{TrainConfig, Variant};
use crate::diffmath::{Adam, Checkpoint};
use crate::encoder::LightGcn;
use crate::viewgen::{Denoiser, Vgae};
use crate::{Error, Result};

/// Independent ChaCha8 stream `id` of the run seed.
pub fn named_stream(seed: u64, id: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    InitMain = 1,
    InitVgae = 2,
    InitVgae2 = 3,
    InitDenoiser = 4,
    Batch = 5,
    VgaeNoise = 6,
    GateNoise = 7,
    View = 8,
    Negatives = 9,
    Noise = 10,
}

/// Runtime randomness of a training run, one stream per purpose.
#[derive(Debug, Clone)]
pub struct Streams {
    pub batch: ChaCha8Rng,
    pub vgae_noise: ChaCha8Rng,
    pub gate_noise: ChaCha8Rng,
    pub view: ChaCha8Rng,
    pub negatives: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            batch: named_stream(seed, Stream::Batch),
            vgae_noise: named_stream(seed, Stream::VgaeNoise),
            gate_noise: named_stream(seed, Stream::GateNoise),
            view: named_stream(seed, Stream::View),
            negatives: named_stream(seed, Stream::Negatives),
        }
    }
}

/// Models, optimisers and counters of a run. The main encoder, the
/// generators and their optimisers share no parameters.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub main: LightGcn,
    pub vgae: Option<Vgae>,
    /// Second generative view, only for [`Variant::GenGen`].
    pub vgae2: Option<Vgae>,
    pub denoiser: Option<Denoiser>,
    pub(crate) opt_main: Adam,
    pub(crate) opt_vgae: Option<Adam>,
    pub(crate) opt_vgae2: Option<Adam>,
    pub(crate) opt_denoiser: Option<Adam>,
    pub epoch: usize,
    pub step: u64,
    pub best_metric: f64,
    pub best_epoch: Option<usize>,
    pub streams: Streams,
}

impl TrainState {
    pub fn new(config: &TrainConfig, users: usize, items: usize) -> Result<Self> {
        config.validate()?;
        let c = config;
        let main = LightGcn::new(
            users,
            items,
            c.dim,
            c.layers,
            c.propagation,
            &mut named_stream(c.seed, Stream::InitMain),
        );
        let ssl = c.uses_ssl();
        let needs_vgae = ssl && c.variant != Variant::EdgeDrop;
        let vgae = needs_vgae.then(|| {
            Vgae::new(
                "vgae",
                users,
                items,
                c.dim,
                c.layers,
                c.propagation,
                &mut named_stream(c.seed, Stream::InitVgae),
            )
        });
        let vgae2 = (ssl && c.variant == Variant::GenGen).then(|| {
            Vgae::new(
                "vgae2",
                users,
                items,
                c.dim,
                c.layers,
                c.propagation,
                &mut named_stream(c.seed, Stream::InitVgae2),
            )
        });
        let denoiser = (ssl && matches!(c.variant, Variant::Full | Variant::NoTask)).then(|| {
            Denoiser::new(
                "denoiser",
                users,
                items,
                c.dim,
                c.layers,
                c.propagation,
                c.hard_concrete(),
                &mut named_stream(c.seed, Stream::InitDenoiser),
            )
        });
        let adam = c.adam();
        Ok(TrainState {
            config: c.clone(),
            opt_main: Adam::new(adam, &main.params),
            opt_vgae: vgae.as_ref().map(|v| Adam::new(adam, &v.params)),
            opt_vgae2: vgae2.as_ref().map(|v| Adam::new(adam, &v.params)),
            opt_denoiser: denoiser.as_ref().map(|d| Adam::new(adam, &d.params)),
            main,
            vgae,
            vgae2,
            denoiser,
            epoch: 0,
            step: 0,
            best_metric: f64::NEG_INFINITY,
            best_epoch: None,
            streams: Streams::new(c.seed),
        })
    }

    pub fn user_count(&self) -> usize {
        self.main.params.tensors()[self.main.user_table().0].rows
    }

    pub fn item_count(&self) -> usize {
        self.main.params.tensors()[self.main.item_table().0].rows
    }

    pub fn has_generators(&self) -> bool {
        self.vgae.is_some() || self.vgae2.is_some() || self.denoiser.is_some()
    }

    /// Parameter checksums of (main, vgae, vgae2, denoiser).
    pub fn checksums(&self) -> [Option<u64>; 4] {
        [
            Some(self.main.params.checksum()),
            self.vgae.as_ref().map(|v| v.params.checksum()),
            self.vgae2.as_ref().map(|v| v.params.checksum()),
            self.denoiser.as_ref().map(|d| d.params.checksum()),
        ]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "config": self.config.to_kv_text(),
            "users": self.user_count(),
            "items": self.item_count(),
            "epoch": self.epoch,
            "best_metric": if self.best_metric.is_finite() { Some(self.best_metric) } else { None },
            "best_epoch": self.best_epoch,
        });
        let mut ck = Checkpoint::new(self.step, meta);
        ck.push_group("main", &self.main.params);
        if let Some(v) = &self.vgae {
            ck.push_group("vgae", &v.params);
        }
        if let Some(v) = &self.vgae2 {
            ck.push_group("vgae2", &v.params);
        }
        if let Some(d) = &self.denoiser {
            ck.push_group("denoiser", &d.params);
        }
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    /// Rebuilds a state from a checkpoint. Optimiser moments and random
    /// streams start afresh.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("checkpoint meta: {m}"));
        let text = ck.meta["config"]
            .as_str()
            .ok_or_else(|| bad("missing config"))?;
        let config = TrainConfig::from_kv_text(text)?;
        let users = ck.meta["users"]
            .as_u64()
            .ok_or_else(|| bad("missing users"))? as usize;
        let items = ck.meta["items"]
            .as_u64()
            .ok_or_else(|| bad("missing items"))? as usize;
        let mut s = TrainState::new(&config, users, items)?;
        ck.restore_group("main", &mut s.main.params)?;
        if let Some(v) = &mut s.vgae {
            ck.restore_group("vgae", &mut v.params)?;
        }
        if let Some(v) = &mut s.vgae2 {
            ck.restore_group("vgae2", &mut v.params)?;
        }
        if let Some(d) = &mut s.denoiser {
            ck.restore_group("denoiser", &mut d.params)?;
        }
        s.step = ck.step;
        s.epoch = ck.meta["epoch"].as_u64().unwrap_or(0) as usize;
        s.best_metric = ck.meta["best_metric"].as_f64().unwrap_or(f64::NEG_INFINITY);
        s.best_epoch = ck.meta["best_epoch"].as_u64().map(|e| e as usize);
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
