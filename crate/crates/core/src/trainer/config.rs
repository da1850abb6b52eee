//! Run configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::agents::{CreatorMode, Dims, FollowerKind};
use crate::error::{Error, Result};
use crate::objectives::{Anneal, RlConfig};
use crate::world::{SplitSpec, WorldSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Low-level actions, imitation only.
    Seq2Seq,
    /// Panoramic actions, imitation only.
    SpeakerFollower,
    /// Panoramic actions, imitation plus actor-critic.
    Rcm,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq2seq" => Ok(Preset::Seq2Seq),
            "speaker-follower" => Ok(Preset::SpeakerFollower),
            "rcm" => Ok(Preset::Rcm),
            _ => Err(Error::Parse(format!("unknown preset `{s}`"))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Seq2Seq => "seq2seq",
            Preset::SpeakerFollower => "speaker-follower",
            Preset::Rcm => "rcm",
        }
    }
}

/// Rows of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Row {
    Baseline,
    DeltaA,
    DeltaX,
    DeltaAX,
    DeltaAXU,
    CfNoRef,
    Cf,
    Full,
}

impl Row {
    pub const ALL: [Row; 8] = [
        Row::Baseline,
        Row::DeltaA,
        Row::DeltaX,
        Row::DeltaAX,
        Row::DeltaAXU,
        Row::CfNoRef,
        Row::Cf,
        Row::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Row::Baseline => "baseline",
            Row::DeltaA => "dA",
            Row::DeltaX => "dX",
            Row::DeltaAX => "dA+dX",
            Row::DeltaAXU => "dA+dX+dAu",
            Row::CfNoRef => "cf-noref",
            Row::Cf => "cf",
            Row::Full => "full",
        }
    }
}

impl FromStr for Row {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Row::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown ablation row `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    /// Back-translation: speaker first, then pseudo-labels, then follower.
    Bt,
    /// Everything on (same as the `full` row).
    Ccc,
    Ablation(Row),
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "bt" => Ok(Mode::Bt),
            "ccc" => Ok(Mode::Ccc),
            _ => match s.strip_prefix("ablation:") {
                Some(row) => Ok(Mode::Ablation(row.parse()?)),
                None => Err(Error::Parse(format!("unknown mode `{s}`"))),
            },
        }
    }
}

impl Mode {
    pub fn name(self) -> String {
        match self {
            Mode::Baseline => "baseline".into(),
            Mode::Bt => "bt".into(),
            Mode::Ccc => "ccc".into(),
            Mode::Ablation(r) => format!("ablation:{}", r.name()),
        }
    }
}

/// Which losses a run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub il: bool,
    pub rl: bool,
    pub speaker_mle: bool,
    pub delta_a: bool,
    pub delta_x: bool,
    pub delta_a_unlabeled: bool,
    pub delta_a_cf: bool,
    pub delta_x_cf: bool,
    /// Imitation / speaker likelihood on the counterfactual environment.
    pub cf_task: bool,
    pub creator: bool,
    pub discriminator: bool,
}

impl Terms {
    pub fn none() -> Self {
        Terms {
            il: false,
            rl: false,
            speaker_mle: false,
            delta_a: false,
            delta_x: false,
            delta_a_unlabeled: false,
            delta_a_cf: false,
            delta_x_cf: false,
            cf_task: false,
            creator: false,
            discriminator: false,
        }
    }

    pub fn needs_counterfactual(&self) -> bool {
        self.delta_a_cf || self.delta_x_cf || self.cf_task || self.creator
    }

    /// Only the task losses (imitation, actor-critic, speaker likelihood).
    pub fn task_only(&self) -> Self {
        Terms {
            il: self.il,
            rl: self.rl,
            speaker_mle: self.speaker_mle,
            ..Terms::none()
        }
    }

    pub fn any_cycle(&self) -> bool {
        self.delta_a || self.delta_x || self.delta_a_unlabeled || self.delta_a_cf || self.delta_x_cf
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateScheme {
    /// Per-episode steps on temporary copies, committed after the batch.
    /// Gradients are taken at the parameters the batch started from.
    Literal,
    /// One step with the mean gradient of the batch.
    BatchMean,
}

/// World and dataset generation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub seed: Option<u64>,
    pub train_worlds: usize,
    pub unseen_worlds: usize,
    pub sizes: Vec<(usize, usize)>,
    pub wall_density: f64,
    pub n_labeled: usize,
    pub m_unlabeled: usize,
    pub n_val_seen: usize,
    pub n_val_unseen: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: None,
            train_worlds: 10,
            unseen_worlds: 6,
            sizes: vec![(5, 5), (6, 5), (5, 6)],
            wall_density: 0.15,
            n_labeled: 120,
            m_unlabeled: 600,
            n_val_seen: 100,
            n_val_unseen: 150,
            min_len: 2,
            max_len: 5,
        }
    }
}

impl DataConfig {
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_worlds: (0..self.train_worlds).collect(),
            unseen_worlds: (self.train_worlds..self.train_worlds + self.unseen_worlds).collect(),
            n_val_seen: self.n_val_seen,
            n_val_unseen: self.n_val_unseen,
            min_len: self.min_len,
            max_len: self.max_len,
        }
    }

    pub fn worlds(&self, seed: u64) -> Result<WorldSet> {
        let seed = self.seed.unwrap_or(seed);
        WorldSet::generate(
            crate::rng::derive_seed(seed, &[crate::rng::purpose::WORLD]),
            self.train_worlds + self.unseen_worlds,
            &self.sizes,
            self.wall_density,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub preset: Preset,
    pub mode: Mode,
    pub lr: f64,
    pub batch_size: usize,
    pub unlabeled_batch: usize,
    pub iterations: u64,
    pub clip_norm: Option<f64>,
    pub hidden: usize,
    pub embed: usize,
    pub attention: bool,
    pub follower: FollowerKind,
    pub terms: Terms,
    pub cycle_weight: f64,
    /// Iterations of task losses alone before cycle and counterfactual terms
    /// switch on.
    pub cycle_start: u64,
    pub cf_task_weight: f64,
    pub anneal: Anneal,
    pub rl: RlConfig,
    pub baseline_momentum: f64,
    pub update: UpdateScheme,
    pub creator_mode: CreatorMode,
    /// Intermediate samples averaged per cycle estimate.
    pub samples: usize,
    pub eval_every: u64,
    /// Cap on evaluated episodes per split (0 = all).
    pub eval_limit: usize,
    pub bt_speaker_iterations: u64,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut c = TrainConfig {
            seed: 1,
            preset: Preset::SpeakerFollower,
            mode: Mode::Baseline,
            lr: 0.05,
            batch_size: 8,
            unlabeled_batch: 8,
            iterations: 300,
            clip_norm: Some(5.0),
            hidden: 32,
            embed: 16,
            attention: true,
            follower: FollowerKind::Panoramic,
            terms: Terms::none(),
            cycle_weight: 0.3,
            cycle_start: 0,
            cf_task_weight: 1.0,
            anneal: Anneal::default(),
            rl: RlConfig::default(),
            baseline_momentum: 0.95,
            update: UpdateScheme::Literal,
            creator_mode: CreatorMode::Reference,
            samples: 1,
            eval_every: 0,
            eval_limit: 0,
            bt_speaker_iterations: 300,
            data: DataConfig::default(),
        };
        c.apply_preset(Preset::SpeakerFollower);
        c.apply_mode(Mode::Baseline);
        c
    }
}

impl TrainConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            hidden: self.hidden,
            embed: self.embed,
            vocab: crate::world::vocab::SIZE,
        }
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        self.preset = preset;
        self.follower = match preset {
            Preset::Seq2Seq => FollowerKind::LowLevel,
            _ => FollowerKind::Panoramic,
        };
        self.terms.rl = preset == Preset::Rcm;
    }

    /// Switches the loss terms for a mode, keeping the preset's RL choice.
    pub fn apply_mode(&mut self, mode: Mode) {
        self.mode = mode;
        let rl = self.terms.rl;
        let mut t = Terms::none();
        t.il = true;
        t.rl = rl;
        t.speaker_mle = true;
        let row = match mode {
            Mode::Baseline | Mode::Bt => Row::Baseline,
            Mode::Ccc => Row::Full,
            Mode::Ablation(r) => r,
        };
        match row {
            Row::Baseline => {}
            Row::DeltaA => t.delta_a = true,
            Row::DeltaX => t.delta_x = true,
            Row::DeltaAX => {
                t.delta_a = true;
                t.delta_x = true;
            }
            Row::DeltaAXU => {
                t.delta_a = true;
                t.delta_x = true;
                t.delta_a_unlabeled = true;
            }
            Row::CfNoRef => t.cf_task = true,
            Row::Cf => {
                t.cf_task = true;
                t.creator = true;
                t.discriminator = true;
            }
            Row::Full => {
                t.delta_a = true;
                t.delta_x = true;
                t.delta_a_unlabeled = true;
                t.delta_a_cf = true;
                t.delta_x_cf = true;
                t.cf_task = true;
                t.creator = true;
                t.discriminator = true;
            }
        }
        self.creator_mode = if row == Row::CfNoRef {
            CreatorMode::RandomMask { p: 0.5 }
        } else {
            CreatorMode::Reference
        };
        self.terms = t;
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Parse(format!("bad value `{v}` for `{key}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(Error::Parse(format!("bad boolean `{v}` for `{key}`"))),
            }
        }
        let t = &mut self.terms;
        match key {
            "seed" => self.seed = p(key, value)?,
            "preset" => {
                let mode = self.mode;
                self.apply_preset(value.parse()?);
                self.apply_mode(mode);
            }
            "mode" => self.apply_mode(value.parse()?),
            "lr" => self.lr = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "unlabeled_batch" => self.unlabeled_batch = p(key, value)?,
            "iterations" => self.iterations = p(key, value)?,
            "clip_norm" => {
                let c: f64 = p(key, value)?;
                self.clip_norm = (c > 0.0).then_some(c);
            }
            "hidden" => self.hidden = p(key, value)?,
            "embed" => self.embed = p(key, value)?,
            "attention" => self.attention = flag(key, value)?,
            "follower" => {
                self.follower = match value {
                    "panoramic" => FollowerKind::Panoramic,
                    "low-level" => FollowerKind::LowLevel,
                    _ => return Err(Error::Parse(format!("bad follower `{value}`"))),
                }
            }
            "term.il" => t.il = flag(key, value)?,
            "term.rl" => t.rl = flag(key, value)?,
            "term.speaker_mle" => t.speaker_mle = flag(key, value)?,
            "term.delta_a" => t.delta_a = flag(key, value)?,
            "term.delta_x" => t.delta_x = flag(key, value)?,
            "term.delta_a_unlabeled" => t.delta_a_unlabeled = flag(key, value)?,
            "term.delta_a_cf" => t.delta_a_cf = flag(key, value)?,
            "term.delta_x_cf" => t.delta_x_cf = flag(key, value)?,
            "term.cf_task" => t.cf_task = flag(key, value)?,
            "term.creator" => t.creator = flag(key, value)?,
            "term.discriminator" => t.discriminator = flag(key, value)?,
            "weight.cycle" => self.cycle_weight = p(key, value)?,
            "cycle_start" => self.cycle_start = p(key, value)?,
            "weight.cf_task" => self.cf_task_weight = p(key, value)?,
            "anneal.beta0" => self.anneal.beta0 = p(key, value)?,
            "anneal.gamma" => self.anneal.gamma = p(key, value)?,
            "anneal.beta_min" => self.anneal.beta_min = p(key, value)?,
            "discount" => self.rl.discount = p(key, value)?,
            "success_radius" => self.rl.success_radius = p(key, value)?,
            "baseline_momentum" => self.baseline_momentum = p(key, value)?,
            "update" => {
                self.update = match value {
                    "literal" => UpdateScheme::Literal,
                    "batch-mean" => UpdateScheme::BatchMean,
                    _ => return Err(Error::Parse(format!("bad update scheme `{value}`"))),
                }
            }
            "creator" => {
                self.creator_mode = match value {
                    "reference" => CreatorMode::Reference,
                    "mask" => CreatorMode::RandomMask { p: 0.5 },
                    _ => return Err(Error::Parse(format!("bad creator mode `{value}`"))),
                }
            }
            "mask_prob" => match &mut self.creator_mode {
                CreatorMode::RandomMask { p: prob } => *prob = p(key, value)?,
                CreatorMode::Reference => {
                    return Err(Error::Parse("mask_prob needs creator = mask".into()))
                }
            },
            "samples" => self.samples = p(key, value)?,
            "eval_every" => self.eval_every = p(key, value)?,
            "eval_limit" => self.eval_limit = p(key, value)?,
            "bt.speaker_iterations" => self.bt_speaker_iterations = p(key, value)?,
            "data.seed" => self.data.seed = Some(p(key, value)?),
            "data.train_worlds" => self.data.train_worlds = p(key, value)?,
            "data.unseen_worlds" => self.data.unseen_worlds = p(key, value)?,
            "data.sizes" => self.data.sizes = parse_sizes(value)?,
            "data.wall_density" => self.data.wall_density = p(key, value)?,
            "data.n_labeled" => self.data.n_labeled = p(key, value)?,
            "data.m_unlabeled" => self.data.m_unlabeled = p(key, value)?,
            "data.n_val_seen" => self.data.n_val_seen = p(key, value)?,
            "data.n_val_unseen" => self.data.n_val_unseen = p(key, value)?,
            "data.min_len" => self.data.min_len = p(key, value)?,
            "data.max_len" => self.data.max_len = p(key, value)?,
            _ => return Err(Error::Parse(format!("unknown key `{key}`"))),
        }
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Parse("lr must be a finite non-negative number".into()));
        }
        if self.batch_size == 0 || self.samples == 0 || self.hidden == 0 || self.embed == 0 {
            return Err(Error::Parse("batch_size, samples, hidden and embed must be positive".into()));
        }
        if self.data.sizes.is_empty() {
            return Err(Error::Parse("data.sizes is empty".into()));
        }
        Ok(())
    }

    /// Parses a config file over the defaults. Blank lines and `#` comments
    /// are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.merge(text)?;
        Ok(c)
    }

    pub fn merge(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            self.set(k.trim(), v.trim()).map_err(|e| Error::Config {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Every setting, in a form `parse` reads back.
    pub fn to_text(&self) -> String {
        let t = &self.terms;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("preset", self.preset.name().into());
        kv("mode", self.mode.name());
        kv("lr", self.lr.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("unlabeled_batch", self.unlabeled_batch.to_string());
        kv("iterations", self.iterations.to_string());
        kv("clip_norm", self.clip_norm.unwrap_or(0.0).to_string());
        kv("hidden", self.hidden.to_string());
        kv("embed", self.embed.to_string());
        kv("attention", self.attention.to_string());
        kv(
            "follower",
            match self.follower {
                FollowerKind::Panoramic => "panoramic",
                FollowerKind::LowLevel => "low-level",
            }
            .into(),
        );
        for (k, v) in [
            ("il", t.il),
            ("rl", t.rl),
            ("speaker_mle", t.speaker_mle),
            ("delta_a", t.delta_a),
            ("delta_x", t.delta_x),
            ("delta_a_unlabeled", t.delta_a_unlabeled),
            ("delta_a_cf", t.delta_a_cf),
            ("delta_x_cf", t.delta_x_cf),
            ("cf_task", t.cf_task),
            ("creator", t.creator),
            ("discriminator", t.discriminator),
        ] {
            kv(&format!("term.{k}"), v.to_string());
        }
        kv("weight.cycle", self.cycle_weight.to_string());
        kv("cycle_start", self.cycle_start.to_string());
        kv("weight.cf_task", self.cf_task_weight.to_string());
        kv("anneal.beta0", self.anneal.beta0.to_string());
        kv("anneal.gamma", self.anneal.gamma.to_string());
        kv("anneal.beta_min", self.anneal.beta_min.to_string());
        kv("discount", self.rl.discount.to_string());
        kv("success_radius", self.rl.success_radius.to_string());
        kv("baseline_momentum", self.baseline_momentum.to_string());
        kv(
            "update",
            match self.update {
                UpdateScheme::Literal => "literal",
                UpdateScheme::BatchMean => "batch-mean",
            }
            .into(),
        );
        match self.creator_mode {
            CreatorMode::Reference => kv("creator", "reference".into()),
            CreatorMode::RandomMask { p } => {
                kv("creator", "mask".into());
                kv("mask_prob", p.to_string());
            }
        }
        kv("samples", self.samples.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("eval_limit", self.eval_limit.to_string());
        kv("bt.speaker_iterations", self.bt_speaker_iterations.to_string());
        let d = &self.data;
        if let Some(seed) = d.seed {
            kv("data.seed", seed.to_string());
        }
        kv("data.train_worlds", d.train_worlds.to_string());
        kv("data.unseen_worlds", d.unseen_worlds.to_string());
        kv(
            "data.sizes",
            d.sizes
                .iter()
                .map(|(w, h)| format!("{w}x{h}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("data.wall_density", d.wall_density.to_string());
        kv("data.n_labeled", d.n_labeled.to_string());
        kv("data.m_unlabeled", d.m_unlabeled.to_string());
        kv("data.n_val_seen", d.n_val_seen.to_string());
        kv("data.n_val_unseen", d.n_val_unseen.to_string());
        kv("data.min_len", d.min_len.to_string());
        kv("data.max_len", d.max_len.to_string());
        s
    }
}

fn parse_sizes(v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(',')
        .map(|part| {
            let (w, h) = part
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Parse(format!("bad size `{part}`, expected WxH")))?;
            let w = w.trim().parse().map_err(|_| Error::Parse(format!("bad width in `{part}`")))?;
            let h = h.trim().parse().map_err(|_| Error::Parse(format!("bad height in `{part}`")))?;
            Ok((w, h))
        })
        .collect()
}
