//! Run configuration: `key=value` files, the `RAISE_SEED` variable and
//! command-line overrides, applied in that order.
//!
//! Keys accept `-` and `_` interchangeably. Lines starting with `#` and
//! blank lines are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use raise_core::data::SynthConfig;
use raise_core::eval::ApDenominator;
use raise_core::idm::{Aggregation, CoAttention};
use raise_core::model::{Ablation, RaiseConfig};
use raise_core::pipeline::ProtocolConfig;
use raise_core::{RaiseError, Result};

pub const SEED_ENV: &str = "RAISE_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub raise: RaiseConfig,
    pub protocol: ProtocolConfig,
    pub synth: SynthConfig,
    pub workdir: PathBuf,
    pub interactions: Option<PathBuf>,
    pub reviews: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Seed of the word hashing in `embed-reviews`.
    pub embed_seed: u64,
    /// Head count for `profile`.
    pub heads: usize,
    /// Timed repetitions per mechanism in `profile`.
    pub bench_reps: usize,
    pub user: Option<u64>,
    pub item: Option<u64>,
    pub top_m: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            raise: RaiseConfig::default(),
            protocol: ProtocolConfig::default(),
            synth: SynthConfig::default(),
            workdir: PathBuf::from("."),
            interactions: None,
            reviews: None,
            embeddings: None,
            embed_seed: 7,
            heads: 4,
            bench_reps: 50,
            user: None,
            item: None,
            top_m: 5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| RaiseError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(RaiseError::Config(format!("{key}: expected true or false, got {other:?}"))),
    }
}

fn parse_choice<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>, choices: &str) -> Result<T> {
    f(value.trim()).ok_or_else(|| RaiseError::Config(format!("{key}: {value:?} is not one of {choices}")))
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl RunConfig {
    /// Sets one key. Keys that take no value on the command line
    /// (`--exclude-train`) receive `"true"`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize(key);
        let k = key.as_str();
        let r = &mut self.raise;
        let p = &mut self.protocol;
        let s = &mut self.synth;
        match k {
            "d" => r.d = parse(k, value)?,
            "n" => r.n = parse(k, value)?,
            "t" => r.t = parse(k, value)?,
            "b" => r.b = parse(k, value)?,
            "l" => {
                r.l_u = parse(k, value)?;
                r.l_i = r.l_u;
            }
            "l_u" => r.l_u = parse(k, value)?,
            "l_i" => r.l_i = parse(k, value)?,
            "lr" => r.lr = parse(k, value)?,
            "batch_size" => r.batch_size = parse(k, value)?,
            "dropout" => r.dropout = parse(k, value)?,
            "epochs" => r.epochs = parse(k, value)?,
            "seed" => r.seed = parse(k, value)?,
            "co_attention" => r.co_attention = parse_choice(k, value, CoAttention::parse, "bilinear, soft, mlp")?,
            "aggregation" => r.aggregation = parse_choice(k, value, Aggregation::parse, "sum, mean")?,
            "ablation" => r.ablation = parse_choice(k, value, Ablation::parse, "full, no_idm, no_dte, no_both, no_user_reviews, no_item_reviews")?,
            "shared_experts" => r.shared_experts = parse_bool(k, value)?,
            "mlp_depth" => r.mlp_depth = parse(k, value)?,
            "finetune_base" => r.finetune_base = parse_bool(k, value)?,

            "gmf_epochs" => p.gmf.epochs = parse(k, value)?,
            "gmf_lr" => p.gmf.lr = parse(k, value)?,
            "neg_per_pos" => p.gmf.neg_per_pos = parse(k, value)?,
            "min_interactions" => p.min_interactions = parse(k, value)?,
            "base_holdout" => p.base_holdout = parse(k, value)?,
            "exclude_train" => p.exclude_train = parse_bool(k, value)?,
            "ap_denominator" => p.ap_denominator = parse_choice(k, value, ApDenominator::parse, "relevant, hits")?,
            "ks" => {
                p.ks = value
                    .split(',')
                    .map(|v| parse(k, v))
                    .collect::<Result<Vec<usize>>>()?;
            }

            "users" => s.n_users = parse(k, value)?,
            "items" => s.n_items = parse(k, value)?,
            "intents" => s.n_intents = parse(k, value)?,
            "reviews_per_entity" => s.reviews_per_entity = parse(k, value)?,
            "interactions_per_user" => s.interactions_per_user = parse(k, value)?,
            "words_per_review" => s.words_per_review = parse(k, value)?,
            "intent_words" => s.intent_words = parse(k, value)?,
            "common_words" => s.common_words = parse(k, value)?,
            "intent_word_share" => s.intent_word_share = parse(k, value)?,
            "dirichlet_alpha" => s.dirichlet_alpha = parse(k, value)?,
            "affinity_floor" => s.affinity_floor = parse(k, value)?,
            "synth_seed" => s.seed = parse(k, value)?,

            "workdir" => self.workdir = PathBuf::from(value.trim()),
            "interactions" => self.interactions = Some(PathBuf::from(value.trim())),
            "reviews" => self.reviews = Some(PathBuf::from(value.trim())),
            "embeddings" => self.embeddings = Some(PathBuf::from(value.trim())),
            "embed_seed" => self.embed_seed = parse(k, value)?,
            "heads" => self.heads = parse(k, value)?,
            "bench_reps" => self.bench_reps = parse(k, value)?,
            "user" => self.user = Some(parse_entity(k, value)?),
            "item" => self.item = Some(parse_entity(k, value)?),
            "top_m" => self.top_m = parse(k, value)?,
            _ => return Err(RaiseError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_file_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| RaiseError::Parse {
                path: source.to_string(),
                line: n + 1,
                msg: "expected key=value".into(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// `--key value`, `--key=value` or a bare `--key` for booleans.
    pub fn apply_flags(&mut self, args: &[String]) -> Result<()> {
        let mut i = 0;
        while i < args.len() {
            let Some(flag) = args[i].strip_prefix("--") else {
                return Err(RaiseError::Config(format!("unexpected argument {:?}", args[i])));
            };
            if let Some((k, v)) = flag.split_once('=') {
                self.set(k, v)?;
                i += 1;
            } else if args.get(i + 1).is_some_and(|v| !v.starts_with("--")) {
                self.set(flag, &args[i + 1])?;
                i += 2;
            } else {
                self.set(flag, "true")?;
                i += 1;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.raise.validate()?;
        if self.protocol.ks.is_empty() || self.protocol.ks.contains(&0) {
            return Err(RaiseError::Config("ks must list positive cut-offs".into()));
        }
        if !(self.protocol.gmf.lr.is_finite() && self.protocol.gmf.lr >= 0.0) {
            return Err(RaiseError::Config(format!("gmf_lr={} must be finite and non-negative", self.protocol.gmf.lr)));
        }
        if !(0.0..=1.0).contains(&self.synth.intent_word_share) {
            return Err(RaiseError::Config(format!("intent_word_share={} not in [0,1]", self.synth.intent_word_share)));
        }
        if !(self.synth.dirichlet_alpha > 0.0) {
            return Err(RaiseError::Config(format!("dirichlet_alpha={} must be positive", self.synth.dirichlet_alpha)));
        }
        if !(self.synth.affinity_floor >= 0.0) {
            return Err(RaiseError::Config(format!("affinity_floor={} must be non-negative", self.synth.affinity_floor)));
        }
        if self.heads == 0 || self.bench_reps == 0 || self.top_m == 0 {
            return Err(RaiseError::Config("heads, bench_reps and top_m must be at least 1".into()));
        }
        Ok(())
    }

    /// Defaults, then `file`, then `seed_env`, then `flags`.
    pub fn load(file: Option<&Path>, seed_env: Option<&str>, flags: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| RaiseError::Config(format!("cannot read {}: {e}", path.display())))?;
            cfg.apply_file_text(&text, &path.display().to_string())?;
        }
        if let Some(seed) = seed_env {
            cfg.raise.seed = parse(SEED_ENV, seed)?;
        }
        cfg.apply_flags(flags)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }
}

fn parse_entity(key: &str, value: &str) -> Result<u64> {
    raise_core::data::parse_id(value.trim()).ok_or_else(|| RaiseError::Config(format!("{key}: bad identifier {value:?}")))
}
