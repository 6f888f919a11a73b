//! Run configuration: flat key/value text files with dataset-profile
//! presets (`mmasd`, `dream`, `urfd`, plus the synthetic desk-scale
//! profiles `synthetic` and `fall`).
//!
//! A config file is lines of `key = value`; `#` starts a comment. The
//! `profile` key applies its preset first, then the remaining keys override
//! individual fields. Command-line flags override the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::{DiscMode, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Severity,
    FallPrediction,
    Synthetic,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "severity" => Ok(Task::Severity),
            "fall-prediction" => Ok(Task::FallPrediction),
            "synthetic" => Ok(Task::Synthetic),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected severity, fall-prediction or synthetic)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Severity => "severity",
            Task::FallPrediction => "fall-prediction",
            Task::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: String,
    pub task: Task,
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub folds: usize,
    pub subject_disjoint: bool,
    pub parallel_folds: bool,

    // Input/output shape.
    pub input_len: usize,
    pub pred_len: usize,
    pub joints: usize,
    pub dims: usize,
    pub tuple_frames: usize,

    // Model dimensions.
    pub channels: usize,
    pub heads: usize,
    pub blocks: usize,
    pub latent_dim: usize,
    pub decoder_dim: usize,
    pub action_vocab: usize,
    /// 0 means "infer the class count from the manifest's label set".
    pub classes: usize,
    pub hidden: usize,

    // Training.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub validation: bool,

    // Loss weights.
    pub w_ados: f64,
    pub w_phys: f64,
    pub w_nonphys: f64,
    pub w_disc: f64,
    pub disc_mode: DiscMode,
    pub disc_margin: f64,
    pub variant: Variant,

    // Physics.
    pub gravity: f64,
    pub mass: f64,
    pub decoder_contact: bool,
    pub contact_eps: f64,

    // Synthetic data generation.
    pub count: usize,
    pub sigma: f64,
    pub force_amp: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: "synthetic".into(),
            task: Task::Synthetic,
            manifest: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            folds: 10,
            subject_disjoint: false,
            parallel_folds: true,
            input_len: 64,
            pred_len: 16,
            joints: 5,
            dims: 2,
            tuple_frames: 4,
            channels: 32,
            heads: 4,
            blocks: 2,
            latent_dim: 16,
            decoder_dim: 16,
            action_vocab: 1,
            classes: 0,
            hidden: 64,
            batch_size: 8,
            learning_rate: 1e-3,
            epochs: 15,
            validation: false,
            w_ados: 1.0,
            w_phys: 1.0,
            w_nonphys: 1.0,
            w_disc: 1.0,
            disc_mode: DiscMode::Hinge,
            disc_margin: 1.0,
            variant: Variant::Full,
            gravity: 9.8,
            mass: 1.0,
            decoder_contact: true,
            contact_eps: 1e-3,
            count: 200,
            sigma: 1.2,
            force_amp: 4.0,
        }
    }
}

impl RunConfig {
    /// Preset for one of the named profiles.
    pub fn profile(name: &str) -> Result<Self> {
        let base = RunConfig::default();
        let cfg = match name {
            // Dataset profiles at their published settings.
            "mmasd" => RunConfig {
                profile: "mmasd".into(),
                task: Task::Severity,
                input_len: 64,
                pred_len: 16,
                joints: 25,
                dims: 2,
                batch_size: 8,
                learning_rate: 1e-3,
                epochs: 50,
                channels: 64,
                heads: 4,
                blocks: 2,
                latent_dim: 32,
                decoder_dim: 32,
                action_vocab: 11,
                classes: 5,
                ..base
            },
            "dream" => RunConfig {
                profile: "dream".into(),
                task: Task::Severity,
                input_len: 64,
                pred_len: 16,
                joints: 10,
                dims: 3,
                batch_size: 16,
                learning_rate: 1e-3,
                epochs: 250,
                channels: 64,
                heads: 4,
                blocks: 2,
                latent_dim: 32,
                decoder_dim: 32,
                action_vocab: 3,
                classes: 14,
                ..base
            },
            "urfd" => RunConfig {
                profile: "urfd".into(),
                task: Task::FallPrediction,
                input_len: 32,
                pred_len: 32,
                joints: 17,
                dims: 2,
                batch_size: 8,
                learning_rate: 1e-4,
                epochs: 10,
                channels: 64,
                heads: 4,
                blocks: 2,
                latent_dim: 32,
                decoder_dim: 32,
                action_vocab: 1,
                classes: 2,
                ..base
            },
            // Desk-scale synthetic-surrogate profiles.
            "synthetic" => RunConfig {
                classes: 2,
                ..base
            },
            "fall" => RunConfig {
                profile: "fall".into(),
                task: Task::FallPrediction,
                input_len: 32,
                pred_len: 32,
                joints: 5,
                dims: 2,
                batch_size: 8,
                learning_rate: 1e-3,
                epochs: 12,
                classes: 2,
                count: 70,
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown profile `{other}` (expected mmasd, dream, urfd, synthetic or fall)"
                )))
            }
        };
        Ok(cfg)
    }

    /// Parse a flat key/value config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parse config text; relative manifest paths resolve against `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                ))
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        let mut cfg = match pairs.iter().find(|(k, _)| k == "profile") {
            Some((_, name)) => RunConfig::profile(name)?,
            None => RunConfig::default(),
        };
        for (key, value) in &pairs {
            cfg.set(key, value, base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("field `{key}`: bad value `{value}`")))
        }
        match key {
            "profile" => {} // applied up front
            "task" => self.task = Task::parse(value).map_err(|e| Error::Config(e.to_string()))?,
            "manifest" => {
                let p = Path::new(value);
                self.manifest = Some(if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                });
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "folds" => self.folds = num(key, value)?,
            "subject_disjoint" => self.subject_disjoint = num(key, value)?,
            "parallel_folds" => self.parallel_folds = num(key, value)?,
            "input_len" => self.input_len = num(key, value)?,
            "pred_len" => self.pred_len = num(key, value)?,
            "joints" => self.joints = num(key, value)?,
            "dims" => self.dims = num(key, value)?,
            "tuple_frames" => self.tuple_frames = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "blocks" => self.blocks = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "decoder_dim" => self.decoder_dim = num(key, value)?,
            "action_vocab" => self.action_vocab = num(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "validation" => self.validation = num(key, value)?,
            "w_ados" => self.w_ados = num(key, value)?,
            "w_phys" => self.w_phys = num(key, value)?,
            "w_nonphys" => self.w_nonphys = num(key, value)?,
            "w_disc" => self.w_disc = num(key, value)?,
            "disc_mode" => {
                self.disc_mode =
                    DiscMode::parse(value).map_err(|e| Error::Config(e.to_string()))?
            }
            "disc_margin" => self.disc_margin = num(key, value)?,
            "variant" => {
                self.variant = Variant::parse(value).map_err(|e| Error::Config(e.to_string()))?
            }
            "gravity" => self.gravity = num(key, value)?,
            "mass" => self.mass = num(key, value)?,
            "decoder_contact" => self.decoder_contact = num(key, value)?,
            "contact_eps" => self.contact_eps = num(key, value)?,
            "count" => self.count = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "force_amp" => self.force_amp = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.pred_len == 0 {
            return Err(Error::Config(
                "input_len and pred_len must be positive".into(),
            ));
        }
        if self.tuple_frames == 0 || self.input_len % self.tuple_frames != 0 {
            return Err(Error::Config(format!(
                "tuple_frames {} must divide input_len {}",
                self.tuple_frames, self.input_len
            )));
        }
        if !(2..=3).contains(&self.dims) {
            return Err(Error::Config(format!("dims must be 2 or 3, got {}", self.dims)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.mass <= 0.0 {
            return Err(Error::Config(format!("mass must be positive, got {}", self.mass)));
        }
        if self.sigma < 0.0 {
            return Err(Error::Config(format!(
                "sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Canonical flat text: every field, sorted by key. Embedded in
    /// checkpoints so a saved model can be rebuilt without the original
    /// config file.
    pub fn to_canonical_text(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("action_vocab", self.action_vocab.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("blocks", self.blocks.to_string()),
            ("channels", self.channels.to_string()),
            ("classes", self.classes.to_string()),
            ("contact_eps", format!("{:e}", self.contact_eps)),
            ("count", self.count.to_string()),
            ("decoder_contact", self.decoder_contact.to_string()),
            ("decoder_dim", self.decoder_dim.to_string()),
            ("dims", self.dims.to_string()),
            ("disc_margin", format!("{:e}", self.disc_margin)),
            ("disc_mode", self.disc_mode.as_str().to_string()),
            ("epochs", self.epochs.to_string()),
            ("folds", self.folds.to_string()),
            ("force_amp", format!("{:e}", self.force_amp)),
            ("gravity", format!("{:e}", self.gravity)),
            ("heads", self.heads.to_string()),
            ("hidden", self.hidden.to_string()),
            ("input_len", self.input_len.to_string()),
            ("joints", self.joints.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("learning_rate", format!("{:e}", self.learning_rate)),
            ("mass", format!("{:e}", self.mass)),
            ("parallel_folds", self.parallel_folds.to_string()),
            ("pred_len", self.pred_len.to_string()),
            ("profile", self.profile.clone()),
            ("seed", self.seed.to_string()),
            ("sigma", format!("{:e}", self.sigma)),
            ("subject_disjoint", self.subject_disjoint.to_string()),
            ("task", self.task.as_str().to_string()),
            ("tuple_frames", self.tuple_frames.to_string()),
            ("validation", self.validation.to_string()),
            ("variant", self.variant.as_str().to_string()),
            ("w_ados", format!("{:e}", self.w_ados)),
            ("w_disc", format!("{:e}", self.w_disc)),
            ("w_nonphys", format!("{:e}", self.w_nonphys)),
            ("w_phys", format!("{:e}", self.w_phys)),
        ];
        if let Some(m) = &self.manifest {
            pairs.push(("manifest", m.display().to_string()));
        }
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Tuples per sequence under this config.
    pub fn tuples(&self) -> usize {
        self.input_len / self.tuple_frames
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_profiles_have_expected_settings() {
        let m = RunConfig::profile("mmasd").unwrap();
        assert_eq!(
            (m.input_len, m.pred_len, m.joints, m.batch_size, m.epochs),
            (64, 16, 25, 8, 50)
        );
        assert_eq!(m.learning_rate, 1e-3);
        let d = RunConfig::profile("dream").unwrap();
        assert_eq!(
            (d.input_len, d.pred_len, d.joints, d.batch_size, d.epochs),
            (64, 16, 10, 16, 250)
        );
        let u = RunConfig::profile("urfd").unwrap();
        assert_eq!((u.input_len, u.pred_len, u.joints, u.epochs), (32, 32, 17, 10));
        assert_eq!(u.learning_rate, 1e-4);
        assert!(RunConfig::profile("imagenet").is_err());
    }

    #[test]
    fn file_overrides_profile_defaults() {
        let cfg = RunConfig::from_text(
            "profile = mmasd\nseed = 9\nepochs = 3\n# comment\nchannels = 32\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.profile, "mmasd");
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.channels, 32);
        assert_eq!(cfg.joints, 25);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(RunConfig::from_text("nonsense = 1\n", Path::new(".")).is_err());
        assert!(RunConfig::from_text("epochs = banana\n", Path::new(".")).is_err());
        assert!(RunConfig::from_text("epochs\n", Path::new(".")).is_err());
    }

    #[test]
    fn invalid_combinations_rejected() {
        assert!(
            RunConfig::from_text("tuple_frames = 5\ninput_len = 64\n", Path::new(".")).is_err()
        );
        assert!(RunConfig::from_text("dims = 4\n", Path::new(".")).is_err());
        assert!(RunConfig::from_text("mass = 0\n", Path::new(".")).is_err());
    }

    #[test]
    fn canonical_text_is_stable_and_reparsable() {
        let cfg = RunConfig::profile("urfd").unwrap();
        let text = cfg.to_canonical_text();
        assert_eq!(text, cfg.to_canonical_text());
        let back = RunConfig::from_text(&text, Path::new(".")).unwrap();
        assert_eq!(back.to_canonical_text(), text);
    }
}
