use std::path::PathBuf;

use unfoldsr::models::{ModelConfig, ModelKind, Precision, TrainConfig};
use unfoldsr::{Error, Result};

/// Flat `key = value` training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub crop: usize,
    pub crops_per_scene: usize,
    /// Trailing scenes (in name order) kept out of training for validation.
    pub val_scenes: usize,
    pub val_crops: usize,
    pub init_seed: u64,
}

pub const KEYS: &[&str] = &[
    "model",
    "feat_filters",
    "feat_kernel",
    "code_dim",
    "patch_dim",
    "agg_kernel",
    "stages",
    "scale",
    "precision",
    "epochs",
    "batch",
    "lr",
    "seed",
    "init_seed",
    "dataset_root",
    "output_dir",
    "crop",
    "crops_per_scene",
    "val_scenes",
    "val_crops",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kind = ModelKind::DmscPlus;
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        let mut dataset_root = None;
        let mut output_dir = None;
        let (mut crop, mut crops_per_scene, mut val_scenes, mut val_crops) = (60, 16, 0, 8);
        let mut init_seed = None;
        let mut seen = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", no + 1)));
            };
            let (key, v) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key `{key}` on line {}", no + 1)));
            }
            if seen.contains(&key) {
                return Err(Error::Config(format!("duplicate key `{key}` on line {}", no + 1)));
            }
            seen.push(key);
            match key {
                "model" => kind = v.parse().map_err(|_| Error::Config(format!("`model`: expected dmsc or dmsc+, got `{v}`")))?,
                "feat_filters" => model.feat_filters = parse_num(key, v)?,
                "feat_kernel" => model.feat_kernel = parse_num(key, v)?,
                "code_dim" => model.code_dim = parse_num(key, v)?,
                "patch_dim" => model.patch_dim = parse_num(key, v)?,
                "agg_kernel" => model.agg_kernel = parse_num(key, v)?,
                "stages" => model.stages = parse_num(key, v)?,
                "scale" => model.scale = parse_num(key, v)?,
                "precision" => model.precision = v.parse::<Precision>()?,
                "epochs" => train.epochs = parse_num(key, v)?,
                "batch" => train.batch = parse_num(key, v)?,
                "lr" => train.lr = parse_num(key, v)?,
                "seed" => train.seed = parse_num(key, v)?,
                "init_seed" => init_seed = Some(parse_num(key, v)?),
                "dataset_root" => dataset_root = Some(PathBuf::from(v)),
                "output_dir" => output_dir = Some(PathBuf::from(v)),
                "crop" => crop = parse_num(key, v)?,
                "crops_per_scene" => crops_per_scene = parse_num(key, v)?,
                "val_scenes" => val_scenes = parse_num(key, v)?,
                "val_crops" => val_crops = parse_num(key, v)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        let missing = |k: &str| Error::Config(format!("missing required key `{k}`"));
        let cfg = Self {
            kind,
            model,
            train,
            dataset_root: dataset_root.ok_or_else(|| missing("dataset_root"))?,
            output_dir: output_dir.ok_or_else(|| missing("output_dir"))?,
            crop,
            crops_per_scene,
            val_scenes,
            val_crops,
            init_seed: init_seed.unwrap_or(train.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::InvalidParameter(m) => Error::Config(m),
            other => other,
        };
        self.model.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        if self.crop == 0 || self.crops_per_scene == 0 {
            return Err(Error::Config("`crop` and `crops_per_scene` must be positive".into()));
        }
        if self.val_scenes > 0 && self.val_crops == 0 {
            return Err(Error::Config("`val_crops` must be positive when `val_scenes` is set".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "dataset_root = data\noutput_dir = out\n";

    #[test]
    fn defaults_and_comments() {
        let c = RunConfig::parse(&format!("# smoke\n{BASE}epochs = 20 # short\n\nmodel = dmsc\n")).unwrap();
        assert_eq!(c.train.epochs, 20);
        assert_eq!(c.kind, ModelKind::Dmsc);
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.init_seed, c.train.seed);
        assert_eq!(c.dataset_root, PathBuf::from("data"));
    }

    #[test]
    fn every_key_is_accepted() {
        let values = [
            ("model", "dmsc+"),
            ("feat_filters", "8"),
            ("feat_kernel", "3"),
            ("code_dim", "12"),
            ("patch_dim", "3"),
            ("agg_kernel", "3"),
            ("stages", "2"),
            ("scale", "4"),
            ("precision", "single"),
            ("epochs", "2"),
            ("batch", "1"),
            ("lr", "0.001"),
            ("seed", "5"),
            ("init_seed", "6"),
            ("dataset_root", "d"),
            ("output_dir", "o"),
            ("crop", "32"),
            ("crops_per_scene", "2"),
            ("val_scenes", "1"),
            ("val_crops", "3"),
        ];
        assert_eq!(values.len(), KEYS.len());
        let text: String = values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let c = RunConfig::parse(&text).unwrap();
        assert_eq!(c.model.scale, 4);
        assert_eq!(c.model.precision, Precision::Single);
        assert_eq!((c.train.seed, c.init_seed), (5, 6));
        assert_eq!((c.crop, c.crops_per_scene, c.val_scenes, c.val_crops), (32, 2, 1, 3));
    }

    #[test]
    fn rejects_bad_input() {
        let err = |t: &str| RunConfig::parse(t).unwrap_err().to_string();
        assert!(err(&format!("{BASE}colour = red\n")).contains("`colour`"));
        assert!(err(&format!("{BASE}epochs = 1\nepochs = 2\n")).contains("duplicate"));
        assert!(err(&format!("{BASE}epochs = many\n")).contains("`epochs`"));
        assert!(err(&format!("{BASE}stages\n")).contains("line 3"));
        assert!(err("output_dir = o\n").contains("dataset_root"));
        assert!(err(&format!("{BASE}scale = 3\n")).contains("scale"));
        assert!(err(&format!("{BASE}lr = -1\n")).contains("lr"));
        assert!(matches!(RunConfig::parse(&format!("{BASE}batch = 0\n")), Err(Error::Config(_))));
    }
}
