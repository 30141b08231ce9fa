//! Training configuration and its canonical text form.
//!
//! The canonical form is one `key=value` per line in a fixed order; parsing
//! it yields an equal [`TrainConfig`], and printing that again yields the
//! same text.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use mlpform_core::{LayerKind, LossFunction, OptimizerKind, Scheduler, WeightInit};

use crate::error::CliError;

/// An IDX image/label pair, given either as a prefix `P` (meaning
/// `P-images-idx3-ubyte` and `P-labels-idx1-ubyte`) or as `images,labels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Prefix(String),
    Files { images: PathBuf, labels: PathBuf },
}

impl DataSource {
    pub fn images(&self) -> PathBuf {
        match self {
            DataSource::Prefix(p) => PathBuf::from(format!("{p}-images-idx3-ubyte")),
            DataSource::Files { images, .. } => images.clone(),
        }
    }

    pub fn labels(&self) -> PathBuf {
        match self {
            DataSource::Prefix(p) => PathBuf::from(format!("{p}-labels-idx1-ubyte")),
            DataSource::Files { labels, .. } => labels.clone(),
        }
    }
}

impl FromStr for DataSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        if s.is_empty() {
            return Err(CliError::Usage("empty dataset path".into()));
        }
        match s.split_once(',') {
            None => Ok(DataSource::Prefix(s.to_string())),
            Some((i, l)) if !i.trim().is_empty() && !l.trim().is_empty() && !l.contains(',') => {
                Ok(DataSource::Files { images: i.trim().into(), labels: l.trim().into() })
            }
            Some(_) => Err(CliError::Usage(format!("dataset '{s}' should be PREFIX or IMAGES,LABELS"))),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Prefix(p) => f.write_str(p),
            DataSource::Files { images, labels } => {
                write!(f, "{},{}", images.display(), labels.display())
            }
        }
    }
}

/// Optimizer per layer: `Momentum(0.9)` for every layer, or
/// `0:Momentum(0.9);*:GradientDescent` to override single layers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    /// Sorted by layer index, no duplicates.
    pub overrides: Vec<(usize, OptimizerKind)>,
    pub default: OptimizerKind,
}

impl OptimizerSpec {
    pub fn uniform(kind: OptimizerKind) -> Self {
        OptimizerSpec { overrides: Vec::new(), default: kind }
    }

    pub fn for_layer(&self, index: usize) -> OptimizerKind {
        self.overrides.iter().find(|(i, _)| *i == index).map_or(self.default, |(_, k)| *k)
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::uniform(OptimizerKind::GradientDescent)
    }
}

impl FromStr for OptimizerSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let mut overrides: Vec<(usize, OptimizerKind)> = Vec::new();
        let mut default = None;
        for item in s.split(';').map(str::trim).filter(|i| !i.is_empty()) {
            let (selector, kind) = match item.split_once(':') {
                Some((sel, kind)) => (Some(sel.trim()), kind),
                None => (None, item),
            };
            let kind: OptimizerKind = kind.parse()?;
            match selector {
                None | Some("*") => {
                    if default.replace(kind).is_some() {
                        return Err(CliError::Usage(format!("'{s}' sets the default optimizer twice")));
                    }
                }
                Some(sel) => {
                    let index: usize = sel.parse().map_err(|_| {
                        CliError::Usage(format!(
                            "optimizer selector '{sel}' is neither '*' nor a layer index"
                        ))
                    })?;
                    if overrides.iter().any(|(i, _)| *i == index) {
                        return Err(CliError::Usage(format!("layer {index} has two optimizers in '{s}'")));
                    }
                    overrides.push((index, kind));
                }
            }
        }
        if default.is_none() && overrides.is_empty() {
            return Err(CliError::Usage("empty optimizer spec".into()));
        }
        overrides.sort_by_key(|(i, _)| *i);
        Ok(OptimizerSpec { overrides, default: default.unwrap_or(OptimizerKind::GradientDescent) })
    }
}

impl fmt::Display for OptimizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, kind) in &self.overrides {
            write!(f, "{i}:{kind};")?;
        }
        if self.overrides.is_empty() {
            write!(f, "{}", self.default)
        } else {
            write!(f, "*:{}", self.default)
        }
    }
}

/// Everything a `train` run depends on. The seed drives initialization,
/// dropout masks and shuffling, so equal configs give equal runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub layers: Vec<LayerKind>,
    pub loss: LossFunction,
    pub init: WeightInit,
    pub optimizers: OptimizerSpec,
    pub lr: Scheduler,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// When false the `seconds` column is written as 0 so reruns are byte-identical.
    pub timing: bool,
    pub train: DataSource,
    pub test: Option<DataSource>,
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainConfig {
    /// Defaults for everything except the architecture and the training data.
    pub fn new(layers: Vec<LayerKind>, train: DataSource) -> Self {
        TrainConfig {
            layers,
            loss: LossFunction::SoftmaxCrossEntropy,
            init: WeightInit::Xavier,
            optimizers: OptimizerSpec::default(),
            lr: Scheduler::Constant { eta0: 0.01 },
            epochs: 1,
            batch_size: 100,
            seed: 0,
            shuffle: true,
            timing: true,
            train,
            test: None,
            metrics: None,
            checkpoint: None,
        }
    }

    /// Checks everything that does not need the data on disk.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.layers.is_empty() {
            return Err(CliError::Usage("the network needs at least one layer".into()));
        }
        if self.batch_size == 0 {
            return Err(CliError::Usage("batch size must be positive".into()));
        }
        for kind in &self.layers {
            kind.validate()?;
        }
        if let Some((i, _)) = self.optimizers.overrides.iter().find(|(i, _)| *i >= self.layers.len()) {
            return Err(CliError::Usage(format!(
                "optimizer override for layer {i}, but the network has {} layers",
                self.layers.len()
            )));
        }
        self.lr.validate()?;
        Ok(())
    }
}

const KEYS: [&str; 14] = [
    "layers",
    "loss",
    "init",
    "optimizers",
    "lr",
    "epochs",
    "batch_size",
    "seed",
    "shuffle",
    "timing",
    "train",
    "test",
    "metrics",
    "checkpoint",
];

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layers={}", LayerKind::format_list(&self.layers))?;
        writeln!(f, "loss={}", self.loss)?;
        writeln!(f, "init={}", self.init)?;
        writeln!(f, "optimizers={}", self.optimizers)?;
        writeln!(f, "lr={}", self.lr)?;
        writeln!(f, "epochs={}", self.epochs)?;
        writeln!(f, "batch_size={}", self.batch_size)?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "shuffle={}", self.shuffle)?;
        writeln!(f, "timing={}", self.timing)?;
        writeln!(f, "train={}", self.train)?;
        if let Some(test) = &self.test {
            writeln!(f, "test={test}")?;
        }
        if let Some(path) = &self.metrics {
            writeln!(f, "metrics={}", path.display())?;
        }
        if let Some(path) = &self.checkpoint {
            writeln!(f, "checkpoint={}", path.display())?;
        }
        Ok(())
    }
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Usage(format!("{key}: '{value}' is not a valid number")))
}

fn flag(key: &str, value: &str) -> Result<bool, CliError> {
    value.parse().map_err(|_| CliError::Usage(format!("{key}: expected true or false, got '{value}'")))
}

impl FromStr for TrainConfig {
    type Err = CliError;

    /// Parses `key=value` lines. Blank lines and `#` comments are skipped;
    /// `layers` and `train` are required, the rest fall back to
    /// [`TrainConfig::new`] defaults.
    fn from_str(s: &str) -> Result<Self, CliError> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for (n, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key=value", n + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::Usage(format!("line {}: unknown key '{key}'", n + 1)));
            }
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(CliError::Usage(format!("line {}: duplicate key '{key}'", n + 1)));
            }
            pairs.push((key, value.trim()));
        }
        let get = |key: &str| pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let required = |key: &str| get(key).ok_or_else(|| CliError::Usage(format!("missing '{key}'")));

        let mut config =
            TrainConfig::new(LayerKind::parse_list(required("layers")?)?, required("train")?.parse()?);
        for (key, value) in &pairs {
            match *key {
                "loss" => config.loss = value.parse()?,
                "init" => config.init = value.parse()?,
                "optimizers" => config.optimizers = value.parse()?,
                "lr" => config.lr = value.parse()?,
                "epochs" => config.epochs = number(key, value)?,
                "batch_size" => config.batch_size = number(key, value)?,
                "seed" => config.seed = number(key, value)?,
                "shuffle" => config.shuffle = flag(key, value)?,
                "timing" => config.timing = flag(key, value)?,
                "test" => config.test = Some(value.parse()?),
                "metrics" => config.metrics = Some(PathBuf::from(value)),
                "checkpoint" => config.checkpoint = Some(PathBuf::from(value)),
                _ => {}
            }
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mnist() -> TrainConfig {
        let mut c = TrainConfig::new(
            LayerKind::parse_list("ReLU(1024);ReLU(512);Linear(10)").unwrap(),
            "mnist-train".parse().unwrap(),
        );
        c.optimizers = "Momentum(0.9)".parse().unwrap();
        c.seed = 1;
        c.test = Some("mnist-test".parse().unwrap());
        c
    }

    #[test]
    fn canonical_text_round_trips() {
        let config = mnist();
        let text = config.to_string();
        assert!(text.starts_with("layers=ReLU(1024);ReLU(512);Linear(10)\nloss=SCE\n"), "{text}");
        let back: TrainConfig = text.parse().unwrap();
        assert_eq!(back, config);
        assert_eq!(back.to_string(), text);
    }

    #[test]
    fn partial_text_uses_defaults() {
        let c: TrainConfig =
            "# demo\nlayers = ReLU(4) ; Linear(2)\n\ntrain=a.idx,b.idx\nseed=9\n".parse().unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.batch_size, 100);
        assert_eq!(c.train.images(), PathBuf::from("a.idx"));
        assert!("train=x".parse::<TrainConfig>().is_err());
        assert!("layers=Linear(2)\ntrain=x\ncolour=red".parse::<TrainConfig>().is_err());
        assert!("layers=Linear(2)\ntrain=x\nseed=1\nseed=2".parse::<TrainConfig>().is_err());
        assert!("layers=Linear(2)\ntrain=x\nepochs=-1".parse::<TrainConfig>().is_err());
    }

    #[test]
    fn data_source_forms() {
        let p: DataSource = "data/mnist/train".parse().unwrap();
        assert_eq!(p.images(), PathBuf::from("data/mnist/train-images-idx3-ubyte"));
        assert_eq!(p.labels(), PathBuf::from("data/mnist/train-labels-idx1-ubyte"));
        let f: DataSource = "x.img, y.lab".parse().unwrap();
        assert_eq!(f.labels(), PathBuf::from("y.lab"));
        assert_eq!(f.to_string(), "x.img,y.lab");
        assert!("a,b,c".parse::<DataSource>().is_err());
        assert!(",b".parse::<DataSource>().is_err());
    }

    #[test]
    fn optimizer_overrides() {
        let spec: OptimizerSpec = "*:GradientDescent; 2:Nesterov(0.5);0:Momentum(0.9)".parse().unwrap();
        assert_eq!(spec.for_layer(0), OptimizerKind::Momentum { mu: 0.9 });
        assert_eq!(spec.for_layer(1), OptimizerKind::GradientDescent);
        assert_eq!(spec.for_layer(2), OptimizerKind::Nesterov { mu: 0.5 });
        assert_eq!(spec.to_string(), "0:Momentum(0.9);2:Nesterov(0.5);*:GradientDescent");
        assert_eq!("Momentum(0.9)".parse::<OptimizerSpec>().unwrap().to_string(), "Momentum(0.9)");
        assert_eq!(
            "1:Momentum(0.5)".parse::<OptimizerSpec>().unwrap().for_layer(0),
            OptimizerKind::GradientDescent
        );
        for bad in [
            "",
            "x:Momentum(0.9)",
            "0:Momentum(0.9);0:GradientDescent",
            "Momentum(0.9);*:GradientDescent",
            "Adam",
        ] {
            assert!(bad.parse::<OptimizerSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn validation() {
        let mut c = mnist();
        assert!(c.validate().is_ok());
        c.optimizers = "3:Momentum(0.9);*:GradientDescent".parse().unwrap();
        assert!(c.validate().is_err());
        let mut c = mnist();
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    fn arb_kind() -> impl Strategy<Value = LayerKind> {
        prop_oneof![
            (1usize..50).prop_map(|k| format!("Linear({k})")),
            (1usize..50).prop_map(|k| format!("ReLU({k})")),
            (1usize..50, 0.01f64..0.5).prop_map(|(k, a)| format!("LeakyReLU({k},{a})")),
            (1usize..50).prop_map(|k| format!("Softmax({k})")),
            (1e-8f64..1e-2).prop_map(|e| format!("BatchNorm({e})")),
            (1usize..50, 0.0f64..0.9).prop_map(|(k, p)| format!("LinearDropout({k},{p})")),
            (1usize..50, 0.01f64..1.0).prop_map(|(k, d)| format!("SparseReLU({k},{d})")),
        ]
        .prop_map(|s| s.parse().unwrap())
    }

    proptest! {
        #[test]
        fn any_config_round_trips(
            layers in prop::collection::vec(arb_kind(), 1..5),
            loss in prop::sample::select(LossFunction::ALL.to_vec()),
            eta in 1e-5f64..1.0,
            mu in 0.01f64..0.99,
            epochs in 0usize..100,
            batch in 1usize..1000,
            seed in any::<u64>(),
            shuffle in any::<bool>(),
            timing in any::<bool>(),
            test in any::<bool>(),
        ) {
            let mut c = TrainConfig::new(layers, "train".parse().unwrap());
            c.loss = loss;
            c.lr = Scheduler::Constant { eta0: eta };
            c.optimizers = OptimizerSpec { overrides: vec![(0, OptimizerKind::Nesterov { mu })], default: OptimizerKind::Momentum { mu } };
            c.epochs = epochs;
            c.batch_size = batch;
            c.seed = seed;
            c.shuffle = shuffle;
            c.timing = timing;
            c.test = test.then(|| "a,b".parse().unwrap());
            let text = c.to_string();
            let back: TrainConfig = text.parse().unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_string(), text);
        }
    }
}
