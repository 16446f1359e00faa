//! Training hyperparameters and their `key = value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::TrainError;

/// Keys accepted (and required) in a training config file.
pub const CONFIG_KEYS: [&str; 11] = [
    "lambda_gp",
    "n_critic",
    "n_generator",
    "alpha",
    "beta1",
    "beta2",
    "batch_size",
    "epochs",
    "seed",
    "window_T",
    "classes",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_gp: f64,
    pub n_critic: usize,
    pub n_generator: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub window_t: usize,
    pub classes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            n_critic: 6,
            n_generator: 2,
            alpha: 0.005,
            beta1: 0.0,
            beta2: 0.9,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            window_t: 25,
            classes: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.n_critic == 0 || self.n_generator == 0 || self.batch_size == 0 || self.window_t < 2 {
            return bad("n_critic, n_generator and batch_size must be >= 1, window_T >= 2".into());
        }
        if !(self.lambda_gp >= 0.0) || !(self.alpha > 0.0) {
            return bad(format!("lambda_gp {} must be >= 0 and alpha {} > 0", self.lambda_gp, self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("beta1 {} and beta2 {} must lie in [0, 1)", self.beta1, self.beta2));
        }
        if self.classes != 4 {
            return bad(format!("classes = {} but the action set has 4 labels", self.classes));
        }
        Ok(())
    }

    /// Parses the text form. Every key must be present exactly once; `#`
    /// starts a comment.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if !CONFIG_KEYS.contains(&k) {
                return Err(TrainError::Config(format!("line {}: unknown key `{k}`", n + 1)));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(TrainError::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, TrainError> {
            let v = map.get(key).ok_or_else(|| TrainError::MissingKey(key.to_string()))?;
            v.parse()
                .map_err(|_| TrainError::Config(format!("key `{key}`: cannot parse `{v}`")))
        }
        let cfg = Self {
            lambda_gp: get(&map, "lambda_gp")?,
            n_critic: get(&map, "n_critic")?,
            n_generator: get(&map, "n_generator")?,
            alpha: get(&map, "alpha")?,
            beta1: get(&map, "beta1")?,
            beta2: get(&map, "beta2")?,
            batch_size: get(&map, "batch_size")?,
            epochs: get(&map, "epochs")?,
            seed: get(&map, "seed")?,
            window_t: get(&map, "window_T")?,
            classes: get(&map, "classes")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lambda_gp = {:?}", self.lambda_gp);
        let _ = writeln!(s, "n_critic = {}", self.n_critic);
        let _ = writeln!(s, "n_generator = {}", self.n_generator);
        let _ = writeln!(s, "alpha = {:?}", self.alpha);
        let _ = writeln!(s, "beta1 = {:?}", self.beta1);
        let _ = writeln!(s, "beta2 = {:?}", self.beta2);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "window_T = {}", self.window_t);
        let _ = writeln!(s, "classes = {}", self.classes);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_schedule() {
        let c = TrainConfig::default();
        assert_eq!((c.lambda_gp, c.n_critic, c.n_generator), (10.0, 6, 2));
        assert_eq!((c.alpha, c.beta1, c.beta2), (0.005, 0.0, 0.9));
    }

    #[test]
    fn text_round_trip() {
        let c = TrainConfig {
            alpha: 1.0 / 3.0,
            seed: 99,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn missing_key_is_named() {
        let text = TrainConfig::default().to_text().replace("n_critic = 6\n", "");
        match TrainConfig::parse(&text) {
            Err(TrainError::MissingKey(k)) => assert_eq!(k, "n_critic"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let base = TrainConfig::default().to_text();
        assert!(TrainConfig::parse(&format!("{base}gamma = 1\n")).is_err());
        assert!(TrainConfig::parse(&base.replace("beta2 = 0.9", "beta2 = 1.0")).is_err());
        assert!(TrainConfig::parse(&base.replace("classes = 4", "classes = 5")).is_err());
    }
}
