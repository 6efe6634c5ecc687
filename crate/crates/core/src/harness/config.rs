//! Flat `key = value` configuration with `#` comments.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const SEED_ENV: &str = "ILIC_SEED";

/// Fractions of the budget after which the learning rate drops tenfold.
const LR_DROP_1: Fraction = Fraction { num: 2, den: 3 };
const LR_DROP_2: Fraction = Fraction { num: 11, den: 12 };

/// A fraction of the step budget, compared exactly in integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub const ONE: Fraction = Fraction { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::Config(format!("fraction {num}/{den} must lie in [0, 1]")));
        }
        Ok(Self { num, den })
    }

    /// Whether `step` of `total` lies before this fraction of the budget.
    pub fn after(&self, step: u64, total: u64) -> bool {
        (step as u128) * (self.den as u128) < (self.num as u128) * (total as u128)
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot read `{s}` as a fraction"));
        if let Some((a, b)) = s.split_once('/') {
            return Fraction::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        }
        match s.split_once('.') {
            Some((int, frac)) if frac.len() <= 9 && frac.bytes().all(|c| c.is_ascii_digit()) => {
                let den = 10u64.pow(frac.len() as u32);
                let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
                let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
                Fraction::new(int * den + frac, den)
            }
            Some(_) => Err(bad()),
            None => Fraction::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Piecewise-constant weight over the step budget: `value:until` segments,
/// e.g. `1:1/3,0:1`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSchedule {
    segments: Vec<(f64, Fraction)>,
}

impl StepSchedule {
    pub fn new(segments: Vec<(f64, Fraction)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("schedule needs at least one segment".into()));
        }
        for w in segments.windows(2) {
            if (w[0].1.num as u128) * (w[1].1.den as u128) > (w[1].1.num as u128) * (w[0].1.den as u128) {
                return Err(Error::Config("schedule boundaries must be nondecreasing".into()));
            }
        }
        if segments.last().map(|s| s.1) != Some(Fraction::ONE) {
            return Err(Error::Config("the last schedule segment must run to 1".into()));
        }
        if segments.iter().any(|(v, _)| !v.is_finite()) {
            return Err(Error::Config("schedule values must be finite".into()));
        }
        Ok(Self { segments })
    }

    pub fn constant(v: f64) -> Self {
        Self { segments: vec![(v, Fraction::ONE)] }
    }

    pub fn at(&self, step: u64, total: u64) -> f64 {
        self.segments.iter().find(|(_, end)| end.after(step, total)).unwrap_or(self.segments.last().unwrap()).0
    }
}

impl FromStr for StepSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let segments = s
            .split(',')
            .map(|part| {
                let (v, end) = part
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("schedule segment `{part}` is not value:fraction")))?;
                let v: f64 = v.trim().parse().map_err(|_| Error::Config(format!("bad schedule value `{v}`")))?;
                Ok((v, end.parse()?))
            })
            .collect::<Result<Vec<_>>>()?;
        StepSchedule::new(segments)
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.segments.iter().map(|(v, e)| format!("{v}:{e}")).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lambda: f64,
    /// Multiplier applied to `lambda` before it weights the `[0, 1]` MSE.
    pub lambda_scale: f64,
    pub lambda_e: StepSchedule,
    /// Initial learning rate; divided by 10 after 2/3 of the steps and by
    /// 100 after 11/12.
    pub lr: f64,
    pub steps: u64,
    pub batch: usize,
    pub crop: usize,
    pub seed: u64,
    /// Steps between checkpoints, 0 for none.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lambda: 0.013,
            lambda_scale: 255.0 * 255.0,
            lambda_e: "1:1/3,0:1".parse().expect("valid default"),
            lr: 1e-4,
            steps: 2000,
            batch: 1,
            crop: 48,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        match key {
            "train.lambda" => self.lambda = parse_num(key, value)?,
            "train.lambda_scale" => self.lambda_scale = parse_num(key, value)?,
            "train.lambda_e_schedule" => self.lambda_e = value.parse()?,
            "train.lr" => self.lr = parse_num(key, value)?,
            "train.steps" => self.steps = parse_num(key, value)?,
            "train.batch" => self.batch = parse_num(key, value)?,
            "train.crop" => self.crop = parse_num(key, value)?,
            "train.seed" => self.seed = parse_num(key, value)?,
            "train.checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides, as given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) =
                o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// The seed environment variable wins over file and flags.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse_num(SEED_ENV, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let g = self.model.granularity();
        if !(self.lambda > 0.0 && self.lambda.is_finite()) || !(self.lambda_scale > 0.0) {
            return Err(Error::Config("lambda and lambda_scale must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be positive".into()));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(g) {
            return Err(Error::Config(format!("crop {} must be a positive multiple of {g}", self.crop)));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if LR_DROP_1.after(step, self.steps) {
            self.lr
        } else if LR_DROP_2.after(step, self.steps) {
            self.lr / 10.0
        } else {
            self.lr / 100.0
        }
    }

    pub fn lambda_e_at(&self, step: u64) -> f64 {
        self.lambda_e.at(step, self.steps)
    }

    /// Weight of the `[0, 1]` pixel MSE in the loss.
    pub fn distortion_weight(&self) -> f64 {
        self.lambda * self.lambda_scale
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.to_pairs() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in [
            ("train.lambda", self.lambda.to_string()),
            ("train.lambda_scale", self.lambda_scale.to_string()),
            ("train.lambda_e_schedule", self.lambda_e.to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.steps", self.steps.to_string()),
            ("train.batch", self.batch.to_string()),
            ("train.crop", self.crop.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
        ] {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
