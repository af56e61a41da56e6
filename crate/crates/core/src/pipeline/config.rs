//! Run configuration: line-based `key = value` text. Blank lines and lines
//! starting with `#` are ignored; unknown keys are errors.

use std::path::Path;
use std::str::FromStr;

use super::long_range::DEFAULT_CHUNK_FRAMES;
use crate::diffusion::{SampleConfig, Stage, TrainConfig, UNetConfig, DEFAULT_GUIDANCE_SCALE, DEFAULT_SAMPLING_STEPS};
use crate::error::{Error, Result};
use crate::grounding::GroundingConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model_seed: u64,
    pub text_seed: u64,
    pub checkpoint: Option<String>,

    pub channels: usize,
    pub base_width: usize,
    pub text_width: usize,
    pub grounded_width: usize,
    pub num_freqs: usize,
    pub prompt_tokens: usize,
    pub beta: f64,
    pub bias_scale: f64,
    pub keypoint_sigma: f64,
    pub blur_sigma: f64,
    pub blur_radius: usize,

    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub scale: f64,
    pub null_grounding: bool,
    pub prompt: String,

    pub stage: Stage,
    pub train_steps: usize,
    pub train_videos: usize,
    pub train_frames: usize,
    pub learning_rate: f64,
    pub cond_drop: f64,
    pub gate_penalty: f64,

    pub chunk: usize,
    pub window: usize,
    pub total_frames: usize,

    pub metric_dim: usize,
    pub tc_all_pairs: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let unet = UNetConfig::default();
        let train = TrainConfig::default();
        let grounding = GroundingConfig::default();
        Self {
            seed: 0,
            model_seed: 0,
            text_seed: 0,
            checkpoint: None,
            channels: unet.channels,
            base_width: unet.base_width,
            text_width: unet.text_width,
            grounded_width: unet.grounded_width,
            num_freqs: unet.num_freqs,
            prompt_tokens: unet.prompt_tokens,
            beta: unet.beta,
            bias_scale: unet.bias_scale,
            keypoint_sigma: grounding.keypoint_sigma,
            blur_sigma: grounding.blur_sigma,
            blur_radius: grounding.blur_radius,
            height: 16,
            width: 16,
            steps: DEFAULT_SAMPLING_STEPS,
            scale: DEFAULT_GUIDANCE_SCALE,
            null_grounding: true,
            prompt: String::new(),
            stage: Stage::Base,
            train_steps: 200,
            train_videos: 4,
            train_frames: 8,
            learning_rate: train.learning_rate,
            cond_drop: train.cond_drop,
            gate_penalty: train.gate_penalty,
            chunk: DEFAULT_CHUNK_FRAMES,
            window: 8,
            total_frames: DEFAULT_CHUNK_FRAMES,
            metric_dim: 64,
            tc_all_pairs: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        key: key.to_string(),
        msg: format!("cannot parse `{value}`"),
    })
}

fn positive(key: &str, value: &str) -> Result<usize> {
    match parse::<usize>(key, value)? {
        0 => Err(Error::Config {
            key: key.to_string(),
            msg: "must be at least 1".into(),
        }),
        v => Ok(v),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "model_seed" => self.model_seed = parse(key, v)?,
            "text_seed" => self.text_seed = parse(key, v)?,
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| v.to_string()),
            "channels" => self.channels = positive(key, v)?,
            "base_width" => self.base_width = positive(key, v)?,
            "text_width" => self.text_width = positive(key, v)?,
            "grounded_width" => self.grounded_width = positive(key, v)?,
            "num_freqs" => self.num_freqs = positive(key, v)?,
            "prompt_tokens" => self.prompt_tokens = positive(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "bias_scale" => self.bias_scale = parse(key, v)?,
            "keypoint_sigma" => self.keypoint_sigma = parse(key, v)?,
            "blur_sigma" => self.blur_sigma = parse(key, v)?,
            "blur_radius" => self.blur_radius = parse(key, v)?,
            "height" => self.height = positive(key, v)?,
            "width" => self.width = positive(key, v)?,
            "steps" => self.steps = positive(key, v)?,
            "scale" => self.scale = parse(key, v)?,
            "null_grounding" => self.null_grounding = parse(key, v)?,
            "prompt" => self.prompt = v.to_string(),
            "stage" => self.stage = v.parse()?,
            "train_steps" => self.train_steps = parse(key, v)?,
            "train_videos" => self.train_videos = positive(key, v)?,
            "train_frames" => self.train_frames = positive(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "cond_drop" => self.cond_drop = parse(key, v)?,
            "gate_penalty" => self.gate_penalty = parse(key, v)?,
            "chunk" => self.chunk = positive(key, v)?,
            "window" => self.window = parse(key, v)?,
            "total_frames" => self.total_frames = positive(key, v)?,
            "metric_dim" => self.metric_dim = positive(key, v)?,
            "tc_all_pairs" => self.tc_all_pairs = parse(key, v)?,
            _ => {
                return Err(Error::Config {
                    key: key.to_string(),
                    msg: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                msg: format!("line {} is not `key = value`", i + 1),
            })?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                key: key.to_string(),
                msg: msg.to_string(),
            })
        };
        if self.height % 4 != 0 {
            return bad("height", "must be a multiple of 4");
        }
        if self.width % 4 != 0 {
            return bad("width", "must be a multiple of 4");
        }
        if !(0.0..=1.0).contains(&self.cond_drop) {
            return bad("cond_drop", "must lie in [0, 1]");
        }
        if self.keypoint_sigma <= 0.0 {
            return bad("keypoint_sigma", "must be positive");
        }
        if self.blur_sigma <= 0.0 {
            return bad("blur_sigma", "must be positive");
        }
        if self.base_width % 2 != 0 {
            return bad("base_width", "must be even");
        }
        Ok(())
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            channels: self.channels,
            base_width: self.base_width,
            text_width: self.text_width,
            grounded_width: self.grounded_width,
            num_freqs: self.num_freqs,
            prompt_tokens: self.prompt_tokens,
            beta: self.beta,
            bias_scale: self.bias_scale,
            grounding: self.grounding(),
        }
    }

    pub fn grounding(&self) -> GroundingConfig {
        GroundingConfig {
            keypoint_sigma: self.keypoint_sigma,
            blur_sigma: self.blur_sigma,
            blur_radius: self.blur_radius,
        }
    }

    pub fn sample(&self) -> SampleConfig {
        SampleConfig {
            steps: self.steps,
            guidance_scale: self.scale,
            seed: self.seed,
            null_grounding: self.null_grounding,
            height: self.height,
            width: self.width,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            cond_drop: self.cond_drop,
            gate_penalty: self.gate_penalty,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = RunConfig::parse("# run\n\nseed = 7\nprompt = a red ball # literal\nstage = dgn\nsteps=3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.prompt, "a red ball # literal");
        assert_eq!(cfg.stage, Stage::Dgn);
        assert_eq!(cfg.steps, 3);
        assert_eq!(cfg.scale, 7.5);
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("sed = 1", "sed"),
            ("steps = many", "steps"),
            ("steps = 0", "steps"),
            ("height = 10", "height"),
            ("stage = warmup", "stage"),
            ("cond_drop = 2", "cond_drop"),
        ] {
            match RunConfig::parse(text).unwrap_err() {
                Error::Config { key: k, .. } => assert_eq!(k, key),
                e => panic!("unexpected {e}"),
            }
        }
    }
}
