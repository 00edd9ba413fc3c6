use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finola::FinolaMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub depth: usize,
    pub hidden: usize,
    pub heads: usize,
    pub pool_seeds: usize,
    /// MLP width as a multiple of `hidden`.
    pub mlp_ratio: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConverterKind {
    Linear,
    Maxout2,
    Mlp2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinolaConfig {
    pub channels: usize,
    pub paths: usize,
    pub mode: FinolaMode,
    /// One `(A, B)` pair for both modalities, or one pair each.
    pub shared: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    /// Channels after the 1×1 stem.
    pub stem: usize,
    /// Channel width of each upsampling stage.
    pub widths: Vec<usize>,
}

impl DecoderConfig {
    /// Stage widths halving every second stage, floored at 4.
    pub fn auto(stem: usize, stages: usize) -> Self {
        DecoderConfig {
            stem,
            widths: (0..stages).map(|k| (stem >> ((k + 2) / 2)).max(4)).collect(),
        }
    }
}

/// Stages needed to grow `from` to at least `to` by doubling.
pub fn stages_for(from: usize, to: usize) -> Result<usize> {
    if from == 0 || from > to {
        return Err(Error::Config(format!(
            "cannot reach extent {to} from {from} by ×2 upsampling and cropping"
        )));
    }
    let mut s = 0;
    while from << s < to {
        s += 1;
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    /// Measurement `[C, H, W]`.
    pub input: [usize; 3],
    /// Property `[C, H, W]`.
    pub output: [usize; 3],
    pub encoder: EncoderConfig,
    pub finola: FinolaConfig,
    /// Property feature-map extents `(h, w)`.
    pub property_grid: (usize, usize),
    pub converter: ConverterKind,
    pub decoder_measurement: DecoderConfig,
    pub decoder_property: DecoderConfig,
}

pub const PRESETS: [&str; 4] = ["fwi-paper", "fwi-desk", "ct-paper", "ct-desk"];

impl ModelConfig {
    pub fn preset(name: &str) -> Result<Self> {
        #[allow(clippy::type_complexity)]
        let (input, output, patch, depth, hidden, heads, seeds, c, p, grid, stem_m, stem_p): (
            [usize; 3],
            [usize; 3],
            (usize, usize),
            usize,
            usize,
            usize,
            usize,
            usize,
            usize,
            usize,
            usize,
            usize,
        ) = match name {
            "fwi-paper" => ([5, 1000, 70], [1, 70, 70], (100, 10), 3, 512, 16, 1, 512, 1, 14, 64, 64),
            "fwi-desk" => ([5, 250, 70], [1, 70, 70], (25, 10), 2, 64, 4, 1, 64, 1, 14, 32, 32),
            "ct-paper" => ([3, 45, 1728], [1, 256, 256], (9, 36), 3, 768, 12, 2, 192, 8, 32, 64, 64),
            "ct-desk" => ([3, 45, 192], [1, 64, 64], (9, 24), 2, 64, 4, 2, 32, 4, 8, 32, 32),
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset `{name}`; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        let tokens = (input[1] / patch.0, input[2] / patch.1);
        let sm = stages_for(tokens.0, input[1])?.max(stages_for(tokens.1, input[2])?);
        let sp = stages_for(grid, output[1])?.max(stages_for(grid, output[2])?);
        let cfg = ModelConfig {
            name: name.to_string(),
            input,
            output,
            encoder: EncoderConfig {
                patch_h: patch.0,
                patch_w: patch.1,
                depth,
                hidden,
                heads,
                pool_seeds: seeds,
                mlp_ratio: 2,
            },
            finola: FinolaConfig {
                channels: c,
                paths: p,
                mode: FinolaMode::Normalized,
                shared: true,
            },
            property_grid: (grid, grid),
            converter: ConverterKind::Linear,
            decoder_measurement: DecoderConfig::auto(stem_m, sm),
            decoder_property: DecoderConfig::auto(stem_p, sp),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same model with a square property feature map of side `size`; the
    /// property decoder is rebuilt with the matching stage count.
    pub fn with_property_grid(&self, size: usize) -> Result<Self> {
        let stages = stages_for(size, self.output[1])?.max(stages_for(size, self.output[2])?);
        let mut c = self.clone();
        c.property_grid = (size, size);
        c.decoder_property = DecoderConfig::auto(self.decoder_property.stem, stages);
        c.validate()?;
        Ok(c)
    }

    /// Token grid, which is also the measurement feature-map extent.
    pub fn token_grid(&self) -> (usize, usize) {
        (self.input[1] / self.encoder.patch_h, self.input[2] / self.encoder.patch_w)
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.pool_seeds * self.encoder.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let [c, h, w] = self.input;
        if e.patch_h == 0 || e.patch_w == 0 || h % e.patch_h != 0 || w % e.patch_w != 0 {
            let divisors = |n: usize| -> Vec<usize> { (1..=n).filter(|d| n % d == 0).collect() };
            return Err(Error::Contract(format!(
                "input {h}×{w} is not divisible by patch {}×{}; valid patch heights {:?}, widths {:?}",
                e.patch_h,
                e.patch_w,
                divisors(h),
                divisors(w)
            )));
        }
        if c == 0 || e.hidden == 0 || e.heads == 0 || e.hidden % e.heads != 0 {
            return Err(Error::Config(format!("hidden {} must be a positive multiple of heads {}", e.hidden, e.heads)));
        }
        if e.pool_seeds == 0 || e.mlp_ratio == 0 {
            return Err(Error::Config("pool_seeds and mlp_ratio must be ≥ 1".into()));
        }
        let f = &self.finola;
        if f.channels < 2 || f.paths == 0 || f.channels * f.paths != self.latent_dim() {
            return Err(Error::Config(format!(
                "latent length {} (seeds × hidden) must equal paths {} × channels {} with channels ≥ 2",
                self.latent_dim(),
                f.paths,
                f.channels
            )));
        }
        let (th, tw) = self.token_grid();
        let need_m = stages_for(th, h)?.max(stages_for(tw, w)?);
        let (gh, gw) = self.property_grid;
        let need_p = stages_for(gh, self.output[1])?.max(stages_for(gw, self.output[2])?);
        for (name, d, need) in [
            ("measurement", &self.decoder_measurement, need_m),
            ("property", &self.decoder_property, need_p),
        ] {
            if d.widths.len() != need {
                return Err(Error::Config(format!(
                    "{name} decoder has {} stages, extents need {need}",
                    d.widths.len()
                )));
            }
            if d.stem == 0 || d.widths.contains(&0) {
                return Err(Error::Config(format!("{name} decoder widths must be ≥ 1")));
            }
        }
        if self.output[0] == 0 {
            return Err(Error::Config("property needs ≥ 1 channel".into()));
        }
        Ok(())
    }
}
