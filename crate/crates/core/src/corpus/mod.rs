//! Procedural motion–caption corpus.
//!
//! Each record chains one to three distinct motion primitives. Motion channels
//! are closed-form functions of the primitive schedule plus Gaussian noise,
//! and the caption is assembled from a template table whose verbs name the
//! primitives one-to-one, so ground-truth action labels are always known.

mod io;
mod vocab;

pub use io::{read_corpus, write_corpus};
pub use vocab::{content_len, TextVocab, MASK, NULL, PAD, SEP, SPECIALS, VOCAB_VERSION};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{DimoError, Result};
use crate::par;
use crate::rng::{splitmix64, Rng};
use crate::rvq::{MotionClip, DEFAULT_CHANNELS};

/// Channel layout of generated clips.
pub mod channel {
    pub const ROOT_X: usize = 0;
    pub const ROOT_Y: usize = 1;
    pub const HEADING_SIN: usize = 2;
    pub const HEADING_COS: usize = 3;
    pub const VERTICAL: usize = 4;
    pub const LEFT_LIMB: usize = 5;
    pub const RIGHT_LIMB: usize = 6;
    pub const ARM: usize = 7;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimitiveKind {
    Walk,
    Run,
    Jump,
    TurnLeft,
    TurnRight,
    Wave,
    Squat,
    Stand,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 8] = [
        PrimitiveKind::Walk,
        PrimitiveKind::Run,
        PrimitiveKind::Jump,
        PrimitiveKind::TurnLeft,
        PrimitiveKind::TurnRight,
        PrimitiveKind::Wave,
        PrimitiveKind::Squat,
        PrimitiveKind::Stand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Walk => "walk",
            PrimitiveKind::Run => "run",
            PrimitiveKind::Jump => "jump",
            PrimitiveKind::TurnLeft => "turn_left",
            PrimitiveKind::TurnRight => "turn_right",
            PrimitiveKind::Wave => "wave",
            PrimitiveKind::Squat => "squat",
            PrimitiveKind::Stand => "stand",
        }
    }

    /// The caption verb naming this primitive.
    pub fn verb(self) -> &'static str {
        match self {
            PrimitiveKind::Walk => "walks",
            PrimitiveKind::Run => "runs",
            PrimitiveKind::Jump => "jumps",
            PrimitiveKind::TurnLeft => "pivots",
            PrimitiveKind::TurnRight => "spins",
            PrimitiveKind::Wave => "waves",
            PrimitiveKind::Squat => "squats",
            PrimitiveKind::Stand => "stands",
        }
    }

    fn complements(self) -> &'static [&'static str] {
        match self {
            PrimitiveKind::Walk => &["forward", "ahead", "around"],
            PrimitiveKind::Run => &["fast", "quickly", "forward"],
            PrimitiveKind::Jump => &["up", "high"],
            PrimitiveKind::TurnLeft => &["left"],
            PrimitiveKind::TurnRight => &["right"],
            PrimitiveKind::Wave => &["hello", "goodbye"],
            PrimitiveKind::Squat => &["down", "low"],
            PrimitiveKind::Stand => &["still", "idle"],
        }
    }

    pub fn from_verb(verb: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.verb() == verb)
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrimitiveKind {
    type Err = DimoError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DimoError::Format(format!("unknown primitive {s:?}")))
    }
}

const SUBJECTS: &[&str] = &[
    "a person", "someone", "the man", "a woman", "the figure", "somebody", "an actor",
    "the dancer", "a child", "an athlete", "the individual", "a human",
];
const CONNECTIVES: &[&str] = &["then", "and then", "and", "afterwards"];

/// One primitive occurrence with its sampled parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub duration: usize,
    pub speed: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 80/10/10 assignment from a hash of the record id.
    pub fn of_id(id: &str) -> Split {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in id.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        match splitmix64(h) % 10 {
            8 => Split::Val,
            9 => Split::Test,
            _ => Split::Train,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = DimoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(DimoError::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub id: String,
    pub split: Split,
    pub caption_text: String,
    pub caption_tokens: Vec<u32>,
    pub primitives: Vec<PrimitiveKind>,
    pub clip: MotionClip,
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub noise_sigma: f64,
    pub min_primitives: usize,
    pub max_primitives: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    pub fps: f32,
    pub max_caption_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            noise_sigma: 0.02,
            min_primitives: 1,
            max_primitives: 3,
            min_duration: 24,
            max_duration: 52,
            fps: 20.0,
            max_caption_len: 12,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_primitives == 0
            || self.min_primitives > self.max_primitives
            || self.max_primitives > PrimitiveKind::ALL.len()
        {
            return Err(DimoError::Config("primitive count range is invalid".into()));
        }
        if self.min_duration < 4 || self.min_duration > self.max_duration {
            return Err(DimoError::Config("primitive durations must be ≥ 4 frames".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.fps > 0.0) {
            return Err(DimoError::Config("noise σ must be ≥ 0 and fps > 0".into()));
        }
        Ok(())
    }

    pub fn max_frames(&self) -> usize {
        self.max_primitives * self.max_duration
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: TextVocab,
    pub records: Vec<CorpusRecord>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&CorpusRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

pub fn record_id(index: usize) -> String {
    format!("rec{index:06}")
}

/// Generates `count` records; output is a pure function of `(seed, count, config)`.
pub fn generate_corpus(seed: u64, count: usize, config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    if count == 0 {
        return Err(DimoError::Config("corpus count must be ≥ 1".into()));
    }
    let vocab = TextVocab::standard();
    let records = par::map_range(count, |i| synthesize_record(seed, i, config, &vocab).map(|(r, _)| r))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { vocab, records })
}

/// Builds record `index` of the corpus rooted at `seed`, returning the sampled primitives too.
pub fn synthesize_record(
    seed: u64,
    index: usize,
    config: &CorpusConfig,
    vocab: &TextVocab,
) -> Result<(CorpusRecord, Vec<Primitive>)> {
    let mut rng = Rng::derive(seed, index as u64);
    let n = config.min_primitives + rng.below(config.max_primitives - config.min_primitives + 1);
    let kinds: Vec<PrimitiveKind> = rng
        .sample_distinct(PrimitiveKind::ALL.len(), n)
        .into_iter()
        .map(|i| PrimitiveKind::ALL[i])
        .collect();
    let prims: Vec<Primitive> = kinds
        .iter()
        .map(|&kind| Primitive {
            kind,
            duration: config.min_duration + rng.below(config.max_duration - config.min_duration + 1),
            speed: rng.range(0.8, 1.2),
            amplitude: rng.range(0.8, 1.2),
        })
        .collect();
    let caption_text = caption_for(&kinds, &mut rng);
    let caption_tokens = vocab.tokenize(&caption_text, config.max_caption_len)?;
    let clip = synthesize_motion(&prims, config.noise_sigma, config.fps, &mut rng)?;
    let id = record_id(index);
    Ok((
        CorpusRecord {
            split: Split::of_id(&id),
            id,
            caption_text,
            caption_tokens,
            primitives: kinds,
            clip,
        },
        prims,
    ))
}

fn pick<'a>(rng: &mut Rng, options: &[&'a str]) -> &'a str {
    options[rng.below(options.len())]
}

/// "<subject> <verb> <complement> [<connective> <verb> <complement>]…"
pub fn caption_for(kinds: &[PrimitiveKind], rng: &mut Rng) -> String {
    let mut words = vec![pick(rng, SUBJECTS).to_string()];
    for (i, k) in kinds.iter().enumerate() {
        if i > 0 {
            words.push(pick(rng, CONNECTIVES).to_string());
        }
        words.push(k.verb().to_string());
        words.push(pick(rng, k.complements()).to_string());
    }
    words.join(" ")
}

/// Renders a primitive chain into an 8-channel clip.
pub fn synthesize_motion(prims: &[Primitive], sigma: f64, fps: f32, rng: &mut Rng) -> Result<MotionClip> {
    use channel::*;
    let frames: usize = prims.iter().map(|p| p.duration).sum();
    let mut data = vec![0f32; frames * DEFAULT_CHANNELS];
    let mut heading = 0.0f64;
    let mut row = 0;
    for p in prims {
        let d = p.duration;
        let (s, a) = (p.speed, p.amplitude);
        for j in 0..d {
            let tau = j as f64 / (d - 1) as f64;
            let phase = 2.0 * PI * j as f64 / 20.0;
            let mut f = [0f64; DEFAULT_CHANNELS];
            match p.kind {
                PrimitiveKind::Walk => {
                    f[ROOT_X] = 0.5 * s;
                    f[LEFT_LIMB] = 0.6 * a * (1.6 * s * phase).sin();
                    f[RIGHT_LIMB] = -f[LEFT_LIMB];
                    f[ARM] = 0.2 * a;
                }
                PrimitiveKind::Run => {
                    f[ROOT_X] = 1.2 * s;
                    f[LEFT_LIMB] = 0.9 * a * (2.8 * s * phase).sin();
                    f[RIGHT_LIMB] = -f[LEFT_LIMB];
                    f[ARM] = 0.6 * a;
                }
                PrimitiveKind::Jump => {
                    f[VERTICAL] = 0.9 * a * 4.0 * tau * (1.0 - tau);
                    f[LEFT_LIMB] = 0.3 * a * (PI * tau).sin();
                    f[RIGHT_LIMB] = f[LEFT_LIMB];
                    f[ARM] = 0.3 * a;
                }
                PrimitiveKind::TurnLeft | PrimitiveKind::TurnRight => {
                    let sign = if p.kind == PrimitiveKind::TurnLeft { 1.0 } else { -1.0 };
                    if j > 0 {
                        heading += sign * 0.5 * PI * a / (d - 1) as f64;
                    }
                    f[ROOT_X] = 0.15;
                    f[ROOT_Y] = sign * 0.25 * a * (PI * tau).sin();
                    f[LEFT_LIMB] = 0.3 * (2.0 * phase).sin();
                    f[RIGHT_LIMB] = -f[LEFT_LIMB];
                    f[ARM] = 0.1;
                }
                PrimitiveKind::Wave => {
                    f[ARM] = 0.5 * a + 0.4 * a * (1.5 * s * phase).sin();
                }
                PrimitiveKind::Squat => {
                    f[VERTICAL] = -0.6 * a * (PI * tau).sin();
                    f[LEFT_LIMB] = 0.5 * a * (PI * tau).sin();
                    f[RIGHT_LIMB] = f[LEFT_LIMB];
                    f[ARM] = 0.2 * a;
                }
                PrimitiveKind::Stand => {}
            }
            f[HEADING_SIN] = heading.sin();
            f[HEADING_COS] = heading.cos();
            let out = &mut data[row * DEFAULT_CHANNELS..(row + 1) * DEFAULT_CHANNELS];
            for (o, v) in out.iter_mut().zip(f) {
                let noise = if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
                *o = (v + noise) as f32;
            }
            row += 1;
        }
    }
    MotionClip::new(DEFAULT_CHANNELS, fps, data)
}
