//! Planted-signal clips.
//!
//! Every clip has one interacted object, seen once per frame. Its bank row
//! (the carrier) holds the noun prototype at `bank_signal_strength`, a decoy
//! noun at `decoy_strength` and a shared interaction cue at `marker_strength`.
//! The decoy is drawn per clip among nouns that never occur with the clip's
//! verb, so only verb knowledge tells it apart from the true noun. The verb
//! feature carries its verb prototype plus the same interaction cue, which is
//! what lets a verb-side query find the carrier. The other `distractor_count`
//! objects of the clip persist across frames, each holding a different noun at
//! `distractor_strength`. The global noun feature has the noun prototype at
//! `global_signal_strength`. Everything gets Gaussian noise of `noise_sigma`.
//!
//! All generated floats are rounded to `f32` so that datasets survive the
//! SAPB file format bit for bit.

use super::Episode;
use crate::sap::{BranchFeature, Detection, ObjectBank, SapError};
use crate::training::Labels;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Sap(#[from] SapError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub channels: usize,
    pub verbs: usize,
    pub nouns: usize,
    /// Sampled frames per clip (`M`).
    pub frames: usize,
    /// Detections kept per frame (`K`).
    pub per_frame: usize,
    pub noise_sigma: f64,
    /// Persistent distractor objects per clip, one row each per frame.
    pub distractor_count: usize,
    pub global_signal_strength: f64,
    pub verb_signal_strength: f64,
    pub bank_signal_strength: f64,
    pub distractor_strength: f64,
    pub decoy_strength: f64,
    pub marker_strength: f64,
    /// Low-confidence detections per frame that top-K filtering discards.
    pub clutter_per_frame: usize,
    /// Fraction of verb-noun pairs that never occur, in `[0, 1)`.
    pub prior_concentration: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            channels: 64,
            verbs: 12,
            nouns: 30,
            frames: 12,
            per_frame: 5,
            noise_sigma: 0.2,
            distractor_count: 4,
            global_signal_strength: 0.2,
            verb_signal_strength: 1.5,
            bank_signal_strength: 0.6,
            distractor_strength: 0.4,
            decoy_strength: 0.55,
            marker_strength: 0.6,
            clutter_per_frame: 2,
            prior_concentration: 0.75,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    /// Bank rows per clip, `M * K`.
    pub fn bank_rows(&self) -> usize {
        self.frames * self.per_frame
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidSpec(m));
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if self.verbs < 2 || self.nouns < 2 {
            return bad(format!("need at least 2 verbs and 2 nouns, got {} and {}", self.verbs, self.nouns));
        }
        if self.frames == 0 || self.per_frame == 0 {
            return bad("frames and per_frame must be positive".into());
        }
        if self.distractor_count >= self.per_frame {
            return bad(format!(
                "distractor_count {} leaves no room for the carrier in {} rows per frame",
                self.distractor_count, self.per_frame
            ));
        }
        if self.distractor_count + 2 > self.nouns {
            return bad(format!(
                "distractor_count {} needs at least {} nouns, got {}",
                self.distractor_count,
                self.distractor_count + 2,
                self.nouns
            ));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("global_signal_strength", self.global_signal_strength),
            ("verb_signal_strength", self.verb_signal_strength),
            ("bank_signal_strength", self.bank_signal_strength),
            ("distractor_strength", self.distractor_strength),
            ("decoy_strength", self.decoy_strength),
            ("marker_strength", self.marker_strength),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.prior_concentration) {
            return bad(format!("prior_concentration must lie in [0, 1), got {}", self.prior_concentration));
        }
        Ok(())
    }
}

const CLUTTER_PROTOTYPES: usize = 8;

fn round32(x: f64) -> f64 {
    x as f32 as f64
}

/// Unit prototypes. While they fit, each is a distinct coordinate axis in
/// random order, so channel-wise gates and pooling can isolate a class;
/// beyond `dim` they are random Gaussian directions.
fn prototypes(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut axes: Vec<usize> = (0..dim).collect();
    axes.shuffle(rng);
    (0..count)
        .map(|i| {
            let mut v = vec![0.0; dim];
            if i < dim {
                v[axes[i]] = 1.0;
            } else {
                v.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
            }
            v
        })
        .collect()
}

/// Class prototypes and the label distribution, fixed per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub spec: GeneratorSpec,
    pub noun_prototypes: Vec<Vec<f64>>,
    pub verb_prototypes: Vec<Vec<f64>>,
    /// Interaction cue shared by carrier rows and every verb feature.
    pub marker: Vec<f64>,
    pub clutter_prototypes: Vec<Vec<f64>>,
    /// Row-major `verbs x nouns`, sums to 1.
    pub action_distribution: Vec<f64>,
}

impl World {
    pub fn new(spec: &GeneratorSpec) -> Result<Self, GenError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (v, u, c) = (spec.verbs, spec.nouns, spec.channels);
        let all = prototypes(u + v + 1 + CLUTTER_PROTOTYPES, c, &mut rng);
        let noun_prototypes = all[..u].to_vec();
        let verb_prototypes = all[u..u + v].to_vec();
        let marker = all[u + v].clone();
        let clutter_prototypes = all[u + v + 1..].to_vec();

        let keep = (((1.0 - spec.prior_concentration) * u as f64).round() as usize).clamp(1, u);
        let mut table = vec![0.0; v * u];
        let mut nouns: Vec<usize> = (0..u).collect();
        for verb in 0..v {
            nouns.shuffle(&mut rng);
            for &n in &nouns[..keep] {
                table[verb * u + n] = rng.random_range(0.5..1.5);
            }
        }
        let total: f64 = table.iter().sum();
        table.iter_mut().for_each(|x| *x /= total);

        Ok(Self {
            spec: spec.clone(),
            noun_prototypes,
            verb_prototypes,
            marker,
            clutter_prototypes,
            action_distribution: table,
        })
    }

    pub fn sample_labels<R: Rng + ?Sized>(&self, rng: &mut R) -> Labels {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        let u = self.spec.nouns;
        let mut last = 0;
        for (i, &p) in self.action_distribution.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            last = i;
            acc += p;
            if r < acc {
                break;
            }
        }
        Labels {
            verb: last / u,
            noun: last % u,
        }
    }

    fn noisy<R: Rng + ?Sized>(&self, parts: &[(f64, &[f64])], rng: &mut R) -> Vec<f64> {
        let sigma = self.spec.noise_sigma;
        (0..self.spec.channels)
            .map(|i| {
                let signal: f64 = parts.iter().map(|(s, p)| s * p[i]).sum();
                let noise = if sigma > 0.0 {
                    sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                round32(signal + noise)
            })
            .collect()
    }

    /// One clip plus the bank rows that carry the noun signal.
    pub fn generate_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PlantedEpisode, GenError> {
        let s = &self.spec;
        let labels = self.sample_labels(rng);

        let verb_feature = self.noisy(
            &[
                (s.verb_signal_strength, &self.verb_prototypes[labels.verb]),
                (s.marker_strength, &self.marker),
            ],
            rng,
        );
        let noun_feature = self.noisy(&[(s.global_signal_strength, &self.noun_prototypes[labels.noun])], rng);

        let u = s.nouns;
        let row = &self.action_distribution[labels.verb * u..(labels.verb + 1) * u];
        let mut unseen: Vec<usize> = (0..u).filter(|&n| n != labels.noun && row[n] == 0.0).collect();
        if unseen.is_empty() {
            unseen = (0..u).filter(|&n| n != labels.noun).collect();
        }
        let decoy = unseen[rng.random_range(0..unseen.len())];
        let mut others: Vec<usize> = (0..u).filter(|&n| n != labels.noun && n != decoy).collect();
        others.shuffle(rng);
        let distractors = &others[..s.distractor_count];

        let background = s.per_frame - 1 - s.distractor_count;
        let mut frames = Vec::with_capacity(s.frames);
        for _ in 0..s.frames {
            let mut dets = Vec::with_capacity(s.per_frame + s.clutter_per_frame);
            dets.push(Detection {
                confidence: round32(rng.random_range(0.5..1.0)),
                feature: self.noisy(
                    &[
                        (s.bank_signal_strength, &self.noun_prototypes[labels.noun]),
                        (s.decoy_strength, &self.noun_prototypes[decoy]),
                        (s.marker_strength, &self.marker),
                    ],
                    rng,
                ),
            });
            for &n in distractors {
                dets.push(Detection {
                    confidence: round32(rng.random_range(0.5..1.0)),
                    feature: self.noisy(&[(s.distractor_strength, &self.noun_prototypes[n])], rng),
                });
            }
            for (j, range) in [(background, 0.3..0.5), (s.clutter_per_frame, 0.0..0.3)] {
                for _ in 0..j {
                    let proto = &self.clutter_prototypes[rng.random_range(0..CLUTTER_PROTOTYPES)];
                    dets.push(Detection {
                        confidence: round32(rng.random_range(range.clone())),
                        feature: self.noisy(&[(1.0, proto)], rng),
                    });
                }
            }
            frames.push(dets);
        }
        let (bank, sources) = ObjectBank::select_top_k(frames, s.per_frame, s.channels)?;
        let carrier_rows = sources
            .iter()
            .enumerate()
            .filter(|(_, &src)| src == 0)
            .map(|(row, _)| row)
            .collect();
        Ok(PlantedEpisode {
            episode: Episode {
                verb_feature: BranchFeature::verb(verb_feature),
                noun_feature: BranchFeature::noun(noun_feature),
                bank,
                labels,
            },
            carrier_rows,
        })
    }
}

/// A generated clip with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedEpisode {
    pub episode: Episode,
    /// Bank rows of the interacted object, one per frame.
    pub carrier_rows: Vec<usize>,
}

/// `count` clips from stream `stream` of the world's seed.
pub fn generate_planted(world: &World, count: usize, stream: u64) -> Result<Vec<PlantedEpisode>, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(world.spec.seed);
    rng.set_stream(stream.wrapping_add(1));
    (0..count).map(|_| world.generate_episode(&mut rng)).collect()
}

pub fn generate_dataset(world: &World, count: usize, stream: u64) -> Result<Vec<Episode>, GenError> {
    Ok(generate_planted(world, count, stream)?
        .into_iter()
        .map(|p| p.episode)
        .collect())
}

/// Index of the prototype with the largest dot product; lowest index on ties.
pub fn nearest_prototype(x: &[f64], prototypes: &[Vec<f64>]) -> usize {
    let scores: Vec<f64> = prototypes
        .iter()
        .map(|p| p.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect();
    crate::eval::argmax(&scores)
}
