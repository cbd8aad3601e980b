//! Seeded synthetic corpora with planted semantic topics, planted spatial
//! blobs, a controllable topic/location coupling, and planted vocabularies.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GeoCoordinate};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub topics: usize,
    /// Per-coordinate standard deviation of embedding noise around a topic center.
    pub semantic_sigma: f64,
    /// Expected cosine between two topic centers (shared anisotropic direction).
    pub center_overlap: f64,
    /// Spatial blob centers as (lat, lon); empty places them on a ring.
    pub spatial_centers: Vec<(f64, f64)>,
    pub ring_center: (f64, f64),
    pub ring_radius_deg: f64,
    pub spatial_sigma_deg: f64,
    /// Probability that a post is located in its own topic's blob.
    pub rho: f64,
    /// Per-topic vocabularies; empty generates `words_per_topic` tokens per topic.
    pub vocabularies: Vec<Vec<String>>,
    pub words_per_topic: usize,
    pub noise_vocabulary_size: usize,
    pub tokens_per_post: usize,
    /// Probability that each token slot is a noise word.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 2000,
            d: 32,
            topics: 5,
            semantic_sigma: 0.3,
            center_overlap: 0.55,
            spatial_centers: Vec::new(),
            ring_center: (29.76, -95.37),
            ring_radius_deg: 0.25,
            spatial_sigma_deg: 0.05,
            rho: 0.8,
            vocabularies: Vec::new(),
            words_per_topic: 20,
            noise_vocabulary_size: 60,
            tokens_per_post: 8,
            noise_rate: 0.3,
            seed: 42,
        }
    }
}

impl SynthSpec {
    /// The standard corpus: n = 2000, T = 5, ρ = 0.8, seed 42, with noisy
    /// embeddings (σ = 0.3) so that raw clustering is far from perfect.
    pub fn standard() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.topics < 2 {
            return bad(format!("need at least 2 topics, got {}", self.topics));
        }
        if self.n == 0 || self.d == 0 {
            return bad("n and d must be positive".into());
        }
        if !(self.semantic_sigma > 0.0 && self.spatial_sigma_deg > 0.0) {
            return bad("sigmas must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.rho) || !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("rho and noise_rate must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.center_overlap) {
            return bad("center_overlap must lie in [0, 1)".into());
        }
        if !self.spatial_centers.is_empty() && self.spatial_centers.len() != self.topics {
            return bad("one spatial center per topic is required".into());
        }
        if !self.vocabularies.is_empty() && self.vocabularies.len() != self.topics {
            return bad("one vocabulary per topic is required".into());
        }
        for (t, v) in self.topic_vocabularies().iter().enumerate() {
            if v.len() < self.tokens_per_post {
                return bad(format!(
                    "vocabulary of topic {t} has {} words, fewer than the {} tokens requested per post",
                    v.len(),
                    self.tokens_per_post
                ));
            }
        }
        if self.noise_rate > 0.0 && self.noise_vocabulary_size < self.tokens_per_post {
            return bad("noise vocabulary is shorter than tokens_per_post".into());
        }
        Ok(())
    }

    pub fn topic_vocabularies(&self) -> Vec<Vec<String>> {
        if !self.vocabularies.is_empty() {
            return self.vocabularies.clone();
        }
        (0..self.topics)
            .map(|t| (0..self.words_per_topic).map(|j| format!("topic{t}word{j}")).collect())
            .collect()
    }

    pub fn noise_vocabulary(&self) -> Vec<String> {
        (0..self.noise_vocabulary_size).map(|j| format!("noise{j}")).collect()
    }

    pub fn blob_centers(&self) -> Vec<(f64, f64)> {
        if !self.spatial_centers.is_empty() {
            return self.spatial_centers.clone();
        }
        let (lat0, lon0) = self.ring_center;
        (0..self.topics)
            .map(|t| {
                let a = 2.0 * std::f64::consts::PI * t as f64 / self.topics as f64;
                (
                    lat0 + self.ring_radius_deg * a.sin(),
                    lon0 + self.ring_radius_deg * a.cos(),
                )
            })
            .collect()
    }
}

/// Ground truth for each generated post.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedLabels {
    pub topic: Vec<usize>,
    /// Spatial blob the post was drawn from.
    pub blob: Vec<usize>,
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / n
}

fn gaussian_vec(d: usize, rng: &mut seed::Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(d, || StandardNormal.sample(rng))
}

pub fn generate(spec: &SynthSpec) -> Result<(Corpus, PlantedLabels)> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, "synthetic-centers", 0);
    let common = unit(gaussian_vec(spec.d, &mut rng));
    let centers: Vec<Array1<f64>> = (0..spec.topics)
        .map(|_| {
            let own = unit(gaussian_vec(spec.d, &mut rng));
            unit(&common * spec.center_overlap.sqrt() + &own * (1.0 - spec.center_overlap).sqrt())
        })
        .collect();
    let blobs = spec.blob_centers();
    let vocab = spec.topic_vocabularies();
    let noise = spec.noise_vocabulary();

    let mut rng = seed::rng(spec.seed, "synthetic-posts", 0);
    let mut embeddings = Array2::<f32>::zeros((spec.n, spec.d));
    let mut coords = Vec::with_capacity(spec.n);
    let mut texts = Vec::with_capacity(spec.n);
    let mut topic = Vec::with_capacity(spec.n);
    let mut blob = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let t = rng.random_range(0..spec.topics);
        let e = unit(&centers[t] + &(gaussian_vec(spec.d, &mut rng) * spec.semantic_sigma));
        embeddings.row_mut(i).assign(&e.mapv(|v| v as f32));

        let b = if rng.random::<f64>() < spec.rho {
            t
        } else {
            rng.random_range(0..spec.topics)
        };
        let (lat0, lon0) = blobs[b];
        let dlat: f64 = StandardNormal.sample(&mut rng);
        let dlon: f64 = StandardNormal.sample(&mut rng);
        coords.push(GeoCoordinate::new(
            (lat0 + spec.spatial_sigma_deg * dlat).clamp(-90.0, 90.0),
            (lon0 + spec.spatial_sigma_deg * dlon).clamp(-180.0, 180.0),
        )?);

        let noise_slots = (0..spec.tokens_per_post)
            .filter(|_| rng.random::<f64>() < spec.noise_rate)
            .count();
        let topic_slots = spec.tokens_per_post - noise_slots;
        let mut words: Vec<&str> = sample(&mut rng, vocab[t].len(), topic_slots)
            .into_iter()
            .map(|j| vocab[t][j].as_str())
            .collect();
        if noise_slots > 0 {
            words.extend(
                sample(&mut rng, noise.len(), noise_slots)
                    .into_iter()
                    .map(|j| noise[j].as_str()),
            );
        }
        texts.push(Some(words.join(" ")));
        topic.push(t);
        blob.push(b);
    }
    let ids = (0..spec.n).map(|i| format!("p{i:06}")).collect();
    let corpus = Corpus::from_parts(ids, embeddings, coords, texts)?;
    Ok((corpus, PlantedLabels { topic, blob }))
}

/// `id,topic,blob` rows in corpus order.
pub fn write_labels_csv(path: &Path, ids: &[String], labels: &PlantedLabels) -> Result<()> {
    let mut out = String::from("id,topic,blob\n");
    for ((id, t), b) in ids.iter().zip(&labels.topic).zip(&labels.blob) {
        out.push_str(&format!("{id},{t},{b}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Accuracy of assigning each post to its nearest spatial blob center.
pub fn nearest_blob_accuracy(corpus: &Corpus, labels: &PlantedLabels, spec: &SynthSpec) -> f64 {
    let blobs = spec.blob_centers();
    let hits = corpus
        .coords()
        .iter()
        .zip(&labels.topic)
        .filter(|(c, &t)| {
            let nearest = blobs
                .iter()
                .enumerate()
                .map(|(b, &(lat, lon))| (b, (c.lat - lat).powi(2) + (c.lon - lon).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(b, _)| b)
                .unwrap_or(0);
            nearest == t
        })
        .count();
    hits as f64 / corpus.len() as f64
}

/// Best label agreement over all bijections between predicted and planted labels.
/// Exhaustive over permutations, so only for small label counts.
pub fn permutation_agreement(predicted: &[usize], planted: &[usize], k: usize) -> f64 {
    assert!(k <= 8, "permutation search is exhaustive");
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, &t) in predicted.iter().zip(planted) {
        counts[p][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &counts, &mut best);
    best as f64 / predicted.len() as f64
}

fn permute(perm: &mut Vec<usize>, at: usize, counts: &[Vec<usize>], best: &mut usize) {
    if at == perm.len() {
        let hits = perm.iter().enumerate().map(|(p, &t)| counts[p][t]).sum();
        *best = (*best).max(hits);
        return;
    }
    for i in at..perm.len() {
        perm.swap(at, i);
        permute(perm, at + 1, counts, best);
        perm.swap(at, i);
    }
}
