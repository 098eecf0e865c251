//! Speaker-conditioned synthetic frame-classification data.
//!
//! Frames follow `class_mean[k] + speaker_scale * (M . latent) + noise`,
//! where the latent is drawn once per speaker and `M` is a fixed seeded
//! mixing matrix. When the embedding appendage is on, a constant per-speaker
//! vector (the i-vector stand-in) is concatenated to every frame, so
//! fine-tuning has a stable speaker signal to absorb. With
//! `speaker_scale = 0` both the coloration and the appended embedding vanish
//! and the corpus carries no speaker information at all.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    /// Low-rank coloration coordinates, fixed for the speaker's lifetime.
    pub latent: Vec<f64>,
    /// Constant vector appended to every frame when the appendage is on.
    /// Already scaled by `speaker_scale`.
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker_id: String,
    /// `T x D` where `D = feature_dim (+ embedding_dim when appended)`.
    pub frames: Mat,
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionName {
    TrainG,
    Part1,
    Part2,
    Indicator,
}

impl PartitionName {
    pub fn as_str(self) -> &'static str {
        match self {
            PartitionName::TrainG => "train_g",
            PartitionName::Part1 => "part1",
            PartitionName::Part2 => "part2",
            PartitionName::Indicator => "indicator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPartition {
    pub name: PartitionName,
    pub speakers: Vec<SpeakerProfile>,
    pub utterances: Vec<Utterance>,
    /// Per speaker, 1 or 2 disjoint lists of utterance ids reserved for
    /// fine-tuning. Empty for TrainG and Indicator.
    pub adaptation_sets: BTreeMap<String, Vec<Vec<String>>>,
}

impl CorpusPartition {
    pub fn utterance(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.utterance_id == id)
    }

    pub fn speaker_ids(&self) -> impl Iterator<Item = &str> {
        self.speakers.iter().map(|s| s.speaker_id.as_str())
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(|u| u.frames.rows()).sum()
    }
}

/// The four partitions with pairwise-disjoint speaker sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub train_g: CorpusPartition,
    pub part1: CorpusPartition,
    pub part2: CorpusPartition,
    pub indicator: CorpusPartition,
}

impl Corpus {
    pub fn partitions(&self) -> [&CorpusPartition; 4] {
        [&self.train_g, &self.part1, &self.part2, &self.indicator]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub embedding_dim: usize,
    /// Strength of the per-speaker coloration (and of the appended
    /// embedding); 0 removes all speaker information.
    pub speaker_scale: f64,
    pub noise_scale: f64,
    pub min_frames_per_utterance: usize,
    pub max_frames_per_utterance: usize,
    pub append_speaker_embedding: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_classes: 10,
            feature_dim: 8,
            latent_dim: 8,
            embedding_dim: 160,
            speaker_scale: 0.6,
            noise_scale: 0.3,
            min_frames_per_utterance: 80,
            max_frames_per_utterance: 120,
            append_speaker_embedding: true,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0
            || self.feature_dim == 0
            || self.latent_dim == 0
            || self.embedding_dim == 0
        {
            return Err(Error::Config("generation dims must be positive".into()));
        }
        if self.speaker_scale < 0.0 || self.noise_scale < 0.0 {
            return Err(Error::Config("scales must be non-negative".into()));
        }
        if self.min_frames_per_utterance == 0
            || self.min_frames_per_utterance > self.max_frames_per_utterance
        {
            return Err(Error::Config(format!(
                "bad frames-per-utterance range [{}, {}]",
                self.min_frames_per_utterance, self.max_frames_per_utterance
            )));
        }
        Ok(())
    }

    /// Frame dimension utterances actually carry.
    pub fn frame_dim(&self) -> usize {
        self.feature_dim
            + if self.append_speaker_embedding {
                self.embedding_dim
            } else {
                0
            }
    }
}

/// Speaker counts and material sizes for the four partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSizes {
    pub train_g_speakers: usize,
    pub part1_speakers: usize,
    pub part2_speakers: usize,
    pub indicator_speakers: usize,
    pub train_utterances_per_speaker: usize,
    pub indicator_utterances_per_speaker: usize,
    /// Target frame count of each adaptation set.
    pub adaptation_frames: usize,
    /// Fraction of Part-1/Part-2 speakers holding two disjoint adaptation
    /// sets (the rest hold one).
    pub two_set_fraction: f64,
}

impl Default for PartitionSizes {
    fn default() -> Self {
        PartitionSizes {
            train_g_speakers: 60,
            part1_speakers: 40,
            part2_speakers: 100,
            indicator_speakers: 24,
            train_utterances_per_speaker: 8,
            indicator_utterances_per_speaker: 4,
            adaptation_frames: 1600,
            two_set_fraction: 0.75,
        }
    }
}

impl PartitionSizes {
    pub fn validate(&self) -> Result<()> {
        if self.train_g_speakers == 0
            || self.part1_speakers == 0
            || self.part2_speakers == 0
            || self.indicator_speakers == 0
        {
            return Err(Error::Config("partition speaker counts must be >= 1".into()));
        }
        if self.train_utterances_per_speaker == 0
            || self.indicator_utterances_per_speaker == 0
            || self.adaptation_frames == 0
        {
            return Err(Error::Config("partition material sizes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.two_set_fraction) {
            return Err(Error::Config("two_set_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Seeded corpus generator. Class means and the latent mixing matrix are
/// fixed by `cfg.seed`, so every partition shares the same class geometry.
pub struct Generator {
    cfg: GenConfig,
    /// `n_classes x feature_dim`.
    class_means: Mat,
    /// `feature_dim x latent_dim`, entries scaled so coloration has unit
    /// per-dimension variance before `speaker_scale`.
    mixing: Mat,
}

impl Generator {
    pub fn new(cfg: GenConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeds::rng_from(seeds::derive_seed(cfg.seed, "class-means"));
        let mut class_means = Mat::zeros(cfg.n_classes, cfg.feature_dim);
        for k in 0..cfg.n_classes {
            for v in class_means.row_mut(k) {
                *v = normal(&mut rng);
            }
        }
        let mut rng = seeds::rng_from(seeds::derive_seed(cfg.seed, "mixing"));
        let mut mixing = Mat::zeros(cfg.feature_dim, cfg.latent_dim);
        let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
        for d in 0..cfg.feature_dim {
            for v in mixing.row_mut(d) {
                *v = scale * normal(&mut rng);
            }
        }
        Ok(Generator {
            cfg,
            class_means,
            mixing,
        })
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }

    pub fn class_mean(&self, k: usize) -> &[f64] {
        self.class_means.row(k)
    }

    /// Draws `n` speaker profiles with independent latents. Ids are
    /// `{prefix}{index:04}`; each speaker's stream derives from `seed` and
    /// its id, so generation parallelizes per speaker.
    pub fn make_speakers(&self, n: usize, prefix: &str, seed: u64) -> Result<Vec<SpeakerProfile>> {
        if n == 0 {
            return Err(Error::Config("speaker count must be >= 1".into()));
        }
        Ok((0..n)
            .map(|i| {
                let speaker_id = format!("{prefix}{i:04}");
                let mut rng =
                    seeds::rng_from(seeds::derive_seed(seed, &format!("speaker:{speaker_id}")));
                let latent: Vec<f64> = (0..self.cfg.latent_dim).map(|_| normal(&mut rng)).collect();
                let embedding: Vec<f64> = (0..self.cfg.embedding_dim)
                    .map(|_| self.cfg.speaker_scale * normal(&mut rng))
                    .collect();
                SpeakerProfile {
                    speaker_id,
                    latent,
                    embedding,
                }
            })
            .collect())
    }

    /// Per-speaker coloration added to every frame: `speaker_scale * M . latent`.
    fn coloration(&self, speaker: &SpeakerProfile) -> Vec<f64> {
        (0..self.cfg.feature_dim)
            .map(|d| self.cfg.speaker_scale * crate::mat::dot(self.mixing.row(d), &speaker.latent))
            .collect()
    }

    /// Synthesizes one labeled utterance of `length` frames.
    ///
    /// Labels cycle through the classes from a seeded start offset with
    /// occasional seeded repeats, keeping classes balanced and reproducible.
    pub fn synth_utterance(
        &self,
        speaker: &SpeakerProfile,
        length: usize,
        utterance_id: impl Into<String>,
        rng: &mut ChaCha8Rng,
    ) -> Utterance {
        assert!(length >= 1, "utterance length must be >= 1");
        let k = self.cfg.n_classes;
        let color = self.coloration(speaker);
        let dim = self.cfg.frame_dim();

        let mut labels = Vec::with_capacity(length);
        let mut pos = rng.gen_range(0..k);
        for _ in 0..length {
            labels.push(pos % k);
            // jitter: occasionally hold the class for another frame
            if rng.gen_range(0.0..1.0) >= 0.1 {
                pos += 1;
            }
        }

        let mut frames = Mat::zeros(length, dim);
        for (t, &label) in labels.iter().enumerate() {
            let mean = self.class_means.row(label);
            let row = frames.row_mut(t);
            for d in 0..self.cfg.feature_dim {
                row[d] = mean[d] + color[d] + self.cfg.noise_scale * normal(rng);
            }
            if self.cfg.append_speaker_embedding {
                row[self.cfg.feature_dim..].copy_from_slice(&speaker.embedding);
            }
        }
        Utterance {
            utterance_id: utterance_id.into(),
            speaker_id: speaker.speaker_id.clone(),
            frames,
            labels: Some(labels),
        }
    }

    fn utterance_for(&self, speaker: &SpeakerProfile, utt_id: &str, length: usize) -> Utterance {
        let mut rng = seeds::rng_from(seeds::derive_seed(self.cfg.seed, &format!("utt:{utt_id}")));
        self.synth_utterance(speaker, length, utt_id, &mut rng)
    }

    fn pick_length(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(self.cfg.min_frames_per_utterance..=self.cfg.max_frames_per_utterance)
    }

    /// Builds the four partitions with pairwise-disjoint speakers.
    pub fn make_partitions(&self, sizes: &PartitionSizes) -> Result<Corpus> {
        sizes.validate()?;
        let train_g = self.plain_partition(
            PartitionName::TrainG,
            "tg-",
            sizes.train_g_speakers,
            sizes.train_utterances_per_speaker,
        )?;
        let indicator = self.plain_partition(
            PartitionName::Indicator,
            "ind-",
            sizes.indicator_speakers,
            sizes.indicator_utterances_per_speaker,
        )?;
        let part1 = self.client_partition(PartitionName::Part1, "p1-", sizes.part1_speakers, sizes)?;
        let part2 = self.client_partition(PartitionName::Part2, "p2-", sizes.part2_speakers, sizes)?;
        Ok(Corpus {
            train_g,
            part1,
            part2,
            indicator,
        })
    }

    fn plain_partition(
        &self,
        name: PartitionName,
        prefix: &str,
        n_speakers: usize,
        utts_per_speaker: usize,
    ) -> Result<CorpusPartition> {
        let speakers = self.make_speakers(n_speakers, prefix, self.cfg.seed)?;
        let mut utterances = Vec::with_capacity(n_speakers * utts_per_speaker);
        for sp in &speakers {
            let mut len_rng = seeds::rng_from(seeds::derive_seed(
                self.cfg.seed,
                &format!("lengths:{}", sp.speaker_id),
            ));
            for j in 0..utts_per_speaker {
                let utt_id = format!("{}-u{j:03}", sp.speaker_id);
                let length = self.pick_length(&mut len_rng);
                utterances.push(self.utterance_for(sp, &utt_id, length));
            }
        }
        Ok(CorpusPartition {
            name,
            speakers,
            utterances,
            adaptation_sets: BTreeMap::new(),
        })
    }

    fn client_partition(
        &self,
        name: PartitionName,
        prefix: &str,
        n_speakers: usize,
        sizes: &PartitionSizes,
    ) -> Result<CorpusPartition> {
        let speakers = self.make_speakers(n_speakers, prefix, self.cfg.seed)?;
        let n_two = ((sizes.two_set_fraction * n_speakers as f64).round() as usize).min(n_speakers);
        let mut utterances = Vec::new();
        let mut adaptation_sets = BTreeMap::new();
        for (i, sp) in speakers.iter().enumerate() {
            let n_sets = if i < n_two { 2 } else { 1 };
            let mut len_rng = seeds::rng_from(seeds::derive_seed(
                self.cfg.seed,
                &format!("lengths:{}", sp.speaker_id),
            ));
            let mut sets = Vec::with_capacity(n_sets);
            let mut utt_counter = 0usize;
            for _ in 0..n_sets {
                let mut ids = Vec::new();
                let mut frames = 0usize;
                while frames < sizes.adaptation_frames {
                    let utt_id = format!("{}-u{utt_counter:03}", sp.speaker_id);
                    utt_counter += 1;
                    let length = self.pick_length(&mut len_rng);
                    let utt = self.utterance_for(sp, &utt_id, length);
                    frames += utt.frames.rows();
                    ids.push(utt_id);
                    utterances.push(utt);
                }
                sets.push(ids);
            }
            adaptation_sets.insert(sp.speaker_id.clone(), sets);
        }
        Ok(CorpusPartition {
            name,
            speakers,
            utterances,
            adaptation_sets,
        })
    }
}

/// True when no speaker id appears in more than one partition.
pub fn speakers_disjoint(corpus: &Corpus) -> bool {
    let mut seen = std::collections::HashSet::new();
    corpus
        .partitions()
        .iter()
        .flat_map(|p| p.speaker_ids())
        .all(|id| seen.insert(id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> GenConfig {
        GenConfig {
            seed,
            ..GenConfig::default()
        }
    }

    #[test]
    fn zero_speakers_rejected() {
        let gen = Generator::new(cfg(1)).unwrap();
        assert!(gen.make_speakers(0, "x-", 1).is_err());
    }

    #[test]
    fn same_seed_identical_speakers() {
        let gen = Generator::new(cfg(2)).unwrap();
        let a = gen.make_speakers(5, "s-", 7).unwrap();
        let b = gen.make_speakers(5, "s-", 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn latents_are_uncorrelated_on_average() {
        let mut c = cfg(3);
        c.latent_dim = 8;
        let gen = Generator::new(c).unwrap();
        let speakers = gen.make_speakers(1000, "s-", 11).unwrap();
        // average pairwise Pearson correlation across latent dims ~ 0
        let n = speakers.len();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..n {
            for j in (i + 1)..n.min(i + 50) {
                // striding keeps the test fast; still ~49k pairs
                let a = &speakers[i].latent;
                let b = &speakers[j].latent;
                let ma = a.iter().sum::<f64>() / a.len() as f64;
                let mb = b.iter().sum::<f64>() / b.len() as f64;
                let mut num = 0.0;
                let mut da = 0.0;
                let mut db = 0.0;
                for d in 0..a.len() {
                    num += (a[d] - ma) * (b[d] - mb);
                    da += (a[d] - ma).powi(2);
                    db += (b[d] - mb).powi(2);
                }
                sum += num / (da.sqrt() * db.sqrt());
                pairs += 1;
            }
        }
        let avg = sum / pairs as f64;
        assert!(avg.abs() < 0.1, "average pairwise correlation {avg}");
    }

    #[test]
    fn no_speaker_scale_means_no_speaker_signal() {
        let mut c = cfg(4);
        c.speaker_scale = 0.0;
        let gen = Generator::new(c).unwrap();
        let speakers = gen.make_speakers(2, "s-", 5).unwrap();
        // embeddings are zeroed, so appended dims carry nothing
        assert!(speakers.iter().all(|s| s.embedding.iter().all(|&v| v == 0.0)));

        // class-conditional means match across speakers within sampling error
        let mut rng_a = seeds::rng_from(100);
        let mut rng_b = seeds::rng_from(200);
        let ua = gen.synth_utterance(&speakers[0], 4000, "a", &mut rng_a);
        let ub = gen.synth_utterance(&speakers[1], 4000, "b", &mut rng_b);
        for target in 0..2usize {
            let mean_of = |u: &Utterance| {
                let labels = u.labels.as_ref().unwrap();
                let mut m = vec![0.0; gen.config().feature_dim];
                let mut n = 0usize;
                for t in 0..u.frames.rows() {
                    if labels[t] == target {
                        crate::mat::axpy(1.0, &u.frames.row(t)[..m.len()], &mut m);
                        n += 1;
                    }
                }
                for v in m.iter_mut() {
                    *v /= n as f64;
                }
                (m, n)
            };
            let (ma, na) = mean_of(&ua);
            let (mb, nb) = mean_of(&ub);
            let se = 0.5 * ((1.0 / na as f64) + (1.0 / nb as f64)).sqrt();
            for d in 0..ma.len() {
                assert!(
                    (ma[d] - mb[d]).abs() < 6.0 * se,
                    "class {target} dim {d}: {} vs {}",
                    ma[d],
                    mb[d]
                );
            }
        }
    }

    #[test]
    fn noiseless_frames_equal_class_means() {
        let mut c = cfg(5);
        c.speaker_scale = 0.0;
        c.noise_scale = 0.0;
        c.append_speaker_embedding = false;
        let gen = Generator::new(c).unwrap();
        let sp = &gen.make_speakers(1, "s-", 1).unwrap()[0];
        let mut rng = seeds::rng_from(6);
        let utt = gen.synth_utterance(sp, 50, "u", &mut rng);
        let labels = utt.labels.as_ref().unwrap();
        for t in 0..utt.frames.rows() {
            assert_eq!(utt.frames.row(t), gen.class_mean(labels[t]));
        }
    }

    #[test]
    fn same_rng_state_reproduces_frames() {
        let gen = Generator::new(cfg(6)).unwrap();
        let sp = &gen.make_speakers(1, "s-", 2).unwrap()[0];
        let mut rng_a = seeds::rng_from(77);
        let mut rng_b = seeds::rng_from(77);
        let a = gen.synth_utterance(sp, 60, "a", &mut rng_a);
        let b = gen.synth_utterance(sp, 60, "b", &mut rng_b);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn appended_dims_equal_embedding_exactly() {
        let gen = Generator::new(cfg(7)).unwrap();
        let sp = &gen.make_speakers(1, "s-", 3).unwrap()[0];
        let mut rng = seeds::rng_from(8);
        let utt = gen.synth_utterance(sp, 30, "u", &mut rng);
        let d0 = gen.config().feature_dim;
        for t in 0..utt.frames.rows() {
            assert_eq!(&utt.frames.row(t)[d0..], sp.embedding.as_slice());
        }
    }

    #[test]
    fn desk_partitions_are_disjoint_and_structured() {
        let gen = Generator::new(cfg(9)).unwrap();
        let sizes = PartitionSizes {
            train_g_speakers: 60,
            part1_speakers: 40,
            part2_speakers: 30,
            indicator_speakers: 8,
            ..PartitionSizes::default()
        };
        let corpus = gen.make_partitions(&sizes).unwrap();
        assert!(speakers_disjoint(&corpus));
        assert_eq!(corpus.train_g.speakers.len(), 60);
        assert_eq!(corpus.part1.speakers.len(), 40);
        assert_eq!(corpus.part2.speakers.len(), 30);
        assert_eq!(corpus.indicator.speakers.len(), 8);
        assert_eq!(corpus.indicator.utterances.len(), 80);

        // adaptation sets disjoint per speaker, with enough material
        for (speaker, sets) in &corpus.part1.adaptation_sets {
            assert!(!sets.is_empty() && sets.len() <= 2, "{speaker}");
            if sets.len() == 2 {
                assert!(sets[0].iter().all(|id| !sets[1].contains(id)));
            }
            for set in sets {
                let frames: usize = set
                    .iter()
                    .map(|id| corpus.part1.utterance(id).unwrap().frames.rows())
                    .sum();
                assert!(frames >= sizes.adaptation_frames);
            }
        }
        let two_sets = corpus
            .part1
            .adaptation_sets
            .values()
            .filter(|s| s.len() == 2)
            .count();
        assert_eq!(two_sets, 30);
    }

    #[test]
    fn paper_shaped_sizes_accepted_structurally() {
        let mut c = cfg(10);
        c.min_frames_per_utterance = 2;
        c.max_frames_per_utterance = 3;
        let gen = Generator::new(c).unwrap();
        let sizes = PartitionSizes {
            train_g_speakers: 880,
            part1_speakers: 736,
            part2_speakers: 634,
            indicator_speakers: 32,
            train_utterances_per_speaker: 1,
            indicator_utterances_per_speaker: 10,
            adaptation_frames: 2,
            two_set_fraction: 564.0 / 736.0,
        };
        let corpus = gen.make_partitions(&sizes).unwrap();
        assert!(speakers_disjoint(&corpus));
        assert_eq!(corpus.train_g.speakers.len(), 880);
        assert_eq!(corpus.part1.speakers.len(), 736);
        assert_eq!(corpus.part2.speakers.len(), 634);
        assert_eq!(corpus.indicator.speakers.len(), 32);
        assert_eq!(corpus.indicator.utterances.len(), 320);
        let part1_models: usize = corpus.part1.adaptation_sets.values().map(Vec::len).sum();
        assert_eq!(part1_models, 1300);
    }

    #[test]
    fn centroid_classifier_beats_chance_with_speaker_signal() {
        // sanity floor: mean frame vectors separate speakers better than chance
        let gen = Generator::new(cfg(11)).unwrap();
        let speakers = gen.make_speakers(10, "s-", 12).unwrap();
        let mut train_means = Vec::new();
        let mut test_means = Vec::new();
        for (i, sp) in speakers.iter().enumerate() {
            let mut rng = seeds::rng_from(1000 + i as u64);
            let train = gen.synth_utterance(sp, 200, format!("tr{i}"), &mut rng);
            let test = gen.synth_utterance(sp, 200, format!("te{i}"), &mut rng);
            let mean = |u: &Utterance| {
                let mut m = vec![0.0; u.frames.cols()];
                for t in 0..u.frames.rows() {
                    crate::mat::axpy(1.0, u.frames.row(t), &mut m);
                }
                for v in m.iter_mut() {
                    *v /= u.frames.rows() as f64;
                }
                m
            };
            train_means.push(mean(&train));
            test_means.push(mean(&test));
        }
        let correct = test_means
            .iter()
            .enumerate()
            .filter(|(i, tm)| {
                let best = train_means
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        crate::mat::dist2(tm, a)
                            .partial_cmp(&crate::mat::dist2(tm, b))
                            .unwrap()
                    })
                    .unwrap()
                    .0;
                best == *i
            })
            .count();
        assert!(
            correct as f64 / speakers.len() as f64 > 0.5,
            "centroid accuracy {correct}/10 not above chance"
        );
    }
}
