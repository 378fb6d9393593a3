//! Stage-by-stage training, checkpoint assembly and the evaluation
//! protocols run on a trained bundle.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clap::{train_clap, ClapModel, TrainTrace};
use crate::config::{RunConfig, ARTIFACT_VERSION};
use crate::data::{Checkpoint, PairRecord};
use crate::decoder_ar::{train_ar, ArDecoder};
use crate::diffusion::{train_diffusion, SamplerKind, TransitionNetwork};
use crate::editing::{edit_by_optimization, train_tokenwise_decoder, TokenwiseDecoder};
use crate::error::{Error, Result};
use crate::evaluation::{
    best_of_n, hit_ratio, motif_count, retrieval_accuracy, Direction, RetrievalTask, SelectBy,
};
use crate::facilitator::{condition, train_facilitator, Facilitator};
use crate::generator::{Decoder, DecoderKind};
use crate::nn::{seeded_rng, Rng};
use crate::report::{Provenance, Report};
use crate::tokenizer::{TextVocabulary, MASK, PROTEIN_VOCAB_SIZE};
use crate::Schedule;

const CLAP_PREFIX: &str = "clap";
const FACILITATOR_PREFIX: &str = "facilitator";
const TOKENWISE_PREFIX: &str = "tokenwise";

/// Independent random streams per stage, all derived from the run seed.
pub fn stage_rng(seed: u64, stage: &str) -> Rng {
    let salt = stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    seeded_rng(seed ^ salt)
}

/// JSON block stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub artifact_version: String,
    pub config: RunConfig,
}

/// Everything trained so far. Later stages extend the bundle, so each
/// stage's checkpoint is a superset of its input.
pub struct Models {
    pub config: RunConfig,
    pub clap: ClapModel,
    pub facilitator: Option<Facilitator>,
    pub decoders: Vec<Decoder>,
    pub tokenwise: Option<TokenwiseDecoder>,
}

pub fn build_decoder(kind: DecoderKind, cfg: &RunConfig, rng: &mut Rng) -> Result<Decoder> {
    Ok(match kind.mixer() {
        None => Decoder::Ar {
            model: ArDecoder::new(&cfg.model, rng)?,
            temperature: cfg.ar.sample_temperature,
        },
        Some(mixer) => Decoder::Diffusion {
            kind,
            model: TransitionNetwork::new(&cfg.model, cfg.diffusion.steps, mixer, rng)?,
            schedule: Schedule::linear(cfg.diffusion.steps, PROTEIN_VOCAB_SIZE, MASK)?,
            sampler: cfg.diffusion.sampler,
        },
    })
}

impl Models {
    pub fn decoder(&self, kind: DecoderKind) -> Result<&Decoder> {
        self.decoders
            .iter()
            .find(|d| d.kind() == kind)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "no trained '{}' decoder in this bundle",
                    kind.name()
                ))
            })
    }

    pub fn set_sampler(&mut self, sampler: SamplerKind) {
        for d in &mut self.decoders {
            if let Decoder::Diffusion { sampler: s, .. } = d {
                *s = sampler;
            }
        }
    }

    /// Decoder condition for a prompt.
    pub fn condition(&self, prompt: &str, use_facilitator: bool) -> Result<Vec<f64>> {
        let z_t = self.clap.embed_text(prompt)?;
        if use_facilitator && self.facilitator.is_none() {
            return Err(Error::invalid(
                "bundle has no trained facilitator; use the bypass condition",
            ));
        }
        condition(self.facilitator.as_ref(), &z_t, !use_facilitator)
    }

    /// Generated length: the diffusion decoders emit a fixed length, the
    /// autoregressive one stops at its end token.
    pub fn generation_length(&self, kind: DecoderKind) -> usize {
        match kind {
            DecoderKind::Ar => self.config.model.max_protein_len,
            _ => self.config.diffusion.length,
        }
    }

    pub fn sample_candidates(
        &self,
        kind: DecoderKind,
        prompt: &str,
        n: usize,
        use_facilitator: bool,
        rng: &mut Rng,
    ) -> Result<Vec<String>> {
        let decoder = self.decoder(kind)?;
        let cond = self.condition(prompt, use_facilitator)?;
        let len = self.generation_length(kind);
        (0..n).map(|_| decoder.generate(&cond, len, rng)).collect()
    }

    /// Best of `n` samples by similarity to the prompt.
    pub fn generate_best(
        &self,
        kind: DecoderKind,
        prompt: &str,
        n: usize,
        use_facilitator: bool,
        rng: &mut Rng,
    ) -> Result<String> {
        let candidates = self.sample_candidates(kind, prompt, n, use_facilitator, rng)?;
        let (i, _) = best_of_n(&candidates, prompt, SelectBy::Prompt, &self.clap)?;
        Ok(candidates[i].clone())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let manifest = Manifest {
            artifact_version: ARTIFACT_VERSION.to_string(),
            config: self.config.clone(),
        };
        let mut ckpt = Checkpoint::new(
            self.clap.vocab.to_lines(),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        );
        ckpt.add_module(CLAP_PREFIX, &self.clap)?;
        if let Some(f) = &self.facilitator {
            ckpt.add_module(FACILITATOR_PREFIX, f)?;
        }
        for d in &self.decoders {
            ckpt.add_module(d.kind().prefix(), d)?;
        }
        if let Some(g) = &self.tokenwise {
            ckpt.add_module(TOKENWISE_PREFIX, g)?;
        }
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&ckpt.config)?;
        if manifest.artifact_version != ARTIFACT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint written by version {}, this is {ARTIFACT_VERSION}",
                manifest.artifact_version
            )));
        }
        let config = manifest.config;
        config.validate()?;
        // Architectures are rebuilt from the config, then every parameter
        // is overwritten from the checkpoint.
        let mut rng = seeded_rng(0);
        let vocab = TextVocabulary::from_lines(&ckpt.vocab)?;
        let clap = ClapModel::new(vocab, &config.model, &mut rng)?;
        ckpt.load_module(CLAP_PREFIX, &clap)?;
        let facilitator = if ckpt.has_prefix(FACILITATOR_PREFIX) {
            let f = Facilitator::new(config.model.d_latent, &mut rng);
            ckpt.load_module(FACILITATOR_PREFIX, &f)?;
            Some(f)
        } else {
            None
        };
        let mut decoders = Vec::new();
        for kind in DecoderKind::all() {
            if ckpt.has_prefix(kind.prefix()) {
                let d = build_decoder(kind, &config, &mut rng)?;
                ckpt.load_module(kind.prefix(), &d)?;
                decoders.push(d);
            }
        }
        let tokenwise = if ckpt.has_prefix(TOKENWISE_PREFIX) {
            let g = TokenwiseDecoder::new(&config.model, config.edit.decoder_depth, &mut rng)?;
            ckpt.load_module(TOKENWISE_PREFIX, &g)?;
            Some(g)
        } else {
            None
        };
        Ok(Models {
            config,
            clap,
            facilitator,
            decoders,
            tokenwise,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Alignment stage. The text vocabulary is built from the training texts.
pub fn pretrain_clap(config: &RunConfig, data: &[PairRecord]) -> Result<(Models, TrainTrace)> {
    config.validate()?;
    let mut rng = stage_rng(config.seed, "clap");
    let texts: Vec<&str> = data.iter().map(|r| r.text.as_str()).collect();
    let vocab = TextVocabulary::build(&texts, config.model.text_vocab_size)?;
    let clap = ClapModel::new(vocab, &config.model, &mut rng)?;
    let trace = train_clap(&clap, data, &config.clap, &mut rng)?;
    let models = Models {
        config: config.clone(),
        clap,
        facilitator: None,
        decoders: Vec::new(),
        tokenwise: None,
    };
    Ok((models, trace))
}

/// Row-per-record representation vectors.
pub type Representations = Vec<Vec<f64>>;

/// Frozen `(z_t, z_p)` for every record.
pub fn representations(
    clap: &ClapModel,
    data: &[PairRecord],
) -> Result<(Representations, Representations)> {
    let mut zt = Vec::with_capacity(data.len());
    let mut zp = Vec::with_capacity(data.len());
    for r in data {
        zt.push(clap.embed_text(&r.text)?);
        zp.push(clap.embed_protein(&r.sequence)?);
    }
    Ok((zt, zp))
}

pub fn fit_facilitator(models: &mut Models, data: &[PairRecord]) -> Result<TrainTrace> {
    let mut rng = stage_rng(models.config.seed, "facilitator");
    let (zt, zp) = representations(&models.clap, data)?;
    let f = Facilitator::new(models.clap.d_latent(), &mut rng);
    let trace = train_facilitator(&f, &zt, &zp, &models.config.facilitator, &mut rng)?;
    models.facilitator = Some(f);
    Ok(trace)
}

/// Decoders learn `p(x | z_p)` with the frozen protein representation of
/// each training sequence as the condition. Retraining a kind replaces it.
pub fn fit_decoder(
    models: &mut Models,
    kind: DecoderKind,
    data: &[PairRecord],
) -> Result<TrainTrace> {
    let mut rng = stage_rng(models.config.seed, kind.prefix());
    let cfg = &models.config;
    let mut examples = Vec::with_capacity(data.len());
    for r in data {
        let ids = models.clap.protein_ids(&r.sequence)?;
        examples.push((models.clap.embed_protein(&r.sequence)?, ids));
    }
    let decoder = build_decoder(kind, cfg, &mut rng)?;
    let trace = match &decoder {
        Decoder::Ar { model, .. } => train_ar(model, &examples, &cfg.ar, &mut rng)?,
        Decoder::Diffusion {
            model, schedule, ..
        } => {
            let len = cfg.diffusion.length;
            let clipped: Vec<(Vec<f64>, Vec<usize>)> = examples
                .into_iter()
                .map(|(c, ids)| {
                    let n = ids.len().min(len);
                    (c, ids[..n].to_vec())
                })
                .collect();
            train_diffusion(model, &clipped, schedule, &cfg.diffusion, &mut rng)?.trace
        }
    };
    models.decoders.retain(|d| d.kind() != kind);
    models.decoders.push(decoder);
    models
        .decoders
        .sort_by_key(|d| DecoderKind::all().iter().position(|k| *k == d.kind()));
    Ok(trace)
}

pub fn fit_tokenwise(models: &mut Models, data: &[PairRecord]) -> Result<TrainTrace> {
    let mut rng = stage_rng(models.config.seed, TOKENWISE_PREFIX);
    let g = TokenwiseDecoder::new(
        &models.config.model,
        models.config.edit.decoder_depth,
        &mut rng,
    )?;
    let proteins: Vec<String> = data.iter().map(|r| r.sequence.clone()).collect();
    let trace =
        train_tokenwise_decoder(&g, &models.clap, &proteins, &models.config.edit, &mut rng)?;
    models.tokenwise = Some(g);
    Ok(trace)
}

/// Distinct texts in first-seen order, at most `limit` of them.
pub fn distinct_prompts(data: &[PairRecord], limit: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in data {
        if out.len() >= limit {
            break;
        }
        if !out.contains(&r.text) {
            out.push(r.text.clone());
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RetrievalSetup {
    pub kinds: Vec<DecoderKind>,
    pub ts: Vec<usize>,
    /// Each entry runs one condition; `true` uses the facilitator.
    pub facilitator: Vec<bool>,
    pub samples: usize,
    pub seed: u64,
}

pub fn facilitator_label(on: bool) -> &'static str {
    if on {
        "facilitator"
    } else {
        "bypass"
    }
}

/// Retrieval accuracy rows `retrieval_accuracy  <kind>/<condition>/T=<t>`.
pub fn evaluate_retrieval(
    models: &Models,
    prompts: &[String],
    setup: &RetrievalSetup,
    report: &mut Report,
) -> Result<()> {
    let text: Vec<Vec<f64>> = prompts
        .iter()
        .map(|p| models.clap.embed_text(p))
        .collect::<Result<_>>()?;
    for &kind in &setup.kinds {
        for &use_f in &setup.facilitator {
            let mut rng = stage_rng(
                setup.seed,
                &format!("retrieval/{}/{}", kind.name(), facilitator_label(use_f)),
            );
            let protein: Vec<Vec<f64>> = prompts
                .iter()
                .map(|p| {
                    let g = models.generate_best(kind, p, setup.samples, use_f, &mut rng)?;
                    models.clap.embed_protein(&g)
                })
                .collect::<Result<_>>()?;
            for &t in &setup.ts {
                let acc = retrieval_accuracy(&text, &protein, &RetrievalTask::new(t, setup.seed))?;
                report.push(
                    "retrieval_accuracy",
                    format!("{}/{}/T={t}", kind.name(), facilitator_label(use_f)),
                    acc,
                );
            }
        }
    }
    Ok(())
}

/// One editing task: raise the count of `motif` in `input` as asked by
/// `prompt`.
#[derive(Debug, Clone, PartialEq)]
pub struct EditTask {
    pub id: String,
    pub input: String,
    pub prompt: String,
    pub motif: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub edited: Vec<String>,
    pub hit_ratio: f64,
}

/// Latent-optimization editing of every task at one `lambda`.
pub fn evaluate_editing(
    models: &Models,
    tasks: &[EditTask],
    lambda: f64,
    use_facilitator: bool,
) -> Result<EditOutcome> {
    if use_facilitator && models.facilitator.is_none() {
        return Err(Error::invalid("bundle has no trained facilitator"));
    }
    let facilitator = models.facilitator.as_ref().filter(|_| use_facilitator);
    let g = models
        .tokenwise
        .as_ref()
        .ok_or_else(|| Error::invalid("bundle has no token-wise decoder"))?;
    let mut before = Vec::with_capacity(tasks.len());
    let mut after = Vec::with_capacity(tasks.len());
    let mut edited = Vec::with_capacity(tasks.len());
    for t in tasks {
        let e = edit_by_optimization(
            &t.input,
            &t.prompt,
            lambda,
            &models.clap,
            facilitator,
            g,
            &models.config.edit,
        )?;
        before.push(motif_count(&t.input, &t.motif) as f64);
        after.push(motif_count(&e.sequence, &t.motif) as f64);
        edited.push(e.sequence);
    }
    let hit_ratio = hit_ratio(&before, &after, Direction::Higher)?;
    Ok(EditOutcome {
        before,
        after,
        edited,
        hit_ratio,
    })
}

pub fn provenance(models: &Models) -> Provenance {
    Provenance::of(&models.config)
}
