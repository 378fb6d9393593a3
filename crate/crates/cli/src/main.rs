use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use seqdesign::config::RunConfig;
use seqdesign::data::{
    format_fasta, format_pairs, format_scores, generate_synthetic, load_pairs, read_fasta,
    read_scores, FastaRecord, SyntheticRules,
};
use seqdesign::diffusion::SamplerKind;
use seqdesign::editing::{
    edit_by_interpolation, edit_by_optimization, train_tokenwise_decoder, InterpolationRequest,
    TokenwiseDecoder,
};
use seqdesign::evaluation::{
    best_of_n, hit_ratio, retrieval_accuracy, Direction, OracleScorer, RetrievalTask, SelectBy,
};
use seqdesign::generator::DecoderKind;
use seqdesign::pipeline::{
    distinct_prompts, evaluate_retrieval, facilitator_label, fit_decoder, fit_facilitator,
    pretrain_clap, stage_rng, Models, Representations, RetrievalSetup,
};
use seqdesign::report::{Provenance, Report};

#[derive(Parser)]
#[command(
    name = "seqdesign",
    version,
    about = "Text-conditioned protein sequence design"
)]
struct Cli {
    /// Relative paths are resolved against this directory.
    #[arg(long, global = true, env = "SEQDESIGN_DATA_DIR", default_value = ".")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Interp,
    Optim,
}

#[derive(Clone, Copy, ValueEnum)]
enum Conditions {
    Both,
    Facilitator,
    Bypass,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic pair corpus and its ground-truth label sidecar.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON rule set; the built-in four-property rules otherwise.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Defaults to `<out>` with a `.labels.tsv` extension.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Contrastive alignment of the text and protein encoders.
    PretrainClap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Regression from text to protein representations.
    TrainFacilitator {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clap: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Conditional decoder training.
    TrainDecoder {
        #[arg(long, value_parser = parse_kind)]
        kind: DecoderKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clap: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sample proteins for a prompt as FASTA.
    Generate {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, value_parser = parse_kind, default_value = "ar")]
        kind: DecoderKind,
        /// Condition on the text representation itself.
        #[arg(long)]
        no_facilitator: bool,
        #[arg(long, value_parser = parse_sampler)]
        sampler: Option<SamplerKind>,
        /// Emit only the sample most similar to the prompt.
        #[arg(long)]
        best: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Text-guided editing of the proteins in a FASTA file.
    Edit {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, required_if_eq("method", "interp"))]
        theta: Option<f64>,
        #[arg(long, required_if_eq("method", "optim"))]
        lambda: Option<f64>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_parser = parse_kind, default_value = "ar")]
        kind: DecoderKind,
        #[arg(long)]
        no_facilitator: bool,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, value_parser = parse_select, default_value = "prompt")]
        select_by: SelectBy,
        /// Oracle: overlapping count of this motif.
        #[arg(long, conflicts_with = "composition")]
        motif: Option<String>,
        /// Oracle: fraction of residues in this set.
        #[arg(long)]
        composition: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieval accuracy of generated proteins against their prompts.
    EvalRetrieval {
        /// Comma-separated option counts.
        #[arg(long, value_delimiter = ',', default_value = "4,10,20")]
        t: Vec<usize>,
        #[arg(long, required_unless_present = "embeddings")]
        ckpt: Option<PathBuf>,
        /// Pairs whose distinct texts serve as prompts.
        #[arg(long, required_unless_present = "embeddings")]
        data: Option<PathBuf>,
        /// Precomputed `id<TAB>text vector<TAB>protein vector` rows with
        /// comma-separated components; no models are run.
        #[arg(long, conflicts_with_all = ["ckpt", "data"])]
        embeddings: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "ar")]
        kinds: Vec<DecoderKind>,
        #[arg(long, value_enum, default_value = "both")]
        conditions: Conditions,
        #[arg(long, default_value_t = 100)]
        prompts: usize,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, value_parser = parse_sampler)]
        sampler: Option<SamplerKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fraction of scores that moved in the requested direction.
    EvalHitRatio {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, value_parser = parse_direction)]
        direction: Direction,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<DecoderKind, String> {
    s.parse().map_err(|e: seqdesign::Error| e.to_string())
}

fn parse_sampler(s: &str) -> std::result::Result<SamplerKind, String> {
    s.parse().map_err(|e: seqdesign::Error| e.to_string())
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    s.parse().map_err(|e: seqdesign::Error| e.to_string())
}

fn parse_select(s: &str) -> std::result::Result<SelectBy, String> {
    match s {
        "prompt" => Ok(SelectBy::Prompt),
        "protein" => Ok(SelectBy::Protein),
        other => Err(format!("expected prompt or protein, got '{other}'")),
    }
}

struct Ctx {
    data_dir: PathBuf,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_dir.join(p)
        }
    }

    fn config(&self, p: &Option<PathBuf>) -> Result<Option<RunConfig>> {
        p.as_ref()
            .map(|p| {
                let p = self.path(p);
                let text = fs::read_to_string(&p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                RunConfig::from_json(&text).with_context(|| format!("config {}", p.display()))
            })
            .transpose()
    }

    fn load(&self, ckpt: &Path) -> Result<Models> {
        let p = self.path(ckpt);
        if !p.exists() {
            bail!("checkpoint {} does not exist", p.display());
        }
        Models::load(&p).with_context(|| format!("loading checkpoint {}", p.display()))
    }

    /// Loads a bundle for a later training stage; a config passed on the
    /// command line must match the one the bundle was trained with.
    fn load_for_stage(&self, ckpt: &Path, config: &Option<PathBuf>) -> Result<Models> {
        let models = self.load(ckpt)?;
        if let Some(c) = self.config(config)? {
            if c != models.config {
                bail!(
                    "config mismatch: checkpoint was trained with config {} but {} was given",
                    models.config.hash(),
                    c.hash()
                );
            }
        }
        Ok(models)
    }

    fn write(&self, p: &Path, content: &str) -> Result<()> {
        let p = self.path(p);
        fs::write(&p, content).with_context(|| format!("writing {}", p.display()))
    }
}

fn training_report(models: &Models, stage: &str, losses: &[f64]) -> Report {
    let mut r = Report::new(Provenance::of(&models.config));
    r.push("train_steps", stage, losses.len() as f64);
    if let Some(first) = losses.first() {
        r.push("first_loss", stage, *first);
    }
    let tail = losses.len().clamp(1, 20);
    r.push(
        "final_loss",
        stage,
        losses[losses.len().saturating_sub(tail)..]
            .iter()
            .sum::<f64>()
            / tail as f64,
    );
    r
}

fn finish_training(
    ctx: &Ctx,
    models: &Models,
    stage: &str,
    losses: &[f64],
    out: &Path,
    report: &Option<PathBuf>,
) -> Result<()> {
    models
        .save(ctx.path(out))
        .with_context(|| format!("saving {}", out.display()))?;
    let r = training_report(models, stage, losses);
    if let Some(p) = report {
        r.write_all(ctx.path(p))?;
    }
    print!("{}", r.to_text());
    Ok(())
}

fn fasta_with_header(prov: &Provenance, records: &[FastaRecord]) -> String {
    prov.header_lines(';') + &format_fasta(records)
}

fn scorer_for(
    prompt: &str,
    motif: &Option<String>,
    composition: &Option<String>,
) -> Result<OracleScorer> {
    if let Some(m) = motif {
        return Ok(OracleScorer::MotifCount(m.to_uppercase()));
    }
    if let Some(c) = composition {
        return Ok(OracleScorer::Composition(c.to_uppercase()));
    }
    let rules = SyntheticRules::default();
    let hits: Vec<_> = rules
        .properties
        .iter()
        .filter(|p| p.templates.iter().any(|t| prompt.contains(t.as_str())))
        .collect();
    match hits.as_slice() {
        [p] => Ok(OracleScorer::MotifCount(p.motif.clone())),
        _ => bail!("cannot infer an oracle from the prompt; pass --motif or --composition"),
    }
}

fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("bad vector component '{v}'"))
        })
        .collect()
}

fn read_embeddings(path: &Path) -> Result<(Representations, Representations)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut t, mut p) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            bail!(
                "{}:{}: expected id, text vector and protein vector",
                path.display(),
                i + 1
            );
        }
        t.push(parse_vector(f[1]).with_context(|| format!("{}:{}", path.display(), i + 1))?);
        p.push(parse_vector(f[2]).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok((t, p))
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        data_dir: cli.data_dir,
    };
    match cli.command {
        Command::SynthData {
            out,
            n,
            seed,
            rules,
            labels,
        } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let rules = match rules {
                Some(p) => SyntheticRules::from_json(&fs::read_to_string(ctx.path(&p))?)?,
                None => SyntheticRules::default(),
            };
            let records = generate_synthetic(&rules, n, seed)?;
            let pairs: Vec<_> = records.iter().map(|r| r.record.clone()).collect();
            ctx.write(&out, &format_pairs(&pairs)?)?;
            let labels = labels.unwrap_or_else(|| out.with_extension("labels.tsv"));
            let header = format!(
                "# seed={seed}\n# version={}\n",
                seqdesign::config::ARTIFACT_VERSION
            );
            ctx.write(
                &labels,
                &(header + &seqdesign::data::format_labels(&rules, &records)),
            )?;
            println!("wrote {n} pairs to {}", ctx.path(&out).display());
        }
        Command::PretrainClap {
            data,
            config,
            out,
            report,
        } => {
            let cfg = ctx.config(&config)?.unwrap_or_default();
            let pairs = load_pairs(ctx.path(&data))?;
            let (models, trace) = pretrain_clap(&cfg, &pairs)?;
            finish_training(&ctx, &models, "clap", &trace.losses, &out, &report)?;
        }
        Command::TrainFacilitator {
            data,
            clap,
            config,
            out,
            report,
        } => {
            let mut models = ctx.load_for_stage(&clap, &config)?;
            let pairs = load_pairs(ctx.path(&data))?;
            let trace = fit_facilitator(&mut models, &pairs)?;
            finish_training(&ctx, &models, "facilitator", &trace.losses, &out, &report)?;
        }
        Command::TrainDecoder {
            kind,
            data,
            clap,
            config,
            out,
            report,
        } => {
            let mut models = ctx.load_for_stage(&clap, &config)?;
            let pairs = load_pairs(ctx.path(&data))?;
            let trace = fit_decoder(&mut models, kind, &pairs)?;
            finish_training(&ctx, &models, kind.prefix(), &trace.losses, &out, &report)?;
        }
        Command::Generate {
            prompt,
            ckpt,
            n,
            kind,
            no_facilitator,
            sampler,
            best,
            seed,
            out,
        } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let mut models = ctx.load(&ckpt)?;
            if let Some(s) = sampler {
                models.set_sampler(s);
            }
            let use_f = !no_facilitator;
            let mut rng = stage_rng(seed.unwrap_or(models.config.seed), "generate");
            let candidates = models.sample_candidates(kind, &prompt, n, use_f, &mut rng)?;
            let chosen: Vec<usize> = if best {
                vec![best_of_n(&candidates, &prompt, SelectBy::Prompt, &models.clap)?.0]
            } else {
                (0..candidates.len()).collect()
            };
            let records = chosen
                .into_iter()
                .map(|i| {
                    let sim = models.clap.similarity(&prompt, &candidates[i])?;
                    Ok(FastaRecord {
                        id: format!("gen{}", i + 1),
                        description: format!(
                            "kind={} condition={} similarity={sim:.6}",
                            kind.name(),
                            facilitator_label(use_f)
                        ),
                        sequence: candidates[i].clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let text = fasta_with_header(&Provenance::of(&models.config), &records);
            match out {
                Some(p) => ctx.write(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Edit {
            method,
            theta,
            lambda,
            input,
            prompt,
            ckpt,
            kind,
            no_facilitator,
            samples,
            select_by,
            motif,
            composition,
            seed,
            out,
        } => {
            let mut models = ctx.load(&ckpt)?;
            let inputs = read_fasta(ctx.path(&input))?;
            if inputs.is_empty() {
                bail!("{} holds no sequences", input.display());
            }
            let scorer = scorer_for(&prompt, &motif, &composition)?;
            let use_f = !no_facilitator && models.facilitator.is_some();
            let mut rng = stage_rng(seed.unwrap_or(models.config.seed), "edit");
            let edited: Vec<String> = match method {
                Method::Interp => {
                    let theta = theta.expect("required by clap");
                    let facilitator = models.facilitator.as_ref().filter(|_| use_f);
                    let decoder = models.decoder(kind)?;
                    let max_len = inputs.iter().map(|r| r.sequence.len()).max().unwrap_or(1);
                    inputs
                        .iter()
                        .map(|r| {
                            let req = InterpolationRequest {
                                protein: &r.sequence,
                                prompt: &prompt,
                                theta,
                                samples,
                                max_len,
                                select_by,
                            };
                            Ok(edit_by_interpolation(
                                &req,
                                &models.clap,
                                facilitator,
                                decoder,
                                &mut rng,
                            )?)
                        })
                        .collect::<Result<_>>()?
                }
                Method::Optim => {
                    let lambda = lambda.expect("required by clap");
                    if models.tokenwise.is_none() {
                        // Autoencoder over the inputs being edited.
                        let g = TokenwiseDecoder::new(
                            &models.config.model,
                            models.config.edit.decoder_depth,
                            &mut rng,
                        )?;
                        let proteins: Vec<String> =
                            inputs.iter().map(|r| r.sequence.clone()).collect();
                        train_tokenwise_decoder(
                            &g,
                            &models.clap,
                            &proteins,
                            &models.config.edit,
                            &mut rng,
                        )?;
                        models.tokenwise = Some(g);
                    }
                    let g = models.tokenwise.as_ref().expect("set above");
                    let facilitator = models.facilitator.as_ref().filter(|_| use_f);
                    inputs
                        .iter()
                        .map(|r| {
                            Ok(edit_by_optimization(
                                &r.sequence,
                                &prompt,
                                lambda,
                                &models.clap,
                                facilitator,
                                g,
                                &models.config.edit,
                            )?
                            .sequence)
                        })
                        .collect::<Result<_>>()?
                }
            };
            let prov = Provenance::of(&models.config);
            let mut before = Vec::new();
            let mut after = Vec::new();
            let records: Vec<FastaRecord> = inputs
                .iter()
                .zip(&edited)
                .map(|(r, e)| {
                    let (b, a) = (scorer.score(&r.sequence), scorer.score(e));
                    before.push((r.id.clone(), b));
                    after.push((r.id.clone(), a));
                    FastaRecord {
                        id: r.id.clone(),
                        description: format!("score_before={b} score_after={a}"),
                        sequence: e.clone(),
                    }
                })
                .collect();
            ctx.write(&out, &fasta_with_header(&prov, &records))?;
            let header = prov.header_lines('#');
            ctx.write(
                &out.with_extension("before.tsv"),
                &(header.clone() + &format_scores(&before)),
            )?;
            ctx.write(
                &out.with_extension("after.tsv"),
                &(header + &format_scores(&after)),
            )?;
            let b: Vec<f64> = before.iter().map(|x| x.1).collect();
            let a: Vec<f64> = after.iter().map(|x| x.1).collect();
            println!(
                "hit_ratio(higher)\t{:.6}",
                hit_ratio(&b, &a, Direction::Higher)?
            );
        }
        Command::EvalRetrieval {
            t,
            ckpt,
            data,
            embeddings,
            kinds,
            conditions,
            prompts,
            samples,
            sampler,
            seed,
            out,
        } => {
            let report = if let Some(e) = embeddings {
                let (text, protein) = read_embeddings(&ctx.path(&e))?;
                let mut r = Report::new(Provenance::of(&RunConfig::default()));
                for &ti in &t {
                    let acc = retrieval_accuracy(
                        &text,
                        &protein,
                        &RetrievalTask::new(ti, seed.unwrap_or(0)),
                    )?;
                    r.push("retrieval_accuracy", format!("embeddings/T={ti}"), acc);
                }
                r
            } else {
                let mut models = ctx.load(ckpt.as_deref().expect("required by clap"))?;
                if let Some(s) = sampler {
                    models.set_sampler(s);
                }
                let pairs = load_pairs(ctx.path(data.as_deref().expect("required by clap")))?;
                let prompt_list = distinct_prompts(&pairs, prompts);
                let facilitator = match conditions {
                    Conditions::Both => vec![true, false],
                    Conditions::Facilitator => vec![true],
                    Conditions::Bypass => vec![false],
                };
                let setup = RetrievalSetup {
                    kinds,
                    ts: t,
                    facilitator,
                    samples,
                    seed: seed.unwrap_or(models.config.seed),
                };
                let mut r = Report::new(Provenance::of(&models.config));
                evaluate_retrieval(&models, &prompt_list, &setup, &mut r)?;
                r
            };
            if let Some(p) = out {
                report.write_all(ctx.path(&p))?;
            }
            print!("{}", report.to_text());
        }
        Command::EvalHitRatio {
            before,
            after,
            direction,
            out,
        } => {
            let b = read_scores(ctx.path(&before))?;
            let a = read_scores(ctx.path(&after))?;
            if b.len() != a.len() {
                bail!(
                    "{} has {} scores but {} has {}",
                    before.display(),
                    b.len(),
                    after.display(),
                    a.len()
                );
            }
            if let Some((x, y)) = b.iter().zip(&a).find(|(x, y)| x.0 != y.0) {
                bail!("id mismatch: '{}' vs '{}'", x.0, y.0);
            }
            let bv: Vec<f64> = b.iter().map(|x| x.1).collect();
            let av: Vec<f64> = a.iter().map(|x| x.1).collect();
            let ratio = hit_ratio(&bv, &av, direction)?;
            let mut r = Report::new(Provenance::of(&RunConfig::default()));
            let dir = match direction {
                Direction::Higher => "higher",
                Direction::Lower => "lower",
            };
            r.push("hit_ratio", dir, ratio);
            if let Some(p) = out {
                r.write_all(ctx.path(&p))?;
            }
            print!("{}", r.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
