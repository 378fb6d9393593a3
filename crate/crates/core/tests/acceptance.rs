//! Acceptance run: one PASS/FAIL line per criterion. Measured values are
//! printed alongside; a failing criterion is reported, not hidden.

#[allow(dead_code, unused_imports)]
#[path = "autodiff.rs"]
mod autodiff;
#[allow(dead_code, unused_imports)]
#[path = "diffusion.rs"]
mod diffusion;
#[allow(dead_code, unused_imports)]
#[path = "editing.rs"]
mod editing;
#[allow(dead_code, unused_imports)]
#[path = "objectives.rs"]
mod objectives;
#[allow(dead_code, unused_imports)]
#[path = "search.rs"]
mod search;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use seqdesign::config::RunConfig;
use seqdesign::data::{generate_synthetic, SyntheticRecord, SyntheticRules};
use seqdesign::editing::{edit_by_interpolation, slerp, InterpolationRequest};
use seqdesign::evaluation::{motif_count, SelectBy};
use seqdesign::generator::DecoderKind;
use seqdesign::nn::seeded_rng;
use seqdesign::pipeline::{
    distinct_prompts, evaluate_editing, evaluate_retrieval, fit_decoder, fit_facilitator,
    fit_tokenwise, pretrain_clap, provenance, EditTask, Models, RetrievalSetup,
};
use seqdesign::report::Report;

type Outcome = Result<String, String>;

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

/// Runs oracle checks that panic on failure.
fn checks(list: &[(&str, fn())]) -> Outcome {
    let start = Instant::now();
    for (name, f) in list {
        catch_unwind(AssertUnwindSafe(f)).map_err(|e| format!("{name}: {}", panic_message(e)))?;
    }
    Ok(format!(
        "{} checks in {:.1}s",
        list.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn run(criterion: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Err(panic_message(e)));
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} criterion {criterion}: {title} ({detail})");
    outcome.is_ok()
}

struct Desk {
    models: Models,
    report: Report,
    eval: Vec<SyntheticRecord>,
    tasks: Vec<EditTask>,
    train_seconds: f64,
}

fn desk() -> seqdesign::Result<Desk> {
    let rules = SyntheticRules::default();
    let train: Vec<_> = generate_synthetic(&rules, 2000, 11)?
        .into_iter()
        .map(|r| r.record)
        .collect();
    let eval = generate_synthetic(&rules, 400, 12)?;
    let start = Instant::now();
    let (mut models, _) = pretrain_clap(&RunConfig::default(), &train)?;
    fit_facilitator(&mut models, &train)?;
    fit_decoder(&mut models, DecoderKind::Ar, &train)?;
    fit_tokenwise(&mut models, &train)?;
    let train_seconds = start.elapsed().as_secs_f64();

    let records: Vec<_> = eval.iter().map(|r| r.record.clone()).collect();
    let prompts = distinct_prompts(&records, 100);
    let mut report = Report::new(provenance(&models));
    let setup = RetrievalSetup {
        kinds: vec![DecoderKind::Ar],
        ts: vec![4, 10, 20],
        facilitator: vec![true, false],
        samples: 16,
        seed: 5,
    };
    evaluate_retrieval(&models, &prompts, &setup, &mut report)?;

    // Ask each input for a motif it does not carry.
    let mut tasks = Vec::new();
    for (i, r) in eval.iter().enumerate() {
        let k = i % rules.properties.len();
        if r.labels.contains(&k) {
            continue;
        }
        let p = &rules.properties[k];
        tasks.push(EditTask {
            id: r.record.id.clone(),
            input: r.record.sequence.clone(),
            prompt: p.templates[i % p.templates.len()].clone(),
            motif: p.motif.clone(),
        });
        if tasks.len() == 100 {
            break;
        }
    }
    Ok(Desk {
        models,
        report,
        eval,
        tasks,
        train_seconds,
    })
}

fn retrieval(d: &Desk, condition: &str) -> f64 {
    d.report
        .get("retrieval_accuracy", &format!("ar/{condition}/T=4"))
        .expect("row present")
}

fn token_accuracy(a: &[String], b: &[String]) -> f64 {
    let (mut same, mut total) = (0, 0);
    for (x, y) in a.iter().zip(b) {
        total += x.len().max(y.len());
        same += x.bytes().zip(y.bytes()).filter(|(p, q)| p == q).count();
    }
    same as f64 / total as f64
}

fn editing_criterion(d: &Desk) -> Outcome {
    let m = &d.models;
    let raw = evaluate_editing(m, &d.tasks, 0.9, false).map_err(|e| e.to_string())?;
    let facilitated = evaluate_editing(m, &d.tasks, 0.9, true).map_err(|e| e.to_string())?;
    let keep = evaluate_editing(m, &d.tasks, 0.0, false).map_err(|e| e.to_string())?;
    let inputs: Vec<String> = d.tasks.iter().map(|t| t.input.clone()).collect();
    let recon = token_accuracy(&keep.edited, &inputs);

    let mut exact = true;
    for t in &d.tasks {
        let z_p = m.clap.embed_protein(&t.input).map_err(|e| e.to_string())?;
        let z_t = m.clap.embed_text(&t.prompt).map_err(|e| e.to_string())?;
        exact &= slerp(&z_p, &z_t, 0.0).map_err(|e| e.to_string())? == z_p;
        exact &= slerp(&z_p, &z_t, 1.0).map_err(|e| e.to_string())? == z_t;
    }
    let best = raw.hit_ratio.max(facilitated.hit_ratio);
    let detail = format!(
        "{} tasks; lambda=0.9 hit ratio {:.3} raw text anchor, {:.3} facilitated (need >= 0.60); \
         lambda=0 token accuracy {:.4} (need > 0.99); slerp endpoints exact: {exact}",
        d.tasks.len(),
        raw.hit_ratio,
        facilitated.hit_ratio,
        recon
    );
    if best >= 0.60 && recon > 0.99 && exact && d.tasks.len() == 100 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Mean motif count after interpolation editing at two coefficients.
fn interpolation_info(d: &Desk) -> seqdesign::Result<String> {
    let m = &d.models;
    let decoder = m.decoder(DecoderKind::Ar)?;
    let max_len = d
        .eval
        .iter()
        .map(|r| r.record.sequence.len())
        .max()
        .unwrap_or(1);
    let mut means = Vec::new();
    for theta in [0.1, 0.9] {
        let mut rng = seeded_rng(21);
        let mut total = 0;
        for t in &d.tasks {
            let req = InterpolationRequest {
                protein: &t.input,
                prompt: &t.prompt,
                theta,
                samples: 4,
                max_len,
                select_by: SelectBy::Prompt,
            };
            let out =
                edit_by_interpolation(&req, &m.clap, m.facilitator.as_ref(), decoder, &mut rng)?;
            total += motif_count(&out, &t.motif);
        }
        means.push(total as f64 / d.tasks.len() as f64);
    }
    Ok(format!(
        "theta=0.1 mean motif count {:.3}, theta=0.9 {:.3}",
        means[0], means[1]
    ))
}

fn main() {
    let mut passed = 0;
    let mut total = 0;
    let mut tally = |ok: bool| {
        total += 1;
        passed += ok as usize;
    };

    tally(run(1, "autodiff matches central differences", || {
        let start = Instant::now();
        let detail = checks(&[
            ("elementwise", autodiff::elementwise_unary),
            ("reductions", autodiff::reductions_and_normalizations),
            ("broadcasting", autodiff::binary_with_broadcasting),
            ("products", autodiff::products_and_similarities),
            ("indexing", autodiff::shape_and_indexing_ops),
            ("contrastive", autodiff::contrastive_losses),
            ("blocks", autodiff::network_blocks),
        ])?;
        let secs = start.elapsed().as_secs_f64();
        if secs < 60.0 {
            Ok(detail)
        } else {
            Err(format!("{detail}, over the 60s budget"))
        }
    }));
    tally(run(
        2,
        "transition algebra matches matrix products and Bayes enumeration",
        || {
            checks(&[
                ("cumulative", diffusion::cumulative_matches_iterated_product),
                ("posterior", diffusion::posterior_matches_exhaustive_bayes),
            ])
        },
    ));
    tally(run(3, "loss reference values", || {
        checks(&[
            (
                "contrastive",
                objectives::zero_energies_give_reference_values,
            ),
            (
                "autoregressive",
                objectives::uniform_decoder_logits_cost_ln_30_per_token,
            ),
            (
                "diffusion",
                diffusion::uniform_logits_cost_ln_30_per_masked_token,
            ),
        ])
    }));
    tally(run(4, "sampler and search soundness", || {
        checks(&[
            ("mask-free", diffusion::samplers_finish_mask_free_in_t_steps),
            (
                "weighted chain",
                diffusion::weighted_sampler_matches_chain_enumeration,
            ),
            ("beam", search::wide_beam_finds_the_exhaustive_argmax),
        ])
    }));

    let start = Instant::now();
    let desk = desk();
    let elapsed = start.elapsed().as_secs_f64();
    match &desk {
        Ok(d) => {
            print!("{}", d.report.to_text());
            tally(run(5, "synthetic text-to-protein retrieval", || {
                let acc = retrieval(d, "facilitator");
                let detail = format!(
                    "T=4 accuracy {acc:.3} with facilitator (need >= 0.60); training {:.0}s, total {elapsed:.0}s",
                    d.train_seconds
                );
                if acc >= 0.60 && elapsed < 20.0 * 60.0 {
                    Ok(detail)
                } else {
                    Err(detail)
                }
            }));
            tally(run(6, "facilitator is no worse than bypass", || {
                let (f, b) = (retrieval(d, "facilitator"), retrieval(d, "bypass"));
                let detail = format!("T=4 facilitator {f:.3}, bypass {b:.3}");
                if f >= b {
                    Ok(detail)
                } else {
                    Err(detail)
                }
            }));
            tally(run(7, "editing efficacy", || editing_criterion(d)));
            match interpolation_info(d) {
                Ok(s) => println!("info interpolation editing: {s}"),
                Err(e) => println!("info interpolation editing failed: {e}"),
            }
        }
        Err(e) => {
            for (c, title) in [
                (5, "synthetic retrieval"),
                (6, "facilitator ablation"),
                (7, "editing efficacy"),
            ] {
                tally(run(c, title, || Err(format!("desk pipeline failed: {e}"))));
            }
        }
    }

    tally(run(8, "seeded reruns and checkpoints are exact", || {
        checks(&[(
            "rerun and round trip",
            pipeline::bundle_round_trips_and_reruns_are_identical,
        )])
    }));
    tally(run(
        9,
        "latent optimization reaches the weighted anchor",
        || {
            checks(&[(
                "closed form",
                editing::pooled_latent_converges_to_the_weighted_anchor,
            )])
        },
    ));
    println!("acceptance: {passed}/{total} criteria pass");
}
