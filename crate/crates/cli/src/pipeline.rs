//! Command implementations. Artifacts live under the configured output
//! directory:
//!
//! | file | written by |
//! |---|---|
//! | `split.manifest`, `views.jsonl`, `config.used` | prepare |
//! | `metrics.ndjson`, `last.ckpt`, `best.ckpt` | train |
//! | `report.json`, `report.tsv`, `words.tsv`, `relation_words.tsv` | evaluate |
//! | `predictions.jsonl` | predict |

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use reldisc::collab::{
    encode_views, estimate_heads, infer, predict_heads, tri_prompts, Checkpoint, Trainer,
    TrainingSet, TriPrompt,
};
use reldisc::config::ExperimentConfig;
use reldisc::corpus::{
    attach_pos_sidecar, build_splits, load_dataset, parse_dataset, DatasetFormat, SplitSpec,
};
use reldisc::encoder::{EncoderBackend, MockBackend};
use reldisc::eval::{best_mapping, ground_truth_distribution, semantic_similarity, MetricReport};
use reldisc::rng::derive_seed;
use reldisc::semantic::{compact_word_report, top_word_frequencies, word_report_tsv};
use reldisc::semifactual::{
    generate_all, generate_tri_view, EntityTypeLexicon, SynonymLexicon, TriView,
};
use reldisc::synth::{parse_descriptions, SynthConfig, SyntheticCorpus};

const MANIFEST: &str = "split.manifest";
const VIEWS: &str = "views.jsonl";
const METRICS: &str = "metrics.ndjson";
const LAST: &str = "last.ckpt";
const BEST: &str = "best.ckpt";
const DIVERGED: &str = "diverged.ckpt";

/// Loads a config file; relative paths inside it resolve against its
/// directory.
pub fn load_config_file(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for p in [
        &mut cfg.dataset,
        &mut cfg.pos_tags,
        &mut cfg.encoder_table,
        &mut cfg.checkpoint,
        &mut cfg.entity_types,
        &mut cfg.synonyms,
        &mut cfg.descriptions,
    ]
    .into_iter()
    .flatten()
    {
        rebase(p);
    }
    rebase(&mut cfg.output_dir);
    Ok(cfg)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str, hint: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| {
        anyhow!(
            "`{key}` is not set; pass --{} FILE ({hint})",
            key.replace('_', "-")
        )
    })
}

fn lexicons(cfg: &ExperimentConfig) -> Result<(EntityTypeLexicon, SynonymLexicon)> {
    let entity = required(
        &cfg.entity_types,
        "entity_types",
        "TSV of surface<TAB>kb_id<TAB>type",
    )?;
    let synonyms = required(
        &cfg.synonyms,
        "synonyms",
        "TSV of word<TAB>pos<TAB>syn1,syn2,...",
    )?;
    Ok((
        EntityTypeLexicon::load(entity)?,
        SynonymLexicon::load(synonyms)?,
    ))
}

/// The encoder before any fine-tuning.
fn pretrained_backend(cfg: &ExperimentConfig) -> Result<MockBackend> {
    let path = required(
        &cfg.encoder_table,
        "encoder_table",
        "TSV of word<TAB>vector",
    )?;
    let table = MockBackend::load_table(path)?;
    Ok(MockBackend::new(
        table,
        cfg.noise_scale,
        derive_seed(cfg.train.seed, &["mock-backend"]),
        cfg.max_len,
    )?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<()> {
    let dataset = required(&cfg.dataset, "dataset", "FewRel or TACRED JSON")?;
    let (entity, synonyms) = lexicons(cfg)?;
    let mut instances = load_dataset(dataset, cfg.format)?;
    if let Some(pos) = &cfg.pos_tags {
        attach_pos_sidecar(&mut instances, pos)?;
    }
    let split = build_splits(&instances, cfg.novel_ratio, &cfg.sizing()?, cfg.train.seed)?;
    let views = generate_all(
        instances.iter().filter(|i| {
            split.labeled_ids.contains(&i.instance_id)
                || split.unlabeled_ids.contains(&i.instance_id)
                || split.test_ids.contains(&i.instance_id)
        }),
        &entity,
        &synonyms,
        cfg.train.seed,
        cfg.context_ratio,
    )?;

    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    write(&cfg.output_dir.join(MANIFEST), &split.to_manifest())?;
    let mut cache = String::new();
    for v in &views {
        cache.push_str(&serde_json::to_string(v)?);
        cache.push('\n');
    }
    write(&cfg.output_dir.join(VIEWS), &cache)?;
    write(&cfg.output_dir.join("config.used"), &cfg.to_text())?;
    println!(
        "{} instances: {} labeled, {} unlabeled, {} test; {} pre-defined and {} novel relations",
        views.len(),
        split.labeled_ids.len(),
        split.unlabeled_ids.len(),
        split.test_ids.len(),
        split.predefined_relations.len(),
        split.novel_relations.len()
    );
    Ok(())
}

fn load_prepared(cfg: &ExperimentConfig) -> Result<(SplitSpec, Vec<TriView>)> {
    let manifest = cfg.output_dir.join(MANIFEST);
    let views_path = cfg.output_dir.join(VIEWS);
    if !manifest.exists() || !views_path.exists() {
        bail!(
            "no prepared artifacts in {}; run `reldisc prepare` with the same config first",
            cfg.output_dir.display()
        );
    }
    let split = SplitSpec::from_manifest(&fs::read_to_string(&manifest)?)?;
    let reader = BufReader::new(File::open(&views_path)?);
    let mut views = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        views.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}", views_path.display(), n + 1))?,
        );
    }
    Ok((split, views))
}

fn unlabeled_prompts(
    split: &SplitSpec,
    views: &[TriView],
    max_len: usize,
) -> Result<Vec<TriPrompt>> {
    let prompts = views
        .iter()
        .filter(|v| split.unlabeled_ids.contains(&v.source_id))
        .map(|v| tri_prompts(v, max_len))
        .collect::<reldisc::Result<Vec<_>>>()?;
    Ok(prompts)
}

pub fn train(cfg: &ExperimentConfig, resume: bool) -> Result<()> {
    let (split, views) = load_prepared(cfg)?;
    let out = &cfg.output_dir;
    let mut trainer = if resume {
        let path = cfg.checkpoint.clone().unwrap_or_else(|| out.join(LAST));
        if !path.exists() {
            bail!(
                "cannot resume: checkpoint {} does not exist",
                path.display()
            );
        }
        let mut ck = Checkpoint::<MockBackend>::load(&path)?;
        ck.config.max_epochs = cfg.train.max_epochs;
        ck.config.patience = cfg.train.patience;
        eprintln!("resuming from {} after epoch {}", path.display(), ck.epoch);
        Trainer::from_checkpoint(ck)?
    } else {
        let backend = pretrained_backend(cfg)?;
        let heads = if cfg.known_k {
            split.all_relations().len()
        } else {
            let unlabeled = unlabeled_prompts(&split, &views, cfg.max_len)?;
            let estimate = estimate_heads(
                &backend,
                &unlabeled,
                cfg.k_init,
                &cfg.train.kmeans,
                derive_seed(cfg.train.seed, &["estimate-k"]),
                cfg.train.batch_size,
            )?;
            let heads = estimate.max(split.predefined_relations.len()).max(1);
            eprintln!("estimated relation count: {estimate} (training {heads} heads)");
            heads
        };
        let binding = reldisc::collab::bind_heads(&split, heads)?;
        Trainer::new(backend, binding, cfg.train.clone())?
    };
    let heads = trainer.checkpoint().head_binding.len();
    let data = TrainingSet::new(&views, &split, heads, cfg.max_len)?;

    fs::create_dir_all(out)?;
    trainer.set_diagnostic_path(out.join(DIVERGED));
    let log_path = out.join(METRICS);
    let log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume)
        .truncate(!resume)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(log);
    let last_path = out.join(LAST);
    let outcome = trainer.train(&data, |m, t| {
        writeln!(log, "{}", m.to_json_line()).map_err(|e| reldisc::Error::io(&log_path, e))?;
        log.flush().map_err(|e| reldisc::Error::io(&log_path, e))?;
        t.checkpoint().save(&last_path)?;
        eprintln!(
            "epoch {:>3}  acc_all {:.4}  nmi_all {:.4}  ari_all {:.4}  abandoned {:.3}",
            m.epoch, m.acc_all, m.nmi_all, m.ari_all, m.abandoned_fraction
        );
        Ok(())
    })?;
    outcome.last.save(&last_path)?;
    outcome.best.save(&out.join(BEST))?;
    println!(
        "stopped after epoch {} ({:?}); best acc_all {:.4} at epoch {}",
        outcome.last.epoch, outcome.stop, outcome.best.best_acc, outcome.best.best_epoch
    );
    Ok(())
}

fn load_checkpoint(cfg: &ExperimentConfig) -> Result<Checkpoint<MockBackend>> {
    let path = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(BEST));
    if !path.exists() {
        bail!(
            "checkpoint {} does not exist; run `reldisc train` first",
            path.display()
        );
    }
    Ok(Checkpoint::load(&path)?)
}

/// Mean of `rows[i]` over the selected indices.
fn mean_row(rows: &[Vec<f64>], picked: &[usize]) -> Vec<f64> {
    let width = rows.first().map(Vec::len).unwrap_or(0);
    let mut mean = vec![0.0; width];
    for &i in picked {
        for (m, v) in mean.iter_mut().zip(&rows[i]) {
            *m += v;
        }
    }
    let n = picked.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let (split, views) = load_prepared(cfg)?;
    let ck = load_checkpoint(cfg)?;
    let data = TrainingSet::new(&views, &split, ck.head_binding.len(), cfg.max_len)?;
    if data.test.is_empty() {
        bail!("the test split is empty");
    }
    let batch = cfg.train.batch_size;
    let preds = predict_heads(&ck.backend, &ck.classifier, &data.test, batch)?;
    let mut report = MetricReport::clustering(&preds, &data.test_gold, |g| split.is_novel(g))?;

    let encoded = encode_views(&ck.backend, &data.test, batch)?;
    let word_dists: Vec<Vec<f64>> = encoded[0]
        .word_dist
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();

    // Name each predicted cluster by the gold relation it maps to.
    let mapping = best_mapping(&preds, &data.test_gold)?;
    let names: Vec<String> = preds
        .iter()
        .map(|h| match mapping.get(h).cloned().flatten() {
            Some(rel) => rel,
            None => format!("cluster-{h}"),
        })
        .collect();
    let vocab = ck.backend.vocab();
    let k = cfg.top_words.min(vocab.len());
    let table = top_word_frequencies(
        names
            .iter()
            .cloned()
            .zip(word_dists.iter().map(Vec::as_slice)),
        vocab,
        k,
    )?;

    if let Some(path) = &cfg.descriptions {
        let descriptions = parse_descriptions(&fs::read_to_string(path)?, path)?;
        let pretrained = pretrained_backend(cfg)?;
        let mut per_relation = BTreeMap::new();
        for rel in &split.novel_relations {
            let Some(desc) = descriptions.get(rel) else {
                eprintln!("no description for novel relation {rel}; skipped in COS / KL");
                continue;
            };
            let members: Vec<usize> = (0..data.test_gold.len())
                .filter(|&i| &data.test_gold[i] == rel)
                .collect();
            if members.is_empty() {
                continue;
            }
            let truth = ground_truth_distribution(desc, &pretrained)?;
            let predicted = mean_row(&word_dists, &members);
            per_relation.insert(rel.clone(), semantic_similarity(&predicted, &truth)?);
        }
        report = report.with_semantic(per_relation);
    }

    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    write(&out.join("report.json"), &format!("{}\n", report.to_json()))?;
    write(&out.join("report.tsv"), &report.to_tsv())?;
    write(&out.join("words.tsv"), &word_report_tsv(&table))?;
    write(
        &out.join("relation_words.tsv"),
        &compact_word_report(&table, k),
    )?;
    println!("{}", report.to_json());
    Ok(())
}

/// Parses one JSON-lines record as a single-instance dataset.
fn parse_record(
    line: &str,
    format: DatasetFormat,
    line_no: usize,
) -> Result<reldisc::corpus::RelationInstance> {
    let mut record: Value = serde_json::from_str(line).context("invalid JSON")?;
    let obj = record
        .as_object_mut()
        .ok_or_else(|| anyhow!("expected a JSON object"))?;
    if !obj.contains_key("id") {
        obj.insert("id".into(), json!(format!("line-{line_no}")));
    }
    let doc = match format {
        DatasetFormat::FewrelJson => {
            let relation = obj
                .get("relation")
                .and_then(Value::as_str)
                .unwrap_or("unknown")
                .to_string();
            json!({ relation: [record] })
        }
        DatasetFormat::TacredJson => {
            if !obj.contains_key("relation") {
                obj.insert("relation".into(), json!("unknown"));
            }
            json!([record])
        }
    };
    let mut parsed = parse_dataset(&doc.to_string(), format)?;
    parsed.pop().ok_or_else(|| anyhow!("empty record"))
}

/// Writes one output row per input line; returns the number of failed rows.
pub fn predict(cfg: &ExperimentConfig, input: &Path, output: Option<PathBuf>) -> Result<usize> {
    let ck = load_checkpoint(cfg)?;
    let (entity, synonyms) = match (&cfg.entity_types, &cfg.synonyms) {
        (Some(_), Some(_)) => lexicons(cfg)?,
        _ => (EntityTypeLexicon::new(), SynonymLexicon::new()),
    };
    let reader =
        BufReader::new(File::open(input).with_context(|| format!("opening {}", input.display()))?);

    let mut rows: Vec<std::result::Result<TriPrompt, String>> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = n + 1;
        let row = parse_record(&line, cfg.format, line_no)
            .and_then(|inst| {
                let view = generate_tri_view(
                    &inst,
                    &entity,
                    &synonyms,
                    cfg.train.seed,
                    cfg.context_ratio,
                )?;
                Ok(tri_prompts(&view, cfg.max_len)?)
            })
            .map_err(|e| format!("line {line_no}: {e:#}"));
        rows.push(row);
    }

    let good: Vec<TriPrompt> = rows
        .iter()
        .filter_map(|r| r.as_ref().ok().cloned())
        .collect();
    let mut preds = if good.is_empty() {
        Vec::new()
    } else {
        infer(
            &ck.backend,
            &ck.classifier,
            &ck.head_binding,
            &good,
            cfg.top_words.min(ck.backend.vocab().len()),
            cfg.train.batch_size,
        )?
    }
    .into_iter();

    let out_path = output.unwrap_or_else(|| cfg.output_dir.join("predictions.jsonl"));
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(
        File::create(&out_path).with_context(|| format!("creating {}", out_path.display()))?,
    );
    let mut failed = 0;
    for row in &rows {
        let value = match row {
            Ok(_) => serde_json::to_value(preds.next().expect("one prediction per good row"))?,
            Err(msg) => {
                eprintln!("{msg}");
                failed += 1;
                json!({ "error": msg })
            }
        };
        writeln!(out, "{value}")?;
    }
    out.flush()?;
    println!(
        "{} rows predicted, {failed} failed; written to {}",
        rows.len() - failed,
        out_path.display()
    );
    Ok(failed)
}

pub fn estimate_k(cfg: &ExperimentConfig) -> Result<()> {
    let (split, views) = load_prepared(cfg)?;
    let unlabeled = unlabeled_prompts(&split, &views, cfg.max_len)?;
    let backend = match &cfg.checkpoint {
        Some(_) => load_checkpoint(cfg)?.backend,
        None => pretrained_backend(cfg)?,
    };
    let estimate = estimate_heads(
        &backend,
        &unlabeled,
        cfg.k_init,
        &cfg.train.kmeans,
        derive_seed(cfg.train.seed, &["estimate-k"]),
        cfg.train.batch_size,
    )?;
    println!("{estimate}");
    Ok(())
}

pub fn synth(out: &Path, relations: usize, per_relation: usize, seed: u64) -> Result<()> {
    let corpus = SyntheticCorpus::generate(&SynthConfig {
        relations,
        instances_per_relation: per_relation,
        seed,
        ..SynthConfig::default()
    })?;
    let files = corpus.write_to(out)?;
    let name = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let test = per_relation / 5;
    let unlabeled = (per_relation - test) / 2;
    let labeled = per_relation - test - unlabeled;
    let conf = format!(
        "# Synthetic demo experiment; paths are relative to this file.\n\
         dataset = {}\n\
         format = fewrel-json\n\
         entity_types = {}\n\
         synonyms = {}\n\
         encoder_table = {}\n\
         descriptions = {}\n\
         novel_ratio = 0.5\n\
         split_policy = per-relation:{test},{unlabeled},{labeled}\n\
         noise_scale = 0.5\n\
         max_len = 64\n\
         output_dir = run\n\
         seed = 3\n",
        name(&files.dataset),
        name(&files.entity_types),
        name(&files.synonyms),
        name(&files.encoder_table),
        name(&files.descriptions),
    );
    let conf_path = out.join("experiment.conf");
    write(&conf_path, &conf)?;
    println!(
        "wrote {} instances to {}",
        corpus.instances.len(),
        out.display()
    );
    println!("config: {}", conf_path.display());
    Ok(())
}
