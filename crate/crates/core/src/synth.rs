//! Synthetic relation corpus with planted word vectors, for end-to-end runs
//! of the mock backend.
//!
//! Each relation has a small set of interchangeable trigger words whose
//! vectors sit around a relation direction; everything else (names, fillers,
//! markers) is off-table noise. The synonym lexicon swaps triggers within a
//! relation, so every view keeps the relation signal.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use crate::corpus::{parse_dataset, DatasetFormat, RelationInstance};
use crate::encoder::MockBackend;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::semifactual::{EntityTypeLexicon, SynonymLexicon};

struct RelationTemplate {
    name: &'static str,
    description: &'static str,
    /// Tokens between head and tail; `*` marks the trigger slot.
    pattern: &'static [&'static str],
    triggers: &'static [&'static str],
    trigger_tag: &'static str,
    head_type: &'static str,
    tail_type: &'static str,
}

const TEMPLATES: &[RelationTemplate] = &[
    RelationTemplate {
        name: "located_in",
        description: "located in",
        pattern: &["is", "*", "in"],
        triggers: &["located", "situated", "based"],
        trigger_tag: "VBN",
        head_type: "Building",
        tail_type: "City",
    },
    RelationTemplate {
        name: "born_in",
        description: "born in",
        pattern: &["was", "*", "in"],
        triggers: &["born", "raised", "bred"],
        trigger_tag: "VBN",
        head_type: "Person",
        tail_type: "City",
    },
    RelationTemplate {
        name: "works_for",
        description: "works for",
        pattern: &["*", "for"],
        triggers: &["works", "labors", "serves"],
        trigger_tag: "VBZ",
        head_type: "Person",
        tail_type: "Company",
    },
    RelationTemplate {
        name: "married_to",
        description: "married to",
        pattern: &["is", "*", "to"],
        triggers: &["married", "wed", "betrothed"],
        trigger_tag: "VBN",
        head_type: "Person",
        tail_type: "Person",
    },
    RelationTemplate {
        name: "capital_of",
        description: "capital of",
        pattern: &["is", "the", "*", "of"],
        triggers: &["capital", "seat", "metropolis"],
        trigger_tag: "NN",
        head_type: "City",
        tail_type: "Country",
    },
    RelationTemplate {
        name: "crosses",
        description: "crosses",
        pattern: &["*"],
        triggers: &["crosses", "cross", "crossing"],
        trigger_tag: "VBZ",
        head_type: "Bridge",
        tail_type: "River",
    },
];

const ENTITY_TYPES: &[(&str, &[&str])] = &[
    (
        "Person",
        &[
            "Alice", "Bruno", "Chen", "Dara", "Elif", "Femi", "Goran", "Hana", "Ivo", "Jun",
            "Kofi", "Lena",
        ],
    ),
    (
        "City",
        &[
            "Lyon", "Osaka", "Quito", "Perth", "Tunis", "Bergen", "Cusco", "Hue", "Split", "Turku",
        ],
    ),
    (
        "Country",
        &[
            "Norland", "Vesta", "Karad", "Ostria", "Pelmar", "Quenia", "Rusk", "Tarvo",
        ],
    ),
    (
        "Company",
        &[
            "Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Wonka", "Soylent",
        ],
    ),
    (
        "Building",
        &[
            "Opera", "Museum", "Library", "Tower", "Arena", "Gallery", "Station", "Palace",
        ],
    ),
    (
        "Bridge",
        &[
            "Millau",
            "Tsing",
            "Akashi",
            "Storebaelt",
            "Oresund",
            "Forth",
            "Rialto",
            "Vasco",
        ],
    ),
    (
        "River",
        &[
            "Rhine", "Mekong", "Volga", "Danube", "Loire", "Indus", "Tagus", "Ebro",
        ],
    ),
];

const SURNAMES: &[&str] = &[
    "Moreau",
    "Okafor",
    "Lindqvist",
    "Tanaka",
    "Silva",
    "Novak",
    "Haddad",
    "Kowal",
];

/// `(word, tag, synonyms)` fillers placed outside the entity spans.
const FILLERS: &[(&str, &str, &[&str])] = &[
    ("reportedly", "RB", &["apparently", "allegedly"]),
    ("currently", "RB", &["presently", "now"]),
    ("famous", "JJ", &["renowned", "celebrated"]),
    ("old", "JJ", &["ancient", "aged"]),
    ("today", "NN", &["nowadays"]),
    ("officially", "RB", &["formally"]),
];

const DISTRACTORS: &[&str] = &[
    "thing", "place", "event", "item", "matter", "case", "part", "way",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub relations: usize,
    pub instances_per_relation: usize,
    pub dim: usize,
    /// Norm of each relation direction.
    pub planted_norm: f64,
    /// Per-coordinate std of trigger vectors around their direction.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            relations: 6,
            instances_per_relation: 250,
            dim: 16,
            planted_norm: 12.0,
            jitter: 0.5,
            seed: 7,
        }
    }
}

pub struct SyntheticCorpus {
    pub instances: Vec<RelationInstance>,
    pub entity_types: EntityTypeLexicon,
    pub synonyms: SynonymLexicon,
    pub table: BTreeMap<String, Vec<f64>>,
    pub descriptions: BTreeMap<String, String>,
    pub dataset_json: String,
    pub entity_types_tsv: String,
    pub synonyms_tsv: String,
    pub table_tsv: String,
    pub descriptions_tsv: String,
}

/// Paths written by [`SyntheticCorpus::write_to`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub dataset: PathBuf,
    pub entity_types: PathBuf,
    pub synonyms: PathBuf,
    pub encoder_table: PathBuf,
    pub descriptions: PathBuf,
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn scale_to(v: &mut [f64], norm: f64) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x *= norm / n);
    }
}

/// Gram-Schmidt over Gaussian draws; needs `count <= dim`.
fn orthogonal_directions(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = gaussian(rng, dim);
        for u in &out {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    out
}

fn entity(rng: &mut impl Rng, type_name: &str) -> Vec<String> {
    let pool = ENTITY_TYPES
        .iter()
        .find(|(t, _)| *t == type_name)
        .map(|(_, names)| *names)
        .expect("known entity type");
    let mut tokens = vec![pool.choose(rng).expect("non-empty pool").to_string()];
    if type_name == "Person" && rng.gen_bool(0.5) {
        tokens.push(SURNAMES.choose(rng).expect("non-empty").to_string());
    }
    tokens
}

fn entity_json(tokens: &[String], start: usize, kb_id: &str) -> Value {
    let positions: Vec<usize> = (start..start + tokens.len()).collect();
    json!([tokens.join(" "), kb_id, [positions]])
}

impl SyntheticCorpus {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        if cfg.relations == 0 || cfg.relations > TEMPLATES.len() {
            return Err(Error::Config(format!(
                "synthetic corpus supports 1..={} relations",
                TEMPLATES.len()
            )));
        }
        if cfg.relations + 1 > cfg.dim {
            return Err(Error::Config("dim must exceed the relation count".into()));
        }
        let templates = &TEMPLATES[..cfg.relations];

        // Planted table: triggers around orthogonal relation directions, and
        // distractors on the spare direction.
        let mut vec_rng = rng_for(cfg.seed, &["synth", "vectors"]);
        let dirs = orthogonal_directions(&mut vec_rng, cfg.relations + 1, cfg.dim);
        let mut table = BTreeMap::new();
        for (r, tpl) in templates.iter().enumerate() {
            for trig in tpl.triggers {
                let jit = gaussian(&mut vec_rng, cfg.dim);
                let v: Vec<f64> = dirs[r]
                    .iter()
                    .zip(&jit)
                    .map(|(d, j)| d * cfg.planted_norm + j * cfg.jitter)
                    .collect();
                table.insert(trig.to_string(), v);
            }
        }
        for word in DISTRACTORS {
            let mut v = gaussian(&mut vec_rng, cfg.dim);
            scale_to(&mut v, cfg.planted_norm * 0.25);
            let extra: Vec<f64> = v
                .iter()
                .zip(&dirs[cfg.relations])
                .map(|(a, d)| a + d * cfg.planted_norm * 0.5)
                .collect();
            table.insert(word.to_string(), extra);
        }

        // Lexicons.
        let mut entity_types_tsv = String::new();
        let mut kb_ids: BTreeMap<String, String> = BTreeMap::new();
        let mut next_kb = 0usize;
        let mut synonyms_tsv = String::new();
        for tpl in templates {
            for trig in tpl.triggers {
                let others: Vec<&str> =
                    tpl.triggers.iter().copied().filter(|t| t != trig).collect();
                let _ = writeln!(
                    synonyms_tsv,
                    "{trig}\t{}\t{}",
                    tpl.trigger_tag,
                    others.join("|")
                );
            }
        }
        for (word, tag, syns) in FILLERS {
            let _ = writeln!(synonyms_tsv, "{word}\t{tag}\t{}", syns.join("|"));
        }

        // Instances.
        let mut records: BTreeMap<String, Vec<Value>> = BTreeMap::new();
        for tpl in templates {
            let mut rng = rng_for(cfg.seed, &["synth", "instances", tpl.name]);
            let list = records.entry(tpl.name.to_string()).or_default();
            for i in 0..cfg.instances_per_relation {
                let head = entity(&mut rng, tpl.head_type);
                let mut tail = entity(&mut rng, tpl.tail_type);
                while tail == head {
                    tail = entity(&mut rng, tpl.tail_type);
                }
                let mut tokens: Vec<String> = Vec::new();
                let mut tags: Vec<String> = Vec::new();
                if rng.gen_bool(0.4) {
                    let (w, t, _) = FILLERS[rng.gen_range(0..FILLERS.len())];
                    tokens.push(capitalize(w));
                    tags.push(t.to_string());
                }
                if rng.gen_bool(0.3) {
                    tokens.push("The".into());
                    tags.push("DT".into());
                    tokens.push("famous".into());
                    tags.push("JJ".into());
                }
                let head_start = tokens.len();
                for tok in &head {
                    tokens.push(tok.clone());
                    tags.push("NNP".into());
                }
                if rng.gen_bool(0.3) {
                    let (w, t) = if rng.gen_bool(0.5) {
                        ("reportedly", "RB")
                    } else {
                        ("currently", "RB")
                    };
                    tokens.push(w.into());
                    tags.push(t.into());
                }
                let trigger = tpl.triggers[rng.gen_range(0..tpl.triggers.len())];
                for piece in tpl.pattern {
                    if *piece == "*" {
                        tokens.push(trigger.into());
                        tags.push(tpl.trigger_tag.into());
                    } else {
                        tokens.push(piece.to_string());
                        tags.push(
                            match *piece {
                                "is" => "VBZ",
                                "was" => "VBD",
                                "the" => "DT",
                                _ => "IN",
                            }
                            .into(),
                        );
                    }
                }
                let tail_start = tokens.len();
                for tok in &tail {
                    tokens.push(tok.clone());
                    tags.push("NNP".into());
                }
                if rng.gen_bool(0.3) {
                    tokens.push("today".into());
                    tags.push("NN".into());
                }
                tokens.push(".".into());
                tags.push(".".into());

                let mut kb = |surface: &[String], type_name: &str| -> String {
                    let key = format!("{type_name}:{}", surface.join(" "));
                    kb_ids
                        .entry(key)
                        .or_insert_with(|| {
                            next_kb += 1;
                            let id = format!("Q{next_kb}");
                            let _ = writeln!(
                                entity_types_tsv,
                                "{}\t{id}\t{type_name}",
                                surface.join(" ")
                            );
                            id
                        })
                        .clone()
                };
                let head_kb = kb(&head, tpl.head_type);
                let tail_kb = kb(&tail, tpl.tail_type);
                list.push(json!({
                    "id": format!("{}#{i:05}", tpl.name),
                    "tokens": tokens,
                    "pos": tags,
                    "h": entity_json(&head, head_start, &head_kb),
                    "t": entity_json(&tail, tail_start, &tail_kb),
                }));
            }
        }
        let dataset_json =
            serde_json::to_string(&records).map_err(|e| Error::Serialization(e.to_string()))?;

        let mut descriptions = BTreeMap::new();
        let mut descriptions_tsv = String::new();
        for tpl in templates {
            descriptions.insert(tpl.name.to_string(), tpl.description.to_string());
            let _ = writeln!(descriptions_tsv, "{}\t{}", tpl.name, tpl.description);
        }

        let origin = Path::new("<synthetic>");
        let instances = parse_dataset(&dataset_json, DatasetFormat::FewrelJson)?;
        let entity_types = EntityTypeLexicon::parse(&entity_types_tsv, origin)?;
        let synonyms = SynonymLexicon::parse(&synonyms_tsv, origin)?;
        let table_tsv = MockBackend::table_to_string(&table);
        Ok(SyntheticCorpus {
            instances,
            entity_types,
            synonyms,
            table,
            descriptions,
            dataset_json,
            entity_types_tsv,
            synonyms_tsv,
            table_tsv,
            descriptions_tsv,
        })
    }

    pub fn write_to(&self, dir: &Path) -> Result<SynthFiles> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SynthFiles {
            dataset: dir.join("dataset.json"),
            entity_types: dir.join("entity_types.tsv"),
            synonyms: dir.join("synonyms.tsv"),
            encoder_table: dir.join("encoder_table.tsv"),
            descriptions: dir.join("descriptions.tsv"),
        };
        for (path, text) in [
            (&files.dataset, &self.dataset_json),
            (&files.entity_types, &self.entity_types_tsv),
            (&files.synonyms, &self.synonyms_tsv),
            (&files.encoder_table, &self.table_tsv),
            (&files.descriptions, &self.descriptions_tsv),
        ] {
            fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(files)
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Reads `relation<TAB>description` lines.
pub fn parse_descriptions(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (rel, desc) = line.split_once('\t').ok_or_else(|| Error::Lexicon {
            path: origin.to_path_buf(),
            line: n + 1,
            reason: "expected relation<TAB>description".into(),
        })?;
        out.insert(rel.to_string(), desc.trim().to_string());
    }
    Ok(out)
}

/// `k` tight Gaussian blobs plus a diffuse background, as rows of a matrix.
/// Returns the data and the blob index of each row (`None` for background).
pub fn blobs(
    k: usize,
    per_blob: usize,
    background: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> (ndarray::Array2<f64>, Vec<Option<usize>>) {
    let mut rng = rng_for(seed, &["synth", "blobs"]);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();
    let n = k * per_blob + background;
    let mut data = ndarray::Array2::zeros((n, dim));
    let mut truth = Vec::with_capacity(n);
    let mut row = 0;
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                data[[row, d]] = center[d] + spread * z;
            }
            truth.push(Some(c));
            row += 1;
        }
    }
    for _ in 0..background {
        for d in 0..dim {
            data[[row, d]] = rng.gen_range(-15.0..15.0);
        }
        truth.push(None);
        row += 1;
    }
    (data, truth)
}
