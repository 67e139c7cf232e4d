//! Semi-factual view generation: each instance is rendered three ways, all
//! expressing the same relation.
//!
//! * main view: the sentence with entity markers around head and tail;
//! * entity-debiased view: head, tail or both swapped for a bracketed type
//!   name from an offline entity-type lexicon;
//! * context-debiased view: a fraction of the context words swapped for
//!   part-of-speech-compatible synonyms.
//!
//! All three views keep the entity markers so the encoder sees the same
//! structure.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RelationInstance;
use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const HEAD_START: &str = "<h>";
pub const HEAD_END: &str = "</h>";
pub const TAIL_START: &str = "<t>";
pub const TAIL_END: &str = "</t>";

pub const DEFAULT_CONTEXT_RATIO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViewKind {
    Main,
    Entity,
    Context,
}

impl ViewKind {
    pub const ALL: [ViewKind; 3] = [ViewKind::Main, ViewKind::Entity, ViewKind::Context];

    /// Zero-based position in a [`TriView`].
    pub fn index(self) -> usize {
        match self {
            ViewKind::Main => 0,
            ViewKind::Entity => 1,
            ViewKind::Context => 2,
        }
    }
}

/// What goes into the head/tail slot of the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntitySlot {
    Surface(String),
    /// The entity was replaced by its type; the prompt uses `<h>` / `<t>`.
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityMode {
    HeadOnly,
    TailOnly,
    Both,
}

/// Uniform draw over the three substitution modes.
pub fn draw_entity_mode<R: Rng + ?Sized>(rng: &mut R) -> EntityMode {
    match rng.gen_range(0..3) {
        0 => EntityMode::HeadOnly,
        1 => EntityMode::TailOnly,
        _ => EntityMode::Both,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedSentence {
    pub tokens: Vec<String>,
    pub head: EntitySlot,
    pub tail: EntitySlot,
    pub view_kind: ViewKind,
    /// Token range of the head content inside `tokens` (between markers).
    pub head_range: (usize, usize),
    pub tail_range: (usize, usize),
    pub relation_label: Option<String>,
    /// Set when the view could not be debiased and mirrors the main view.
    pub fallback: bool,
    pub entity_mode: Option<EntityMode>,
    /// Context positions (in the source sentence) that were substituted.
    pub replaced_positions: Vec<usize>,
}

impl MarkedSentence {
    /// Checks that each marker occurs once and wraps its recorded range.
    pub fn check_markers(&self) -> Result<()> {
        let find = |m: &str| -> Result<usize> {
            let hits: Vec<usize> = self
                .tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| t.as_str() == m)
                .map(|(i, _)| i)
                .collect();
            match hits.as_slice() {
                [one] => Ok(*one),
                _ => Err(Error::InvalidInput(format!(
                    "marker {m} occurs {} times",
                    hits.len()
                ))),
            }
        };
        let (hs, he, ts, te) = (
            find(HEAD_START)?,
            find(HEAD_END)?,
            find(TAIL_START)?,
            find(TAIL_END)?,
        );
        let ordered = hs < he && ts < te && (he < ts || te < hs);
        if !ordered || self.head_range != (hs + 1, he) || self.tail_range != (ts + 1, te) {
            return Err(Error::InvalidInput(
                "entity markers unbalanced or misordered".into(),
            ));
        }
        if he == hs + 1 || te == ts + 1 {
            return Err(Error::InvalidInput(
                "entity marker wraps an empty span".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriView {
    pub source_id: String,
    pub relation_label: Option<String>,
    /// Main, entity-debiased, context-debiased.
    pub views: [MarkedSentence; 3],
}

impl TriView {
    pub fn view(&self, kind: ViewKind) -> &MarkedSentence {
        &self.views[kind.index()]
    }
}

/// Offline entity-type table (`surface<TAB>kb_id<TAB>type_name`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityTypeLexicon {
    by_kb_id: BTreeMap<String, String>,
    by_surface: BTreeMap<String, String>,
}

impl EntityTypeLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, kb_id: Option<&str>, type_name: &str) {
        if let Some(kb) = kb_id.filter(|k| !k.is_empty()) {
            self.by_kb_id.insert(kb.to_string(), type_name.to_string());
        }
        if !surface.is_empty() {
            self.by_surface
                .insert(surface.to_string(), type_name.to_string());
        }
    }

    pub fn is_empty(&self) -> bool {
        self.by_kb_id.is_empty() && self.by_surface.is_empty()
    }

    /// Looks up by knowledge-base id first, then surface. `Some("")` is an
    /// entry with an empty type, distinct from a missing entry.
    pub fn lookup(&self, surface: &str, kb_id: Option<&str>) -> Option<&str> {
        kb_id
            .and_then(|kb| self.by_kb_id.get(kb))
            .or_else(|| self.by_surface.get(surface))
            .map(String::as_str)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lex = Self::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Lexicon {
                    path: origin.to_path_buf(),
                    line: line_no + 1,
                    reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            }
            lex.insert(fields[0], Some(fields[1]), fields[2]);
        }
        Ok(lex)
    }
}

/// Coarse part of speech used to key the synonym lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PosClass {
    Noun,
    Verb,
    Adjective,
    Adverb,
}

impl PosClass {
    /// Maps Penn Treebank, Universal or WordNet tags to a coarse class.
    /// Proper nouns map to `None`.
    pub fn from_tag(tag: &str) -> Option<PosClass> {
        match tag {
            "NNP" | "NNPS" | "PROPN" => None,
            "n" | "NOUN" => Some(PosClass::Noun),
            "v" | "VERB" => Some(PosClass::Verb),
            "a" | "s" | "ADJ" => Some(PosClass::Adjective),
            "r" | "ADV" => Some(PosClass::Adverb),
            t if t.starts_with("NN") => Some(PosClass::Noun),
            t if t.starts_with("VB") => Some(PosClass::Verb),
            t if t.starts_with("JJ") => Some(PosClass::Adjective),
            t if t.starts_with("RB") => Some(PosClass::Adverb),
            _ => None,
        }
    }
}

/// Tags never substituted: proper nouns, pronouns, coordinating
/// conjunctions, determiners, punctuation and numbers.
pub fn is_excluded_tag(tag: &str) -> bool {
    matches!(
        tag,
        "NNP"
            | "NNPS"
            | "PRP"
            | "PRP$"
            | "WP"
            | "WP$"
            | "CC"
            | "DT"
            | "PDT"
            | "WDT"
            | "CD"
            | "SYM"
            | "PROPN"
            | "PRON"
            | "CCONJ"
            | "DET"
            | "PUNCT"
            | "NUM"
    ) || !tag.chars().any(|c| c.is_ascii_alphabetic())
        || tag.starts_with("-")
        || tag == "HYPH"
        || tag == "NFP"
}

/// `(word, part of speech) -> synonyms` (`word<TAB>pos<TAB>s1|s2|...`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynonymLexicon {
    entries: BTreeMap<(String, PosClass), Vec<String>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds candidates; the word itself and duplicates are dropped. Returns
    /// false if nothing usable remained.
    pub fn insert(&mut self, word: &str, pos: PosClass, candidates: &[&str]) -> bool {
        let key_word = word.to_lowercase();
        let entry = self.entries.entry((key_word.clone(), pos)).or_default();
        for cand in candidates {
            let cand = cand.trim();
            if cand.is_empty() || cand.to_lowercase() == key_word || entry.iter().any(|c| c == cand)
            {
                continue;
            }
            entry.push(cand.to_string());
        }
        if entry.is_empty() {
            self.entries.remove(&(key_word, pos));
            false
        } else {
            true
        }
    }

    pub fn candidates(&self, word: &str, pos: PosClass) -> Option<&[String]> {
        self.entries
            .get(&(word.to_lowercase(), pos))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lex = Self::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Lexicon {
                path: origin.to_path_buf(),
                line: line_no + 1,
                reason,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected 3 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let pos = PosClass::from_tag(fields[1])
                .ok_or_else(|| err(format!("unsupported part of speech `{}`", fields[1])))?;
            let cands: Vec<&str> = fields[2].split('|').collect();
            lex.insert(fields[0], pos, &cands);
        }
        Ok(lex)
    }
}

fn check_instance(instance: &RelationInstance) -> Result<()> {
    instance.validate()
}

/// Renders the source sentence with markers. `replacements` maps source
/// positions outside the spans to substitute token lists.
fn render(
    instance: &RelationInstance,
    head_content: Option<&[String]>,
    tail_content: Option<&[String]>,
    replacements: &HashMap<usize, Vec<String>>,
    view_kind: ViewKind,
) -> MarkedSentence {
    let mut tokens = Vec::with_capacity(instance.tokens.len() + 8);
    let mut head_range = (0, 0);
    let mut tail_range = (0, 0);
    let mut i = 0;
    while i < instance.tokens.len() {
        if i == instance.head.start || i == instance.tail.start {
            let is_head = i == instance.head.start;
            let (span, content, open, close) = if is_head {
                (&instance.head, head_content, HEAD_START, HEAD_END)
            } else {
                (&instance.tail, tail_content, TAIL_START, TAIL_END)
            };
            tokens.push(open.to_string());
            let start = tokens.len();
            match content {
                Some(c) => tokens.extend(c.iter().cloned()),
                None => tokens.extend(instance.tokens[span.start..span.end].iter().cloned()),
            }
            let range = (start, tokens.len());
            tokens.push(close.to_string());
            if is_head {
                head_range = range;
            } else {
                tail_range = range;
            }
            i = span.end;
            continue;
        }
        match replacements.get(&i) {
            Some(rep) => tokens.extend(rep.iter().cloned()),
            None => tokens.push(instance.tokens[i].clone()),
        }
        i += 1;
    }
    let slot = |content: Option<&[String]>, surface: &str| match content {
        Some(_) => EntitySlot::Masked,
        None => EntitySlot::Surface(surface.to_string()),
    };
    MarkedSentence {
        tokens,
        head: slot(head_content, &instance.head.surface),
        tail: slot(tail_content, &instance.tail.surface),
        view_kind,
        head_range,
        tail_range,
        relation_label: instance.relation_label.clone(),
        fallback: false,
        entity_mode: None,
        replaced_positions: Vec::new(),
    }
}

/// Main view: original tokens with `<h> .. </h>` and `<t> .. </t>` markers.
pub fn main_view(instance: &RelationInstance) -> Result<MarkedSentence> {
    check_instance(instance)?;
    Ok(render(
        instance,
        None,
        None,
        &HashMap::new(),
        ViewKind::Main,
    ))
}

/// Entity-debiased view. Entities without a usable type keep their surface
/// and mark the view as a fallback.
pub fn entity_debiased_view<R: Rng + ?Sized>(
    instance: &RelationInstance,
    lexicon: &EntityTypeLexicon,
    rng: &mut R,
) -> Result<MarkedSentence> {
    check_instance(instance)?;
    let mode = draw_entity_mode(rng);
    let type_token = |span: &crate::corpus::Span| {
        lexicon
            .lookup(&span.surface, span.kb_id.as_deref())
            .filter(|t| !t.is_empty())
            .map(|t| vec![format!("[{t}]")])
    };
    let want_head = matches!(mode, EntityMode::HeadOnly | EntityMode::Both);
    let want_tail = matches!(mode, EntityMode::TailOnly | EntityMode::Both);
    let head = if want_head {
        type_token(&instance.head)
    } else {
        None
    };
    let tail = if want_tail {
        type_token(&instance.tail)
    } else {
        None
    };
    let fallback = (want_head && head.is_none()) || (want_tail && tail.is_none());
    let mut view = render(
        instance,
        head.as_deref(),
        tail.as_deref(),
        &HashMap::new(),
        ViewKind::Entity,
    );
    view.fallback = fallback;
    view.entity_mode = Some(mode);
    Ok(view)
}

/// Context positions eligible for synonym substitution.
pub fn eligible_context_positions(
    instance: &RelationInstance,
    lexicon: &SynonymLexicon,
) -> Vec<usize> {
    let Some(tags) = &instance.pos_tags else {
        return Vec::new();
    };
    (0..instance.tokens.len())
        .filter(|&i| !instance.is_entity_token(i))
        .filter(|&i| !is_excluded_tag(&tags[i]))
        .filter(|&i| {
            PosClass::from_tag(&tags[i])
                .and_then(|pos| lexicon.candidates(&instance.tokens[i], pos))
                .is_some()
        })
        .collect()
}

/// Number of substitutions for `eligible` candidates: `ceil(ratio * eligible)`.
pub fn replacement_count(eligible: usize, ratio: f64) -> usize {
    if eligible == 0 {
        return 0;
    }
    ((ratio * eligible as f64).ceil() as usize).clamp(1, eligible)
}

/// Context-debiased view.
pub fn context_debiased_view<R: Rng + ?Sized>(
    instance: &RelationInstance,
    lexicon: &SynonymLexicon,
    rng: &mut R,
    ratio: f64,
) -> Result<MarkedSentence> {
    check_instance(instance)?;
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!(
            "context ratio {ratio} outside [0, 1]"
        )));
    }
    let eligible = eligible_context_positions(instance, lexicon);
    let n = replacement_count(eligible.len(), ratio);
    if n == 0 {
        let mut view = render(instance, None, None, &HashMap::new(), ViewKind::Context);
        view.fallback = true;
        return Ok(view);
    }
    let tags = instance.pos_tags.as_ref().expect("eligible implies tags");
    let mut chosen: Vec<usize> = sample(rng, eligible.len(), n)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    chosen.sort_unstable();
    let mut replacements = HashMap::new();
    for &pos in &chosen {
        let class = PosClass::from_tag(&tags[pos]).expect("eligible implies class");
        let cands = lexicon
            .candidates(&instance.tokens[pos], class)
            .expect("eligible implies candidates");
        let pick = &cands[rng.gen_range(0..cands.len())];
        let pieces: Vec<String> = pick
            .split(|c: char| c.is_whitespace() || c == '_')
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .collect();
        replacements.insert(pos, pieces);
    }
    let mut view = render(instance, None, None, &replacements, ViewKind::Context);
    view.replaced_positions = chosen;
    Ok(view)
}

/// Generates the three views of `instance`. The random streams depend only
/// on `(seed, instance_id)`.
pub fn generate_tri_view(
    instance: &RelationInstance,
    entity_lexicon: &EntityTypeLexicon,
    synonym_lexicon: &SynonymLexicon,
    seed: u64,
    context_ratio: f64,
) -> Result<TriView> {
    let id = instance.instance_id.as_str();
    let main = main_view(instance)?;
    let entity = entity_debiased_view(
        instance,
        entity_lexicon,
        &mut rng_for(seed, &["view", "entity", id]),
    )?;
    let context = context_debiased_view(
        instance,
        synonym_lexicon,
        &mut rng_for(seed, &["view", "context", id]),
        context_ratio,
    )?;
    Ok(TriView {
        source_id: instance.instance_id.clone(),
        relation_label: instance.relation_label.clone(),
        views: [main, entity, context],
    })
}

pub fn generate_all<'a>(
    instances: impl IntoIterator<Item = &'a RelationInstance>,
    entity_lexicon: &EntityTypeLexicon,
    synonym_lexicon: &SynonymLexicon,
    seed: u64,
    context_ratio: f64,
) -> Result<Vec<TriView>> {
    instances
        .into_iter()
        .map(|inst| generate_tri_view(inst, entity_lexicon, synonym_lexicon, seed, context_ratio))
        .collect()
}
