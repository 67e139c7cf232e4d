mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use reldisc::corpus::{RelationInstance, Span};
use reldisc::semifactual::{
    context_debiased_view, draw_entity_mode, eligible_context_positions, entity_debiased_view,
    generate_tri_view, main_view, replacement_count, EntityMode, EntitySlot, EntityTypeLexicon,
    PosClass, SynonymLexicon, DEFAULT_CONTEXT_RATIO, HEAD_END, HEAD_START, TAIL_END, TAIL_START,
};
use reldisc::synth::{SynthConfig, SyntheticCorpus};

fn tokens(s: &str) -> Vec<String> {
    s.split(' ').map(String::from).collect()
}

fn inst(
    sentence: &str,
    head: (usize, usize),
    tail: (usize, usize),
    tags: Option<&str>,
) -> RelationInstance {
    let toks = tokens(sentence);
    RelationInstance {
        instance_id: format!("i-{sentence}"),
        head: Span::new(&toks, head.0, head.1, None),
        tail: Span::new(&toks, tail.0, tail.1, None),
        pos_tags: tags.map(tokens),
        tokens: toks,
        relation_label: Some("r".into()),
    }
}

fn corpus() -> SyntheticCorpus {
    SyntheticCorpus::generate(&SynthConfig {
        instances_per_relation: 20,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn new_orleans_main_view() {
    let i = inst(
        "New Orleans is located in the United States",
        (0, 2),
        (5, 8),
        None,
    );
    let v = main_view(&i).unwrap();
    assert_eq!(
        v.tokens.join(" "),
        "<h> New Orleans </h> is located in <t> the United States </t>"
    );
    v.check_markers().unwrap();
}

#[test]
fn head_covering_the_sentence_is_rejected() {
    let toks = tokens("Paris");
    let bad = RelationInstance {
        instance_id: "solo".into(),
        head: Span::new(&toks, 0, 1, None),
        tail: Span::new(&toks, 1, 1, None),
        tokens: toks,
        relation_label: None,
        pos_tags: None,
    };
    assert!(main_view(&bad).is_err());
}

#[test]
fn adjacent_spans_and_marker_counts_on_corpus() {
    let adjacent = inst("Alpha Beta met", (0, 1), (1, 2), None);
    let v = main_view(&adjacent).unwrap();
    assert_eq!(v.tokens.join(" "), "<h> Alpha </h> <t> Beta </t> met");
    for i in corpus().instances.iter().take(50) {
        let v = main_view(i).unwrap();
        assert_eq!(v.tokens.len(), i.tokens.len() + 4);
        v.check_markers().unwrap();
        for m in [HEAD_START, HEAD_END, TAIL_START, TAIL_END] {
            assert_eq!(v.tokens.iter().filter(|t| *t == m).count(), 1);
        }
    }
}

#[test]
fn beijing_becomes_city() {
    let i = inst("Beijing hosted the Olympics", (0, 1), (3, 4), None);
    let mut lex = EntityTypeLexicon::new();
    lex.insert("Beijing", None, "City");
    // Find a seed whose first draw is head-only.
    let mut rng = (0..100)
        .map(common::rng)
        .find(|r| draw_entity_mode(&mut r.clone()) == EntityMode::HeadOnly)
        .unwrap();
    let v = entity_debiased_view(&i, &lex, &mut rng).unwrap();
    assert_eq!(v.entity_mode, Some(EntityMode::HeadOnly));
    assert_eq!(
        v.tokens.join(" "),
        "<h> [City] </h> hosted the <t> Olympics </t>"
    );
    assert_eq!(v.head, EntitySlot::Masked);
    assert_eq!(v.tail, EntitySlot::Surface("Olympics".into()));
    assert!(!v.fallback);
}

#[test]
fn kb_id_lookup_precedes_surface_and_empty_type_is_distinct() {
    let mut lex = EntityTypeLexicon::new();
    lex.insert("Paris", Some("Q90"), "City");
    lex.insert("Paris", None, "Person");
    lex.insert("Nowhere", Some("Q0"), "");
    assert_eq!(lex.lookup("Paris", Some("Q90")), Some("City"));
    assert_eq!(lex.lookup("Paris", None), Some("Person"));
    assert_eq!(lex.lookup("Nowhere", Some("Q0")), Some(""));
    assert_eq!(lex.lookup("Atlantis", None), None);
}

#[test]
fn empty_entity_lexicon_falls_back_to_main_content() {
    let i = inst("Beijing hosted the Olympics", (0, 1), (3, 4), None);
    let main = main_view(&i).unwrap();
    let v = entity_debiased_view(&i, &EntityTypeLexicon::new(), &mut common::rng(1)).unwrap();
    assert!(v.fallback);
    assert_eq!(v.tokens, main.tokens);
}

#[test]
fn entity_modes_are_uniform_over_3000_draws() {
    let mut rng = common::rng(2024);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..3000 {
        *counts
            .entry(format!("{:?}", draw_entity_mode(&mut rng)))
            .or_default() += 1;
    }
    assert_eq!(counts.len(), 3);
    for (mode, c) in counts {
        let freq = c as f64 / 3000.0;
        assert!((freq - 1.0 / 3.0).abs() <= 0.02, "{mode}: {freq}");
    }
}

fn twenty_eligible() -> (RelationInstance, SynonymLexicon) {
    let words: Vec<String> = (0..20).map(|i| format!("word{i}")).collect();
    let sentence = format!("Alpha {} Beta", words.join(" "));
    let tags = format!("NNP {} NNP", vec!["NN"; 20].join(" "));
    let i = inst(&sentence, (0, 1), (21, 22), Some(&tags));
    let mut lex = SynonymLexicon::new();
    for w in &words {
        lex.insert(w, PosClass::Noun, &[&format!("{w}x")]);
    }
    (i, lex)
}

#[test]
fn twenty_eligible_tokens_give_one_replacement() {
    let (i, lex) = twenty_eligible();
    assert_eq!(eligible_context_positions(&i, &lex).len(), 20);
    let v = context_debiased_view(&i, &lex, &mut common::rng(5), DEFAULT_CONTEXT_RATIO).unwrap();
    assert_eq!(v.replaced_positions.len(), 1);
    assert!(!v.fallback);
    assert_eq!(replacement_count(20, 0.05), 1);
    assert_eq!(replacement_count(21, 0.05), 2);
    assert_eq!(replacement_count(1, 0.05), 1);
    assert_eq!(replacement_count(0, 0.05), 0);
}

#[test]
fn only_excluded_tags_is_fallback() {
    let i = inst("He and the 3 .", (0, 1), (3, 4), Some("PRP CC DT CD ."));
    let mut lex = SynonymLexicon::new();
    lex.insert("and", PosClass::Noun, &["plus"]);
    lex.insert("the", PosClass::Noun, &["a"]);
    let v = context_debiased_view(&i, &lex, &mut common::rng(0), 0.05).unwrap();
    assert!(v.fallback);
    assert_eq!(v.tokens, main_view(&i).unwrap().tokens);
}

#[test]
fn located_becomes_situated_keeping_length() {
    let mut lex = SynonymLexicon::new();
    lex.insert("located", PosClass::Verb, &["situated"]);
    let places = [
        "Lyon", "Osaka", "Quito", "Perth", "Tunis", "Bergen", "Cusco", "Hue", "Split", "Turku",
        "Rome", "Oslo", "Kyiv", "Lima", "Doha", "Baku", "Riga", "Male", "Suva", "Apia",
    ];
    for (k, place) in places.iter().enumerate() {
        let sentence = format!("The Museum{k} is located in {place}");
        let i = inst(&sentence, (1, 2), (5, 6), Some("DT NNP VBZ VBN IN NNP"));
        let v = context_debiased_view(&i, &lex, &mut common::rng(k as u64), 0.05).unwrap();
        let expected = format!("The <h> Museum{k} </h> is situated in <t> {place} </t>");
        assert_eq!(v.tokens.join(" "), expected);
        assert_eq!(v.tokens.len(), main_view(&i).unwrap().tokens.len());
    }
}

#[test]
fn multi_token_synonym_is_split_in_place() {
    let mut lex = SynonymLexicon::new();
    lex.insert("located", PosClass::Verb, &["set_up"]);
    let i = inst(
        "The Museum is located in Lyon",
        (1, 2),
        (5, 6),
        Some("DT NNP VBZ VBN IN NNP"),
    );
    let v = context_debiased_view(&i, &lex, &mut common::rng(0), 0.05).unwrap();
    assert_eq!(
        v.tokens.join(" "),
        "The <h> Museum </h> is set up in <t> Lyon </t>"
    );
    v.check_markers().unwrap();
}

#[test]
fn synonym_lexicon_drops_self_candidates() {
    let mut lex = SynonymLexicon::new();
    assert!(!lex.insert("big", PosClass::Adjective, &["big", "BIG"]));
    assert!(lex.candidates("big", PosClass::Adjective).is_none());
    assert!(lex.insert("Big", PosClass::Adjective, &["large", "large", "big"]));
    assert_eq!(
        lex.candidates("big", PosClass::Adjective).unwrap(),
        ["large"]
    );
    assert!(lex.candidates("big", PosClass::Noun).is_none());
}

#[test]
fn lexicon_files_report_line_numbers() {
    let origin = std::path::Path::new("lex.tsv");
    let err = SynonymLexicon::parse("good\tJJ\tfine\nbad line\n", origin).unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
    assert!(EntityTypeLexicon::parse("Paris\tQ90\n", origin).is_err());
    let lex = EntityTypeLexicon::parse("Paris\tQ90\tCity\n", origin).unwrap();
    assert_eq!(lex.lookup("x", Some("Q90")), Some("City"));
}

#[test]
fn tri_views_are_deterministic_and_share_the_label() {
    let c = corpus();
    for i in c.instances.iter().take(40) {
        let a =
            generate_tri_view(i, &c.entity_types, &c.synonyms, 9, DEFAULT_CONTEXT_RATIO).unwrap();
        let b =
            generate_tri_view(i, &c.entity_types, &c.synonyms, 9, DEFAULT_CONTEXT_RATIO).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.views.len(), 3);
        for v in &a.views {
            assert_eq!(v.relation_label, i.relation_label);
            v.check_markers().unwrap();
        }
    }
}

/// Source tokens of the view with markers removed and entity contents
/// replaced by placeholders.
fn context_tokens(v: &reldisc::semifactual::MarkedSentence) -> Vec<String> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < v.tokens.len() {
        let t = &v.tokens[k];
        if t == HEAD_START || t == TAIL_START {
            let end = if t == HEAD_START {
                v.head_range.1
            } else {
                v.tail_range.1
            };
            out.push(format!("{t}*"));
            k = end + 1;
        } else {
            out.push(t.clone());
            k += 1;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn debiased_views_respect_their_regions(seed in any::<u64>(), pick in 0usize..120) {
        let c = corpus();
        let i = &c.instances[pick];
        let t = generate_tri_view(i, &c.entity_types, &c.synonyms, seed, DEFAULT_CONTEXT_RATIO).unwrap();
        let (main, entity, context) = (&t.views[0], &t.views[1], &t.views[2]);

        // Entity view: context untouched.
        prop_assert_eq!(context_tokens(entity), context_tokens(main));

        // Context view: entity contents untouched, replacement count exact.
        prop_assert_eq!(
            &context.tokens[context.head_range.0..context.head_range.1],
            &main.tokens[main.head_range.0..main.head_range.1]
        );
        prop_assert_eq!(
            &context.tokens[context.tail_range.0..context.tail_range.1],
            &main.tokens[main.tail_range.0..main.tail_range.1]
        );
        let eligible = eligible_context_positions(i, &c.synonyms).len();
        prop_assert_eq!(context.replaced_positions.len(), replacement_count(eligible, DEFAULT_CONTEXT_RATIO));
        for &p in &context.replaced_positions {
            prop_assert!(!i.is_entity_token(p));
        }
    }
}
