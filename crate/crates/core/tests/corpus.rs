use std::collections::BTreeSet;

use proptest::prelude::*;
use serde_json::json;

use reldisc::corpus::{
    attach_pos_sidecar, build_splits, load_dataset, novel_relation_count, parse_dataset, select,
    DatasetFormat, RelationInstance, SizingPolicy, Span, SplitSpec,
};
use reldisc::Error;

fn instance(id: &str, relation: &str) -> RelationInstance {
    let tokens: Vec<String> = "Alpha met Beta yesterday"
        .split(' ')
        .map(String::from)
        .collect();
    RelationInstance {
        instance_id: id.to_string(),
        head: Span::new(&tokens, 0, 1, None),
        tail: Span::new(&tokens, 2, 3, None),
        tokens,
        relation_label: Some(relation.to_string()),
        pos_tags: None,
    }
}

fn corpus(relations: usize, per_relation: usize) -> Vec<RelationInstance> {
    (0..relations)
        .flat_map(|r| {
            (0..per_relation)
                .map(move |i| instance(&format!("P{r:03}#{i:05}"), &format!("P{r:03}")))
        })
        .collect()
}

fn fewrel_doc(relations: usize, per_relation: usize) -> String {
    let mut map = serde_json::Map::new();
    for r in 0..relations {
        let records: Vec<_> = (0..per_relation)
            .map(|_| {
                json!({
                    "tokens": ["Alpha", "met", "Beta", "yesterday"],
                    "h": ["Alpha", "Q1", [[0]]],
                    "t": ["Beta", "Q2", [[2]]],
                })
            })
            .collect();
        map.insert(format!("P{r}"), json!(records));
    }
    serde_json::Value::Object(map).to_string()
}

#[test]
fn fewrel_release_shape_loads_80_by_700() {
    let instances = parse_dataset(&fewrel_doc(80, 700), DatasetFormat::FewrelJson).unwrap();
    assert_eq!(instances.len(), 56_000);
    let relations: BTreeSet<_> = instances
        .iter()
        .map(|i| i.relation_label.clone().unwrap())
        .collect();
    assert_eq!(relations.len(), 80);
    let ids: Vec<_> = instances.iter().map(|i| i.instance_id.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn empty_file_is_empty_list() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    std::fs::write(&path, "").unwrap();
    assert!(load_dataset(&path, DatasetFormat::FewrelJson)
        .unwrap()
        .is_empty());
    assert!(load_dataset(&path, DatasetFormat::TacredJson)
        .unwrap()
        .is_empty());
}

#[test]
fn missing_file_is_io_error() {
    let err = load_dataset(
        std::path::Path::new("/nonexistent/data.json"),
        DatasetFormat::FewrelJson,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

#[test]
fn tail_beyond_sentence_names_the_instance() {
    let doc = json!({"P1": [{
        "id": "bad-one",
        "tokens": ["a", "b"],
        "h": ["a", "Q1", [[0]]],
        "t": ["z", "Q2", [[5]]],
    }]})
    .to_string();
    let err = parse_dataset(&doc, DatasetFormat::FewrelJson).unwrap_err();
    match err {
        Error::InvalidInstance { id, .. } => assert_eq!(id, "bad-one"),
        other => panic!("unexpected {other:?}"),
    }

    let tacred = json!([{
        "id": "t-bad", "token": ["a", "b"], "relation": "r",
        "subj_start": 0, "subj_end": 0, "obj_start": 1, "obj_end": 4,
    }])
    .to_string();
    match parse_dataset(&tacred, DatasetFormat::TacredJson).unwrap_err() {
        Error::InvalidInstance { id, .. } => assert_eq!(id, "t-bad"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_record_names_index_and_field() {
    let doc = json!({"P1": [
        {"tokens": ["a", "b"], "h": ["a", "Q1", [[0]]], "t": ["b", "Q2", [[1]]]},
        {"tokens": ["a", "b"], "h": ["a", "Q1", [[0]]]},
    ]})
    .to_string();
    match parse_dataset(&doc, DatasetFormat::FewrelJson).unwrap_err() {
        Error::MalformedRecord { index, field, .. } => {
            assert_eq!(index, 1);
            assert_eq!(field, "t");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn tacred_inclusive_ends_and_pos() {
    let doc = json!([{
        "id": "x1",
        "token": ["Bill", "Gates", "founded", "Microsoft", "."],
        "stanford_pos": ["NNP", "NNP", "VBD", "NNP", "."],
        "relation": "org:founded_by",
        "subj_start": 0, "subj_end": 1, "obj_start": 3, "obj_end": 3,
    }])
    .to_string();
    let inst = parse_dataset(&doc, DatasetFormat::TacredJson)
        .unwrap()
        .remove(0);
    assert_eq!(inst.head.surface, "Bill Gates");
    assert_eq!((inst.tail.start, inst.tail.end), (3, 4));
    assert_eq!(inst.pos_tags.unwrap()[2], "VBD");
}

#[test]
fn pos_sidecar_attaches_by_id() {
    let mut instances = vec![instance("a", "r"), instance("b", "r")];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pos.tsv");
    std::fs::write(&path, "b\tNNP VBD NNP NN\n").unwrap();
    attach_pos_sidecar(&mut instances, &path).unwrap();
    assert!(instances[0].pos_tags.is_none());
    assert_eq!(instances[1].pos_tags.as_ref().unwrap().len(), 4);
    std::fs::write(&path, "a\tNNP VBD\n").unwrap();
    assert!(attach_pos_sidecar(&mut instances, &path).is_err());
}

#[test]
fn fewrel_policy_at_twenty_percent() {
    let data = corpus(80, 700);
    let split = build_splits(&data, 0.2, &SizingPolicy::fewrel(), 1).unwrap();
    assert_eq!(split.novel_relations.len(), 16);
    assert_eq!(split.predefined_relations.len(), 64);
    assert_eq!(split.unlabeled_ids.len(), 24_000);
    assert_eq!(split.test_ids.len(), 8_000);
    // 300 labeled per pre-defined relation.
    assert_eq!(split.labeled_ids.len(), 64 * 300);
}

#[test]
fn fewrel_policy_novel_counts() {
    let data = corpus(80, 700);
    for (ratio, novel) in [(0.2, 16), (0.5, 40), (0.8, 64)] {
        let split = build_splits(&data, ratio, &SizingPolicy::fewrel(), 9).unwrap();
        assert_eq!(split.novel_relations.len(), novel);
        assert_eq!(split.labeled_ids.len(), (80 - novel) * 300);
    }
}

#[test]
fn tacred_canonical_counts() {
    let policy = SizingPolicy::tacred();
    assert_eq!(novel_relation_count(41, 0.2, &policy).unwrap(), 9);
    assert_eq!(novel_relation_count(41, 0.5, &policy).unwrap(), 20);
    assert_eq!(novel_relation_count(41, 0.8, &policy).unwrap(), 32);
    assert_eq!(novel_relation_count(41, 0.3, &policy).unwrap(), 12);
    assert!(novel_relation_count(41, 0.3, &SizingPolicy::fewrel()).is_err());
    assert!(novel_relation_count(10, 1.0, &policy).is_err());
}

#[test]
fn tacred_policy_drops_no_relation() {
    let mut data = corpus(41, 40);
    data.extend((0..30).map(|i| instance(&format!("zz#{i}"), "no_relation")));
    let split = build_splits(&data, 0.5, &SizingPolicy::tacred(), 4).unwrap();
    assert_eq!(split.all_relations().len(), 41);
    assert_eq!(split.novel_relations.len(), 20);
    assert!(!split.all_relations().contains("no_relation"));
    // 15% of 40 = 6 test; 17 of the remaining 34 unlabeled; 17 labeled.
    assert_eq!(split.test_ids.len(), 41 * 6);
    assert_eq!(split.unlabeled_ids.len(), 41 * 17);
    assert_eq!(split.labeled_ids.len(), 21 * 17);
}

#[test]
fn zero_ratio_has_no_novel_relations() {
    let data = corpus(10, 30);
    let split = build_splits(&data, 0.0, &"per-relation:5,10,10".parse().unwrap(), 2).unwrap();
    assert!(split.novel_relations.is_empty());
    assert_eq!(split.predefined_relations.len(), 10);
    assert_disjoint(&split);
}

#[test]
fn insufficient_instances_names_relation() {
    let mut data = corpus(5, 30);
    data.retain(|i| !(i.relation_label.as_deref() == Some("P003") && i.instance_id.ends_with('9')));
    match build_splits(&data, 0.2, &"per-relation:5,10,15".parse().unwrap(), 0).unwrap_err() {
        Error::InsufficientInstances { relation, .. } => assert_eq!(relation, "P003"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn non_integral_split_is_error() {
    let data = corpus(7, 30);
    assert!(matches!(
        build_splits(
            &data,
            0.5,
            &SizingPolicy::PerRelation {
                test: 5,
                unlabeled: 10,
                labeled: 10
            },
            0
        ),
        Err(Error::InvalidSplit(_))
    ));
}

#[test]
fn manifest_round_trips_and_is_stable() {
    let data = corpus(10, 30);
    let policy: SizingPolicy = "per-relation:5,10,10".parse().unwrap();
    let a = build_splits(&data, 0.2, &policy, 77).unwrap();
    let b = build_splits(&data, 0.2, &policy, 77).unwrap();
    assert_eq!(a.to_manifest(), b.to_manifest());
    assert_eq!(SplitSpec::from_manifest(&a.to_manifest()).unwrap(), a);
    let picked = select(&data, &a.test_ids);
    assert_eq!(picked.len(), a.test_ids.len());
}

fn assert_disjoint(split: &SplitSpec) {
    assert!(split.labeled_ids.is_disjoint(&split.unlabeled_ids));
    assert!(split.labeled_ids.is_disjoint(&split.test_ids));
    assert!(split.unlabeled_ids.is_disjoint(&split.test_ids));
    assert!(split
        .predefined_relations
        .is_disjoint(&split.novel_relations));
}

fn relation_of(id: &str) -> &str {
    id.split('#').next().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_are_disjoint_and_deterministic(seed in any::<u64>(), ratio_idx in 0usize..3) {
        let data = corpus(10, 30);
        let ratio = [0.2, 0.5, 0.8][ratio_idx];
        let policy = SizingPolicy::PerRelation { test: 5, unlabeled: 10, labeled: 10 };
        let split = build_splits(&data, ratio, &policy, seed).unwrap();
        assert_disjoint(&split);
        prop_assert_eq!(&split, &build_splits(&data, ratio, &policy, seed).unwrap());
        for id in &split.labeled_ids {
            prop_assert!(split.predefined_relations.contains(relation_of(id)));
        }
        let unlabeled_relations: BTreeSet<&str> = split.unlabeled_ids.iter().map(|id| relation_of(id)).collect();
        for rel in &split.novel_relations {
            prop_assert!(unlabeled_relations.contains(rel.as_str()));
        }
        let test_relations: BTreeSet<&str> = split.test_ids.iter().map(|id| relation_of(id)).collect();
        prop_assert_eq!(test_relations.len(), 10);
    }
}
