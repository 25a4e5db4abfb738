//! Mutates the fuzz seed corpus and feeds every parser. Runs on stable as a
//! cheap stand-in for the libFuzzer targets: no panics, and anything that
//! parses must serialize to a fixpoint.

use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;
use spkadapt::cli::config::ExperimentConfig;
use spkadapt::cluster::ClusterAssignment;
use spkadapt::config::KvConfig;
use spkadapt::corpus::CorpusSpec;
use spkadapt::data::{parse_trials, trials_to_text, PreparedDataset, Role};
use spkadapt::eval::{compute_eer, parse_scores, scores_to_text, Backend};
use spkadapt::model::Checkpoint;
use spkadapt::EmbeddingSet;

fn seeds(target: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fuzz/corpus")
        .join(target);
    let mut out: Vec<String> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| fs::read_to_string(e.unwrap().path()).unwrap())
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[derive(Debug, Clone)]
enum Edit {
    Flip(usize, u8),
    Insert(usize, char),
    Delete(usize, usize),
    Truncate(usize),
    DupLine(usize),
}

fn edit() -> impl Strategy<Value = Edit> {
    let junk = prop::sample::select(vec![
        '0', '9', '-', '.', 'e', '\t', ' ', '\n', '=', '#', 'x', 'N',
    ]);
    prop_oneof![
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Edit::Flip(i, b)),
        (any::<usize>(), junk).prop_map(|(i, c)| Edit::Insert(i, c)),
        (any::<usize>(), 1usize..8).prop_map(|(i, n)| Edit::Delete(i, n)),
        any::<usize>().prop_map(Edit::Truncate),
        any::<usize>().prop_map(Edit::DupLine),
    ]
}

fn apply(text: &str, edits: &[Edit]) -> String {
    let mut bytes = text.as_bytes().to_vec();
    for e in edits {
        let n = bytes.len().max(1);
        match *e {
            Edit::Flip(i, b) if !bytes.is_empty() => bytes[i % n] = b,
            Edit::Insert(i, c) => bytes.insert(i % (bytes.len() + 1), c as u8),
            Edit::Delete(i, k) if !bytes.is_empty() => {
                let s = i % n;
                bytes.drain(s..(s + k).min(bytes.len()));
            }
            Edit::Truncate(i) => bytes.truncate(i % (bytes.len() + 1)),
            Edit::DupLine(i) => {
                let s = String::from_utf8_lossy(&bytes).into_owned();
                let mut lines: Vec<&str> = s.lines().collect();
                if !lines.is_empty() {
                    let l = lines[i % lines.len()];
                    lines.insert(i % lines.len(), l);
                }
                bytes = (lines.join("\n") + "\n").into_bytes();
            }
            _ => {}
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

fn mutated(target: &'static str) -> impl Strategy<Value = String> {
    let seeds = seeds(target);
    (0..seeds.len(), prop::collection::vec(edit(), 0..4))
        .prop_map(move |(i, edits)| apply(&seeds[i], &edits))
}

#[test]
fn every_seed_parses() {
    for s in seeds("embedding_set") {
        EmbeddingSet::parse(&s).unwrap();
    }
    for s in seeds("manifest") {
        PreparedDataset::from_manifest(&s, Role::DevTest).unwrap();
    }
    for s in seeds("trials") {
        parse_trials(&s).unwrap();
    }
    for s in seeds("kv_config") {
        KvConfig::parse(&s).unwrap();
    }
    for s in seeds("corpus_spec") {
        CorpusSpec::from_config_text(&s).unwrap();
    }
    for s in seeds("checkpoint") {
        Checkpoint::parse(&s).unwrap();
    }
    for s in seeds("assignment") {
        ClusterAssignment::parse(&s).unwrap();
    }
    for s in seeds("scores") {
        parse_scores(&s, Backend::Cosine).unwrap();
    }
    for s in seeds("experiment_config") {
        ExperimentConfig::resolve(&s, &[]).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn embedding_set(text in mutated("embedding_set")) {
        if let Ok(set) = EmbeddingSet::parse(&text) {
            let out = set.to_text();
            prop_assert_eq!(EmbeddingSet::parse(&out).unwrap().to_text(), out);
        }
    }

    #[test]
    fn manifest(text in mutated("manifest")) {
        if let Ok(ds) = PreparedDataset::from_manifest(&text, Role::Train) {
            let out = ds.to_manifest();
            prop_assert_eq!(PreparedDataset::from_manifest(&out, Role::Train).unwrap().to_manifest(), out);
        }
    }

    #[test]
    fn trials(text in mutated("trials")) {
        if let Ok(pairs) = parse_trials(&text) {
            prop_assert_eq!(parse_trials(&trials_to_text(&pairs)).unwrap(), pairs);
        }
    }

    #[test]
    fn kv_config(text in mutated("kv_config")) {
        if let Ok(kv) = KvConfig::parse(&text) {
            let out = kv.to_text();
            prop_assert_eq!(KvConfig::parse(&out).unwrap().to_text(), out);
        }
    }

    #[test]
    fn corpus_spec(text in mutated("corpus_spec")) {
        if let Ok(spec) = CorpusSpec::from_config_text(&text) {
            let out = spec.to_config_text();
            prop_assert_eq!(CorpusSpec::from_config_text(&out).unwrap().to_config_text(), out);
        }
    }

    #[test]
    fn checkpoint(text in mutated("checkpoint")) {
        if let Ok(ckpt) = Checkpoint::parse(&text) {
            let out = ckpt.to_text();
            prop_assert_eq!(Checkpoint::parse(&out).unwrap().to_text(), out);
        }
    }

    #[test]
    fn assignment(text in mutated("assignment")) {
        if let Ok((ids, a)) = ClusterAssignment::parse(&text) {
            let out = a.to_text(&ids).unwrap();
            let (ids2, b) = ClusterAssignment::parse(&out).unwrap();
            prop_assert_eq!(b.to_text(&ids2).unwrap(), out);
        }
    }

    #[test]
    fn scores(text in mutated("scores")) {
        if let Ok(scored) = parse_scores(&text, Backend::Siamese) {
            let out = scores_to_text(&scored);
            prop_assert_eq!(scores_to_text(&parse_scores(&out, Backend::Siamese).unwrap()), out);
            if let Ok(r) = compute_eer(&scored) {
                prop_assert!((0.0..=1.0).contains(&r.eer));
            }
        }
    }

    #[test]
    fn experiment_config(text in mutated("experiment_config")) {
        if let Ok(cfg) = ExperimentConfig::resolve(&text, &[]) {
            prop_assert_eq!(ExperimentConfig::resolve(&cfg.to_text(), &[]).unwrap(), cfg);
        }
    }
}
