// SPDX-License-Identifier: MIT OR Apache-2.0

//! Counterfactual edit datasets.
//!
//! Two paired datasets are built from one relation bank: in the
//! *same-subject* dataset every record has the fixed subject, in the
//! *distinct-subject* dataset every record has its own subject. Records at the
//! same index share relation, base object and counterfactual object.

mod io;
pub mod lexicon;
mod template;

pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset, DatasetHeader};
pub use template::{render_sentence, SentenceTemplate, TokenizedSentence};

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl KnowledgeTriple {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        Self { subject: subject.into(), relation: relation.into(), object: object.into() }
    }

    pub fn with_object(&self, object: &str) -> Self {
        Self { object: object.into(), ..self.clone() }
    }

    pub fn with_subject(&self, subject: &str) -> Self {
        Self { subject: subject.into(), ..self.clone() }
    }
}

/// A probe sentence and the object that completes it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecificityProbe {
    pub sentence: String,
    pub expected_object: String,
}

impl SpecificityProbe {
    /// The sentence without its trailing object.
    pub fn prompt(&self) -> Result<&str> {
        self.sentence
            .strip_suffix(&self.expected_object)
            .map(str::trim_end)
            .ok_or_else(|| Error::Config(format!("probe {:?} does not end with its object", self.sentence)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    /// The requested (counterfactual) fact.
    pub triple: KnowledgeTriple,
    /// Object of the base fact the model was trained on.
    pub old_object: String,
    pub edit_sentence: String,
    pub paraphrase_sentence: String,
    pub specificity_probes: Vec<SpecificityProbe>,
}

impl EditRecord {
    pub fn base_triple(&self) -> KnowledgeTriple {
        self.triple.with_object(&self.old_object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    SameSubject,
    DistinctSubject,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::SameSubject => "same_subject",
            DatasetKind::DistinctSubject => "distinct_subject",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationEntry {
    pub relation: String,
    pub objects: Vec<String>,
}

pub type RelationBank = Vec<RelationEntry>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub edit_template: SentenceTemplate,
    pub paraphrase_template: SentenceTemplate,
    pub seed: u64,
    pub relation_bank: RelationBank,
    pub records: Vec<EditRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Re-renders edit and paraphrase sentences with other templates.
    pub fn with_templates(&self, edit: &SentenceTemplate, paraphrase: &SentenceTemplate) -> Self {
        let mut out = self.clone();
        out.edit_template = edit.clone();
        out.paraphrase_template = paraphrase.clone();
        for r in &mut out.records {
            r.edit_sentence = render_sentence(&r.triple, edit);
            r.paraphrase_sentence = render_sentence(&r.triple, paraphrase);
        }
        out
    }
}

/// Picks `n_relations` relations from the curated list.
pub fn build_relation_bank(n_relations: usize, seed: u64) -> Result<RelationBank> {
    if n_relations > lexicon::RELATIONS.len() {
        return Err(Error::Capacity(format!(
            "{n_relations} relations requested, {} available",
            lexicon::RELATIONS.len()
        )));
    }
    let mut idx: Vec<usize> = (0..lexicon::RELATIONS.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(idx[..n_relations]
        .iter()
        .map(|&i| {
            let (relation, objects) = lexicon::RELATIONS[i];
            RelationEntry { relation: relation.into(), objects: objects.iter().map(|o| o.to_string()).collect() }
        })
        .collect())
}

/// Builds the paired (same-subject, distinct-subject) datasets, one record
/// per relation for the first `n_facts` relations of the bank.
pub fn make_datasets(
    bank: &RelationBank,
    n_facts: usize,
    subject_pool: &[String],
    fixed_subject: &str,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_facts > bank.len() {
        return Err(Error::Capacity(format!("{n_facts} facts need {n_facts} relations, bank has {}", bank.len())));
    }
    if subject_pool.len() < n_facts {
        return Err(Error::Capacity(format!(
            "{n_facts} facts need {n_facts} subjects, pool has {}",
            subject_pool.len()
        )));
    }
    if subject_pool.iter().any(|s| s == fixed_subject) {
        return Err(Error::Config(format!("fixed subject {fixed_subject:?} is also in the subject pool")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects = subject_pool.to_vec();
    subjects.shuffle(&mut rng);

    let (edit_t, para_t) = (SentenceTemplate::primary(), SentenceTemplate::secondary());
    let mut same = Vec::with_capacity(n_facts);
    let mut distinct = Vec::with_capacity(n_facts);
    for (entry, subject) in bank.iter().zip(&subjects).take(n_facts) {
        if entry.objects.len() < 2 {
            return Err(Error::Capacity(format!("relation {:?} needs at least two objects", entry.relation)));
        }
        let old = entry.objects.choose(&mut rng).expect("non-empty pool").clone();
        let others: Vec<&String> = entry.objects.iter().filter(|o| **o != old).collect();
        let new = (*others.choose(&mut rng).expect("at least one alternative")).clone();
        for (subj, out) in [(fixed_subject, &mut same), (subject.as_str(), &mut distinct)] {
            let triple = KnowledgeTriple::new(subj, &entry.relation, &new);
            out.push(EditRecord {
                edit_sentence: render_sentence(&triple, &edit_t),
                paraphrase_sentence: render_sentence(&triple, &para_t),
                triple,
                old_object: old.clone(),
                specificity_probes: Vec::new(),
            });
        }
    }
    let mk = |kind, records| Dataset {
        kind,
        edit_template: edit_t.clone(),
        paraphrase_template: para_t.clone(),
        seed,
        relation_bank: bank.clone(),
        records,
    };
    Ok((mk(DatasetKind::SameSubject, same), mk(DatasetKind::DistinctSubject, distinct)))
}

/// The constant unrelated probe.
pub fn unrelated_probe() -> SpecificityProbe {
    let (s, r, o) = lexicon::UNRELATED_FACT;
    SpecificityProbe { sentence: format!("The {r} of {s} is {o}"), expected_object: o.into() }
}

/// Attaches specificity probes to both datasets of a pair: the constant
/// unrelated fact, and the record's relation applied to a spare subject,
/// expecting that subject's base object.
pub fn make_probes(
    same: &mut Dataset,
    distinct: &mut Dataset,
    bank: &RelationBank,
    spare_subjects: &[String],
    seed: u64,
) -> Result<()> {
    if spare_subjects.is_empty() {
        return Err(Error::Capacity("no spare subjects left for specificity probes".into()));
    }
    if same.len() != distinct.len() {
        return Err(Error::Config("paired datasets differ in length".into()));
    }
    let used: BTreeSet<&str> =
        same.records.iter().chain(&distinct.records).map(|r| r.triple.subject.as_str()).collect();
    if let Some(s) = spare_subjects.iter().find(|s| used.contains(s.as_str())) {
        return Err(Error::Config(format!("spare subject {s:?} is already used by a record")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let unrelated = unrelated_probe();
    let template = SentenceTemplate::primary();
    for i in 0..same.len() {
        let relation = same.records[i].triple.relation.clone();
        let pool = &bank
            .iter()
            .find(|e| e.relation == relation)
            .ok_or_else(|| Error::Config(format!("relation {relation:?} missing from bank")))?
            .objects;
        let subject = &spare_subjects[i % spare_subjects.len()];
        let object = pool.choose(&mut rng).expect("non-empty pool");
        let probe = SpecificityProbe {
            sentence: render_sentence(&KnowledgeTriple::new(subject, &relation, object), &template),
            expected_object: object.clone(),
        };
        for ds in [&mut *same, &mut *distinct] {
            ds.records[i].specificity_probes = vec![unrelated.clone(), probe.clone()];
        }
    }
    Ok(())
}

/// Training sentences: every base fact in both templates, every specificity
/// fact once, and `n_filler` extra facts about spare subjects (both
/// templates), spread evenly over relations. Each fact stated with the
/// primary template is then repeated `attribute_lines` times as a bare
/// `"{subject} {object}"` line, which ties the object to the subject tokens
/// themselves rather than to the relation context.
pub fn make_base_corpus(
    datasets: &[&Dataset],
    bank: &RelationBank,
    spare_subjects: &[String],
    n_filler: usize,
    attribute_lines: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let mut corpus = Vec::new();
    let mut seen = BTreeSet::new();
    let mut taken: BTreeSet<(String, String)> = BTreeSet::new();
    let mut push = |s: String, corpus: &mut Vec<String>| {
        if seen.insert(s.clone()) {
            corpus.push(s);
        }
    };
    for ds in datasets {
        for r in &ds.records {
            let base = r.base_triple();
            for t in [SentenceTemplate::primary(), SentenceTemplate::secondary()] {
                push(render_sentence(&base, &t), &mut corpus);
            }
            taken.insert((base.subject.clone(), base.relation.clone()));
        }
    }
    for ds in datasets {
        for r in &ds.records {
            for p in &r.specificity_probes {
                push(p.sentence.clone(), &mut corpus);
            }
        }
    }
    // probe facts about spare subjects are fixed; filler must not contradict them
    for ds in datasets {
        for (r, p) in ds.records.iter().flat_map(|r| r.specificity_probes.iter().map(move |p| (r, p))) {
            for s in spare_subjects {
                if p.sentence.starts_with(&format!("{s}'s {} is", r.triple.relation)) {
                    taken.insert((s.clone(), r.triple.relation.clone()));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let mut candidates: Vec<(usize, usize)> = (0..spare_subjects.len())
        .flat_map(|s| (0..bank.len()).map(move |r| (s, r)))
        .filter(|&(s, r)| !taken.contains(&(spare_subjects[s].clone(), bank[r].relation.clone())))
        .collect();
    if n_filler > candidates.len() {
        return Err(Error::Capacity(format!("{n_filler} filler facts requested, {} available", candidates.len())));
    }
    candidates.shuffle(&mut rng);
    // Round-robin over relations so every relation gets competing objects.
    let mut per_relation: Vec<Vec<usize>> = vec![Vec::new(); bank.len()];
    for &(s, r) in &candidates {
        per_relation[r].push(s);
    }
    let mut picked = Vec::with_capacity(n_filler);
    let mut depth = 0;
    while picked.len() < n_filler {
        for (r, subjects) in per_relation.iter().enumerate() {
            if let Some(&s) = subjects.get(depth) {
                if picked.len() < n_filler {
                    picked.push((s, r));
                }
            }
        }
        depth += 1;
    }
    // Objects cycle through each relation's pool from a random offset, so
    // every (relation, object) pair is attested once a relation has as many
    // filler facts as objects.
    let mut next_object: Vec<usize> = bank.iter().map(|e| rng.random_range(0..e.objects.len())).collect();
    for (s, r) in picked {
        let object = &bank[r].objects[next_object[r] % bank[r].objects.len()];
        next_object[r] += 1;
        let t = KnowledgeTriple::new(&spare_subjects[s], &bank[r].relation, object);
        for tpl in [SentenceTemplate::primary(), SentenceTemplate::secondary()] {
            push(render_sentence(&t, &tpl), &mut corpus);
        }
    }
    let attributes: Vec<String> = corpus
        .iter()
        .filter_map(|s| {
            let (subject, rest) = s.split_once("'s ")?;
            let (_, object) = rest.rsplit_once(" is ")?;
            Some(format!("{subject} {object}"))
        })
        .collect();
    for line in attributes {
        corpus.extend(std::iter::repeat_n(line, attribute_lines));
    }
    Ok(corpus)
}

/// Every word the generator can emit, for building the closed vocabulary.
pub fn lexicon_words() -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    let mut add = |s: &str| words.extend(s.split_whitespace().map(str::to_string));
    add(lexicon::FIXED_SUBJECT);
    lexicon::subjects().iter().for_each(|s| add(s));
    for (r, objs) in lexicon::RELATIONS {
        add(r);
        objs.iter().for_each(|o| add(o));
    }
    let (s, r, o) = lexicon::UNRELATED_FACT;
    add(s);
    add(r);
    add(o);
    lexicon::TEMPLATE_WORDS.iter().for_each(|w| add(w));
    for t in SentenceTemplate::builtins() {
        t.words().iter().for_each(|w| add(w));
    }
    words
}

/// The tokenizer over the full curated lexicon.
pub fn lexicon_tokenizer() -> Tokenizer {
    Tokenizer::from_words(lexicon_words())
}

/// Knobs for [`generate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_relations: usize,
    pub n_facts: usize,
    pub fixed_subject: String,
    pub n_filler: usize,
    /// Bare `"{subject} {object}"` lines per primary-template fact.
    pub attribute_lines: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_relations: 50,
            n_facts: 50,
            fixed_subject: lexicon::FIXED_SUBJECT.into(),
            n_filler: 200,
            attribute_lines: 1,
            seed: 0,
        }
    }
}

/// Everything the generator produces in one go.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub bank: RelationBank,
    pub same: Dataset,
    pub distinct: Dataset,
    pub corpus: Vec<String>,
    pub tokenizer: Tokenizer,
}

pub fn generate(cfg: &DataConfig) -> Result<GeneratedData> {
    let bank = build_relation_bank(cfg.n_relations, cfg.seed)?;
    let pool = lexicon::subjects();
    let (mut same, mut distinct) = make_datasets(&bank, cfg.n_facts, &pool, &cfg.fixed_subject, cfg.seed)?;
    let used: BTreeSet<&str> = distinct.records.iter().map(|r| r.triple.subject.as_str()).collect();
    let spare: Vec<String> = pool.iter().filter(|s| !used.contains(s.as_str())).cloned().collect();
    make_probes(&mut same, &mut distinct, &bank, &spare, cfg.seed)?;
    let corpus = make_base_corpus(&[&same, &distinct], &bank, &spare, cfg.n_filler, cfg.attribute_lines, cfg.seed)?;
    let tokenizer = lexicon_tokenizer();
    Ok(GeneratedData { bank, same, distinct, corpus, tokenizer })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize) -> GeneratedData {
        generate(&DataConfig { n_relations: 100, n_facts: n, n_filler: 0, attribute_lines: 0, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn relation_bank_sizes_and_determinism() {
        let one = build_relation_bank(1, 4).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].objects.len() >= 3);
        let all = build_relation_bank(100, 4).unwrap();
        let names: BTreeSet<_> = all.iter().map(|e| &e.relation).collect();
        assert_eq!(names.len(), 100);
        assert_eq!(all, build_relation_bank(100, 4).unwrap());
        assert!(matches!(build_relation_bank(lexicon::RELATIONS.len() + 1, 0), Err(Error::Capacity(_))));
    }

    #[test]
    fn paired_datasets_differ_only_in_subject() {
        let g = data(100);
        assert_eq!(g.same.len(), 100);
        assert!(g.same.records.iter().all(|r| r.triple.subject == "John Smith"));
        let subjects: BTreeSet<_> = g.distinct.records.iter().map(|r| &r.triple.subject).collect();
        assert_eq!(subjects.len(), 100);
        for (a, b) in g.same.records.iter().zip(&g.distinct.records) {
            assert_eq!(a.triple.relation, b.triple.relation);
            assert_eq!(a.triple.object, b.triple.object);
            assert_eq!(a.old_object, b.old_object);
            assert_ne!(a.triple.object, a.old_object);
            assert_eq!(a.specificity_probes, b.specificity_probes);
            assert_eq!(a.triple.with_subject(&b.triple.subject), b.triple);
        }
    }

    #[test]
    fn single_fact_pair_differs_in_one_subject() {
        let g = data(1);
        assert_eq!(g.same.len(), 1);
        let (a, b) = (&g.same.records[0], &g.distinct.records[0]);
        assert_ne!(a.triple.subject, b.triple.subject);
        assert_eq!(a.edit_sentence.replace(&a.triple.subject, &b.triple.subject), b.edit_sentence);
    }

    #[test]
    fn capacity_errors() {
        let bank = build_relation_bank(5, 0).unwrap();
        let pool: Vec<String> = vec!["Ann Lee".into(), "Bo Chan".into()];
        assert!(matches!(make_datasets(&bank, 3, &pool, "John Smith", 0), Err(Error::Capacity(_))));
        assert!(matches!(make_datasets(&bank, 6, &pool, "John Smith", 0), Err(Error::Capacity(_))));
        assert!(make_datasets(&bank, 2, &pool, "Ann Lee", 0).is_err());
    }

    #[test]
    fn probes_follow_construction() {
        let g = data(30);
        for (i, r) in g.same.records.iter().enumerate() {
            assert_eq!(r.specificity_probes.len(), 2);
            assert_eq!(r.specificity_probes[0], unrelated_probe());
            let p = &r.specificity_probes[1];
            assert!(p.sentence.contains(&format!("'s {} is", r.triple.relation)), "record {i}: {p:?}");
            assert!(!p.sentence.starts_with("John Smith"));
            assert_eq!(r.paraphrase_sentence, render_sentence(&r.triple, &SentenceTemplate::secondary()));
            assert_eq!(r.edit_sentence, render_sentence(&r.triple, &SentenceTemplate::primary()));
        }
        assert_eq!(unrelated_probe().sentence, "The capital city of America is Washington");
        assert_eq!(unrelated_probe().prompt().unwrap(), "The capital city of America is");
    }

    #[test]
    fn corpus_has_base_facts_and_no_counterfactuals() {
        let g = data(40);
        let corpus: BTreeSet<_> = g.corpus.iter().collect();
        assert_eq!(corpus.len(), g.corpus.len());
        // 2 templates x 2 datasets x 40 base facts, 40 relation probes, 1 unrelated probe
        assert_eq!(g.corpus.len(), 2 * 80 + 40 + 1);
        for ds in [&g.same, &g.distinct] {
            for r in &ds.records {
                assert!(!corpus.contains(&r.edit_sentence));
                assert!(!corpus.contains(&r.paraphrase_sentence));
                assert!(corpus.contains(&render_sentence(&r.base_triple(), &SentenceTemplate::primary())));
                for p in &r.specificity_probes {
                    assert!(corpus.contains(&p.sentence));
                }
            }
        }
    }

    #[test]
    fn filler_adds_sentences_without_contradictions() {
        let cfg = DataConfig { n_facts: 20, n_filler: 50, attribute_lines: 0, ..Default::default() };
        let g = generate(&cfg).unwrap();
        assert_eq!(g.corpus.len(), 2 * 40 + 20 + 1 + 2 * 50);
        let mut keys = BTreeSet::new();
        for s in &g.corpus {
            if let Some((head, _)) = s.rsplit_once(" is ") {
                assert!(keys.insert(head.to_string()), "two objects for {head:?}");
            }
        }
    }

    #[test]
    fn attribute_lines_repeat_primary_facts() {
        let cfg = DataConfig { n_facts: 20, n_filler: 10, attribute_lines: 2, ..Default::default() };
        let g = generate(&cfg).unwrap();
        // primary: 40 base + 20 probes + 10 filler; unrelated probe uses another pattern
        let sentences = 2 * 40 + 20 + 1 + 2 * 10;
        assert_eq!(g.corpus.len(), sentences + 2 * (40 + 20 + 10));
        let r = &g.distinct.records[0];
        let line = format!("{} {}", r.triple.subject, r.old_object);
        assert_eq!(g.corpus.iter().filter(|s| **s == line).count(), 2);
        assert!(!g.corpus.contains(&format!("{} {}", r.triple.subject, r.triple.object)));
    }

    #[test]
    fn every_sentence_round_trips_through_the_tokenizer() {
        let g = data(100);
        let tok = &g.tokenizer;
        let mut all: Vec<&String> = g.corpus.iter().collect();
        for ds in [&g.same, &g.distinct] {
            for r in &ds.records {
                all.push(&r.edit_sentence);
                all.push(&r.paraphrase_sentence);
            }
        }
        for s in all {
            let ids = tok.encode_ids(s).unwrap();
            assert_eq!(&tok.decode(&ids), s);
        }
    }
}
