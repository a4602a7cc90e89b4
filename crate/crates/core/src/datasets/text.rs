//! Two-class document tasks: tokenizer, vocabulary, mutual-information gold
//! words, the directory-per-class corpus reader and a bundled synthetic corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Document, Example, Label, Payload, Provenance, RelevanceMask};
use crate::error::{CaipiError, Result};
use crate::repr::Representation;
use crate::task::{rng_for, GoldStandard, Task, TaskData};

pub const STOP_WORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "because", "been", "but", "by",
    "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "his", "how", "i", "if",
    "in", "into", "is", "it", "its", "just", "me", "more", "my", "no", "not", "of", "on", "one", "only", "or",
    "other", "our", "out", "she", "so", "some", "such", "than", "that", "the", "their", "them", "then", "there",
    "these", "they", "this", "to", "up", "was", "we", "were", "what", "when", "which", "who", "will", "with",
    "would", "you", "your",
];

/// Lowercased alphabetic tokens with stop words removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOP_WORDS.contains(&t.as_str()))
        .collect()
}

/// Mutual information between word presence and class, from per-class document
/// counts: `with[y]` documents of class `y` contain the word, out of `totals[y]`.
pub fn presence_mutual_information(with: &[usize], totals: &[usize]) -> f64 {
    let n: usize = totals.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let present: usize = with.iter().sum();
    let p_w = [1.0 - present as f64 / n, present as f64 / n];
    let mut mi = 0.0;
    for (y, &total) in totals.iter().enumerate() {
        let p_y = total as f64 / n;
        for (w, &pw) in p_w.iter().enumerate() {
            let joint_count = if w == 1 { with[y] } else { total - with[y] };
            let joint = joint_count as f64 / n;
            if joint > 0.0 {
                mi += joint * (joint / (pw * p_y)).ln();
            }
        }
    }
    mi
}

#[derive(Clone, Debug)]
pub struct TextTask {
    pub task: Task,
    pub class_names: Vec<String>,
    pub vocabulary: Vec<String>,
    pub examples: Vec<Example>,
    pub gold_words: RelevanceMask,
    /// Mutual information per vocabulary index.
    pub scores: Vec<f64>,
}

impl TextTask {
    /// Explanation budget for a document: the number of gold words it contains.
    pub fn per_document_k(&self, doc: &Document) -> usize {
        let present: BTreeSet<u32> = doc.tokens.iter().copied().collect();
        present.iter().filter(|&&w| self.gold_words.contains(w as usize)).count()
    }

    pub fn into_task_data(self) -> TaskData {
        TaskData {
            task: self.task,
            examples: self.examples,
            gold: GoldStandard::PresentOnly(self.gold_words),
            reference: None,
            test: None,
        }
    }
}

/// Builds vocabulary, bag-of-words instances and the gold word set
/// (top `ceil(|V| / 5)` words by mutual information, ties alphabetical).
pub fn text_task_from_documents(class_names: Vec<String>, docs: Vec<(Label, String)>) -> Result<TextTask> {
    let tokenized: Vec<(Label, Vec<String>)> = docs.into_iter().map(|(y, t)| (y, tokenize(&t))).collect();
    let num_classes = class_names.len();
    let mut totals = vec![0usize; num_classes];
    for (y, _) in &tokenized {
        if *y >= num_classes {
            return Err(CaipiError::InvalidInput(format!("label {y} has no class name")));
        }
        totals[*y] += 1;
    }
    if let Some(empty) = totals.iter().position(|&c| c == 0) {
        return Err(CaipiError::InvalidInput(format!("class `{}` has no documents", class_names[empty])));
    }
    let vocab: BTreeSet<&str> = tokenized.iter().flat_map(|(_, t)| t.iter().map(String::as_str)).collect();
    if vocab.is_empty() {
        return Err(CaipiError::InvalidInput("corpus vocabulary is empty".into()));
    }
    let vocabulary: Vec<String> = vocab.into_iter().map(str::to_owned).collect();
    let index: BTreeMap<&str, u32> = vocabulary.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect();

    let mut with = vec![vec![0usize; num_classes]; vocabulary.len()];
    for (y, toks) in &tokenized {
        let present: BTreeSet<u32> = toks.iter().map(|t| index[t.as_str()]).collect();
        for w in present {
            with[w as usize][*y] += 1;
        }
    }
    let scores: Vec<f64> = with.iter().map(|c| presence_mutual_information(c, &totals)).collect();
    let mut order: Vec<usize> = (0..vocabulary.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let gold_count = vocabulary.len().div_ceil(5);
    let gold_words = RelevanceMask::new(order.into_iter().take(gold_count));

    let task = Task {
        name: "text".into(),
        representation: Representation::BagOfWords,
        num_classes,
        baseline: 0,
        value_domain: Vec::new(),
        rule: None,
    };
    let mut examples = Vec::with_capacity(tokenized.len());
    let mut seen = BTreeSet::new();
    for (y, toks) in tokenized {
        if toks.is_empty() {
            continue;
        }
        let doc = Document::new(vocabulary.len(), toks.iter().map(|t| index[t.as_str()]).collect())?;
        let inst = task.instance(Payload::Document(doc))?;
        if seen.insert(inst.id) {
            examples.push(Example::new(inst, y, Provenance::Seed));
        }
    }
    Ok(TextTask {
        task,
        class_names,
        vocabulary,
        examples,
        gold_words,
        scores,
    })
}

/// Reads `corpus/<class>/<file>` documents (classes in name order), shuffled by `seed`.
pub fn load_text(corpus: &Path, seed: u64) -> Result<TextTask> {
    let read_dir = |p: &Path| -> Result<Vec<std::path::PathBuf>> {
        let mut entries: Vec<_> = std::fs::read_dir(p)
            .map_err(|e| CaipiError::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        Ok(entries)
    };
    let class_dirs: Vec<_> = read_dir(corpus)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.len() < 2 {
        return Err(CaipiError::InvalidInput(format!(
            "{} must contain at least two class directories",
            corpus.display()
        )));
    }
    let mut class_names = Vec::new();
    let mut docs = Vec::new();
    for (y, dir) in class_dirs.iter().enumerate() {
        class_names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        for file in read_dir(dir)?.into_iter().filter(|p| p.is_file()) {
            let bytes = std::fs::read(&file).map_err(|e| CaipiError::io(&file, e))?;
            let text = String::from_utf8(bytes).map_err(|_| CaipiError::Malformed {
                path: file.display().to_string(),
                message: "not UTF-8".into(),
            })?;
            docs.push((y, text));
        }
    }
    docs.shuffle(&mut rng_for(seed, 0x7E47));
    text_task_from_documents(class_names, docs)
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Pronounceable alphabetic word for an index (three syllables, never a stop word).
pub fn synthetic_word(mut index: usize) -> String {
    let mut w = String::new();
    for _ in 0..3 {
        let syll = index % (ONSETS.len() * VOWELS.len());
        index /= ONSETS.len() * VOWELS.len();
        w.push_str(ONSETS[syll / VOWELS.len()]);
        w.push_str(VOWELS[syll % VOWELS.len()]);
    }
    w
}

/// Parameters of the bundled two-class corpus.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    #[serde(default = "d_docs")]
    pub docs_per_class: usize,
    #[serde(default = "d_class_words")]
    pub class_words: usize,
    #[serde(default = "d_neutral_words")]
    pub neutral_words: usize,
    /// Frequent words per class that lean toward their class without deciding it.
    #[serde(default = "d_skewed_words")]
    pub skewed_words: usize,
}

fn d_docs() -> usize {
    250
}
fn d_class_words() -> usize {
    10
}
fn d_neutral_words() -> usize {
    50
}
fn d_skewed_words() -> usize {
    15
}

/// Presence rates of a skewed word in its own and in the other class.
const SKEW_RATES: (f64, f64) = (0.5, 0.25);

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            docs_per_class: d_docs(),
            class_words: d_class_words(),
            neutral_words: d_neutral_words(),
            skewed_words: d_skewed_words(),
        }
    }
}

/// Generates documents: each mixes 1-4 words specific to its class, skewed
/// words (each present at rate 0.5 in its class and 0.25 in the other), 8-16
/// words drawn from a Zipf-like distribution shared by both classes, and stop
/// words the tokenizer drops. Skewed words carry less mutual information
/// than class words, so they stay out of the gold set while still tempting
/// a model trained on few labels.
pub fn synthetic_corpus(spec: &SyntheticCorpusSpec, seed: u64) -> (Vec<String>, Vec<(Label, String)>) {
    let mut rng = rng_for(seed, 0x5E_C0);
    let class_words: Vec<Vec<String>> = (0..2)
        .map(|y| (0..spec.class_words).map(|i| synthetic_word(y * spec.class_words + i)).collect())
        .collect();
    let skewed: Vec<Vec<String>> = (0..2)
        .map(|y| {
            (0..spec.skewed_words)
                .map(|i| synthetic_word(2 * spec.class_words + y * spec.skewed_words + i))
                .collect()
        })
        .collect();
    let neutral: Vec<String> = (0..spec.neutral_words)
        .map(|i| synthetic_word(2 * (spec.class_words + spec.skewed_words) + i))
        .collect();
    let zipf: Vec<f64> = (0..neutral.len()).map(|r| 1.0 / (r as f64 + 2.0)).collect();
    let zipf_total: f64 = zipf.iter().sum();
    let mut docs = Vec::new();
    for i in 0..2 * spec.docs_per_class {
        let y = i % 2;
        let mut words: Vec<&str> = Vec::new();
        for _ in 0..rng.gen_range(1..=4) {
            words.push(class_words[y].choose(&mut rng).expect("class words"));
        }
        for (c, group) in skewed.iter().enumerate() {
            let rate = if c == y { SKEW_RATES.0 } else { SKEW_RATES.1 };
            for w in group {
                if rng.gen_bool(rate) {
                    words.push(w);
                }
            }
        }
        for _ in 0..rng.gen_range(8..=16) {
            let mut u = rng.gen::<f64>() * zipf_total;
            let mut pick = neutral.len() - 1;
            for (r, p) in zipf.iter().enumerate() {
                if u < *p {
                    pick = r;
                    break;
                }
                u -= p;
            }
            words.push(&neutral[pick]);
        }
        for _ in 0..rng.gen_range(0..4) {
            words.push(STOP_WORDS.choose(&mut rng).expect("stop words"));
        }
        words.shuffle(&mut rng);
        docs.push((y, words.join(" ")));
    }
    (vec!["atheism".into(), "christian".into()], docs)
}

/// Writes a corpus in the directory-per-class layout read by [`load_text`].
pub fn write_corpus(dir: &Path, class_names: &[String], docs: &[(Label, String)]) -> Result<()> {
    for name in class_names {
        let p = dir.join(name);
        std::fs::create_dir_all(&p).map_err(|e| CaipiError::io(&p, e))?;
    }
    for (i, (y, text)) in docs.iter().enumerate() {
        let p = dir.join(&class_names[*y]).join(format!("{i:05}.txt"));
        std::fs::write(&p, text).map_err(|e| CaipiError::io(&p, e))?;
    }
    Ok(())
}

pub fn synthetic_text_task(spec: &SyntheticCorpusSpec, seed: u64) -> Result<TextTask> {
    let (names, docs) = synthetic_corpus(spec, seed);
    text_task_from_documents(names, docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_drops_stop_words_and_punctuation() {
        assert_eq!(tokenize("The God, and 3 gods!"), vec!["god", "gods"]);
    }

    #[test]
    fn gold_size_is_a_fifth_of_vocabulary() {
        let words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa"];
        let docs = vec![(0, words[..5].join(" ")), (1, words[5..].join(" "))];
        let t = text_task_from_documents(vec!["x".into(), "y".into()], docs).unwrap();
        assert_eq!(t.vocabulary.len(), 10);
        assert_eq!(t.gold_words.len(), 2);
    }

    /// Independent enumeration of I(W;Y) over the 2x2 joint table of a toy corpus.
    fn mi_by_enumeration(docs: &[(usize, &str)], word: &str) -> f64 {
        let n = docs.len() as f64;
        let mut mi = 0.0;
        for y in 0..2 {
            for present in [false, true] {
                let joint = docs
                    .iter()
                    .filter(|(c, t)| *c == y && t.split(' ').any(|w| w == word) == present)
                    .count() as f64
                    / n;
                let py = docs.iter().filter(|(c, _)| *c == y).count() as f64 / n;
                let pw = docs.iter().filter(|(_, t)| t.split(' ').any(|w| w == word) == present).count() as f64 / n;
                if joint > 0.0 {
                    mi += joint * (joint / (py * pw)).log(std::f64::consts::E);
                }
            }
        }
        mi
    }

    #[test]
    fn class_specific_word_outranks_uniform_word() {
        let docs = [
            (0, "zeus common filler"),
            (0, "zeus common"),
            (0, "zeus rare common"),
            (1, "common filler"),
            (1, "common rare"),
            (1, "filler common"),
        ];
        let expected_zeus = mi_by_enumeration(&docs, "zeus");
        let expected_common = mi_by_enumeration(&docs, "common");
        assert!((expected_zeus - 2f64.ln()).abs() < 1e-12);
        assert_eq!(expected_common, 0.0);
        let t = text_task_from_documents(
            vec!["a".into(), "b".into()],
            docs.iter().map(|(y, s)| (*y, s.to_string())).collect(),
        )
        .unwrap();
        let idx = |w: &str| t.vocabulary.iter().position(|v| v == w).unwrap();
        assert!((t.scores[idx("zeus")] - expected_zeus).abs() < 1e-12);
        assert!((t.scores[idx("common")] - expected_common).abs() < 1e-12);
        assert!(t.scores[idx("zeus")] > t.scores[idx("common")]);
        assert!(t.gold_words.contains(idx("zeus")));
    }

    #[test]
    fn per_document_k_counts_gold_words() {
        let t = synthetic_text_task(&SyntheticCorpusSpec::default(), 0).unwrap();
        let gold: Vec<u32> = t.gold_words.relevant.iter().take(3).map(|&j| j as u32).collect();
        let nongold = (0..t.vocabulary.len() as u32).find(|w| !t.gold_words.contains(*w as usize)).unwrap();
        let doc = Document::new(t.vocabulary.len(), vec![gold[0], gold[1], nongold, gold[2], gold[0]]).unwrap();
        assert_eq!(t.per_document_k(&doc), 3);
    }

    #[test]
    fn synthetic_gold_recovers_class_words() {
        let spec = SyntheticCorpusSpec::default();
        let t = synthetic_text_task(&spec, 1).unwrap();
        assert_eq!(t.vocabulary.len(), 100);
        let class_words: BTreeSet<String> = (0..2 * spec.class_words).map(synthetic_word).collect();
        let gold: BTreeSet<String> = t.gold_words.relevant.iter().map(|&j| t.vocabulary[j].clone()).collect();
        assert_eq!(gold, class_words);
        assert!(t.examples.iter().all(|e| t.per_document_k(e.instance.payload.as_document().unwrap()) >= 1));
    }

    #[test]
    fn corpus_roundtrips_through_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticCorpusSpec {
            docs_per_class: 20,
            ..Default::default()
        };
        let (names, docs) = synthetic_corpus(&spec, 4);
        write_corpus(dir.path(), &names, &docs).unwrap();
        let loaded = load_text(dir.path(), 0).unwrap();
        let direct = text_task_from_documents(names, docs).unwrap();
        assert_eq!(loaded.vocabulary, direct.vocabulary);
        assert_eq!(loaded.gold_words, direct.gold_words);
        assert_eq!(loaded.examples.len(), direct.examples.len());
    }

    #[test]
    fn empty_class_or_vocabulary_is_an_error() {
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(text_task_from_documents(names.clone(), vec![(0, "word".into())]).is_err());
        assert!(text_task_from_documents(names, vec![(0, "the".into()), (1, "and".into())]).is_err());
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("only")).unwrap();
        assert!(load_text(dir.path(), 0).is_err());
    }
}
