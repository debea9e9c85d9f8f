//! Sentence-pair harvesting and balanced, article-disjoint dataset splits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::stable_hash;
use crate::text::{find_connective, split_sentences, strip_and_recase, tokenize, ConnectiveLexicon, LabelId};

/// Version of the dataset TSV layout written by [`write_examples`].
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// One sentence pair. `arg2` has had its connective (if any) stripped.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledExample {
    pub arg1: Vec<String>,
    pub arg2: Vec<String>,
    pub label: LabelId,
    pub article_id: String,
}

/// Input record: one article as an ordered list of paragraphs of sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub paragraphs: Vec<Vec<String>>,
}

impl Article {
    /// Builds an article from plain text: paragraphs are separated by blank
    /// lines and split into sentences with [`split_sentences`].
    pub fn from_raw_text(id: impl Into<String>, text: &str) -> Self {
        let mut paragraphs = Vec::new();
        let mut current = String::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                if !current.trim().is_empty() {
                    paragraphs.push(split_sentences(&current));
                }
                current.clear();
            } else {
                current.push_str(line);
                current.push(' ');
            }
        }
        if !current.trim().is_empty() {
            paragraphs.push(split_sentences(&current));
        }
        Self {
            id: id.into(),
            paragraphs,
        }
    }
}

/// Reads JSON-lines article records. Lines that fail to parse are returned
/// as errors so that the extractor can skip and count them.
pub fn read_jsonl_articles(reader: impl BufRead) -> Vec<Result<Article>> {
    reader
        .lines()
        .enumerate()
        .filter(|(_, line)| line.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(idx, line)| {
            let line = line?;
            serde_json::from_str::<Article>(&line).map_err(|e| Error::schema("<articles>", idx + 1, e.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractStats {
    pub articles: usize,
    pub skipped_records: usize,
    /// Pairs whose second sentence is nothing but a connective.
    pub degenerate_pairs: usize,
    pub examples: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub examples: Vec<LabeledExample>,
    pub stats: ExtractStats,
}

fn extract_article(article: &Article, lex: &ConnectiveLexicon) -> Result<(Vec<LabeledExample>, usize)> {
    let mut examples = Vec::new();
    let mut degenerate = 0;
    for paragraph in &article.paragraphs {
        let sentences = paragraph.iter().map(|s| tokenize(s)).collect::<Result<Vec<_>>>()?;
        for pair in sentences.windows(2) {
            let (first, second) = (&pair[0], &pair[1]);
            let (label, arg2) = match find_connective(second, lex) {
                None => (lex.no_connective(), second.tokens.clone()),
                Some(span) => match strip_and_recase(second, span) {
                    Ok(stripped) => (span.label, stripped.tokens),
                    Err(_) => {
                        degenerate += 1;
                        continue;
                    }
                },
            };
            examples.push(LabeledExample {
                arg1: first.tokens.clone(),
                arg2,
                label,
                article_id: article.id.clone(),
            });
        }
    }
    Ok((examples, degenerate))
}

/// Emits one example per adjacent sentence pair inside each paragraph.
///
/// Articles are processed in parallel; the output is ordered by article id
/// (stable for repeated ids), then by position inside the article, so it
/// does not depend on scheduling. Malformed records and articles containing
/// an empty sentence are skipped with a warning.
pub fn extract_pairs(records: impl IntoIterator<Item = Result<Article>>, lex: &ConnectiveLexicon) -> Extraction {
    let mut stats = ExtractStats::default();
    let mut articles = Vec::new();
    for record in records {
        match record {
            Ok(article) => articles.push(article),
            Err(e) => {
                warn!("skipping malformed article record: {e}");
                stats.skipped_records += 1;
            }
        }
    }
    let results: Vec<_> = articles
        .par_iter()
        .map(|article| (article.id.as_str(), extract_article(article, lex)))
        .collect();

    let mut per_article: Vec<(&str, Vec<LabeledExample>)> = Vec::with_capacity(results.len());
    for (id, result) in results {
        match result {
            Ok((examples, degenerate)) => {
                stats.articles += 1;
                stats.degenerate_pairs += degenerate;
                per_article.push((id, examples));
            }
            Err(e) => {
                warn!("skipping article {id:?}: {e}");
                stats.skipped_records += 1;
            }
        }
    }
    per_article.sort_by(|a, b| a.0.cmp(b.0));
    let examples: Vec<LabeledExample> = per_article.into_iter().flat_map(|(_, ex)| ex).collect();
    stats.examples = examples.len();
    Extraction { examples, stats }
}

/// Exact per-label counts, indexed by label id.
pub fn class_histogram(examples: &[LabeledExample], num_labels: usize) -> Vec<usize> {
    let mut counts = vec![0; num_labels];
    for ex in examples {
        counts[ex.label] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub dev_per_class: usize,
    pub test_per_class: usize,
    pub train_per_class: usize,
    pub seed: u64,
    /// Warn when a training class is oversampled by more than this factor.
    pub oversample_warn_ratio: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            dev_per_class: 500,
            test_per_class: 500,
            train_per_class: 20_000,
            seed: 0,
            oversample_warn_ratio: 10.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SplitReport {
    /// Articles assigned to the train, dev and test pools.
    pub pool_articles: [usize; 3],
    /// Examples available per class in each pool (train, dev, test).
    pub pool_class_counts: [Vec<usize>; 3],
    pub warnings: Vec<String>,
}

const TRAIN: usize = 0;
const DEV: usize = 1;
const TEST: usize = 2;
const POOL_NAMES: [&str; 3] = ["train", "dev", "test"];

/// Samples balanced train/dev/test splits.
///
/// Article ids are first ordered by a seeded hash and greedily assigned to
/// the pool whose remaining per-class demand they fill best (dev and test
/// demand is small relative to train, so those pools fill first), skipping
/// pools that would leave too few unassigned examples of some class for the
/// other pools. Sampling
/// then happens inside each pool: dev/test without replacement, train
/// without replacement for majority classes and by taking every example
/// plus uniform draws with replacement for minority classes.
///
/// All randomness comes from ChaCha8 streams keyed by `(seed, pool, class)`.
pub fn build_splits(
    examples: &[LabeledExample],
    lex: &ConnectiveLexicon,
    spec: &SplitSpec,
) -> Result<(DatasetSplit, SplitReport)> {
    let k = lex.num_labels();
    if spec.dev_per_class == 0 || spec.test_per_class == 0 || spec.train_per_class == 0 {
        return Err(Error::InvalidConfig("per-class split counts must be positive".into()));
    }
    if let Some(ex) = examples.iter().find(|e| e.label >= k) {
        return Err(Error::LabelOutOfRange {
            label: ex.label,
            num_labels: k,
        });
    }

    let mut by_article: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        by_article.entry(ex.article_id.as_str()).or_default().push(i);
    }
    let seed_bytes = spec.seed.to_le_bytes();
    let mut articles: Vec<(u64, &str, Vec<usize>)> = by_article
        .into_iter()
        .map(|(id, idx)| (stable_hash(&[&seed_bytes, id.as_bytes()]), id, idx))
        .collect();
    articles.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let quota = {
        let mut q = [0; 3];
        q[TRAIN] = spec.train_per_class;
        q[DEV] = spec.dev_per_class;
        q[TEST] = spec.test_per_class;
        q
    };
    let mut deficit: [Vec<usize>; 3] = std::array::from_fn(|p| vec![quota[p]; k]);
    let mut pools: [Vec<usize>; 3] = Default::default();
    let mut report = SplitReport::default();

    let mut remaining = vec![0usize; k];
    for ex in examples {
        remaining[ex.label] += 1;
    }
    // Train only has to see each class once; oversampling covers the rest.
    let requirement = |deficit: &[Vec<usize>; 3], q: usize, c: usize| -> usize {
        if q == TRAIN {
            usize::from(deficit[TRAIN][c] == quota[TRAIN])
        } else {
            deficit[q][c]
        }
    };

    for (_, _, idx) in &articles {
        let mut counts = vec![0usize; k];
        for &i in idx {
            counts[examples[i].label] += 1;
        }
        // Taking this article into pool p must leave enough unassigned
        // examples to cover what the other pools still need.
        let feasible = |p: usize| {
            counts.iter().enumerate().filter(|(_, &n)| n > 0).all(|(c, &n)| {
                let others: usize = [TRAIN, DEV, TEST]
                    .into_iter()
                    .filter(|&q| q != p)
                    .map(|q| requirement(&deficit, q, c))
                    .sum();
                remaining[c] - n >= others
            })
        };
        let score = |p: usize| -> f64 {
            counts
                .iter()
                .zip(&deficit[p])
                .map(|(&c, &d)| c.min(d) as f64)
                .sum::<f64>()
                / quota[p] as f64
        };
        let candidates: Vec<usize> = {
            let ok: Vec<usize> = [DEV, TEST, TRAIN].into_iter().filter(|&p| feasible(p)).collect();
            if ok.is_empty() {
                vec![DEV, TEST, TRAIN]
            } else {
                ok
            }
        };
        let mut best = if candidates.contains(&TRAIN) {
            TRAIN
        } else {
            candidates[0]
        };
        let mut best_score = if best == TRAIN { 0.0 } else { score(best) };
        for &p in &candidates {
            let s = score(p);
            if s > best_score {
                best = p;
                best_score = s;
            }
        }
        for (c, &n) in counts.iter().enumerate() {
            deficit[best][c] = deficit[best][c].saturating_sub(n);
            remaining[c] -= n;
        }
        report.pool_articles[best] += 1;
        pools[best].extend_from_slice(idx);
    }

    let mut split = DatasetSplit::default();
    for p in [TRAIN, DEV, TEST] {
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
        for &i in &pools[p] {
            per_class[examples[i].label].push(i);
        }
        report.pool_class_counts[p] = per_class.iter().map(Vec::len).collect();

        let mut chosen = Vec::with_capacity(quota[p] * k);
        for (c, candidates) in per_class.iter().enumerate() {
            let mut rng = stream_rng(spec.seed, (p * k + c) as u64);
            let available = candidates.len();
            let need = quota[p];
            if p != TRAIN && available < need || available == 0 {
                return Err(Error::InsufficientClassData {
                    class: lex.name(c).to_string(),
                    split: POOL_NAMES[p],
                    needed: if p == TRAIN { 1 } else { need },
                    available,
                });
            }
            let mut order = candidates.clone();
            order.shuffle(&mut rng);
            if available >= need {
                chosen.extend_from_slice(&order[..need]);
            } else {
                let ratio = need as f64 / available as f64;
                if ratio > spec.oversample_warn_ratio {
                    let msg = format!(
                        "class {:?} oversampled {ratio:.1}x in train ({available} distinct examples for {need})",
                        lex.name(c)
                    );
                    warn!("{msg}");
                    report.warnings.push(msg);
                }
                chosen.extend_from_slice(&order);
                for _ in available..need {
                    chosen.push(order[rng.random_range(0..available)]);
                }
            }
        }
        chosen.shuffle(&mut stream_rng(spec.seed, (3 * k + p) as u64));
        let out: Vec<LabeledExample> = chosen.into_iter().map(|i| examples[i].clone()).collect();
        match p {
            TRAIN => split.train = out,
            DEV => split.dev = out,
            _ => split.test = out,
        }
    }
    Ok((split, report))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Writes `label<TAB>arg1<TAB>arg2<TAB>article_id` rows; args are space-joined tokens.
pub fn write_examples(mut out: impl Write, examples: &[LabeledExample], lex: &ConnectiveLexicon) -> Result<()> {
    for ex in examples {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            lex.name(ex.label),
            ex.arg1.join(" "),
            ex.arg2.join(" "),
            ex.article_id
        )?;
    }
    Ok(())
}

pub fn read_examples(path: impl AsRef<Path>, lex: &ConnectiveLexicon) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    parse_examples(BufReader::new(File::open(path)?), path, lex)
}

/// Parses dataset rows; schema violations are reported with their 1-based line number.
pub fn parse_examples(reader: impl BufRead, path: &Path, lex: &ConnectiveLexicon) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::schema(
                path,
                lineno,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let label = lex
            .label_of(fields[0])
            .ok_or_else(|| Error::schema(path, lineno, format!("unknown label {:?}", fields[0])))?;
        let tokens = |field: &str, name: &str| -> Result<Vec<String>> {
            let toks: Vec<String> = field.split(' ').filter(|t| !t.is_empty()).map(String::from).collect();
            if toks.is_empty() {
                return Err(Error::schema(path, lineno, format!("empty {name}")));
            }
            Ok(toks)
        };
        if fields[3].is_empty() {
            return Err(Error::schema(path, lineno, "empty article id"));
        }
        out.push(LabeledExample {
            arg1: tokens(fields[1], "arg1")?,
            arg2: tokens(fields[2], "arg2")?,
            label,
            article_id: fields[3].to_string(),
        });
    }
    Ok(out)
}

pub const SPLIT_FILES: [&str; 3] = ["train.tsv", "dev.tsv", "test.tsv"];

/// Writes `train.tsv`, `dev.tsv` and `test.tsv` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, split: &DatasetSplit, lex: &ConnectiveLexicon) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (name, rows) in SPLIT_FILES.iter().zip([&split.train, &split.dev, &split.test]) {
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        write_examples(&mut w, rows, lex)?;
        w.flush()?;
    }
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>, lex: &ConnectiveLexicon) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    Ok(DatasetSplit {
        train: read_examples(dir.join(SPLIT_FILES[0]), lex)?,
        dev: read_examples(dir.join(SPLIT_FILES[1]), lex)?,
        test: read_examples(dir.join(SPLIT_FILES[2]), lex)?,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn article(id: &str, paragraphs: &[&[&str]]) -> Article {
        Article {
            id: id.into(),
            paragraphs: paragraphs
                .iter()
                .map(|p| p.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    #[test]
    fn connective_pair() {
        let lex = ConnectiveLexicon::default();
        let out = extract_pairs([Ok(article("a", &[&["A came.", "However, B left."]]))], &lex);
        assert_eq!(out.examples.len(), 1);
        let ex = &out.examples[0];
        assert_eq!(lex.name(ex.label), "however");
        assert_eq!(ex.arg1, ["A", "came", "."]);
        assert_eq!(ex.arg2, ["B", "left", "."]);
    }

    #[test]
    fn plain_pair_and_paragraph_boundaries() {
        let lex = ConnectiveLexicon::default();
        let out = extract_pairs(
            [Ok(article(
                "a",
                &[&["A.", "B."], &["However, C.", "D.", "E."], &["F."]],
            ))],
            &lex,
        );
        // 1 + 2 + 0: never across paragraphs, so "However, C." is an arg1 only.
        assert_eq!(out.examples.len(), 3);
        assert!(out.examples.iter().all(|e| e.label == lex.no_connective()));
        assert_eq!(out.examples[1].arg1, ["However", ",", "C", "."]);
    }

    #[test]
    fn malformed_records_are_counted() {
        let lex = ConnectiveLexicon::default();
        let out = extract_pairs(
            [
                Err(Error::EmptyInput),
                Ok(article("b", &[&["Fine.", "  "]])),
                Ok(article("a", &[&["X.", "However,"], &["Y.", "Z."]])),
            ],
            &lex,
        );
        assert_eq!(out.stats.skipped_records, 2);
        assert_eq!(out.stats.degenerate_pairs, 1);
        assert_eq!(out.stats.examples, 1);
    }

    #[test]
    fn output_sorted_by_article() {
        let lex = ConnectiveLexicon::default();
        let out = extract_pairs(
            [Ok(article("z", &[&["A.", "B."]])), Ok(article("m", &[&["C.", "D."]]))],
            &lex,
        );
        let ids: Vec<&str> = out.examples.iter().map(|e| e.article_id.as_str()).collect();
        assert_eq!(ids, ["m", "z"]);
    }

    #[test]
    fn raw_text_articles() {
        let a = Article::from_raw_text("doc", "A came. However, B left.\n\nC stayed.\nD went.\n");
        assert_eq!(
            a.paragraphs,
            [vec!["A came.", "However, B left."], vec!["C stayed.", "D went."]]
        );
    }

    #[test]
    fn histogram() {
        assert_eq!(class_histogram(&[], 3), [0, 0, 0]);
    }

    fn toy_corpus() -> (ConnectiveLexicon, Vec<LabeledExample>) {
        let lex = ConnectiveLexicon::parse("however\t0\nthen\t1\n").unwrap();
        let mut examples = Vec::new();
        for a in 0..12 {
            for label in 0..3 {
                if label == 1 && a % 3 != 0 {
                    continue; // minority class
                }
                examples.push(LabeledExample {
                    arg1: vec![format!("w{a}")],
                    arg2: vec![format!("v{label}")],
                    label,
                    article_id: format!("doc{a:02}"),
                });
            }
        }
        (lex, examples)
    }

    #[test]
    fn toy_split_counts_exact() {
        let (lex, examples) = toy_corpus();
        let spec = SplitSpec {
            dev_per_class: 1,
            test_per_class: 1,
            train_per_class: 2,
            seed: 0,
            ..SplitSpec::default()
        };
        let (split, report) = build_splits(&examples, &lex, &spec).unwrap();
        for (rows, n) in [(&split.train, 2), (&split.dev, 1), (&split.test, 1)] {
            assert_eq!(class_histogram(rows, 3), vec![n; 3]);
        }
        let ids = |rows: &[LabeledExample]| rows.iter().map(|e| e.article_id.clone()).collect::<HashSet<_>>();
        assert!(ids(&split.train).is_disjoint(&ids(&split.dev)));
        assert!(ids(&split.train).is_disjoint(&ids(&split.test)));
        assert!(ids(&split.dev).is_disjoint(&ids(&split.test)));
        assert_eq!(report.pool_articles.iter().sum::<usize>(), 12);
    }

    #[test]
    fn oversampling_and_warning() {
        let (lex, examples) = toy_corpus();
        let spec = SplitSpec {
            dev_per_class: 1,
            test_per_class: 1,
            train_per_class: 40,
            seed: 3,
            oversample_warn_ratio: 5.0,
        };
        let (split, report) = build_splits(&examples, &lex, &spec).unwrap();
        assert_eq!(class_histogram(&split.train, 3), [40, 40, 40]);
        assert!(!report.warnings.is_empty());
        // Every distinct training candidate of the minority class is used.
        let distinct: HashSet<_> = split.train.iter().filter(|e| e.label == 1).collect();
        assert_eq!(distinct.len(), report.pool_class_counts[TRAIN][1]);
    }

    #[test]
    fn insufficient_data_names_class() {
        let (lex, examples) = toy_corpus();
        let spec = SplitSpec {
            dev_per_class: 5,
            test_per_class: 1,
            train_per_class: 2,
            ..SplitSpec::default()
        };
        let err = build_splits(&examples, &lex, &spec).unwrap_err();
        assert!(
            matches!(err, Error::InsufficientClassData { ref class, .. } if class == "then"),
            "{err}"
        );
    }

    #[test]
    fn zero_counts_rejected() {
        let (lex, examples) = toy_corpus();
        let spec = SplitSpec {
            dev_per_class: 0,
            ..SplitSpec::default()
        };
        assert!(matches!(
            build_splits(&examples, &lex, &spec),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let (lex, examples) = toy_corpus();
        let spec = SplitSpec {
            dev_per_class: 1,
            test_per_class: 1,
            train_per_class: 3,
            seed: 11,
            ..SplitSpec::default()
        };
        let a = build_splits(&examples, &lex, &spec).unwrap().0;
        let b = build_splits(&examples, &lex, &spec).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn tsv_errors_carry_line_numbers() {
        let lex = ConnectiveLexicon::default();
        let text = "however\ta b\tc d\tart1\nbogus\ta\tb\tart2\n";
        let err = parse_examples(text.as_bytes(), Path::new("x.tsv"), &lex).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 2, .. }), "{err}");
        let err = parse_examples("however\ta\tb\n".as_bytes(), Path::new("x.tsv"), &lex).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }));
        let err = parse_examples("however\t\tb\tart\n".as_bytes(), Path::new("x.tsv"), &lex).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }));
    }

    #[test]
    fn tsv_round_trip() {
        let lex = ConnectiveLexicon::default();
        let (_, examples) = toy_corpus();
        let mut buf = Vec::new();
        write_examples(&mut buf, &examples, &lex).unwrap();
        let back = parse_examples(buf.as_slice(), Path::new("mem"), &lex).unwrap();
        assert_eq!(back, examples);
    }
}
