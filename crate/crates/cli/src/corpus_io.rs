//! On-disk corpus layout.
//!
//! A corpus directory holds:
//!
//! ```text
//! manifest.tsv       image_path <TAB> report_path, relative, no header
//! images/*.pgm       binary 8-bit P5 images
//! reports/*.txt      one sentence per line
//! labels.txt         one class index per line, aligned with the manifest
//! classes.txt        one class display name per line
//! queries/<class>.txt  one standalone query sentence per line
//! ```
//!
//! `labels.txt`, `classes.txt`, and `queries/` are optional: pretraining only
//! needs the manifest, while evaluation commands require them and say so.
//!
//! Loading rebuilds the vocabulary from the report text in first-occurrence
//! order, then encodes reports and queries against it, so token indices are a
//! pure function of the files. Loading never writes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use convirt_core::data::{tokenize, PairedExample, SyntheticCorpus, TokenSequence, Vocabulary};

use crate::pgm;

/// A corpus read back from disk.
#[derive(Debug)]
pub struct LoadedCorpus {
    /// Examples in manifest order; ids are the image file stems.
    pub examples: Vec<PairedExample>,
    /// Vocabulary built from the report text.
    pub vocabulary: Vocabulary,
    /// Class index per example, when `labels.txt` exists.
    pub labels: Option<Vec<usize>>,
    /// Class display names, when `classes.txt` exists.
    pub class_names: Option<Vec<String>>,
    /// Per-class standalone queries encoded against the vocabulary, when the
    /// `queries/` directory exists. Aligned with `class_names`.
    pub queries: Option<Vec<Vec<TokenSequence>>>,
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Renders a token sequence back to text through the vocabulary.
fn sentence_text(vocab: &Vocabulary, seq: &TokenSequence) -> String {
    seq.indices()
        .iter()
        .map(|&i| vocab.word(i).unwrap_or("<unk>"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes a generated corpus under `dir` and returns the files written,
/// relative to `dir`.
pub fn save_corpus(dir: &Path, corpus: &SyntheticCorpus) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("reports"))?;
    let mut written = Vec::new();
    let mut manifest = String::new();
    for (i, ex) in corpus.examples.iter().enumerate() {
        let img_rel = PathBuf::from(format!("images/img{i:05}.pgm"));
        let rep_rel = PathBuf::from(format!("reports/rep{i:05}.txt"));
        pgm::write(&dir.join(&img_rel), &ex.image)?;
        let report: String = ex
            .sentences
            .iter()
            .map(|s| sentence_text(&corpus.vocabulary, s) + "\n")
            .collect();
        fs::write(dir.join(&rep_rel), report)?;
        manifest.push_str(&format!("{}\t{}\n", img_rel.display(), rep_rel.display()));
        written.push(img_rel);
        written.push(rep_rel);
    }
    fs::write(dir.join("manifest.tsv"), manifest)?;
    written.push(PathBuf::from("manifest.tsv"));

    let labels: String = corpus.labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(dir.join("labels.txt"), labels)?;
    written.push(PathBuf::from("labels.txt"));

    let classes: String = corpus.class_names.iter().map(|c| format!("{c}\n")).collect();
    fs::write(dir.join("classes.txt"), classes)?;
    written.push(PathBuf::from("classes.txt"));

    Ok(written)
}

/// Writes per-class query sentences (already rendered to text) under
/// `dir/queries/` and returns the files written, relative to `dir`.
pub fn save_queries(
    dir: &Path,
    class_names: &[String],
    queries_text: &[Vec<String>],
) -> io::Result<Vec<PathBuf>> {
    assert_eq!(class_names.len(), queries_text.len());
    fs::create_dir_all(dir.join("queries"))?;
    let mut written = Vec::new();
    for (name, queries) in class_names.iter().zip(queries_text) {
        let rel = PathBuf::from(format!("queries/{name}.txt"));
        let body: String = queries.iter().map(|q| q.clone() + "\n").collect();
        fs::write(dir.join(&rel), body)?;
        written.push(rel);
    }
    Ok(written)
}

/// Renders the standalone queries of a generated corpus to text lines.
pub fn queries_to_text(vocab: &Vocabulary, queries: &[Vec<TokenSequence>]) -> Vec<Vec<String>> {
    queries
        .iter()
        .map(|qs| qs.iter().map(|q| sentence_text(vocab, q)).collect())
        .collect()
}

/// File stem of a relative path, used as the example id.
fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

/// Loads a corpus directory. See the module docs for the layout.
pub fn load_corpus(dir: &Path) -> io::Result<LoadedCorpus> {
    let manifest_path = dir.join("manifest.tsv");
    let manifest = fs::read_to_string(&manifest_path)
        .map_err(|e| bad(format!("cannot read {}: {e}", manifest_path.display())))?;

    // Pass 1: read images and tokenized report sentences.
    let mut ids = Vec::new();
    let mut images = Vec::new();
    let mut reports: Vec<Vec<Vec<String>>> = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (img_rel, rep_rel) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(bad(format!(
                    "{} line {line_no}: expected exactly two tab-separated paths",
                    manifest_path.display()
                )))
            }
        };
        let img_path = dir.join(img_rel);
        let rep_path = dir.join(rep_rel);
        images.push(pgm::read(&img_path)?);
        ids.push(stem(Path::new(img_rel)));
        let text = fs::read_to_string(&rep_path)
            .map_err(|e| bad(format!("cannot read {}: {e}", rep_path.display())))?;
        let sentences: Vec<Vec<String>> = text
            .lines()
            .map(tokenize)
            .filter(|toks| !toks.is_empty())
            .collect();
        if sentences.is_empty() {
            return Err(bad(format!(
                "{}: report has no non-empty sentences",
                rep_path.display()
            )));
        }
        reports.push(sentences);
    }
    if images.is_empty() {
        return Err(bad(format!("{}: manifest lists no pairs", manifest_path.display())));
    }

    // Pass 2: build the vocabulary in first-occurrence order, then encode.
    let vocabulary = Vocabulary::build(
        reports
            .iter()
            .flat_map(|sentences| sentences.iter().map(|s| s.as_slice())),
    );
    let examples: Vec<PairedExample> = ids
        .into_iter()
        .zip(images)
        .zip(&reports)
        .map(|((id, image), sentences)| PairedExample {
            id,
            image,
            sentences: sentences.iter().map(|s| vocabulary.encode(s)).collect(),
        })
        .collect();

    // Optional sidecars.
    let labels = match fs::read_to_string(dir.join("labels.txt")) {
        Ok(text) => {
            let parsed: Result<Vec<usize>, _> =
                text.lines().map(|l| l.trim().parse::<usize>()).collect();
            let labels = parsed.map_err(|_| bad("labels.txt: lines must be class indices"))?;
            if labels.len() != examples.len() {
                return Err(bad(format!(
                    "labels.txt has {} lines, manifest has {} pairs",
                    labels.len(),
                    examples.len()
                )));
            }
            Some(labels)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => None,
        Err(e) => return Err(e),
    };
    let class_names = match fs::read_to_string(dir.join("classes.txt")) {
        Ok(text) => {
            let names: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            if names.is_empty() {
                return Err(bad("classes.txt exists but lists no classes"));
            }
            Some(names)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => None,
        Err(e) => return Err(e),
    };
    if let (Some(labels), Some(names)) = (&labels, &class_names) {
        if let Some(&too_big) = labels.iter().find(|&&l| l >= names.len()) {
            return Err(bad(format!(
                "labels.txt references class {too_big}, classes.txt lists {}",
                names.len()
            )));
        }
    }

    let queries = match (&class_names, dir.join("queries").is_dir()) {
        (Some(names), true) => {
            let mut per_class = Vec::with_capacity(names.len());
            for name in names {
                let path = dir.join("queries").join(format!("{name}.txt"));
                let text = fs::read_to_string(&path)
                    .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
                let encoded: Vec<TokenSequence> = text
                    .lines()
                    .map(tokenize)
                    .filter(|toks| !toks.is_empty())
                    .map(|toks| vocabulary.encode(&toks))
                    .collect();
                if encoded.is_empty() {
                    return Err(bad(format!("{}: no queries", path.display())));
                }
                per_class.push(encoded);
            }
            Some(per_class)
        }
        _ => None,
    };

    Ok(LoadedCorpus {
        examples,
        vocabulary,
        labels,
        class_names,
        queries,
    })
}
