use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    Unknown,
}

impl Label {
    pub fn parse(s: &str) -> Option<Label> {
        match s.to_ascii_lowercase().as_str() {
            "pos" => Some(Label::Positive),
            "neg" => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "pos",
            Label::Negative => "neg",
            Label::Unknown => "unk",
        })
    }
}

/// Sparse feature vector: (index, weight) pairs sorted by index.
pub type SparseFeatures = Vec<(usize, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: usize,
    pub text: String,
    pub features: SparseFeatures,
    pub label: Label,
}

impl Document {
    pub fn new(id: usize, text: impl Into<String>, label: Label) -> Self {
        Document {
            id,
            text: text.into(),
            features: Vec::new(),
            label,
        }
    }

    /// Writes the features into a dense row of width `dim`.
    pub fn dense_into(&self, row: &mut [f64]) -> Result<()> {
        row.fill(0.0);
        let width = row.len();
        for &(i, w) in &self.features {
            let slot = row.get_mut(i).ok_or_else(|| {
                Error::shape(
                    "features",
                    format!("document {} has feature {} but width is {}", self.id, i, width),
                )
            })?;
            *slot = w;
        }
        Ok(())
    }
}

/// A set of documents whose labels are all known.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCorpus {
    documents: Vec<Document>,
    positive_prevalence: f64,
    feature_dim: usize,
}

impl LabeledCorpus {
    pub fn new(documents: Vec<Document>, feature_dim: usize) -> Result<Self> {
        if let Some(d) = documents.iter().find(|d| d.label == Label::Unknown) {
            return Err(Error::invalid(format!(
                "document {} has an unknown label in a labeled corpus",
                d.id
            )));
        }
        if let Some(d) = documents
            .iter()
            .find(|d| d.features.iter().any(|&(i, _)| i >= feature_dim))
        {
            return Err(Error::invalid(format!(
                "document {} has a feature index >= {feature_dim}",
                d.id
            )));
        }
        let mut c = LabeledCorpus {
            documents,
            positive_prevalence: 0.0,
            feature_dim,
        };
        c.refresh();
        Ok(c)
    }

    fn refresh(&mut self) {
        let pos = self.count_positive();
        self.positive_prevalence = if self.documents.is_empty() {
            0.0
        } else {
            pos as f64 / self.documents.len() as f64
        };
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn positive_prevalence(&self) -> f64 {
        self.positive_prevalence
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn count_positive(&self) -> usize {
        self.documents.iter().filter(|d| d.label.is_positive()).count()
    }

    pub fn count_negative(&self) -> usize {
        self.len() - self.count_positive()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.documents.iter().map(|d| d.label).collect()
    }

    pub fn push(&mut self, doc: Document) -> Result<()> {
        if doc.label == Label::Unknown {
            return Err(Error::invalid("cannot add an unlabeled document"));
        }
        self.documents.push(doc);
        self.refresh();
        Ok(())
    }

    /// Replaces every document's features. Used by featurizers.
    pub(crate) fn set_features(&mut self, features: Vec<SparseFeatures>, dim: usize) {
        debug_assert_eq!(features.len(), self.documents.len());
        for (d, f) in self.documents.iter_mut().zip(features) {
            d.features = f;
        }
        self.feature_dim = dim;
    }

    /// A new corpus holding the documents at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledCorpus {
        let documents = indices.iter().map(|&i| self.documents[i].clone()).collect();
        let mut c = LabeledCorpus {
            documents,
            positive_prevalence: 0.0,
            feature_dim: self.feature_dim,
        };
        c.refresh();
        c
    }

    /// Dense (rows × feature_dim) matrix of the documents at `indices`.
    pub fn dense_rows(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let dim = self.feature_dim;
        let mut out = vec![0.0; indices.len() * dim];
        for (row, &i) in out.chunks_exact_mut(dim.max(1)).zip(indices) {
            self.documents[i].dense_into(row)?;
        }
        Ok(out)
    }
}

/// Reads `<label>\t<text>` lines; labels are `pos` or `neg` in any case.
/// Document ids are 1-based line numbers.
pub fn load_corpus_tsv(path: impl AsRef<Path>) -> Result<LabeledCorpus> {
    let path = path.as_ref();
    let content = fs::read_to_string(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut docs = Vec::new();
    for (k, line) in content.lines().enumerate() {
        let lineno = k + 1;
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(lineno, "missing tab between label and text".into()))?;
        let label = Label::parse(label.trim()).ok_or_else(|| parse_err(lineno, format!("unknown label `{label}`")))?;
        docs.push(Document::new(lineno, text, label));
    }
    if docs.is_empty() {
        return Err(parse_err(0, "corpus file is empty".into()));
    }
    LabeledCorpus::new(docs, 0)
}

/// Writes the corpus back out in the same TSV format.
pub fn save_corpus_tsv(corpus: &LabeledCorpus, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for d in corpus.documents() {
        if d.text.contains(['\n', '\r']) {
            return Err(Error::invalid(format!("document {} text contains a newline", d.id)));
        }
        writeln!(f, "{}\t{}", d.label, d.text)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_line_file() {
        let f = write_tmp("pos\tgood\nneg\tbad\n");
        let c = load_corpus_tsv(f.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.positive_prevalence(), 0.5);
        assert_eq!(c.documents()[0].id, 1);
        assert_eq!(c.documents()[1].text, "bad");
    }

    #[test]
    fn labels_case_insensitive() {
        let f = write_tmp("POS\ta\nPos\tb\n");
        let c = load_corpus_tsv(f.path()).unwrap();
        assert_eq!(c.positive_prevalence(), 1.0);
    }

    #[test]
    fn missing_tab_names_line() {
        let f = write_tmp("pos\tfine\nneg bad line\n");
        match load_corpus_tsv(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_and_empty_file() {
        let f = write_tmp("meh\tx\n");
        assert!(matches!(load_corpus_tsv(f.path()), Err(Error::Parse { line: 1, .. })));
        let f = write_tmp("");
        assert!(load_corpus_tsv(f.path()).is_err());
    }

    #[test]
    fn prevalence_tracks_mutation() {
        let mut c = LabeledCorpus::new(vec![Document::new(0, "", Label::Positive)], 0).unwrap();
        assert_eq!(c.positive_prevalence(), 1.0);
        c.push(Document::new(1, "", Label::Negative)).unwrap();
        assert_eq!(c.positive_prevalence(), 0.5);
        assert!(c.push(Document::new(2, "", Label::Unknown)).is_err());
    }
}
