use std::collections::{BTreeMap, HashMap, HashSet};

use super::vocab::TokenId;
use crate::error::{data_err, invalid, Result};

/// One user turn with its manual and simulated-automatic rewrites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationTurn {
    pub topic_id: String,
    pub turn_no: u32,
    pub raw: Vec<TokenId>,
    pub oracle: Vec<TokenId>,
    pub rewriter: Vec<TokenId>,
}

impl ConversationTurn {
    pub fn qid(&self) -> String {
        format!("{}_{}", self.topic_id, self.turn_no)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub topic_id: String,
    pub turns: Vec<ConversationTurn>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.turns.iter().enumerate() {
            if t.turn_no as usize != i + 1 {
                return Err(data_err!(
                    "topic {}: turn {} has turn_no {}",
                    self.topic_id,
                    i + 1,
                    t.turn_no
                ));
            }
            if t.topic_id != self.topic_id {
                return Err(data_err!("turn {} belongs to topic {}", t.qid(), self.topic_id));
            }
            if t.raw.is_empty() || t.oracle.is_empty() || t.rewriter.is_empty() {
                return Err(data_err!("turn {} has an empty token list", t.qid()));
            }
        }
        if let Some(first) = self.turns.first() {
            if first.raw != first.oracle {
                return Err(data_err!("turn {}: first turn must equal its oracle", first.qid()));
            }
        }
        Ok(())
    }

    /// Raw token lists of turns 1..=n in order.
    pub fn raw_turns(&self) -> Vec<&[TokenId]> {
        self.turns.iter().map(|t| t.raw.as_slice()).collect()
    }
}

/// Splits `topic_turn` at the last underscore.
pub fn parse_qid(qid: &str) -> Result<(&str, u32)> {
    let (topic, turn) = qid
        .rsplit_once('_')
        .ok_or_else(|| invalid!("qid {:?} is not of the form topic_turn", qid))?;
    let turn = turn
        .parse()
        .map_err(|_| invalid!("qid {:?} has a non-numeric turn", qid))?;
    if topic.is_empty() {
        return Err(invalid!("qid {:?} has an empty topic", qid));
    }
    Ok((topic, turn))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<TokenId>,
}

/// Document collection with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    positions: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut positions = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if d.tokens.is_empty() {
                return Err(data_err!("document {} has no tokens", d.doc_id));
            }
            if positions.insert(d.doc_id.clone(), i).is_some() {
                return Err(data_err!("duplicate doc_id {}", d.doc_id));
            }
        }
        Ok(Corpus { docs, positions })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.positions.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.positions.get(doc_id).copied()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }
}

/// Graded judgments; a missing pair means "unjudged", not grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    map: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: &str, doc_id: &str, grade: u32) {
        self.map
            .entry(qid.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> Option<u32> {
        self.map.get(qid).and_then(|m| m.get(doc_id)).copied()
    }

    pub fn judged(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.map.get(qid)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.map.iter().map(|(q, m)| (q.as_str(), m))
    }

    /// Doc ids judged at or above `min_grade`, in doc_id order.
    pub fn relevant(&self, qid: &str, min_grade: u32) -> Vec<&str> {
        self.map
            .get(qid)
            .map(|m| {
                m.iter()
                    .filter(|(_, &g)| g >= min_grade)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.map.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked lists per qid: scores non-increasing, exact ties by doc_id ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    rankings: BTreeMap<String, Vec<ScoredDoc>>,
}

/// Descending score, then ascending doc_id.
pub fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a ranking for `qid`, sorting it into canonical order.
    pub fn insert(&mut self, qid: &str, mut docs: Vec<ScoredDoc>) -> Result<()> {
        let mut seen = HashSet::with_capacity(docs.len());
        for d in &docs {
            if !d.score.is_finite() {
                return Err(data_err!("qid {}: non-finite score for {}", qid, d.doc_id));
            }
            if !seen.insert(d.doc_id.as_str()) {
                return Err(data_err!("qid {}: duplicate doc {}", qid, d.doc_id));
            }
        }
        docs.sort_by(rank_order);
        self.rankings.insert(qid.to_string(), docs);
        Ok(())
    }

    pub fn insert_pairs<S: Into<String>>(&mut self, qid: &str, docs: Vec<(S, f64)>) -> Result<()> {
        self.insert(
            qid,
            docs.into_iter()
                .map(|(d, s)| ScoredDoc {
                    doc_id: d.into(),
                    score: s,
                })
                .collect(),
        )
    }

    pub fn get(&self, qid: &str) -> Option<&[ScoredDoc]> {
        self.rankings.get(qid).map(Vec::as_slice)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ScoredDoc])> {
        self.rankings.iter().map(|(q, v)| (q.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    /// Keeps only qids accepted by `keep`.
    pub fn filter_qids(&self, mut keep: impl FnMut(&str) -> bool) -> RunFile {
        RunFile {
            rankings: self
                .rankings
                .iter()
                .filter(|(q, _)| keep(q))
                .map(|(q, v)| (q.clone(), v.clone()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_orders_ties_by_doc_id() {
        let mut r = RunFile::new();
        r.insert_pairs("1_1", vec![("DOCB", 3.0), ("DOCA", 3.0), ("DOCC", 4.0)])
            .unwrap();
        let ids: Vec<_> = r.get("1_1").unwrap().iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["DOCC", "DOCA", "DOCB"]);
    }

    #[test]
    fn run_rejects_duplicates() {
        let mut r = RunFile::new();
        assert!(r.insert_pairs("1_1", vec![("A", 1.0), ("A", 0.5)]).is_err());
    }

    #[test]
    fn qid_parsing() {
        assert_eq!(parse_qid("31_4").unwrap(), ("31", 4));
        assert_eq!(parse_qid("a_b_12").unwrap(), ("a_b", 12));
        assert!(parse_qid("31").is_err());
        assert!(parse_qid("31_x").is_err());
    }

    #[test]
    fn corpus_rejects_duplicate_and_empty_docs() {
        let d = |id: &str, t: Vec<u32>| Document {
            doc_id: id.into(),
            tokens: t,
        };
        assert!(Corpus::new(vec![d("a", vec![4]), d("a", vec![5])]).is_err());
        assert!(Corpus::new(vec![d("a", vec![])]).is_err());
        let c = Corpus::new(vec![d("a", vec![4]), d("b", vec![5])]).unwrap();
        assert_eq!(c.position("b"), Some(1));
    }

    #[test]
    fn unjudged_differs_from_grade_zero() {
        let mut q = Qrels::new();
        q.insert("1_1", "A", 0);
        assert_eq!(q.grade("1_1", "A"), Some(0));
        assert_eq!(q.grade("1_1", "B"), None);
    }
}
