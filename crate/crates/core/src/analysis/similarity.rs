use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::corpus::{parse_qid, Conversation, Qrels};
use crate::error::{invalid, shape_err, Result};
use crate::evalkit::MetricReport;
use crate::index::DenseIndex;
use crate::numerics::{dot, Tensor};

/// Named query embeddings, one row per qid.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub name: String,
    pub qids: Vec<String>,
    pub emb: Tensor,
}

impl EmbeddingSet {
    pub fn new(name: &str, qids: Vec<String>, emb: Tensor) -> Result<Self> {
        let (n, _) = emb.dims2()?;
        if n != qids.len() {
            return Err(shape_err!("{} rows for {} qids", n, qids.len()));
        }
        Ok(EmbeddingSet {
            name: name.to_string(),
            qids,
            emb,
        })
    }

    fn rows_by_qid(&self) -> HashMap<&str, usize> {
        self.qids.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Entry (i, j) is the mean over qids of `emb_i(q)·emb_j(q)`.
pub fn similarity_matrix(sets: &[EmbeddingSet]) -> Result<SimMatrix> {
    let Some(first) = sets.first() else {
        return Ok(SimMatrix {
            names: Vec::new(),
            values: Vec::new(),
        });
    };
    let mut qids = first.qids.clone();
    qids.sort();
    let maps: Vec<HashMap<&str, usize>> = sets.iter().map(EmbeddingSet::rows_by_qid).collect();
    for (s, m) in sets.iter().zip(&maps) {
        if s.qids.len() != qids.len() || qids.iter().any(|q| !m.contains_key(q.as_str())) {
            return Err(invalid!(
                "embedding set {} covers different qids than {}",
                s.name,
                first.name
            ));
        }
        if s.emb.shape()[1] != first.emb.shape()[1] {
            return Err(shape_err!("embedding set {} has a different dimension", s.name));
        }
    }
    let n = sets.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for q in &qids {
                acc += dot(
                    sets[i].emb.row(maps[i][q.as_str()]),
                    sets[j].emb.row(maps[j][q.as_str()]),
                );
            }
            let v = acc / qids.len().max(1) as f64;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(SimMatrix {
        names: sets.iter().map(|s| s.name.clone()).collect(),
        values,
    })
}

/// Per qid, the highest `q·d` over judged-relevant documents; and their mean.
/// Qids without a relevant document in the index are skipped.
pub fn qd_nearest_positive_similarity(
    set: &EmbeddingSet,
    index: &DenseIndex,
    qrels: &Qrels,
) -> Result<(f64, BTreeMap<String, f64>)> {
    if set.emb.shape()[1] != index.dim() && !index.is_empty() {
        return Err(shape_err!(
            "query dim {} vs index dim {}",
            set.emb.shape()[1],
            index.dim()
        ));
    }
    let rows: HashMap<&str, usize> = index
        .doc_ids()
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let mut per = BTreeMap::new();
    for (i, q) in set.qids.iter().enumerate() {
        let best = qrels
            .relevant(q, 1)
            .into_iter()
            .filter_map(|d| rows.get(d))
            .map(|&r| index.score(set.emb.row(i), r))
            .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))));
        if let Some(b) = best {
            per.insert(q.clone(), b);
        }
    }
    let mean = if per.is_empty() {
        0.0
    } else {
        per.values().sum::<f64>() / per.len() as f64
    };
    Ok((mean, per))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TurnPoint {
    pub turn: u32,
    pub mean: f64,
    pub count: usize,
}

/// Groups per-qid metric values by turn number.
pub fn per_turn_metrics(report: &MetricReport) -> Result<Vec<TurnPoint>> {
    let mut groups: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (q, v) in &report.per_qid {
        let (_, turn) = parse_qid(q)?;
        let g = groups.entry(turn).or_insert((0.0, 0));
        g.0 += v;
        g.1 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(turn, (s, c))| TurnPoint {
            turn,
            mean: s / c as f64,
            count: c,
        })
        .collect())
}

/// Mean over conversations of `embed(k)·embed(k−1)` for every turn k ≥ 2.
///
/// `embed(conv, k)` returns the variant's embedding for turn k (1-based).
pub fn adjacent_turn_similarity<F>(conversations: &[Conversation], embed: F) -> Result<Vec<TurnPoint>>
where
    F: Fn(&Conversation, usize) -> Result<Vec<f64>>,
{
    let mut groups: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for conv in conversations {
        let mut prev: Option<Vec<f64>> = None;
        for k in 1..=conv.turns.len() {
            let e = embed(conv, k)?;
            if let Some(p) = &prev {
                if p.len() != e.len() {
                    return Err(shape_err!("embedding dims {} vs {}", p.len(), e.len()));
                }
                let g = groups.entry(k as u32).or_insert((0.0, 0));
                g.0 += dot(&e, p);
                g.1 += 1;
            }
            prev = Some(e);
        }
    }
    Ok(groups
        .into_iter()
        .map(|(turn, (s, c))| TurnPoint {
            turn,
            mean: s / c as f64,
            count: c,
        })
        .collect())
}

pub fn curve_to_csv(curve: &[TurnPoint]) -> String {
    let mut s = String::from("turn,mean,count\n");
    for p in curve {
        s.push_str(&format!("{},{},{}\n", p.turn, p.mean, p.count));
    }
    s
}

pub fn matrix_to_csv(m: &SimMatrix) -> String {
    let mut s = String::from("variant");
    for n in &m.names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (n, row) in m.names.iter().zip(&m.values) {
        s.push_str(n);
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// `label,qid,v0,v1,…` rows for plotting outside this crate.
pub fn export_embeddings(sets: &[EmbeddingSet]) -> String {
    let dim = sets.first().map_or(0, |s| s.emb.shape()[1]);
    let mut s = String::from("label,qid");
    for i in 0..dim {
        s.push_str(&format!(",v{i}"));
    }
    s.push('\n');
    for set in sets {
        for (i, q) in set.qids.iter().enumerate() {
            s.push_str(&set.name);
            s.push(',');
            s.push_str(q);
            for v in set.emb.row(i) {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
    }
    s
}
