//! Aggregated evaluation results and their text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::concepts::ConceptId;

use super::score::AttributionResult;

/// One evaluated image. Dual images carry two heads (media, content).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub label: String,
    /// Ground truth per head; empty when the image has no known source.
    pub truth: Vec<ConceptId>,
    pub results: Vec<AttributionResult>,
    /// Agreement of the decoded bits with each true secret.
    pub true_agreement: Vec<usize>,
}

impl EvalRecord {
    pub fn all_correct(&self) -> bool {
        !self.truth.is_empty() && self.truth.iter().zip(&self.results).all(|(t, r)| *t == r.predicted)
    }
}

/// Accumulated counts of one attribution head.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadStats {
    pub total: usize,
    pub correct: usize,
    pub nulls: usize,
    bit_accuracy_sum: f64,
    /// `(correct, total)` per true concept.
    pub per_concept: BTreeMap<ConceptId, (usize, usize)>,
    /// Count per `(true, predicted)` pair.
    pub confusion: BTreeMap<(ConceptId, ConceptId), usize>,
    /// Count per predicted concept, used when there is no ground truth.
    pub predicted: BTreeMap<ConceptId, usize>,
}

impl HeadStats {
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }

    pub fn mean_bit_accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.bit_accuracy_sum / self.total as f64
        }
    }

    pub fn null_rate(&self) -> f64 {
        ratio(self.nulls, self.total)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bits: usize,
    pub records: Vec<EvalRecord>,
    pub heads: Vec<HeadStats>,
    pub combined_correct: usize,
}

impl EvalReport {
    /// Aggregates records in order. All records must have the same head count.
    pub fn from_records(bits: usize, records: Vec<EvalRecord>) -> Self {
        let n_heads = records.first().map_or(1, |r| r.results.len());
        let mut heads = vec![HeadStats::default(); n_heads];
        let mut combined_correct = 0;
        for rec in &records {
            debug_assert_eq!(rec.results.len(), n_heads);
            if rec.all_correct() {
                combined_correct += 1;
            }
            for (h, r) in rec.results.iter().enumerate() {
                let st = &mut heads[h];
                st.total += 1;
                st.nulls += usize::from(r.null_flag);
                *st.predicted.entry(r.predicted).or_default() += 1;
                match rec.truth.get(h) {
                    Some(&t) => {
                        let ok = t == r.predicted;
                        st.correct += usize::from(ok);
                        st.bit_accuracy_sum += rec.true_agreement[h] as f64 / bits as f64;
                        let e = st.per_concept.entry(t).or_default();
                        e.0 += usize::from(ok);
                        e.1 += 1;
                        *st.confusion.entry((t, r.predicted)).or_default() += 1;
                    }
                    None => st.bit_accuracy_sum += r.bit_accuracy,
                }
            }
        }
        EvalReport {
            bits,
            records,
            heads,
            combined_correct,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First-head accuracy; for dual reports see [`EvalReport::combined_accuracy`].
    pub fn accuracy(&self) -> f64 {
        self.heads[0].accuracy()
    }

    pub fn combined_accuracy(&self) -> f64 {
        ratio(self.combined_correct, self.records.len())
    }

    /// Mean over heads of the per-head mean bit accuracy.
    pub fn mean_bit_accuracy(&self) -> f64 {
        self.heads.iter().map(HeadStats::mean_bit_accuracy).sum::<f64>() / self.heads.len() as f64
    }

    pub fn null_rate(&self) -> f64 {
        self.heads[0].null_rate()
    }

    /// Per-image CSV records followed by a `# summary` block.
    pub fn to_text(&self) -> String {
        let mut s = String::from("path,true,predicted,agreement,margin,null_flag\n");
        let join = |v: Vec<String>| v.join("|");
        for r in &self.records {
            let truth = if r.truth.is_empty() {
                "-".to_string()
            } else {
                join(r.truth.iter().map(|c| c.0.to_string()).collect())
            };
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.label,
                truth,
                join(r.results.iter().map(|x| x.predicted.0.to_string()).collect()),
                join(r.results.iter().map(|x| x.agreement.to_string()).collect()),
                join(r.results.iter().map(|x| x.margin.to_string()).collect()),
                join(r.results.iter().map(|x| x.null_flag.to_string()).collect()),
            )
            .expect("string write");
        }
        s.push_str(&self.summary_text());
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::from("# summary\n");
        let mut kv = |k: &str, v: String| writeln!(s, "{k},{v}").expect("string write");
        kv("images", self.records.len().to_string());
        kv("bits", self.bits.to_string());
        kv("accuracy", format!("{:.6}", self.accuracy()));
        if self.heads.len() > 1 {
            for (h, st) in self.heads.iter().enumerate() {
                kv(&format!("head{h}_accuracy"), format!("{:.6}", st.accuracy()));
            }
            kv("combined_accuracy", format!("{:.6}", self.combined_accuracy()));
        }
        kv("mean_bit_accuracy", format!("{:.6}", self.mean_bit_accuracy()));
        kv("null_rate", format!("{:.6}", self.null_rate()));
        for (h, st) in self.heads.iter().enumerate() {
            for (c, (ok, n)) in &st.per_concept {
                kv(&format!("head{h}_concept_{}", c.0), format!("{:.6},{ok},{n}", ratio(*ok, *n)));
            }
            if st.per_concept.is_empty() {
                for (c, n) in &st.predicted {
                    kv(&format!("head{h}_predicted_{}", c.0), n.to_string());
                }
            }
        }
        s
    }
}
