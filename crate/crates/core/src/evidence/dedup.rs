//! Near-duplicate evidence collapsing with repetition counts.

use std::collections::HashMap;

use crate::corpus::Tokenizer;
use crate::embedding::EmbeddingTable;

use super::EvidencePiece;

const MAX_LLOYD_ROUNDS: usize = 100;
const RADIUS_SLACK: f64 = 1e-12;

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Cosine distance between unit vectors.
fn distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot).max(0.0)
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Spherical k-means with the smallest `k` whose clusters all fit within `tau`
/// cosine distance of their centroid.
///
/// `points` must be unit vectors. Initialization is farthest-point starting from
/// the first point, so results depend only on input order. Returns a cluster id per
/// point and the centroids.
pub fn cluster_within_radius(points: &[Vec<f64>], tau: f64) -> (Vec<usize>, Vec<Vec<f64>>) {
    if points.is_empty() {
        return (Vec::new(), Vec::new());
    }
    for k in 1..=points.len() {
        let mut centroids = vec![points[0].clone()];
        let mut min_dist: Vec<f64> = points.iter().map(|p| distance(p, &points[0])).collect();
        while centroids.len() < k {
            let (far, _) =
                min_dist.iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc },
                );
            centroids.push(points[far].clone());
            for (m, p) in min_dist.iter_mut().zip(points) {
                *m = m.min(distance(p, &points[far]));
            }
        }

        let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        for _ in 0..MAX_LLOYD_ROUNDS {
            for (c, centroid) in centroids.iter_mut().enumerate() {
                let mut sum = vec![0.0; centroid.len()];
                let mut members = 0;
                for (p, _) in points.iter().zip(&assignment).filter(|(_, &a)| a == c) {
                    sum.iter_mut().zip(p).for_each(|(s, x)| *s += x);
                    members += 1;
                }
                if members > 0 {
                    let mean = normalize(sum);
                    if mean.iter().any(|x| *x != 0.0) {
                        *centroid = mean;
                    }
                }
            }
            let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
            if next == assignment {
                break;
            }
            assignment = next;
        }

        let fits = points
            .iter()
            .zip(&assignment)
            .all(|(p, &c)| distance(p, &centroids[c]) <= tau + RADIUS_SLACK);
        if fits {
            return (assignment, centroids);
        }
    }
    unreachable!("k = n always fits: every point is its own centroid")
}

/// Collapses near-duplicate pieces and counts how often each was repeated.
///
/// Pieces are embedded by mean-pooling their sentence tokens and clustered with
/// [`cluster_within_radius`]. Pieces whose sentences have no known tokens cannot be
/// placed in embedding space and are grouped by exact text instead. Each cluster
/// keeps its highest-scoring piece (ties: smallest sentence index, then input
/// order) with `repetition_count` set to the cluster's total count. Output follows
/// the input order of the kept pieces.
pub fn dedup_and_count(
    pieces: Vec<EvidencePiece>,
    emb: &EmbeddingTable,
    tokenizer: &dyn Tokenizer,
    tau: f64,
) -> Vec<EvidencePiece> {
    let mut embedded_idx = Vec::new();
    let mut points = Vec::new();
    let mut cluster_of = vec![0usize; pieces.len()];
    let mut by_text: HashMap<&str, usize> = HashMap::new();
    let mut next_text_cluster = 0;
    let mut textual = Vec::new();

    for (i, p) in pieces.iter().enumerate() {
        let v = normalize(emb.mean_pool(&tokenizer.tokenize(&p.sentence_text)));
        if v.iter().any(|x| *x != 0.0) {
            embedded_idx.push(i);
            points.push(v);
        } else {
            let id = *by_text.entry(p.sentence_text.as_str()).or_insert_with(|| {
                next_text_cluster += 1;
                next_text_cluster - 1
            });
            textual.push((i, id));
        }
    }

    let (assignment, _) = cluster_within_radius(&points, tau);
    let embedded_clusters = assignment.iter().max().map_or(0, |m| m + 1);
    for (&i, &c) in embedded_idx.iter().zip(&assignment) {
        cluster_of[i] = c;
    }
    for (i, id) in textual {
        cluster_of[i] = embedded_clusters + id;
    }

    let mut best: HashMap<usize, usize> = HashMap::new();
    let mut totals: HashMap<usize, u32> = HashMap::new();
    for (i, p) in pieces.iter().enumerate() {
        let c = cluster_of[i];
        *totals.entry(c).or_insert(0) += p.repetition_count;
        best.entry(c)
            .and_modify(|b| {
                let cur = &pieces[*b];
                let better = match p
                    .score
                    .unwrap_or(f64::NEG_INFINITY)
                    .total_cmp(&cur.score.unwrap_or(f64::NEG_INFINITY))
                {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => p.sentence_index < cur.sentence_index,
                };
                if better {
                    *b = i;
                }
            })
            .or_insert(i);
    }

    let mut keep: Vec<(usize, usize)> = best.into_iter().map(|(c, i)| (i, c)).collect();
    keep.sort_unstable();
    let mut pieces: Vec<Option<EvidencePiece>> = pieces.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|(i, c)| {
            let mut p = pieces[i].take().expect("each piece kept once");
            p.repetition_count = totals[&c];
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Lexicon, LongestMatchTokenizer};

    fn piece(text: &str, index: usize, score: f64) -> EvidencePiece {
        EvidencePiece {
            sentence_text: text.into(),
            location_id: "present-illness".into(),
            sentence_index: index,
            matched_keywords: vec!["x".into()],
            repetition_count: 1,
            score: Some(score),
        }
    }

    fn setup() -> (EmbeddingTable, LongestMatchTokenizer) {
        let mut emb = EmbeddingTable::new(3);
        emb.insert("出血", vec![1.0, 0.0, 0.0]);
        emb.insert("渗血", vec![0.99, 0.1, 0.0]);
        emb.insert("咳嗽", vec![0.0, 0.0, 1.0]);
        let tok = LongestMatchTokenizer::new(Lexicon::new(["出血", "渗血", "咳嗽"]));
        (emb, tok)
    }

    /// Smallest partition of the points under the centroid-radius rule, by enumeration.
    fn min_partition_oracle(points: &[Vec<f64>], tau: f64) -> usize {
        fn partitions(n: usize) -> Vec<Vec<usize>> {
            // restricted growth strings
            let mut out = Vec::new();
            let mut cur = vec![0; n];
            fn rec(i: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                if i == cur.len() {
                    out.push(cur.clone());
                    return;
                }
                for v in 0..=max + 1 {
                    cur[i] = v;
                    rec(i + 1, max.max(v), cur, out);
                }
            }
            if n > 0 {
                rec(1, 0, &mut cur, &mut out);
            }
            out
        }
        partitions(points.len())
            .into_iter()
            .filter(|assign| {
                let k = assign.iter().max().unwrap() + 1;
                (0..k).all(|c| {
                    let mut sum = vec![0.0; points[0].len()];
                    for (p, _) in points.iter().zip(assign).filter(|(_, &a)| a == c) {
                        sum.iter_mut().zip(p).for_each(|(s, x)| *s += x);
                    }
                    let centroid = normalize(sum);
                    points
                        .iter()
                        .zip(assign)
                        .filter(|(_, &a)| a == c)
                        .all(|(p, _)| distance(p, &centroid) <= tau)
                })
            })
            .map(|assign| assign.iter().max().unwrap() + 1)
            .min()
            .unwrap()
    }

    #[test]
    fn identical_sentences_collapse() {
        let (emb, tok) = setup();
        let pieces = vec![
            piece("眼底出血", 0, 0.7),
            piece("眼底出血", 3, 0.9),
            piece("眼底出血", 5, 0.9),
        ];
        let out = dedup_and_count(pieces, &emb, &tok, 0.15);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].repetition_count, 3);
        assert_eq!(out[0].sentence_index, 3);
    }

    #[test]
    fn distinct_sentences_stay() {
        let (emb, tok) = setup();
        let pieces = vec![piece("出血", 0, 0.7), piece("咳嗽", 1, 0.8)];
        let out = dedup_and_count(pieces.clone(), &emb, &tok, 0.15);
        assert_eq!(out, pieces);
    }

    #[test]
    fn near_duplicates_match_partition_oracle() {
        let (emb, tok) = setup();
        let pieces = vec![piece("出血", 0, 0.7), piece("渗血", 1, 0.8), piece("咳嗽", 2, 0.9)];
        let points: Vec<Vec<f64>> = pieces
            .iter()
            .map(|p| normalize(emb.mean_pool(&tok.tokenize(&p.sentence_text))))
            .collect();
        assert_eq!(min_partition_oracle(&points, 0.15), 2);
        let out = dedup_and_count(pieces, &emb, &tok, 0.15);
        assert_eq!(out.len(), 2);
        assert_eq!(out.iter().map(|p| p.repetition_count).collect::<Vec<_>>(), [2, 1]);
        assert_eq!(out[0].sentence_text, "渗血");
    }

    #[test]
    fn unembeddable_sentences_group_by_text() {
        let (emb, tok) = setup();
        let pieces = vec![piece("无", 0, 0.7), piece("有", 1, 0.7), piece("无", 2, 0.7)];
        let out = dedup_and_count(pieces, &emb, &tok, 0.15);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].repetition_count, 2);
        assert_eq!(out[1].repetition_count, 1);
    }

    #[test]
    fn clustering_respects_radius_on_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..8);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| normalize((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect();
            let (assign, centroids) = cluster_within_radius(&points, 0.15);
            for (p, &c) in points.iter().zip(&assign) {
                assert!(distance(p, &centroids[c]) <= 0.15 + 1e-12);
            }
            if n <= 5 {
                let used: std::collections::HashSet<_> = assign.iter().collect();
                assert!(used.len() >= min_partition_oracle(&points, 0.15));
            }
        }
    }
}
